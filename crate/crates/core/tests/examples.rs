//! Every example's `run_example` runs to completion.

#[path = "../examples/adaptive_allocation.rs"]
mod adaptive_allocation;
#[path = "../examples/always_valid_pvalue.rs"]
mod always_valid_pvalue;
#[path = "../examples/experiment_service.rs"]
mod experiment_service;
#[path = "../examples/mixture_tuning.rs"]
mod mixture_tuning;
#[path = "../examples/multiple_testing.rs"]
mod multiple_testing;
#[path = "../examples/peeking_inflation.rs"]
mod peeking_inflation;
#[path = "../examples/simulation_lab.rs"]
mod simulation_lab;

#[test]
fn always_valid_pvalue_runs() {
    always_valid_pvalue::run_example().unwrap();
}

#[test]
fn peeking_inflation_runs() {
    peeking_inflation::run_example().unwrap();
}

#[test]
fn mixture_tuning_runs() {
    mixture_tuning::run_example().unwrap();
}

#[test]
fn multiple_testing_runs() {
    multiple_testing::run_example().unwrap();
}

#[test]
fn adaptive_allocation_runs() {
    adaptive_allocation::run_example().unwrap();
}

#[test]
fn experiment_service_runs() {
    experiment_service::run_example().unwrap();
}

#[test]
fn simulation_lab_runs() {
    simulation_lab::run_example().unwrap();
}
