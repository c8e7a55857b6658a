//! The experiment service used as a library: create experiments, stream
//! batches, stop one, read the corrected overview, then rebuild everything
//! from the event logs as a restart would.
//!
//! ```text
//! cargo run --example experiment_service
//! ```
//!
//! The same operations are available over HTTP with `alwaysvalid serve`.

use alwaysvalid::avcore::{Observation, StreamModel};
use alwaysvalid::expserve::{replay_log, NewExperiment, OverviewQuery, Service, ServiceOptions};
use alwaysvalid::multitest::Procedure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut opts = ServiceOptions::new(dir.path());
    opts.sync = false;
    let svc = Service::open(opts.clone())?;

    let rates = [("checkout-button", 0.10, 0.13), ("banner-copy", 0.10, 0.10), ("search-ranking", 0.10, 0.11)];
    for (id, _, _) in rates {
        let mut req = NewExperiment::new(id, StreamModel::BernoulliTwoStream);
        req.tau_sq = Some(1e-3);
        svc.create_experiment(req)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2015);
    for _ in 0..40 {
        for (id, pc, pt) in rates {
            let batch: Vec<Observation> = (0..100)
                .flat_map(|_| {
                    [
                        Observation::control((rng.gen::<f64>() < pc) as u8 as f64),
                        Observation::treatment((rng.gen::<f64>() < pt) as u8 as f64),
                    ]
                })
                .collect();
            svc.ingest_batch(id, batch)?;
        }
    }
    for (id, _, _) in rates {
        let s = svc.get_snapshot(id)?;
        println!("{id:<16} n={:<6} p={:.4} chance to beat={:.4}", s.m + s.n, s.p_value, s.chance_to_beat);
    }

    let decision = svc.stop_experiment("checkout-button", 0.05, "analyst", "end of test window")?;
    println!("stopped checkout-button: rejected={} at seq {}", decision.rejected, decision.stopped_at);

    let mut query = OverviewQuery::new(0.05, Procedure::BhI);
    query.fcr = true;
    for row in svc.overview(&query)?.rows {
        println!(
            "overview {:<16} q={:.4} rejected={:<5} level {:.4} -> stored {:?}",
            row.id, row.q_value, row.rejected, row.required_level, row.ci_level
        );
    }

    // Replaying a log gives back exactly the live state.
    let bytes = std::fs::read(dir.path().join("banner-copy.jsonl"))?;
    let replayed = replay_log(&bytes)?.state.expect("log is not empty");
    anyhow::ensure!(replayed == svc.state("banner-copy")?);
    drop(svc);
    let reopened = Service::open(opts)?;
    println!("reopened with {} experiments, replay matches live state", reopened.ids().len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
