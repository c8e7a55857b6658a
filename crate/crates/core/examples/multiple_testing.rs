//! Correcting a dashboard of always-valid p-values: Bonferroni, BH under
//! independence, BH under arbitrary dependence, q-values and FCR-adjusted
//! confidence levels.
//!
//! ```text
//! cargo run --example multiple_testing
//! ```

use alwaysvalid::multitest::{fcr_adjusted_levels, qvalues, PValueVector, Procedure};

pub fn run_example() -> anyhow::Result<Vec<usize>> {
    let p = PValueVector::new(vec![0.001, 0.008, 0.012, 0.04, 0.045, 0.2, 0.5, 0.9])?;
    let alpha = 0.05;
    let mut counts = Vec::new();
    for procedure in Procedure::ALL {
        let rejected = procedure.apply(&p, alpha)?;
        let q = qvalues(&p, procedure);
        assert_eq!(q.threshold(alpha), rejected);
        println!("{:<10} rejects {:?}", procedure.name(), rejected.indices);
        println!("{:<10} q-values {:?}", "", q.values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        counts.push(rejected.r());
    }
    let fcr = fcr_adjusted_levels(&p, alpha)?;
    println!("FCR-adjusted levels (BH-I selection {:?}):", fcr.selected.indices);
    for (i, level) in fcr.levels.iter().enumerate() {
        println!("  #{i}: {level:.4}");
    }
    Ok(counts)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
