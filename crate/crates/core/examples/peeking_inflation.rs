//! Why continuous monitoring of a fixed-horizon z-test breaks its Type I
//! error, and why the mSPRT p-value does not: both users watch the same A/A
//! streams and stop the first time their p-value drops below α.
//!
//! ```text
//! cargo run --release --example peeking_inflation
//! ```

use alwaysvalid::avcore::{fixed_horizon_p_normal, MixtureSpec, NormalMonitor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Rates {
    naive: f64,
    always_valid: f64,
}

fn simulate(paths: u64, horizon: u64, alpha: f64) -> anyhow::Result<Rates> {
    let mixture = MixtureSpec::centered(1.0)?;
    let (mut naive, mut av) = (0u64, 0u64);
    for path in 0..paths {
        let mut rng = ChaCha8Rng::seed_from_u64(path);
        let mut monitor = NormalMonitor::new(1.0, mixture);
        let (mut naive_hit, mut av_hit) = (false, false);
        for n in 1..=horizon {
            let x: f64 = StandardNormal.sample(&mut rng);
            let p_av = monitor.push(x);
            naive_hit |= fixed_horizon_p_normal(monitor.mean(), n, 1.0)? <= alpha;
            av_hit |= p_av <= alpha;
            if naive_hit && av_hit {
                break;
            }
        }
        naive += naive_hit as u64;
        av += av_hit as u64;
    }
    Ok(Rates { naive: naive as f64 / paths as f64, always_valid: av as f64 / paths as f64 })
}

pub fn run_example() -> anyhow::Result<()> {
    let alpha = 0.05;
    println!("{:>8} {:>12} {:>14}", "horizon", "naive", "always-valid");
    for horizon in [10, 100, 1000] {
        let r = simulate(400, horizon, alpha)?;
        println!("{horizon:>8} {:>12.3} {:>14.3}", r.naive, r.always_valid);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
