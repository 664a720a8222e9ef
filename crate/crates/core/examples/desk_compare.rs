//! Runs the desk-scale reference configuration in FedFoA and local-only
//! mode for a few seeds and prints probe accuracy, R̄ distances and the
//! trace/accuracy rank correlation.
//!
//! Usage: cargo run --release --example desk_compare -- [key=value ...]

use fedfoa::config::{Mode, RunConfig};
use fedfoa::correlation::mean_pairwise_distance;
use fedfoa::eval::{prepare_data, run_experiment, trace_accuracy_correlation};
use fedfoa::export::records_at;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut base = RunConfig::default();
    let mut seeds = vec![0u64, 1, 2];
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("expected key=value")?;
        if k == "seeds" {
            seeds = v.split(',').map(|s| s.parse()).collect::<Result<_, _>>()?;
        } else {
            base.set(k, v)?;
        }
    }
    let mut gaps = Vec::new();
    for &seed in &seeds {
        let mut accs = Vec::new();
        for mode in [Mode::LocalOnly, Mode::Fedfoa] {
            let cfg = RunConfig {
                mode,
                seed,
                ..base.clone()
            };
            let data = prepare_data(&cfg)?;
            let start = std::time::Instant::now();
            let out = run_experiment(&cfg, &data)?;
            let log = out.simulator.record_log();
            let d_warm = mean_pairwise_distance(&records_at(log, cfg.t_warm))?;
            let d_last = mean_pairwise_distance(&records_at(log, cfg.rounds))?;
            let rho = trace_accuracy_correlation(&out.checkpoints).unwrap_or(f64::NAN);
            let acc = out.final_accuracy().unwrap_or(f64::NAN);
            let last = out.history.last().unwrap();
            println!(
                "seed {seed} {mode:>10}: acc {acc:.4} per-client {:?} dist@warm {d_warm:.3} dist@last {d_last:.3} rho {rho:.3} lc {:.3} reg {:.3} trace {:.2} ({:.1?})",
                out.checkpoints.last().unwrap().accuracies.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                last.clients.iter().map(|c| c.losses.contrastive).sum::<f64>() / 4.0,
                last.clients.iter().map(|c| c.losses.regularizer).sum::<f64>() / 4.0,
                last.mean_trace(),
                start.elapsed()
            );
            println!(
                "    traces by checkpoint: {:?}",
                out.checkpoints.iter().map(|c| (c.round, (c.mean_trace * 100.0).round() / 100.0, (c.mean_accuracy * 1000.0).round() / 1000.0)).collect::<Vec<_>>()
            );
            accs.push(acc);
        }
        gaps.push(accs[1] - accs[0]);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!("gaps {gaps:?} mean {mean_gap:.4}");
    Ok(())
}
