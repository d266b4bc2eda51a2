//! Runs the synthetic benchmark for a few seeds over the lambda grid and
//! prints held-out metrics per run.
//!
//! cargo run --release --example lambda_sweep -- [seeds] [bench.toml]
//! cargo run --release --example lambda_sweep -- print-config > bench.toml

use std::time::Instant;

use histodistill::bench::{prepare, run_lambdas, summarize_runs, BenchConfig};

fn main() -> histodistill::Result<()> {
    env_logger::init();
    if std::env::args().nth(1).as_deref() == Some("print-config") {
        print!("{}", toml::to_string(&BenchConfig::default()).expect("serializable"));
        return Ok(());
    }
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let config = match std::env::args().nth(2) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).expect("readable config");
            toml::from_str(&text).expect("valid bench config")
        }
        None => BenchConfig::default(),
    };
    for seed in 0..seeds {
        let t = Instant::now();
        let prepared = prepare(&config, seed)?;
        println!("seed {seed}: data + teacher in {:.1}s", t.elapsed().as_secs_f64());
        let runs = run_lambdas(&config, &prepared, seed, &config.lambdas)?;
        println!("  trained {} students in {:.1}s", runs.len(), t.elapsed().as_secs_f64());
        for s in summarize_runs(&runs) {
            println!(
                "  lambda {:>4}: auroc {:.3}  sens60 csPCa {:.3}  entropy {:.3}  embedding grade auroc {:.3}",
                s.lambda, s.auroc, s.sens60_cspca, s.mean_entropy, s.embedding_auroc
            );
        }
    }
    Ok(())
}
