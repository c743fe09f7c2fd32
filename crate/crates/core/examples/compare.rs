//! Paired MuPFL / FedAvg comparison on the default synthetic long-tailed setup.
//!
//! `cargo run --release --example compare -- [seeds]`

use mupfl::fl::{Algorithm, RunConfig, Simulation};

fn main() -> mupfl::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    println!("seed,algorithm,global_acc,tail_acc,mean_client_acc");
    for seed in 0..seeds {
        for algorithm in [Algorithm::Fedavg, Algorithm::Mupfl] {
            let cfg = RunConfig {
                seed,
                lr: 0.3,
                algorithm,
                ..RunConfig::default()
            };
            let mut sim = Simulation::new(cfg.clone())?;
            for _ in 0..cfg.rounds {
                sim.run_round()?;
            }
            let m = sim.history().last().expect("ran rounds");
            println!("{seed},{algorithm:?},{:.4},{:.4},{:.4}", m.global_acc, m.tail_acc, m.mean_client_acc);
        }
    }
    Ok(())
}
