//! Five-seed ablation run on the shifted-blobs benchmark.
//!
//! `cargo run --release -p adagev --example ablation_benchmark [epochs]`

use adagev::data::{apply_roles, gen_shifted_blobs, BlobShiftConfig, RoleSplit};
use adagev::model::ModelSpecs;
use adagev::pipeline::{run_ablations, AblationMode, TrainConfig};

const SEEDS: u64 = 5;

fn main() -> adagev::Result<()> {
    let epochs = match std::env::args().nth(1) {
        Some(s) => s.parse().expect("epochs must be a count"),
        None => TrainConfig::default().epochs,
    };
    let modes = [
        AblationMode::Full,
        AblationMode::NoReweight,
        AblationMode::NoEvtBinary,
        AblationMode::HardThreshold { tau: None },
    ];
    let mut os = [0.0; 4];
    let mut os_star = [0.0; 4];
    println!("seed  variant          OS     OS*    UNK");
    for seed in 0..SEEDS {
        let raw = gen_shifted_blobs(&BlobShiftConfig {
            seed,
            ..Default::default()
        })?;
        let pool = apply_roles(&raw.source, &raw.target, &RoleSplit::digits())?;
        let specs = ModelSpecs::standard(pool.dim(), pool.classes());
        let tc = TrainConfig {
            epochs,
            seed,
            ..Default::default()
        };
        for (i, o) in run_ablations(&pool, &specs, &tc, &modes)?.iter().enumerate() {
            let r = &o.report;
            os[i] += r.os;
            os_star[i] += r.os_star;
            println!(
                "{seed:>4}  {:<15} {:.3}  {:.3}  {:.3}",
                o.mode.name(),
                r.os,
                r.os_star,
                r.unk.unwrap_or(f64::NAN)
            );
        }
    }
    println!();
    for (i, m) in modes.iter().enumerate() {
        let n = SEEDS as f64;
        println!("mean  {:<15} {:.3}  {:.3}", m.name(), os[i] / n, os_star[i] / n);
    }
    Ok(())
}
