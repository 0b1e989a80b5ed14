//! Runs ablation rows on the configured data and prints per-row AUCs.
//!
//! `cargo run --release -p proxyad-core --example ablation_ladder -- [config.toml] [rows...]`

use std::path::Path;
use std::time::Instant;

use proxyad_core::config::ExperimentConfig;
use proxyad_core::experiment::{load_data, run_ablation};

fn main() -> proxyad_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = match args.first() {
        Some(p) => ExperimentConfig::load(Path::new(p))?,
        None => ExperimentConfig::default(),
    };
    let rows: Vec<u8> = if args.len() > 1 {
        args[1..].iter().filter_map(|s| s.parse().ok()).collect()
    } else {
        vec![1, 4, 8]
    };
    let data = load_data(&cfg)?;
    for r in rows {
        let t = Instant::now();
        let res = run_ablation(&cfg, &data, &[r])?.remove(0);
        let e = &res.evaluation;
        println!(
            "row {r} {:<28} auc {:.4} latent {:.4} pixel {:.4} si {:.4} gap {:.4} ({:.1}s)",
            e.tag,
            e.primary.auc,
            e.latent.auc,
            e.pixelspace.auc,
            e.si_error.auc,
            e.primary.gap.gap,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
