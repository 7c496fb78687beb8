//! Probe-length trend check for picking the frozen L-sweep config.
//! Run with `cargo run --release -p rsm-core --example pilot_l -- <trials>`.

use std::time::Instant;

use rsm_core::config::BaselineEnvelope;
use rsm_core::eval::{sweep_l, ExperimentPlan, Method};
use rsm_core::inference::{Hyperparams, InferenceConfig};
use rsm_core::ranking::RankingConfig;
use rsm_core::synth::GeneratorConfig;

fn main() {
    let trials: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let plan = ExperimentPlan {
        generator: GeneratorConfig {
            subjects: 20,
            block_size: 3,
            dim: 40,
            frames: 1,
            subspace_dim: 2,
            sigma_v: 0.35,
            outlier_prob: 0.1,
            outlier_scale: 1.5,
            seed: 20_250_811,
        },
        hyper: Hyperparams { lambda: 1.0, ..Default::default() },
        inference: InferenceConfig { max_iters: 20, ..Default::default() },
        ranking: RankingConfig::default(),
        baseline: BaselineEnvelope::default(),
        methods: vec![Method::Rsm, Method::Isr],
        trials,
        normalize_columns: false,
    };
    let start = Instant::now();
    let rows = sweep_l(&plan, &[1, 2, 4, 6]).unwrap();
    for row in &rows {
        println!("L={} {}: rank1 = {:.3} +/- {:.3}", row.l, row.method, row.rank1_mean, row.rank1_std);
    }
    for l in [1usize, 6] {
        let rsm = rows.iter().find(|r| r.l == l && r.method == Method::Rsm).unwrap().rank1_mean;
        let isr = rows.iter().find(|r| r.l == l && r.method == Method::Isr).unwrap().rank1_mean;
        println!("L={l}: gap = {:+.3}", rsm - isr);
    }
    println!("elapsed {:?}", start.elapsed());
}
