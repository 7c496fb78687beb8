//! Calibration sweep over noise settings for the robustness experiments.
//!
//! Prints rank-1 accuracy of the Bayesian and reweighted-l1 rankers across a
//! grid of dense-noise levels, outlier scales and noise-variance settings so
//! a well-separated operating point can be picked for the frozen test
//! configs. Run with `cargo run --release -p rsm-core --example pilot`.

use std::time::Instant;

use rsm_core::config::BaselineEnvelope;
use rsm_core::eval::{run_experiment, ExperimentPlan, Method};
use rsm_core::inference::{Hyperparams, InferenceConfig};
use rsm_core::ranking::RankingConfig;
use rsm_core::synth::GeneratorConfig;

fn main() {
    let trials: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let sigmas = [0.1, 0.2, 0.3];
    let scales = [0.5, 1.0];
    let lambdas = [0.05, 0.2, 1.0];

    println!("trials={trials}  (sigma_v, outlier_scale, lambda) -> rsm / isr rank-1");
    for &sigma_v in &sigmas {
        for &outlier_scale in &scales {
            for &lambda in &lambdas {
                let plan = ExperimentPlan {
                    generator: GeneratorConfig {
                        subjects: 30,
                        block_size: 3,
                        dim: 40,
                        frames: 10,
                        subspace_dim: 2,
                        sigma_v,
                        outlier_prob: 0.1,
                        outlier_scale,
                        seed: 20_250_810,
                    },
                    hyper: Hyperparams { lambda, ..Default::default() },
                    inference: InferenceConfig { max_iters: 20, ..Default::default() },
                    ranking: RankingConfig { max_ranks: Some(1), ..Default::default() },
                    baseline: BaselineEnvelope::default(),
                    methods: vec![Method::Rsm, Method::Isr],
                    trials,
                    normalize_columns: false,
                };
                let start = Instant::now();
                match run_experiment(&plan) {
                    Ok(outcome) => {
                        let rsm = outcome.aggregates[0].mean_cmc[0];
                        let isr = outcome.aggregates[1].mean_cmc[0];
                        println!(
                            "sigma_v={sigma_v:4.2} scale={outlier_scale:4.2} lambda={lambda:5.2} -> \
                             rsm={rsm:.3} isr={isr:.3} gap={:+.3}  [{:?}]",
                            rsm - isr,
                            start.elapsed()
                        );
                    }
                    Err(e) => println!(
                        "sigma_v={sigma_v:4.2} scale={outlier_scale:4.2} lambda={lambda:5.2} -> error: {e}"
                    ),
                }
            }
        }
    }
}
