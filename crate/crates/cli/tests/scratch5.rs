//! Temporary exploration harness #5 (deleted before release).

use betadpo_core::calibration::BetaConfig;
use betadpo_core::eval::exact_win_rate;
use betadpo_core::synth::{generate, make_ground_truth, GenConfig};
use betadpo_core::trainer::{train, TrainConfig, TrainOptions};
use betadpo_core::types::ModelShape;

fn run_one(gen: &GenConfig, train_cfg: &TrainConfig) -> (f64, f64) {
    let gt = make_ground_truth(gen.shape, gen.seed).unwrap();
    let ds = generate(gen, &gt).unwrap();
    let (state, _reports) = train(&ds, train_cfg, &TrainOptions::default()).unwrap();
    let wr = exact_win_rate(&state.theta, &state.reference, &gt).unwrap();
    (wr.win_rate, wr.win_rate_ties_split())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
#[ignore]
fn explore_final_cells() {
    let seeds: Vec<u64> = (0..5).collect();
    let shape = ModelShape::new(4, 4, 16).unwrap();
    for (label, mixture, flip) in [("higap", 1.0, 0.05), ("lowgap", 0.0, 0.0)] {
        for n in [352usize, 384, 416] {
            for epochs in [1152usize] {
                let mut row = format!("{label} n={n} ep={epochs}: ");
                for beta0 in [0.05, 0.5] {
                    let mut raw = vec![];
                    for &seed in &seeds {
                        let gen = GenConfig {
                            shape,
                            n_triplets: n,
                            mixture_ratio: mixture,
                            flip_prob: flip,
                            bt_scale: 1.0e6,
                            seed,
                            ..GenConfig::default()
                        };
                        let tc = TrainConfig {
                            lr: 0.3,
                            epochs,
                            seed,
                            beta_cfg: BetaConfig::plain(beta0),
                            ..TrainConfig::default()
                        };
                        let (r, _s) = run_one(&gen, &tc);
                        raw.push(r);
                    }
                    row.push_str(&format!(
                        "b{beta0}raw={:.4}[{}] ",
                        mean(&raw),
                        raw.iter()
                            .map(|w| format!("{w:.3}"))
                            .collect::<Vec<_>>()
                            .join(",")
                    ));
                }
                println!("{row}");
            }
        }
    }
}
