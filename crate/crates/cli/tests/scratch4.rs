//! Temporary exploration harness #4 (deleted before release).

use betadpo_core::calibration::BetaConfig;
use betadpo_core::eval::exact_win_rate;
use betadpo_core::synth::{generate, make_ground_truth, GenConfig};
use betadpo_core::trainer::{train, TrainConfig, TrainOptions};

fn run_one(gen: &GenConfig, train_cfg: &TrainConfig) -> f64 {
    let gt = make_ground_truth(gen.shape, gen.seed).unwrap();
    let ds = generate(gen, &gt).unwrap();
    let (state, _reports) = train(&ds, train_cfg, &TrainOptions::default()).unwrap();
    let wr = exact_win_rate(&state.theta, &state.reference, &gt).unwrap();
    wr.win_rate_ties_split()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
#[ignore]
fn explore_long_aggressive() {
    let seeds: Vec<u64> = (100..103).collect();
    for (label, mixture, flip) in [("higap", 1.0, 0.05), ("lowgap", 0.0, 0.0)] {
        for n in [512usize, 1024] {
            for lr in [0.1, 0.3] {
                for epochs in [16usize, 64, 128] {
                    let mut row = format!("{label} n={n} lr={lr} ep={epochs}: ");
                    for beta0 in [0.05, 0.5] {
                        let mut wins = vec![];
                        for &seed in &seeds {
                            let gen = GenConfig {
                                n_triplets: n,
                                mixture_ratio: mixture,
                                flip_prob: flip,
                                seed,
                                ..GenConfig::default()
                            };
                            let tc = TrainConfig {
                                lr,
                                epochs,
                                seed,
                                beta_cfg: BetaConfig::plain(beta0),
                                ..TrainConfig::default()
                            };
                            wins.push(run_one(&gen, &tc));
                        }
                        row.push_str(&format!("b{beta0}={:.4} ", mean(&wins)));
                    }
                    println!("{row}");
                }
            }
        }
    }
}
