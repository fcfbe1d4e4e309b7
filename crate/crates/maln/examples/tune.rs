// scratch diagnostics (deleted before release)
use maln::emission::{emission_matrix, GaussianSequence, MelSequence};
use maln::lattice::{grad_gaussians, AlignmentLattice};
use maln::tensor::Tensor;
use maln::train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn segment_means(mel: &MelSequence, m: usize) -> Vec<Vec<f64>> {
    let (n, d) = (mel.frame_count(), mel.channel_count());
    (0..m)
        .map(|s| {
            let lo = s * n / m;
            let hi = ((s + 1) * n / m).max(lo + 1);
            let mut acc = vec![0.0; d];
            for t in lo..hi {
                for k in 0..d {
                    acc[k] += mel.frame(t)[k];
                }
            }
            acc.iter().map(|a| a / (hi - lo) as f64).collect()
        })
        .collect()
}

fn constructed_params(targets: &[Vec<f64>], d: usize, lv0: f64) -> MdnParams {
    let m = targets.len();
    let config = MdnConfig { embed_dim: m, hidden_dim: m, hidden_layers: 1, init_log_var: lv0 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = MdnParams::init(config, m, d, &mut rng).unwrap();
    params.embed.data_mut().fill(0.0);
    for s in 0..m {
        params.embed.data_mut()[s * m + s] = 1.0;
    }
    params.layers[0].weight.data_mut().fill(0.0);
    for j in 0..m {
        params.layers[0].weight.data_mut()[j * m + j] = 1.0;
    }
    params.layers[0].bias.data_mut().fill(0.0);
    params.layers[1].weight.data_mut().fill(0.0);
    for s in 0..m {
        for k in 0..d {
            params.layers[1].weight.data_mut()[k * m + s] = targets[s][k];
        }
    }
    for k in 0..d {
        params.layers[1].bias.data_mut()[k] = 0.0;
        params.layers[1].bias.data_mut()[d + k] = lv0;
        for s in 0..m {
            params.layers[1].weight.data_mut()[(d + k) * m + s] = 0.0;
        }
    }
    params
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn main() {
    let d = 2usize;
    for (tied, floor) in [(false, None), (true, None), (false, Some(0.005f64)), (true, Some(0.005))] {
        for lv0_lin in [0.04f64, 0.25] {
            let lv0 = lv0_lin.ln();
            let mut ok = 0;
            let mut fails = Vec::new();
            for seed in 0..20u64 {
                let task = generate_task(5, 2, 8, 0.1, seed).unwrap();
                let targets = segment_means(&task.mel, 5);
                // bias so the transformed output starts at lv0
                let raw0 = match floor {
                    Some(f) => f.ln() + ((lv0 - f.ln()).exp() - 1.0).ln(),
                    None => lv0,
                };
                let mut params = constructed_params(&targets, d, raw0);
                let mut adam = AdamState::new(1e-2, &params.group_lens());
                let ids: Vec<usize> = (0..5).collect();
                let head = |raw: &GaussianSequence| -> (GaussianSequence, Vec<f64>) {
                    // returns transformed gaussians + d(lv_out)/d(lv_raw) factors
                    let mut lv: Vec<f64> = raw.log_vars().data().to_vec();
                    let mut jac = vec![1.0; lv.len()];
                    if tied {
                        for s in 0..5 {
                            let mean = lv[s * d..(s + 1) * d].iter().sum::<f64>() / d as f64;
                            for k in 0..d {
                                lv[s * d + k] = mean;
                            }
                        }
                    }
                    if let Some(f) = floor {
                        let fl = f.ln();
                        for (v, j) in lv.iter_mut().zip(&mut jac) {
                            let r = *v;
                            *v = fl + softplus(r - fl);
                            *j = sigmoid(r - fl);
                        }
                    }
                    (
                        GaussianSequence::new(
                            raw.means().clone(),
                            Tensor::new(vec![5, d], lv).unwrap(),
                        )
                        .unwrap(),
                        jac,
                    )
                };
                for _ in 0..500 {
                    let raw = mdn_forward(&params, &ids).unwrap();
                    let (g, jac) = head(&raw);
                    let logp = emission_matrix(&task.mel, &g).unwrap();
                    let lat = AlignmentLattice::compute(&logp).unwrap();
                    let (dm, dlv) = grad_gaussians(&lat.gamma, &task.mel, &g).unwrap();
                    let mut dlv_raw: Vec<f64> =
                        dlv.data().iter().zip(&jac).map(|(a, b)| a * b).collect();
                    if tied {
                        for s in 0..5 {
                            let total: f64 = dlv_raw[s * d..(s + 1) * d].iter().sum();
                            for k in 0..d {
                                dlv_raw[s * d + k] = total / d as f64;
                            }
                        }
                    }
                    let dlv = Tensor::new(vec![5, d], dlv_raw).unwrap();
                    let grads = mdn_backward(&params, &ids, &dm, &dlv).unwrap();
                    adam.step(&mut params.flat_mut(), &grads.flat()).unwrap();
                }
                let raw = mdn_forward(&params, &ids).unwrap();
                let (g, _) = head(&raw);
                let logp = emission_matrix(&task.mel, &g).unwrap();
                let (path, _) = maln::alignment::viterbi(&logp).unwrap();
                if maln::alignment::path_to_durations(&path, 5).unwrap() == task.true_durations {
                    ok += 1;
                } else {
                    fails.push(seed);
                }
            }
            println!(
                "seg-init tied={} floor={:?} s0={lv0_lin}: {ok:2}/20  fails {fails:?}",
                tied, floor
            );
        }
    }
}
