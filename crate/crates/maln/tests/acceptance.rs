//! Acceptance suite: one test per release criterion, each printing a pass
//! line. Run with `cargo test -p maln --test acceptance -- --nocapture`.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maln::alignment::{path_to_durations, viterbi, DurationSequence};
use maln::emission::{emission_matrix, EmissionMatrix, GaussianSequence, MelSequence};
use maln::lattice::{
    brute_force_loss, enumerate_alignments, forward, grad_gaussians, loss_and_grad,
    AlignmentLattice,
};
use maln::tensor::{DType, Tensor, LOG_ZERO};
use maln::train::{
    extract_and_train_duration_regressor, extract_durations, generate_task, mdn_backward,
    mdn_forward, train_phase1, MdnConfig, MdnParams, RegressorConfig, TrainConfig,
};

/// Relative error with a unit floor, so negligible gradient entries are
/// compared absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn random_emission(n: usize, m: usize, rng: &mut ChaCha8Rng) -> EmissionMatrix {
    let data: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-4.0..1.0)).collect();
    EmissionMatrix::new(Tensor::new(vec![n, m], data).unwrap()).unwrap()
}

fn path_score(logp: &EmissionMatrix, durations: &DurationSequence) -> f64 {
    let mut acc = 0.0;
    let mut t = 0;
    for (s, &dur) in durations.as_slice().iter().enumerate() {
        for _ in 0..dur {
            acc += logp.at(t, s);
            t += 1;
        }
    }
    acc
}

#[test]
fn criterion_1_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e);
    let started = Instant::now();
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for n in 1..=10 {
        for m in 1..=n {
            for _ in 0..50 {
                let logp = random_emission(n, m, &mut rng);
                let (_, fwd) = forward(&logp).unwrap();
                let oracle = brute_force_loss(&logp).unwrap();
                let diff = (fwd - oracle).abs();
                worst = worst.max(diff);
                assert!(
                    diff < 1e-9,
                    "n={n} m={m}: forward {fwd} vs brute force {oracle} (diff {diff})"
                );
                checked += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: forward == brute force on {checked} instances \
         (worst |diff| {worst:.3e}, {elapsed:.2?})"
    );
}

#[test]
fn criterion_2_gradient_suite() {
    let started = Instant::now();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0x96ad);

    // gradients w.r.t. every emission log-density
    let mut worst_logp: f64 = 0.0;
    for &(n, m) in &[(5usize, 3usize), (12, 5), (8, 1), (6, 6)] {
        let logp = random_emission(n, m, &mut rng);
        let (_, grad) = loss_and_grad(&logp).unwrap();
        for t in 0..n {
            for s in 0..m {
                let perturbed = |delta: f64| {
                    let mut data = logp.tensor().data().to_vec();
                    data[t * m + s] += delta;
                    let e = EmissionMatrix::new(Tensor::new(vec![n, m], data).unwrap()).unwrap();
                    forward(&e).unwrap().1
                };
                let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let err = rel_err(grad.at2(t, s), fd);
                worst_logp = worst_logp.max(err);
                assert!(err < 1e-6, "logp grad ({t},{s}) n={n} m={m}: rel err {err}");
            }
        }
    }

    // gradients w.r.t. Gaussian means and log-variances
    let (n, m, d) = (12usize, 5usize, 4usize);
    let mel_data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mel = MelSequence::new(Tensor::new(vec![n, d], mel_data).unwrap()).unwrap();
    let mean_data: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let lv_data: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let loss_of = |means: &[f64], lvs: &[f64]| -> f64 {
        let g = GaussianSequence::new(
            Tensor::new(vec![m, d], means.to_vec()).unwrap(),
            Tensor::new(vec![m, d], lvs.to_vec()).unwrap(),
        )
        .unwrap();
        forward(&emission_matrix(&mel, &g).unwrap()).unwrap().1
    };

    let gaussians = GaussianSequence::new(
        Tensor::new(vec![m, d], mean_data.clone()).unwrap(),
        Tensor::new(vec![m, d], lv_data.clone()).unwrap(),
    )
    .unwrap();
    let lattice = AlignmentLattice::compute(&emission_matrix(&mel, &gaussians).unwrap()).unwrap();
    let (d_means, d_log_vars) = grad_gaussians(&lattice.gamma, &mel, &gaussians).unwrap();

    let mut worst_gauss: f64 = 0.0;
    for i in 0..m * d {
        let mut plus = mean_data.clone();
        let mut minus = mean_data.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (loss_of(&plus, &lv_data) - loss_of(&minus, &lv_data)) / (2.0 * h);
        let err = rel_err(d_means.data()[i], fd);
        worst_gauss = worst_gauss.max(err);
        assert!(err < 1e-6, "mean grad {i}: rel err {err}");

        let mut plus = lv_data.clone();
        let mut minus = lv_data.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (loss_of(&mean_data, &plus) - loss_of(&mean_data, &minus)) / (2.0 * h);
        let err = rel_err(d_log_vars.data()[i], fd);
        worst_gauss = worst_gauss.max(err);
        assert!(err < 1e-6, "log-var grad {i}: rel err {err}");
    }

    // end-to-end chain: every weight of a tiny network through the DP loss
    let task = generate_task(2, 1, 2, 0.1, 21).unwrap();
    let mut init_rng = ChaCha8Rng::seed_from_u64(22);
    let config = MdnConfig { embed_dim: 3, hidden_dim: 4, hidden_layers: 1, init_log_var: 0.0 };
    let params = MdnParams::init(config, 2, 1, &mut init_rng).unwrap();
    let ids = [0usize, 1];
    let chain_loss = |p: &MdnParams| -> f64 {
        let g = mdn_forward(p, &ids).unwrap();
        AlignmentLattice::compute(&emission_matrix(&task.mel, &g).unwrap())
            .unwrap()
            .loss()
    };
    let gaussians = mdn_forward(&params, &ids).unwrap();
    let lattice = AlignmentLattice::compute(&emission_matrix(&task.mel, &gaussians).unwrap()).unwrap();
    let (dm, dlv) = grad_gaussians(&lattice.gamma, &task.mel, &gaussians).unwrap();
    let grads = mdn_backward(&params, &ids, &dm, &dlv).unwrap();

    let mut worst_chain: f64 = 0.0;
    let lens = params.group_lens();
    for (gi, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let mut plus = params.clone();
            plus.flat_mut()[gi][i] += h;
            let mut minus = params.clone();
            minus.flat_mut()[gi][i] -= h;
            let fd = (chain_loss(&plus) - chain_loss(&minus)) / (2.0 * h);
            let err = rel_err(grads.flat()[gi][i], fd);
            worst_chain = worst_chain.max(err);
            assert!(err < 1e-5, "chain grad group {gi} index {i}: rel err {err}");
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "[PASS] criterion 2: analytic gradients match finite differences \
         (worst rel err: logp {worst_logp:.3e}, gaussians {worst_gauss:.3e}, \
         chain {worst_chain:.3e}, {elapsed:.2?})"
    );
}

#[test]
fn criterion_3_posterior_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9057);
    for i in 0..100 {
        let n = rng.gen_range(1..=14);
        let m = rng.gen_range(1..=n);
        let logp = random_emission(n, m, &mut rng);
        let lattice = AlignmentLattice::compute(&logp).unwrap();
        let gamma = &lattice.gamma;

        let mut total_mass = 0.0;
        for t in 0..n {
            let row_sum: f64 = (0..m).map(|s| gamma.at2(t, s)).sum();
            assert!((row_sum - 1.0).abs() < 1e-9, "instance {i}: row {t} sums to {row_sum}");
            total_mass += row_sum;
        }
        assert!((total_mass - n as f64).abs() < 1e-8, "instance {i}: mass {total_mass} != {n}");

        for s in 0..m {
            let token_mass: f64 = (0..n).map(|t| gamma.at2(t, s)).sum();
            assert!(token_mass >= 1.0 - 1e-9, "instance {i}: token {s} mass {token_mass}");
        }

        // shift covariance: loss(logp + c) == loss(logp) - n*c, gamma unchanged
        let c = rng.gen_range(-2.0..2.0);
        let shifted_data: Vec<f64> = logp.tensor().data().iter().map(|v| v + c).collect();
        let shifted =
            EmissionMatrix::new(Tensor::new(vec![n, m], shifted_data).unwrap()).unwrap();
        let shifted_lattice = AlignmentLattice::compute(&shifted).unwrap();
        let expected = lattice.loss() - n as f64 * c;
        assert!(
            (shifted_lattice.loss() - expected).abs() < 1e-9,
            "instance {i}: shifted loss {} vs {expected}",
            shifted_lattice.loss()
        );
        for (a, b) in gamma.data().iter().zip(shifted_lattice.gamma.data()) {
            assert!((a - b).abs() < 1e-9, "instance {i}: gamma moved by {}", (a - b).abs());
        }
    }
    println!("[PASS] criterion 3: posterior normalization, mass, and shift covariance on 100 instances");
}

#[test]
fn criterion_4_viterbi_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e); // same instances as criterion 1
    for n in 1..=10 {
        for m in 1..=n {
            for _ in 0..50 {
                let logp = random_emission(n, m, &mut rng);
                let (path, score) = viterbi(&logp).unwrap();
                let durations = path_to_durations(&path, m).unwrap();

                let best_enumerated = enumerate_alignments(n, m)
                    .unwrap()
                    .iter()
                    .map(|comp| path_score(&logp, comp))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(
                    (score - best_enumerated).abs() < 1e-12,
                    "n={n} m={m}: viterbi {score} vs enumerated max {best_enumerated}"
                );
                // the returned durations must themselves achieve the maximum
                let achieved = path_score(&logp, &durations);
                assert!(
                    (achieved - best_enumerated).abs() < 1e-12,
                    "n={n} m={m}: durations {durations:?} score {achieved} vs {best_enumerated}"
                );
            }
        }
    }
    println!("[PASS] criterion 4: viterbi equals the enumerated maximum and returns an argmax decomposition");
}

#[test]
fn criterion_5_synthetic_alignment_recovery() {
    let mut recovered = 0usize;
    let mut slowest = Duration::ZERO;
    for seed in 0..20u64 {
        let started = Instant::now();
        let task = generate_task(5, 2, 8, 0.1, seed).unwrap();
        let config = TrainConfig { seed, ..TrainConfig::default() };
        assert_eq!((config.steps, config.lr), (500, 1e-2));
        let (params, _) = train_phase1(&task, &config).unwrap();
        let durations = extract_durations(&params, &task).unwrap();
        let elapsed = started.elapsed();
        slowest = slowest.max(elapsed);
        assert!(elapsed < Duration::from_secs(10), "seed {seed} took {elapsed:?}");
        if durations == task.true_durations {
            recovered += 1;
        } else {
            println!(
                "seed {seed}: recovered {:?} vs truth {:?}",
                durations.as_slice(),
                task.true_durations.as_slice()
            );
        }
    }
    assert!(recovered >= 19, "only {recovered}/20 seeds recovered ground truth");
    println!(
        "[PASS] criterion 5: ground-truth durations recovered for {recovered}/20 seeds \
         (slowest run {slowest:.2?})"
    );
}

#[test]
fn criterion_6_duration_regressor() {
    let task = generate_task(5, 2, 8, 0.1, 0).unwrap();
    let (params, _) = train_phase1(&task, &TrainConfig::default()).unwrap();
    let extracted = extract_durations(&params, &task).unwrap();

    let config = RegressorConfig::default();
    assert_eq!(config.steps, 2000);
    let (regressor, mse) = extract_and_train_duration_regressor(&params, &task, &config).unwrap();
    assert!(mse < 1e-3, "regressor MSE {mse}");
    assert_eq!(
        regressor.predict_durations(),
        extracted,
        "exp+round must reproduce the extracted durations"
    );
    println!("[PASS] criterion 6: duration regressor MSE {mse:.3e} < 1e-3 and exp+round reproduces durations");
}

#[test]
fn criterion_7_performance() {
    let (n, m, d) = (1000usize, 180usize, 80usize);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e);

    let make_instance = |rng: &mut ChaCha8Rng| -> (MelSequence, GaussianSequence) {
        let mel_data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean_data: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lv_data: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        (
            MelSequence::new(Tensor::new(vec![n, d], mel_data).unwrap()).unwrap(),
            GaussianSequence::new(
                Tensor::new(vec![m, d], mean_data).unwrap(),
                Tensor::new(vec![m, d], lv_data).unwrap(),
            )
            .unwrap(),
        )
    };

    let full_pass = |(mel, gaussians): &(MelSequence, GaussianSequence)| -> f64 {
        let logp = emission_matrix(mel, gaussians).unwrap();
        let lattice = AlignmentLattice::compute(&logp).unwrap();
        let (d_means, d_log_vars) = grad_gaussians(&lattice.gamma, mel, gaussians).unwrap();
        // keep the whole pass observable
        lattice.loss() + d_means.data()[0] + d_log_vars.data()[0]
    };

    // single instance, single-threaded, warm
    let instance = make_instance(&mut rng);
    let _ = full_pass(&instance);
    let started = Instant::now();
    let _ = full_pass(&instance);
    let single = started.elapsed();
    assert!(single < Duration::from_secs(1), "single pass took {single:?}");

    // batch of 32 such instances: sequential vs thread pool
    let batch: Vec<_> = (0..32).map(|_| make_instance(&mut rng)).collect();
    let started = Instant::now();
    let serial_sum: f64 = batch.iter().map(full_pass).sum();
    let serial = started.elapsed();

    let cores = std::thread::available_parallelism().map(|c| c.get()).unwrap_or(1);
    let threads = cores.min(4);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let started = Instant::now();
    let parallel_sum: f64 = pool.install(|| {
        use rayon::prelude::*;
        batch.par_iter().map(full_pass).sum()
    });
    let parallel = started.elapsed();
    assert_eq!(serial_sum, parallel_sum, "parallel pass must be bit-identical");

    let speedup = serial.as_secs_f64() / parallel.as_secs_f64();
    if threads >= 2 {
        assert!(
            speedup >= 0.7 * threads as f64,
            "batch speedup {speedup:.2}x on {threads} threads is not near-linear"
        );
    }
    println!(
        "[PASS] criterion 7: single pass {single:.2?} (< 1 s); batch of 32 {speedup:.2}x \
         speedup on {threads} threads ({serial:.2?} -> {parallel:.2?})"
    );
}

#[test]
fn criterion_8_format_and_cli() {
    let dir = tempfile::tempdir().unwrap();

    // bit-exact round-trip, both dtypes, including log-zero entries
    let mut rng = ChaCha8Rng::seed_from_u64(0xf0);
    for dtype in [DType::F64, DType::F32] {
        let data: Vec<f64> = (0..24)
            .map(|i| if i % 7 == 0 { LOG_ZERO } else { rng.gen_range(-1e3..1e3) })
            .collect();
        let t = Tensor::new(vec![4, 6], data).unwrap().with_dtype(dtype);
        let path = dir.path().join(format!("rt_{dtype}.maln"));
        t.save(&path).unwrap();
        let back = Tensor::load(&path).unwrap();
        assert_eq!(back.dims(), t.dims());
        assert_eq!(back.dtype(), t.dtype());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "round-trip must be bit-exact");
        }
    }

    let bin = env!("CARGO_BIN_EXE_maln");
    let run = |args: &[&str], envs: &[(&str, &str)]| -> (i32, String, String) {
        let mut cmd = Command::new(bin);
        cmd.args(args);
        for (k, v) in envs {
            cmd.env(k, v);
        }
        let out = cmd.output().unwrap();
        (
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stdout).into_owned(),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    };

    // cross-command agreement: n=20, m=10 has C(19,9) = 92378 alignments
    let (n, m) = (20usize, 10usize);
    let data: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-3.0..0.0)).collect();
    let logp_path = dir.path().join("logp.maln");
    Tensor::new(vec![n, m], data).unwrap().save(&logp_path).unwrap();
    let logp_arg = logp_path.to_str().unwrap();

    let (code, loss_out, _) = run(&["loss", "--logp", logp_arg], &[]);
    assert_eq!(code, 0);
    let (code, oracle_out, _) = run(&["oracle", "--logp", logp_arg], &[]);
    assert_eq!(code, 0);
    let loss: f64 = loss_out.trim().parse().unwrap();
    let oracle: f64 = oracle_out.trim().parse().unwrap();
    assert!((loss - oracle).abs() < 1e-9, "loss {loss} vs oracle {oracle}");

    // infeasible instance (n < m) -> exit 2
    let infeasible_path = dir.path().join("infeasible.maln");
    Tensor::new(vec![1, 3], vec![-1.0, -1.0, -1.0]).unwrap().save(&infeasible_path).unwrap();
    let (code, _, err) = run(&["loss", "--logp", infeasible_path.to_str().unwrap()], &[]);
    assert_eq!(code, 2, "stderr: {err}");
    assert!(err.contains("infeasible_alignment"), "stderr: {err}");

    // malformed file -> exit 3
    let malformed_path = dir.path().join("malformed.maln");
    let mut f = std::fs::File::create(&malformed_path).unwrap();
    f.write_all(b"NOPE....").unwrap();
    drop(f);
    let (code, _, err) = run(&["loss", "--logp", malformed_path.to_str().unwrap()], &[]);
    assert_eq!(code, 3, "stderr: {err}");
    assert!(err.contains("format_error"), "stderr: {err}");

    // oracle refusal above the combinatorial limit -> exit 4
    let (code, _, err) =
        run(&["oracle", "--logp", logp_arg], &[("MALN_COMB_LIMIT", "1000")]);
    assert_eq!(code, 4, "stderr: {err}");
    assert!(err.contains("comb_limit"), "stderr: {err}");
    assert!(err.contains("92378"), "refusal must name the count, stderr: {err}");

    println!("[PASS] criterion 8: bit-exact round-trip, loss/oracle agreement, and documented exit codes");
}
