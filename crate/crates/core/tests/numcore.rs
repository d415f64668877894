use fairflow::numcore::{batch_norm, dense, dropout, gelu, BatchNormConfig, Graph, Mode, RunningStats, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Central-difference check of d(f)/d(input k) for every input tensor.
fn check_grad(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let h = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for j in 0..t.len() {
            let mut up = inputs.clone();
            up[k].data_mut()[j] += h;
            let mut dn = inputs.clone();
            dn[k].data_mut()[j] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            assert!(err < 1e-5, "input {k} coord {j}: analytic {a} vs fd {fd}");
        }
    }
}

#[test]
fn dense_gelu_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ins = vec![
        random(&mut rng, 5, 3),
        random(&mut rng, 3, 4),
        Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]),
    ];
    check_grad(ins, |g, v| {
        let h = dense(g, v[0], v[1], v[2]).unwrap();
        let a = g.gelu(h);
        g.mean(a)
    });
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ins = vec![random(&mut rng, 4, 3), random(&mut rng, 4, 3)];
    check_grad(ins, |g, v| {
        let s = g.sigmoid(v[0]);
        let p = g.softplus(v[1]);
        let m = g.mul(s, p).unwrap();
        let d = g.sub(m, v[1]).unwrap();
        let a = g.abs(d);
        let c = g.concat_cols(a, s).unwrap();
        let x = g.scale(c, 0.7);
        g.sum(x)
    });
}

#[test]
fn batch_norm_and_row_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ins = vec![
        random(&mut rng, 6, 3),
        Tensor::vector(vec![1.2, 0.8, -0.5]),
        Tensor::vector(vec![0.0, 0.3, -0.1]),
    ];
    check_grad(ins, |g, v| {
        let (xhat, _) = g.batch_norm(v[0], 1e-5).unwrap();
        let y = g.mul_row(xhat, v[1]).unwrap();
        let y = g.add_row(y, v[2]).unwrap();
        let y = g.gelu(y);
        g.mean(y)
    });
}

#[test]
fn bce_with_logits_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ins = vec![random(&mut rng, 6, 1)];
    check_grad(ins, |g, v| {
        g.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap()
    });
}

#[test]
fn gelu_matches_erf_reference() {
    for k in -60..=60 {
        let x = k as f64 / 10.0;
        let reference = 0.5 * x * erfc(-x / std::f64::consts::SQRT_2);
        // statrs erfc is good to roughly 1e-10 in the tails
        assert!(
            (gelu(x) - reference).abs() < 1e-9,
            "x = {x}: {} vs {reference}",
            gelu(x)
        );
    }
    // reference values from an independent double-precision erfc
    let fixed = [
        (-6.0, -5.919525870226207e-09),
        (-2.3, -0.024665453049854378),
        (-0.5, -0.15426876936299344),
        (0.5, 0.34573123063700656),
        (2.3, 2.2753345469501456),
        (6.0, 5.999999994080474),
    ];
    for (x, y) in fixed {
        assert!((gelu(x) - y).abs() < 1e-15, "x = {x}");
    }
    assert!((gelu(1.0) - 0.841345).abs() < 1e-6);
    assert!(gelu(-10.0).abs() < 1e-8);
}

#[test]
fn batch_norm_train_output_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::matrix(
        64,
        2,
        (0..128)
            .map(|k| rng.random_range(0.0..1.0) * 10.0 + k as f64 % 2.0 * 5.0)
            .collect(),
    )
    .unwrap();
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let gamma = g.leaf(Tensor::vector(vec![1.0, 1.0]));
    let beta = g.leaf(Tensor::vector(vec![0.0, 0.0]));
    let (y, stats) = batch_norm(
        &mut g,
        xv,
        gamma,
        beta,
        &RunningStats::new(2),
        Mode::Train,
        BatchNormConfig::default(),
    )
    .unwrap();
    let y = g.value(y);
    for c in 0..2 {
        let col: Vec<f64> = (0..64).map(|r| y.row(r)[c]).collect();
        let mean = col.iter().sum::<f64>() / 64.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
        let raw: Vec<f64> = (0..64).map(|r| x.row(r)[c]).collect();
        let raw_mean = raw.iter().sum::<f64>() / 64.0;
        let unbiased = raw.iter().map(|v| (v - raw_mean).powi(2)).sum::<f64>() / 63.0;
        let stats = stats.as_ref().unwrap();
        assert!((stats.mean[c] - raw_mean).abs() < 1e-12);
        assert!((stats.var[c] - unbiased).abs() < 1e-9);
    }
}

#[test]
fn batch_norm_eval_uses_running_statistics() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(2, 1, vec![3.0, 5.0]).unwrap());
    let gamma = g.leaf(Tensor::vector(vec![2.0]));
    let beta = g.leaf(Tensor::vector(vec![1.0]));
    let running = RunningStats {
        mean: vec![1.0],
        var: vec![4.0],
    };
    let cfg = BatchNormConfig {
        momentum: 0.1,
        eps: 0.0,
    };
    let (y, stats) = batch_norm(&mut g, x, gamma, beta, &running, Mode::Eval, cfg).unwrap();
    assert!(stats.is_none());
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);
}

#[test]
fn dropout_preserves_expectation_and_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 200_000;
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[n, 1], 1.0));
    let y = dropout(&mut g, x, 0.3, Mode::Train, &mut rng).unwrap();
    let v = g.value(y).data();
    let mean = v.iter().sum::<f64>() / n as f64;
    let dropped = v.iter().filter(|&&e| e == 0.0).count() as f64 / n as f64;
    // binomial standard errors are about 0.0012 and 0.001
    assert!((mean - 1.0).abs() < 0.006, "mean {mean}");
    assert!((dropped - 0.3).abs() < 0.005, "rate {dropped}");
    let z = dropout(&mut g, x, 0.3, Mode::Eval, &mut rng).unwrap();
    assert_eq!(z, x);
    assert!(dropout(&mut g, x, 1.0, Mode::Train, &mut rng).is_err());
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]));
    let b = g.leaf(Tensor::zeros(&[2, 3]));
    assert!(g.matmul(a, b).is_err());
    let c = g.leaf(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, c).is_err());
}
