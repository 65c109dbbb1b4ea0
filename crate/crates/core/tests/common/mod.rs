#![allow(dead_code)]

use pdploc::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Tensor whose entries stay at least `margin` away from zero.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds `sum(f(inputs) * weights)` so every output element carries a
/// distinct upstream gradient.
fn weighted_output<F>(tape: &mut Tape, build: &F, vars: &[Var], weights: &mut Option<Tensor>, rng_seed: u64) -> Var
where
    F: Fn(&mut Tape, &[Var]) -> pdploc::Result<Var>,
{
    let out = build(tape, vars).expect("forward");
    let shape = tape.value(out).shape().to_vec();
    let w = weights
        .get_or_insert_with(|| random_tensor(&mut rng(rng_seed), &shape))
        .clone();
    let w = tape.constant(w);
    let prod = tape.hadamard(out, w).expect("hadamard");
    tape.sum(prod).expect("sum")
}

/// Largest error between reverse-mode gradients and central finite
/// differences, measured as `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn max_grad_error<F>(build: F, inputs: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> pdploc::Result<Var>,
{
    let mut weights = None;
    let eval = |values: &[Tensor], weights: &mut Option<Tensor>| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = weighted_output(&mut tape, &build, &vars, weights, 99);
        tape.value(out).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = weighted_output(&mut tape, &build, &vars, &mut weights, 99);
    let grads = tape.backward(out).expect("backward");

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus, &mut weights) - eval(&minus, &mut weights)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

/// Random PDP samples of the given shape with labels in a 10 m square.
pub fn random_pdps(rng: &mut ChaCha8Rng, n: usize, sensors: usize, time_samples: usize) -> Vec<pdploc::dataio::PdpMatrix> {
    (0..n)
        .map(|_| {
            let powers = (0..sensors * time_samples).map(|_| rng.gen_range(0.0..2.0)).collect();
            let label = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)];
            pdploc::dataio::PdpMatrix::new(sensors, time_samples, powers, label, 1.0 / 122.88e6).unwrap()
        })
        .collect()
}

/// Norm-wise relative error `|g - g_fd| / |g_fd|` between the reverse-mode
/// parameter gradient of a weighted sum of predictions and central finite
/// differences over every parameter of a tiny model.
pub fn model_grad_error(family: pdploc::model::Family, seed: u64) -> f64 {
    use pdploc::model::{build_forward, token_batch, ModelConfig, ModelParams};
    use pdploc::tokenizer::TokenizerSpec;

    let cfg = ModelConfig::new(family, TokenizerSpec::Sst, (1, 6, 8), 2, (3, 5)).unwrap();
    let mut r = rng(seed);
    let base = ModelParams::init(&cfg, seed).unwrap();
    // moderate random weights so every path carries a visible gradient
    let flat: Vec<f64> = base.to_flat().iter().map(|_| r.gen_range(-0.6..0.6)).collect();
    let samples = random_pdps(&mut r, 2, 3, 5);
    let refs: Vec<&pdploc::dataio::PdpMatrix> = samples.iter().collect();
    let tokens = token_batch(&refs, &cfg).unwrap();
    let weights = random_tensor(&mut r, &[2, 2]);

    let run = |flat: &[f64], grads: bool| -> (f64, Vec<f64>) {
        let p = ModelParams::from_flat(&cfg, flat, base.output).unwrap();
        let mut tape = Tape::new();
        let g = build_forward(&mut tape, &p, &cfg, tokens.clone(), grads).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.hadamard(g.prediction, w).unwrap();
        let out = tape.sum(prod).unwrap();
        let value = tape.value(out).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        let back = tape.backward(out).unwrap();
        let mut flat_grad = Vec::new();
        for (v, t) in g.params.iter().zip(p.tensors()) {
            match back.get(*v) {
                Some(gt) => flat_grad.extend_from_slice(gt.data()),
                None => flat_grad.extend(std::iter::repeat(0.0).take(t.len())),
            }
        }
        (value, flat_grad)
    };

    let (_, analytic) = run(&flat, true);
    let h = 1e-6;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for j in 0..flat.len() {
        let mut plus = flat.clone();
        plus[j] += h;
        let mut minus = flat.clone();
        minus[j] -= h;
        let numeric = (run(&plus, false).0 - run(&minus, false).0) / (2.0 * h);
        diff += (analytic[j] - numeric).powi(2);
        norm += numeric * numeric;
    }
    assert!(norm > 1e-6, "finite-difference gradient vanished");
    (diff / norm).sqrt()
}

/// SST small model on a reduced input with random weights of moderate size.
pub fn random_sst_model(family: pdploc::model::Family, seed: u64) -> (pdploc::model::ModelConfig, pdploc::model::ModelParams) {
    use pdploc::model::{ModelConfig, ModelParams, ModelSize};
    use pdploc::tokenizer::TokenizerSpec;
    let cfg = ModelConfig::preset(family, TokenizerSpec::Sst, ModelSize::Small, 18, 32).unwrap();
    let base = ModelParams::init(&cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let flat: Vec<f64> = base.to_flat().iter().map(|_| r.gen_range(-0.3..0.3)).collect();
    (cfg.clone(), ModelParams::from_flat(&cfg, &flat, base.output).unwrap())
}

/// Largest change of the prediction over `perms` random sensor-row
/// permutations of one random input.
pub fn permutation_max_change(family: pdploc::model::Family, perms: usize, seed: u64) -> f64 {
    use rand::seq::SliceRandom;
    let (cfg, params) = random_sst_model(family, seed);
    let mut r = rng(seed);
    let x = random_pdps(&mut r, 1, cfg.sensors, cfg.time_samples).remove(0);
    let (base, _) = pdploc::model::forward(&params, &cfg, &x, false).unwrap();
    let mut order: Vec<usize> = (0..cfg.sensors).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..perms {
        order.shuffle(&mut r);
        let (p, _) = pdploc::model::forward(&params, &cfg, &x.permuted_rows(&order).unwrap(), false).unwrap();
        worst = worst.max((p[0] - base[0]).abs()).max((p[1] - base[1]).abs());
    }
    worst
}

/// Largest deviation of an attention row sum from one, over every layer and
/// head of a random model on a few random inputs.
pub fn attention_row_sum_error(family: pdploc::model::Family, seed: u64) -> f64 {
    let (cfg, params) = random_sst_model(family, seed);
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for x in random_pdps(&mut r, 3, cfg.sensors, cfg.time_samples) {
        let (_, rec) = pdploc::model::forward(&params, &cfg, &x, true).unwrap();
        for head in rec.unwrap().layers.iter().flatten() {
            for i in 0..head.rows() {
                worst = worst.max((head.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    worst
}

/// Largest change of an RMSNorm output under input scaling by `factor`.
pub fn rmsnorm_scale_change(x: &Tensor, factor: f64) -> f64 {
    let run = |x: Tensor| {
        let mut tape = Tape::new();
        let gamma = tape.constant(Tensor::filled(&[x.cols()], 1.0));
        let xv = tape.constant(x);
        let y = tape.rmsnorm(xv, gamma, 0.0).unwrap();
        tape.value(y).clone()
    };
    let mut scaled = x.clone();
    scaled.data_mut().iter_mut().for_each(|v| *v *= factor);
    let (a, b) = (run(x.clone()), run(scaled));
    a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Mean per-sample L1 training error of the final EMA weights after a
/// no-augmentation run of small L-SwiGLU-T + SST on `n` samples.
pub fn overfit_l1(n: usize, epochs: usize) -> (f64, Vec<f64>) {
    use pdploc::augment::AugmentConfig;
    use pdploc::dataio::{compress_dataset, generate_dataset, GeneratorConfig, SensorLayout};
    use pdploc::model::{predict, Family, ModelConfig, ModelSize};
    use pdploc::tokenizer::TokenizerSpec;
    use pdploc::train::{train, TrainConfig};

    let gen = GeneratorConfig { rng_seed: 5, ..GeneratorConfig::default() };
    let data = generate_dataset(&SensorLayout::default(), &gen, n).unwrap();
    let model = ModelConfig::preset(Family::LSwiGlu, TokenizerSpec::Sst, ModelSize::Small, 18, data[0].time_samples()).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: n,
        seed: 1,
        augment: AugmentConfig::none(),
        ..TrainConfig::default()
    };
    let out = train(&data, &model, &cfg, None, |_| {}).unwrap();
    let ck = &out.checkpoint;
    let inputs = compress_dataset(&data, &ck.header.compression).unwrap();
    let preds = predict(&ck.ema, ck.config(), &inputs).unwrap();
    let l1 = preds
        .iter()
        .zip(&data)
        .map(|(p, s)| (p[0] - s.label[0]).abs() + (p[1] - s.label[1]).abs())
        .sum::<f64>()
        / n as f64;
    (l1, out.loss_history())
}

/// Worst finite-difference error of every differentiable tape op.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let h = 1e-6;
    let mut r = rng(21);
    let mut out = Vec::new();
    let mut check = |name: &'static str, err: f64| out.push((name, err));

    let (a, b) = (random_tensor(&mut r, &[2, 3, 4]), random_tensor(&mut r, &[4, 5]));
    check("matmul", max_grad_error(|t, v| t.matmul(v[0], v[1]), &[a, b], h));
    let (a, b) = (random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4]));
    check("add", max_grad_error(|t, v| t.add(v[0], v[1]), &[a.clone(), b.clone()], h));
    check("hadamard", max_grad_error(|t, v| t.hadamard(v[0], v[1]), &[a.clone(), b], h));
    check("scale", max_grad_error(|t, v| t.scale(v[0], -1.7), &[a.clone()], h));
    check("transpose", max_grad_error(|t, v| t.transpose(v[0]), &[a.clone()], h));
    check("sum", max_grad_error(|t, v| t.sum(v[0]), &[a.clone()], h));
    check("softmax_rows", max_grad_error(|t, v| t.softmax_rows(v[0]), &[a.clone()], h));
    let bias = random_tensor(&mut r, &[4]);
    check("add_row", max_grad_error(|t, v| t.add_row(v[0], v[1]), &[a.clone(), bias], h));
    let x = random_away_from_zero(&mut r, &[3, 4], 0.05);
    check("relu", max_grad_error(|t, v| t.relu(v[0]), &[x.clone()], h));
    check("swish", max_grad_error(|t, v| t.swish(v[0]), &[a.clone()], h));
    let (g, be) = (random_tensor(&mut r, &[4]), random_tensor(&mut r, &[4]));
    check(
        "layernorm",
        max_grad_error(|t, v| t.layernorm(v[0], v[1], v[2], 1e-5), &[x.clone(), g.clone(), be], h),
    );
    check("rmsnorm", max_grad_error(|t, v| t.rmsnorm(v[0], v[1], 1e-5), &[x, g], h));

    let x = random_tensor(&mut r, &[2, 3, 4]);
    check("mean_over_tokens", max_grad_error(|t, v| t.mean_over_tokens(v[0]), &[x.clone()], h));
    let tok = random_tensor(&mut r, &[4]);
    check("append_token", max_grad_error(|t, v| t.append_token(v[0], v[1]), &[x.clone(), tok], h));
    let table = random_tensor(&mut r, &[3, 4]);
    check("add_positional", max_grad_error(|t, v| t.add_positional(v[0], v[1]), &[x.clone(), table], h));
    check("select_token", max_grad_error(|t, v| t.select_token(v[0], 2), &[x.clone()], h));
    check("reshape", max_grad_error(|t, v| t.reshape(v[0], &[6, 4]), &[x], h));

    let qkv = [
        random_tensor(&mut r, &[2, 4, 6]),
        random_tensor(&mut r, &[2, 4, 6]),
        random_tensor(&mut r, &[2, 4, 6]),
    ];
    check("attention", max_grad_error(|t, v| t.attention(v[0], v[1], v[2], 3), &qkv, h));

    let pred = random_tensor(&mut r, &[3, 2]);
    let ta: Vec<f64> = pred.data().iter().map(|p| p + 0.4).collect();
    let tb: Vec<f64> = pred.data().iter().map(|p| p - 0.2).collect();
    let lambdas = [0.3, 1.0, 0.75];
    check("srm_l1", max_grad_error(|t, v| t.srm_l1(v[0], &ta, &tb, &lambdas), &[pred], h));
    out
}
