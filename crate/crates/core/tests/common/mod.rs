#![allow(dead_code)]

use kws::autodiff::{Tape, Var};
use kws::frontend::FeatureMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn random_features(rng: &mut impl Rng, frames: usize, dim: usize) -> FeatureMatrix {
    FeatureMatrix::new(Array2::from_shape_fn((frames, dim), |_| rng.random_range(-8.0f32..8.0))).unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Largest relative error between the tape gradient of `build` and central
/// differences over every entry of every input.
pub fn max_grad_error<F>(inputs: &[Array2<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).expect("backward");

    let mut worst = 0.0f64;
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*v, inputs[k].dim());
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = work[k][[r, c]];
            work[k][[r, c]] = orig + FD_STEP;
            let plus = eval(&work);
            work[k][[r, c]] = orig - FD_STEP;
            let minus = eval(&work);
            work[k][[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g[[r, c]], numeric));
        }
    }
    worst
}

/// Reduces a matrix node to a scalar with fixed random weights, so every
/// output entry receives a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let w = random_matrix(&mut rng(seed), r, c, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

/// Brute-force FAR/FRR at threshold `t` with strict acceptance `score > t`.
pub fn count_rates(pos: &[f64], neg: &[f64], t: f64) -> (f64, f64) {
    let fa = neg.iter().filter(|&&s| s > t).count();
    let fr = pos.iter().filter(|&&s| s <= t).count();
    (fa as f64 / neg.len() as f64, fr as f64 / pos.len() as f64)
}

/// Area under FRR-vs-FAR, walking thresholds `0, step, .., 1` in order and
/// closing the curve at the accept-all corner (FAR 1, FRR 0). Percent.
pub fn fine_grid_auc(pos: &[f64], neg: &[f64], step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    let mut pos = pos.to_vec();
    let mut neg = neg.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let rates = |t: f64| {
        let fa = neg.len() - neg.partition_point(|&s| s <= t);
        let fr = pos.partition_point(|&s| s <= t);
        (fa as f64 / neg.len() as f64, fr as f64 / pos.len() as f64)
    };
    let mut prev = (1.0, 0.0);
    let mut area = 0.0;
    for k in 0..=n {
        let cur = rates(k as f64 * step);
        area += (prev.0 - cur.0) * (prev.1 + cur.1) / 2.0;
        prev = cur;
    }
    100.0 * area
}

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

/// One named gradient case per tape operation: inputs plus a scalar-valued graph.
pub fn op_cases() -> Vec<(&'static str, Vec<Array2<f64>>, Build)> {
    let mut r = rng(7);
    let mut m = |rows, cols, s| random_matrix(&mut r, rows, cols, s);
    let labels = Array2::from_shape_fn((3, 4), |(i, j)| if (i + j) % 3 == 0 { 1.0 } else { 0.0 });
    let weights = Array2::from_shape_fn((3, 4), |(i, j)| if (i + j) % 3 == 0 { 1.0 } else { 0.25 });
    let mut cases: Vec<(&'static str, Vec<Array2<f64>>, Build)> = vec![
        ("matmul", vec![m(3, 4, 1.0), m(4, 2, 1.0)], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y, 1)
        })),
        ("matmul_t", vec![m(3, 4, 1.0), m(2, 4, 1.0)], Box::new(|t, v| {
            let y = t.matmul_t(v[0], v[1]).unwrap();
            weighted_sum(t, y, 2)
        })),
        ("add", vec![m(3, 4, 1.0), m(3, 4, 1.0)], Box::new(|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            weighted_sum(t, y, 3)
        })),
        ("sub", vec![m(3, 4, 1.0), m(3, 4, 1.0)], Box::new(|t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            weighted_sum(t, y, 4)
        })),
        ("add_row", vec![m(3, 4, 1.0), m(1, 4, 1.0)], Box::new(|t, v| {
            let y = t.add_row(v[0], v[1]).unwrap();
            weighted_sum(t, y, 5)
        })),
        ("mul", vec![m(3, 4, 1.0), m(3, 4, 1.0)], Box::new(|t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            weighted_sum(t, y, 6)
        })),
        ("sigmoid", vec![m(3, 4, 3.0)], Box::new(|t, v| {
            let y = t.sigmoid(v[0]).unwrap();
            weighted_sum(t, y, 7)
        })),
        ("tanh", vec![m(3, 4, 2.0)], Box::new(|t, v| {
            let y = t.tanh(v[0]).unwrap();
            weighted_sum(t, y, 8)
        })),
        ("concat_cols", vec![m(2, 3, 1.0), m(2, 2, 1.0)], Box::new(|t, v| {
            let y = t.concat_cols(&[v[0], v[1], v[0]]).unwrap();
            weighted_sum(t, y, 9)
        })),
        ("slice_cols", vec![m(3, 5, 1.0)], Box::new(|t, v| {
            let y = t.slice_cols(v[0], 1, 3).unwrap();
            weighted_sum(t, y, 10)
        })),
        ("select_rows", vec![m(4, 3, 1.0)], Box::new(|t, v| {
            let y = t.select_rows(v[0], &[2, 0, 2]).unwrap();
            weighted_sum(t, y, 11)
        })),
        ("mean", vec![m(3, 4, 1.0)], Box::new(|t, v| {
            let sq = t.mul(v[0], v[0]).unwrap();
            t.mean(sq).unwrap()
        })),
        ("sum", vec![m(3, 4, 1.0)], Box::new(|t, v| {
            let y = t.tanh(v[0]).unwrap();
            t.sum(y).unwrap()
        })),
        ("l2_normalize_rows", vec![m(3, 4, 1.0)], Box::new(|t, v| {
            let y = t.l2_normalize_rows(v[0]).unwrap();
            weighted_sum(t, y, 12)
        })),
        ("scale", vec![m(3, 4, 1.0)], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7).unwrap();
            weighted_sum(t, y, 13)
        })),
        ("affine", vec![m(3, 4, 1.0), m(1, 1, 2.0), m(1, 1, 2.0)], Box::new(|t, v| {
            let y = t.affine(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, y, 14)
        })),
    ];
    cases.push((
        "weighted_bce_with_logits",
        vec![m(3, 4, 4.0)],
        Box::new(move |t, v| t.weighted_bce_with_logits(v[0], labels.clone(), weights.clone()).unwrap()),
    ));
    cases
}

/// Parameters for a small but complete embedder: two stacked layers, a
/// projection and the loss scalars.
pub fn small_model(seed: u64) -> kws::model::ModelParams<f64> {
    let cfg = kws::model::ModelConfig {
        input_dim: 40,
        num_layers: 2,
        hidden_dim: 4,
        embedding_dim: 5,
        ..kws::model::ModelConfig::default()
    };
    let mut p = kws::model::init_params::<f64>(&cfg, seed).unwrap();
    // Move off the symmetric initial biases.
    let mut r = rng(seed ^ 0xb1a5);
    for l in &mut p.layers {
        l.b += &random_matrix(&mut r, 1, l.b.ncols(), 0.5);
    }
    p.proj_b += &random_matrix(&mut r, 1, p.proj_b.ncols(), 0.5);
    p
}

/// Ragged batch ordered as the loss expects (enrollment block, then test block).
pub fn small_batch(seed: u64, spec: &kws::loss::BatchSpec) -> Vec<FeatureMatrix> {
    let mut r = rng(seed);
    (0..spec.num_phrases * spec.utts_per_phrase)
        .map(|_| {
            let frames = r.random_range(3..7);
            random_features(&mut r, frames, 40)
        })
        .collect()
}

/// embed + batch loss as one graph over the model tensors (in
/// `ModelParams::tensors` order).
pub fn composite_build(
    config: kws::model::ModelConfig,
    feats: Vec<FeatureMatrix>,
    spec: kws::loss::BatchSpec,
    loss_cfg: kws::loss::LossConfig,
) -> Build {
    Box::new(move |t, v| {
        let n = config.num_layers;
        let bound = kws::model::BoundParams {
            layers: (0..n)
                .map(|l| kws::model::BoundLayer {
                    w: v[3 * l],
                    u: v[3 * l + 1],
                    b: v[3 * l + 2],
                })
                .collect(),
            proj_w: v[3 * n],
            proj_b: v[3 * n + 1],
            w_scale: v[3 * n + 2],
            b_shift: v[3 * n + 3],
        };
        let refs: Vec<&FeatureMatrix> = feats.iter().collect();
        let e = kws::model::embed_batch_on_tape(t, &bound, &config, &refs).unwrap();
        kws::loss::batch_loss_on_tape(t, e, &spec, bound.w_scale, bound.b_shift, &loss_cfg)
            .unwrap()
            .loss
    })
}
