mod common;

use common::*;
use kws::autodiff::Tape;
use kws::experiment::loss_and_grads;
use kws::frontend::FeatureMatrix;
use kws::loss::{ge2e_triplet_loss, BatchSpec, LossConfig};
use kws::Exec;
use ndarray::Array2;

#[test]
fn every_op_matches_central_differences() {
    for (name, inputs, build) in op_cases() {
        let err = max_grad_error(&inputs, build);
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn pair_loss_gradient_wrt_similarities_and_scalars() {
    let s = random_matrix(&mut rng(3), 6, 3, 1.0);
    let labels = vec![0, 0, 1, 1, 2, 2];
    let inputs = vec![s, Array2::from_elem((1, 1), 3.0), Array2::from_elem((1, 1), -1.5)];
    for gamma in [1.0, 0.5, 0.2] {
        let labels = labels.clone();
        let err = max_grad_error(&inputs, move |t, v| {
            ge2e_triplet_loss(t, v[0], &labels, v[1], v[2], &LossConfig { gamma }).unwrap().loss
        });
        assert!(err < 1e-4, "gamma {gamma}: {err:e}");
    }
}

#[test]
fn recurrent_embedding_gradient() {
    let p = small_model(5);
    let cfg = p.config;
    let inputs: Vec<Array2<f64>> = p.tensors().into_iter().cloned().collect();
    let mut r = rng(9);
    let feats: Vec<FeatureMatrix> = [4, 2, 5].iter().map(|&n| random_features(&mut r, n, 40)).collect();
    let err = max_grad_error(&inputs, move |t, v| {
        let n = cfg.num_layers;
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
        let e = kws::model::embed_batch_on_tape(t, &bound, &cfg, &refs).unwrap();
        weighted_sum(t, e, 21)
    });
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn composite_embed_and_loss_gradient() {
    let spec = BatchSpec::new(3, 4).unwrap();
    let loss_cfg = LossConfig { gamma: 0.5 };
    let p = small_model(11);
    let feats = small_batch(12, &spec);
    let inputs: Vec<Array2<f64>> = p.tensors().into_iter().cloned().collect();
    let err = max_grad_error(&inputs, composite_build(p.config, feats, spec, loss_cfg));
    assert!(err < 1e-3, "{err:e}");
}

#[test]
fn chunked_training_gradient_equals_single_tape() {
    let spec = BatchSpec::new(3, 4).unwrap();
    let loss_cfg = LossConfig { gamma: 0.5 };
    let p = small_model(13);
    let feats = small_batch(14, &spec);
    let refs: Vec<&FeatureMatrix> = feats.iter().collect();

    let mut tape = Tape::new();
    let inputs: Vec<Array2<f64>> = p.tensors().into_iter().cloned().collect();
    let vars: Vec<_> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = composite_build(p.config, feats.clone(), spec, loss_cfg)(&mut tape, &vars);
    let whole = tape.backward(loss).unwrap();

    for (chunk, exec) in [(1, Exec::Sequential), (5, Exec::Parallel), (12, Exec::Sequential)] {
        let (l, grads) = loss_and_grads(&p, &refs, &spec, &loss_cfg, chunk, exec).unwrap();
        assert!((l - tape.scalar(loss)).abs() < 1e-12);
        for ((v, g), x) in vars.iter().zip(&grads).zip(&inputs) {
            let diff = (&whole.get_or_zeros(*v, x.dim()) - g).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff < 1e-12, "chunk {chunk}: {diff:e}");
        }
    }
}

#[test]
fn backward_is_linear_in_the_seed() {
    let mut r = rng(31);
    let a = random_matrix(&mut r, 3, 4, 1.0);
    let b = random_matrix(&mut r, 4, 2, 1.0);
    let s1 = random_matrix(&mut r, 3, 2, 1.0);
    let s2 = random_matrix(&mut r, 3, 2, 1.0);
    let mut tape = Tape::new();
    let av = tape.param(a);
    let bv = tape.param(b);
    let y = tape.matmul(av, bv).unwrap();
    let y = tape.tanh(y).unwrap();
    let g1 = tape.backward_with(y, s1.clone()).unwrap();
    let g2 = tape.backward_with(y, s2.clone()).unwrap();
    let g12 = tape.backward_with(y, &s1 * 2.0 + &s2 * -3.0).unwrap();
    for v in [av, bv] {
        let lhs = g12.get(v).unwrap();
        let rhs = g1.get(v).unwrap() * 2.0 + g2.get(v).unwrap() * -3.0;
        let d = (lhs - &rhs).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(d < 1e-10, "{d:e}");
    }
}
