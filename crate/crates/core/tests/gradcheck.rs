//! Every differentiable tape op against central finite differences.

use daif_core::{Tape, Tensor, Var};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

/// Builds `sum(op(inputs) ∘ probe)` so any output shape reduces to a scalar
/// with a non-trivial upstream gradient.
fn scalar_loss(
    tape: &mut Tape,
    vars: &[Var],
    op: &dyn Fn(&mut Tape, &[Var]) -> Var,
    probe_seed: u64,
) -> Var {
    let out = op(tape, vars);
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let probe = random(tape.shape(out), &mut rng);
    let p = tape.leaf(probe);
    let prod = tape.mul(out, p).unwrap();
    tape.sum(prod).unwrap()
}

fn loss_value(inputs: &[Tensor], op: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let l = scalar_loss(&mut tape, &vars, op, 99);
    tape.value(l).data()[0]
}

/// Largest relative error between analytic and numeric gradients over all
/// entries of all inputs.
fn max_rel_error(inputs: &[Tensor], op: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let l = scalar_loss(&mut tape, &vars, op, 99);
    let grads = tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let g = grads.get(vars[i]).unwrap();
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= H;
            let fd = (loss_value(&plus, op) - loss_value(&minus, op)) / (2.0 * H);
            let a = g.data()[e];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

fn check(inputs: &[Tensor], op: &dyn Fn(&mut Tape, &[Var]) -> Var) {
    let err = max_rel_error(inputs, op);
    assert!(err < TOL, "relative gradient error {err:e}");
}

#[test]
fn matmul_and_batched_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(&[random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)], &|t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
    check(&[random(&[2, 3, 4], &mut rng), random(&[2, 4, 5], &mut rng)], &|t, v| {
        t.batch_matmul(v[0], v[1], false).unwrap()
    });
    check(&[random(&[2, 3, 4], &mut rng), random(&[2, 5, 4], &mut rng)], &|t, v| {
        t.batch_matmul(v[0], v[1], true).unwrap()
    });
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (random(&[3, 4], &mut rng), random(&[3, 4], &mut rng));
    check(&[a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]).unwrap());
    check(&[a.clone(), b.clone()], &|t, v| t.sub(v[0], v[1]).unwrap());
    check(&[a.clone(), b], &|t, v| t.mul(v[0], v[1]).unwrap());
    check(std::slice::from_ref(&a), &|t, v| t.scale(v[0], -2.5).unwrap());
    check(std::slice::from_ref(&a), &|t, v| t.gelu(v[0]).unwrap());
    check(&[a, random(&[4], &mut rng)], &|t, v| t.add_bias(v[0], v[1]).unwrap());
}

#[test]
fn normalization_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(
        &[random(&[5, 6], &mut rng), random(&[6], &mut rng), random(&[6], &mut rng)],
        &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(),
    );
    check(&[random(&[4, 7], &mut rng)], &|t, v| t.softmax(v[0]).unwrap());
    check(&[random(&[2, 3, 5], &mut rng)], &|t, v| t.softmax(v[0]).unwrap());
}

#[test]
fn layout_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(&[random(&[2, 3, 4, 2], &mut rng)], &|t, v| {
        t.permute(v[0], &[0, 2, 1, 3]).unwrap()
    });
    check(&[random(&[6, 4], &mut rng)], &|t, v| t.reshape(v[0], &[3, 8]).unwrap());
    check(&[random(&[5, 3], &mut rng)], &|t, v| {
        t.gather_rows(v[0], &[4, 0, 0, 2]).unwrap()
    });
    check(&[random(&[2, 3], &mut rng), random(&[4, 3], &mut rng)], &|t, v| {
        t.concat_rows(&[v[0], v[1]]).unwrap()
    });
}

#[test]
fn reductions_and_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(&[random(&[3, 4], &mut rng)], &|t, v| t.mean(v[0]).unwrap());
    check(&[random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)], &|t, v| {
        t.mse_loss(v[0], v[1]).unwrap()
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composed_affine_chain(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            random(&[m, k], &mut rng),
            random(&[k, n], &mut rng),
            random(&[n], &mut rng),
            random(&[n], &mut rng),
            random(&[n], &mut rng),
        ];
        let err = max_rel_error(&inputs, &|t, v| {
            let h = t.affine(v[0], v[1], v[2]).unwrap();
            let h = t.gelu(h).unwrap();
            let h = t.layer_norm(h, v[3], v[4], 1e-5).unwrap();
            t.softmax(h).unwrap()
        });
        prop_assert!(err < TOL, "relative gradient error {err:e}");
    }
}
