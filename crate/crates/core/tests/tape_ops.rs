//! Central-difference checks of every tape operation, including gradients
//! with respect to non-parameter inputs.

use pepr_core::nn::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Input = (Vec<f64>, usize, usize);

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Input {
    ((0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(), rows, cols)
}

/// Reduces any output to a scalar via the MSE against a fixed random target.
fn evaluate<F>(inputs: &[Input], f: &F) -> (f64, Vec<Vec<f64>>)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(v, r, c)| tape.leaf_with_grad(v.clone(), *r, *c))
        .collect();
    let out = f(&mut tape, &vars);
    let loss = if tape.dims(out) == (1, 1) {
        out
    } else {
        let (r, c) = tape.dims(out);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let target = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = tape.leaf(target, r, c);
        tape.mean_squared_error(out, t)
    };
    let grads = tape.backward(loss);
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(v, (x, _, _))| grads.wrt(*v).map_or(vec![0.0; x.len()], <[f64]>::to_vec))
        .collect();
    (tape.scalar(loss), g)
}

fn check<F>(name: &str, inputs: Vec<Input>, f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let (_, analytic) = evaluate(&inputs, &f);
    let h = 1e-6;
    for (i, (vals, _, _)) in inputs.iter().enumerate() {
        for j in 0..vals.len() {
            let mut plus = inputs.clone();
            plus[i].0[j] += h;
            let mut minus = inputs.clone();
            minus[i].0[j] -= h;
            let fd = (evaluate(&plus, &f).0 - evaluate(&minus, &f).0) / (2.0 * h);
            let a = analytic[i][j];
            let err = (a - fd).abs();
            assert!(
                err <= 1e-6 * a.abs().max(fd.abs()) || err <= 1e-9,
                "{name}: input {i} coord {j}: analytic {a} vs numeric {fd}"
            );
        }
    }
}

#[test]
fn conv3x3_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for stride in [1, 2] {
        let x = random(&mut rng, 5 * 4, 2, 1.0);
        let w = random(&mut rng, 18, 3, 0.5);
        let b = random(&mut rng, 1, 3, 0.5);
        check("conv3x3", vec![x, w, b], |t, v| t.conv3x3(v[0], v[1], v[2], 5, 4, stride));
    }
}

#[test]
fn normalizations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, 6, 4, 2.0);
    let g = random(&mut rng, 1, 4, 1.5);
    let b = random(&mut rng, 1, 4, 0.5);
    check("group_norm", vec![x.clone(), g.clone(), b.clone()], |t, v| t.group_norm(v[0], v[1], v[2], 2));
    check("layer_norm", vec![x, g, b], |t, v| t.layer_norm(v[0], v[1], v[2]));
}

#[test]
fn pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, 3, 5, 4.0);
    check("silu", vec![x.clone()], |t, v| t.silu(v[0]));
    check("softplus", vec![x.clone()], |t, v| t.softplus(v[0], 2.5));
    let y = random(&mut rng, 3, 5, 4.0);
    check("add", vec![x, y], |t, v| t.add(v[0], v[1]));
}

#[test]
fn linear_with_and_without_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, 4, 3, 1.0);
    let w = random(&mut rng, 3, 2, 1.0);
    let b = random(&mut rng, 1, 2, 1.0);
    check("linear", vec![x.clone(), w.clone(), b], |t, v| t.linear(v[0], v[1], Some(v[2])));
    check("linear no bias", vec![x, w], |t, v| t.linear(v[0], v[1], None));
}

#[test]
fn attention_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random(&mut rng, 3, 4, 1.0);
    let k = random(&mut rng, 5, 4, 1.0);
    let v = random(&mut rng, 5, 4, 1.0);
    check("attention", vec![q, k, v], |t, x| t.attention(x[0], x[1], x[2], 2));
}

#[test]
fn indexing_and_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let table = random(&mut rng, 6, 3, 1.0);
    check("gather_rows", vec![table], |t, v| t.gather_rows(v[0], &[4, 1, 4]));
    let x = random(&mut rng, 16, 2, 1.0);
    check("window_mean", vec![x.clone()], |t, v| t.window_mean(v[0], 4, 4, &[(0, 0), (1, 2), (2, 1)], 2));
    check("upsample", vec![x], |t, v| t.upsample_bilinear(v[0], 4, 4, 3));
}

#[test]
fn losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random(&mut rng, 5, 3, 3.0);
    check("cross entropy", vec![logits], |t, v| t.softmax_cross_entropy(v[0], &[0, 2, 255, 1, 1], 255));
    let z = random(&mut rng, 4, 1, 3.0);
    // Sizes stay well away from the targets so |.| is differentiable.
    let sizes = (vec![1.0, 2.0, 30.0, 40.0, 5.0, 6.0, 7.0, 8.0], 4, 2);
    check("detection loss", vec![z, sizes], |t, v| {
        t.detection_loss(v[0], v[1], &[0.0, 1.0, 0.0, 1.0], &[(1, 10.0, 12.0), (3, 9.0, 3.0)], 0.1)
    });
    let a = random(&mut rng, 3, 4, 1.0);
    let b = random(&mut rng, 3, 4, 1.0);
    check("patch squared error", vec![a.clone(), b.clone()], |t, v| t.patch_squared_error(v[0], v[1]));
    check("mean squared error", vec![a, b], |t, v| t.mean_squared_error(v[0], v[1]));
    let (s1, s2) = ((vec![0.7], 1, 1), (vec![-1.3], 1, 1));
    check("weighted sum", vec![s1, s2], |t, v| t.weighted_sum(v[0], v[1], 0.3, 2.0));
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf_with_grad(vec![1.0, 2.0], 1, 2);
    let d = tape.detach(x);
    let y = tape.add(x, d);
    let t = tape.leaf(vec![0.0, 0.0], 1, 2);
    let l = tape.mean_squared_error(y, t);
    let g = tape.backward(l);
    // d/dx of mean((x + c)^2) with c = x held fixed.
    assert_eq!(g.wrt(x).unwrap(), &[2.0, 4.0]);
    assert!(g.wrt(d).is_none());
}
