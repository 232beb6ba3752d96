use d2lora::autodiff::{grad_check, Tape, Tensor, Var};
use d2lora::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Values bounded away from zero so kinks and logs stay out of the
/// finite-difference window.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.2..1.5);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Random linear functional of `x`, so every output element contributes.
fn project(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(rand_t(&shape, 999));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let err = grad_check(|t, v| { let out = f(t, v)?; project(t, out) }, inputs, EPS);
    assert!(err < TOL, "{name}: relative gradient error {err:.3e}");
}

#[test]
fn binary_ops() {
    let (a, b) = (rand_t(&[3, 4], 1), rand_t(&[3, 4], 2));
    check("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    check("sub", &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
    check("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
    check("matmul", &[a.clone(), rand_t(&[4, 5], 3)], |t, v| t.matmul(v[0], v[1]));
    check("matmul_t", &[a.clone(), rand_t(&[5, 4], 4)], |t, v| t.matmul_t(v[0], v[1]));
    check("add_row", &[a, rand_t(&[1, 4], 5)], |t, v| t.add_row(v[0], v[1]));
}

#[test]
fn unary_ops() {
    let x = rand_t(&[3, 5], 6);
    let nz = away_from_zero(&[3, 5], 7);
    check("scale", &[x.clone()], |t, v| Ok(t.scale(v[0], -1.7)));
    check("neg", &[x.clone()], |t, v| Ok(t.neg(v[0])));
    check("add_scalar", &[x.clone()], |t, v| Ok(t.add_scalar(v[0], 0.3)));
    check("relu", &[nz.clone()], |t, v| Ok(t.relu(v[0])));
    check("exp", &[x.clone()], |t, v| Ok(t.exp(v[0])));
    check("log", &[nz.map(f64::abs)], |t, v| t.log(v[0]));
    check("sigmoid", &[x.clone()], |t, v| Ok(t.sigmoid(v[0])));
    check("log_sigmoid", &[x.scale(4.0)], |t, v| Ok(t.log_sigmoid(v[0])));
    check("clamp", &[nz], |t, v| Ok(t.clamp(v[0], -0.1, 0.1)));
    check("sum", &[x.clone()], |t, v| Ok(t.sum(v[0])));
    check("mean", &[x], |t, v| Ok(t.mean(v[0])));
}

#[test]
fn row_ops() {
    let x = rand_t(&[4, 6], 8);
    check("log_softmax", &[x.clone()], |t, v| t.log_softmax(v[0]));
    check("causal_softmax", &[rand_t(&[5, 5], 9)], |t, v| t.causal_softmax(v[0]));
    check("layer_norm", &[x.clone(), rand_t(&[1, 6], 10), rand_t(&[1, 6], 11)], |t, v| t.layer_norm(v[0], v[1], v[2]));
    check("slice_cols", &[x.clone()], |t, v| t.slice_cols(v[0], 2, 3));
    check("concat_cols", &[x.clone(), rand_t(&[4, 2], 12)], |t, v| t.concat_cols(&[v[0], v[1]]));
    check("gather", &[x.clone()], |t, v| t.gather(v[0], &[(0, 1), (3, 5), (0, 1), (2, 0)]));
    check("embedding", &[rand_t(&[7, 3], 13)], |t, v| t.embedding(v[0], &[6, 0, 6, 2]));
    let err = grad_check(|t, v| t.softmax_cross_entropy(v[0], &[1, 5, 0, 2], &[1.0, 0.0, 1.0, 1.0]), &[x], EPS);
    assert!(err < TOL, "softmax_cross_entropy: {err:.3e}");
}

#[test]
fn detached_branch_gets_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(rand_t(&[2, 2], 14));
    let d = tape.detach(x);
    let y = tape.mul(x, d).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    // d(x * stop(x))/dx = stop(x)
    assert_eq!(tape.grad(x).unwrap(), *tape.value(x));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
        let a = rand_t(&[m, k], seed);
        let b = rand_t(&[k, n], seed ^ 1);
        let c = rand_t(&[n, p], seed ^ 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-12 * (1.0 + left.max_abs()));
    }

    #[test]
    fn matmul_t_matches_explicit_transpose(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6) {
        let a = rand_t(&[m, k], seed);
        let b = rand_t(&[n, k], seed ^ 3);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let y = tape.matmul_t(va, vb).unwrap();
        prop_assert_eq!(tape.value(y), &a.matmul(&b.transpose()).unwrap());
    }
}
