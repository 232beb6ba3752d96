//! Checks tape gradients against central finite differences for a small
//! two-layer network with a masked cross-entropy head.

use d2lora::autodiff::{grad_check, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> d2lora::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
    let w1 = Tensor::randn(&[6, 5], 0.5, &mut rng);
    let w2 = Tensor::randn(&[5, 3], 0.5, &mut rng);
    let err = grad_check(
        |tape, v| {
            let h = tape.matmul(v[0], v[1])?;
            let h = tape.sigmoid(h);
            let logits = tape.matmul(h, v[2])?;
            tape.softmax_cross_entropy(logits, &[0, 2, 1, 2], &[1.0, 1.0, 0.0, 1.0])
        },
        &[x, w1, w2],
        1e-6,
    );
    println!("max relative gradient error: {err:.2e}");
    assert!(err < 1e-5);
    Ok(())
}
