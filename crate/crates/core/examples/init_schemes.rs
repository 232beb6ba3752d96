//! Builds each adapter initialization for one weight matrix and reports how
//! far the effective weight moves at step 0.

use d2lora::autodiff::Tensor;
use d2lora::init::{init_kaiming, init_olora, init_pissa, init_vanilla};
use d2lora::linalg::{qr, svd};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> d2lora::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Tensor::randn(&[12, 10], 1.0, &mut rng);
    let (r, alpha) = (4, 8.0);

    let f = svd(&w)?;
    println!("singular values: {:.3?}", f.s);
    println!("svd reconstruction error: {:.2e}", f.reconstruct().max_abs_diff(&w));
    let (q, rr) = qr(&w)?;
    println!("qr reconstruction error:  {:.2e}", q.matmul(&rr)?.max_abs_diff(&w));

    for (name, ad) in [("vanilla", init_vanilla((12, 10), r, alpha, 0)?), ("kaiming", init_kaiming((12, 10), r, alpha, 0)?)] {
        println!("{name:8} |dW| at init = {:.3e}", ad.delta().frobenius());
    }
    for (name, p) in [("pissa", init_pissa(&w, r, alpha)?), ("olora", init_olora(&w, r, alpha)?)] {
        let back = p.residual.add(&p.adapter.delta())?;
        println!(
            "{name:8} |dW| = {:.3}, residual + dW recovers W to {:.2e}",
            p.adapter.delta().frobenius(),
            back.max_abs_diff(&w)
        );
    }
    Ok(())
}
