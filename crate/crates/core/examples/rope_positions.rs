//! 3D rotary positions over (view, row, column): attention logits depend only
//! on the offset between two tokens, so shifting both leaves them unchanged.
//!
//!     cargo run --release --example rope_positions

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqflow::seqformer::{rotate, TokenPosition};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> seqflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = 100.0;
    for (a, b) in [
        ((0, 2, 3), (1, 2, 3)),
        ((4, 7, 1), (5, 7, 1)),
        ((0, 0, 0), (0, 5, 5)),
        ((6, 1, 2), (6, 6, 7)),
    ] {
        let pa = TokenPosition::new(a.0, a.1, a.2);
        let pb = TokenPosition::new(b.0, b.1, b.2);
        let logit = dot(&rotate(&q, pa, base)?, &rotate(&k, pb, base)?);
        println!("q at {a:?}, k at {b:?}: logit {logit:+.6}");
    }
    println!("(rows 1-2 and 3-4 share offsets, so their logits match)");
    Ok(())
}
