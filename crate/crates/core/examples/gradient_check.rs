//! Build a small denoiser in f64, run a forward pass over an image view and a
//! ray-map view, and compare reverse-mode gradients with central differences.
//!
//!     cargo run --release --example gradient_check

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqflow::seqformer::{ForwardInput, ModelConfig, SeqFormer};
use seqflow::viewcodec::{TaskPrompt, TaskToken, ViewKind, Vocabulary};

fn main() -> seqflow::Result<()> {
    let config = ModelConfig {
        width: 12,
        depth: 2,
        heads: 1,
        image_channels: 12,
        raymap_channels: 6,
        vocab_size: Vocabulary::len(),
        max_views: 12,
        mlp_ratio: 2,
        time_dim: 8,
        rope_base: 100.0,
        rope_max_freq: 1.0,
        zero_init: false,
    };
    let mut model = SeqFormer::<f64>::new(config, 0)?;
    println!("{} parameters", model.params().numel());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut grid = |c| Array3::from_shape_simple_fn((c, 3, 3), || rng.random_range(-1.0..1.0));
    let (img, rays, u_img, u_rays) = (grid(12), grid(6), grid(12), grid(6));
    let kinds = [ViewKind::Image, ViewKind::Raymap];
    let times = [0.4, 1.0];
    let prompt = TaskPrompt::task_only(TaskToken::Multiview);
    let loss = |m: &SeqFormer<f64>| {
        let input = ForwardInput { kinds: &kinds, latents: &[&img, &rays], times: &times, prompt: &prompt, hidden_views: &[] };
        m.loss_and_grads(&input, &[&u_img, &u_rays])
    };
    let out = loss(&model)?;
    println!("loss {:.6}", out.loss);

    for flat in [0, 97, 1234, 4000] {
        let (slot, r, c) = model.params().locate(flat % model.params().numel());
        let g = out.grads[slot].as_ref().map_or(0.0, |g| g[[r, c]]);
        let orig = model.params().get(slot)[[r, c]];
        let h = 1e-5;
        model.params_mut().get_mut(slot)[[r, c]] = orig + h;
        let up = loss(&model)?.loss;
        model.params_mut().get_mut(slot)[[r, c]] = orig - h;
        let down = loss(&model)?.loss;
        model.params_mut().get_mut(slot)[[r, c]] = orig;
        println!("param {flat:>5}: analytic {g:+.8e}, numeric {:+.8e}", (up - down) / (2.0 * h));
    }
    Ok(())
}
