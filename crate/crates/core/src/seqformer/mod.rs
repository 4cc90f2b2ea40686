//! The joint denoiser: a pre-norm transformer over the patch tokens of every
//! view plus the prompt tokens.
//!
//! Each view's time is embedded on its own (sinusoid → MLP) and drives an
//! adaptive scale/shift/gate modulation of that view's tokens in every block.
//! Attention is full across views and prompt, with three-axis rotary
//! positions (view, row, col). Image and ray-map latents have separate input
//! and output projections.

mod params;
mod rope;

pub use params::ParamStore;
pub use rope::{rope3d_phases, rope3d_phases_at, rotate, TokenPosition};

use std::rc::Rc;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::flowpath::{TimeVector, CLEAN_TIME};
use crate::real::Real;
use crate::viewcodec::{TaskPrompt, ViewKind, ViewSequence, Vocabulary, RAYMAP_CHANNELS, TOKEN_FEATURES};

pub(crate) use params::hex;

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Channels of an image latent (`3·p²`).
    pub image_channels: usize,
    pub raymap_channels: usize,
    pub vocab_size: usize,
    pub max_views: usize,
    pub mlp_ratio: usize,
    /// Size of the sinusoidal time features.
    pub time_dim: usize,
    pub rope_base: f64,
    /// Highest rotary frequency in radians per grid step; the others
    /// decrease geometrically by `rope_base`.
    #[serde(default = "unit_scale")]
    pub rope_max_freq: f64,
    /// Zero the modulation and output projections at init.
    pub zero_init: bool,
}

fn unit_scale() -> f64 {
    1.0
}

impl ModelConfig {
    /// Defaults for the toy tasks at patch size `patch`.
    pub fn toy(patch: usize) -> Self {
        Self {
            width: 96,
            depth: 4,
            heads: 2,
            image_channels: 3 * patch * patch,
            raymap_channels: RAYMAP_CHANNELS,
            vocab_size: Vocabulary::len(),
            max_views: 12,
            mlp_ratio: 4,
            time_dim: 32,
            rope_base: 4.0,
            rope_max_freq: 3.0,
            zero_init: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.heads == 0 {
            return Err(Error::invalid("width, depth and heads must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.head_dim() % 6 != 0 {
            return Err(Error::invalid(format!(
                "head dimension {} not divisible by 6",
                self.head_dim()
            )));
        }
        if self.max_views < 12 {
            return Err(Error::invalid("max_views must be at least 12"));
        }
        if self.raymap_channels != RAYMAP_CHANNELS {
            return Err(Error::invalid("ray-map latents have 6 channels"));
        }
        if self.vocab_size != Vocabulary::len() {
            return Err(Error::invalid(format!(
                "vocab_size {} does not match the prompt vocabulary ({})",
                self.vocab_size,
                Vocabulary::len()
            )));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("time_dim must be even and mlp_ratio positive"));
        }
        if !(self.rope_base > 1.0 && self.rope_max_freq > 0.0) {
            return Err(Error::invalid("rope_base must exceed 1 and rope_max_freq must be positive"));
        }
        Ok(())
    }

    pub fn channels(&self, kind: ViewKind) -> usize {
        match kind {
            ViewKind::Image => self.image_channels,
            ViewKind::Raymap => self.raymap_channels,
        }
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Zero,
}

struct BlockSlots {
    modulation: (usize, usize),
    qkv: (usize, usize),
    attn_out: (usize, usize),
    fc1: (usize, usize),
    fc2: (usize, usize),
}

struct Slots {
    prompt_embed: usize,
    prompt_feature: usize,
    input_image: (usize, usize),
    input_raymap: (usize, usize),
    time_fc1: (usize, usize),
    time_fc2: (usize, usize),
    blocks: Vec<BlockSlots>,
    final_modulation: (usize, usize),
    output_image: (usize, usize),
    output_raymap: (usize, usize),
}

fn layout(c: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let w = c.width;
    let head = |fan_in: usize| {
        if c.zero_init {
            Init::Zero
        } else {
            Init::Normal(0.5 / (fan_in as f64).sqrt())
        }
    };
    let bias = if c.zero_init { Init::Zero } else { Init::Normal(0.1) };
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let mut out = vec![
        ("prompt.embed".to_string(), c.vocab_size, w, Init::Normal(1.0)),
        ("prompt.feature".into(), TOKEN_FEATURES, w, Init::Normal(1.0)),
        ("input.image.weight".into(), c.image_channels, w, lin(c.image_channels)),
        ("input.image.bias".into(), 1, w, bias),
        ("input.raymap.weight".into(), c.raymap_channels, w, lin(c.raymap_channels)),
        ("input.raymap.bias".into(), 1, w, bias),
        ("time.fc1.weight".into(), c.time_dim, w, lin(c.time_dim)),
        ("time.fc1.bias".into(), 1, w, bias),
        ("time.fc2.weight".into(), w, w, lin(w)),
        ("time.fc2.bias".into(), 1, w, bias),
    ];
    let hidden = w * c.mlp_ratio;
    for b in 0..c.depth {
        let p = format!("blocks.{b}");
        out.extend([
            (format!("{p}.modulation.weight"), w, 6 * w, head(w)),
            (format!("{p}.modulation.bias"), 1, 6 * w, bias),
            (format!("{p}.attn.qkv.weight"), w, 3 * w, lin(w)),
            (format!("{p}.attn.qkv.bias"), 1, 3 * w, bias),
            (format!("{p}.attn.out.weight"), w, w, lin(w)),
            (format!("{p}.attn.out.bias"), 1, w, bias),
            (format!("{p}.mlp.fc1.weight"), w, hidden, lin(w)),
            (format!("{p}.mlp.fc1.bias"), 1, hidden, bias),
            (format!("{p}.mlp.fc2.weight"), hidden, w, lin(hidden)),
            (format!("{p}.mlp.fc2.bias"), 1, w, bias),
        ]);
    }
    out.extend([
        ("final.modulation.weight".to_string(), w, 2 * w, head(w)),
        ("final.modulation.bias".into(), 1, 2 * w, bias),
        ("output.image.weight".into(), w, c.image_channels, head(w)),
        ("output.image.bias".into(), 1, c.image_channels, bias),
        ("output.raymap.weight".into(), w, c.raymap_channels, head(w)),
        ("output.raymap.bias".into(), 1, c.raymap_channels, bias),
    ]);
    out
}

fn slots_for(depth: usize) -> Slots {
    let pair = |i: usize| (i, i + 1);
    let blocks = (0..depth)
        .map(|b| {
            let base = 10 + 10 * b;
            BlockSlots {
                modulation: pair(base),
                qkv: pair(base + 2),
                attn_out: pair(base + 4),
                fc1: pair(base + 6),
                fc2: pair(base + 8),
            }
        })
        .collect();
    let tail = 10 + 10 * depth;
    Slots {
        prompt_embed: 0,
        prompt_feature: 1,
        input_image: pair(2),
        input_raymap: pair(4),
        time_fc1: pair(6),
        time_fc2: pair(8),
        blocks,
        final_modulation: pair(tail),
        output_image: pair(tail + 2),
        output_raymap: pair(tail + 4),
    }
}

/// Sinusoidal features of a time value in `[0, 1]` (scaled by 1000).
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    let args: Vec<f64> = (0..half)
        .map(|k| t * 1000.0 * (-(10_000f64.ln()) * k as f64 / half as f64).exp())
        .collect();
    out.extend(args.iter().map(|a| a.cos()));
    out.extend(args.iter().map(|a| a.sin()));
    out
}

/// `C × h × w` grid to `(h·w) × C` token rows, row-major over cells.
pub fn grid_to_tokens<F: Real>(grid: &Array3<F>) -> Array2<F> {
    let (c, h, w) = grid.dim();
    let mut out = Array2::zeros((h * w, c));
    for ((ch, r, col), &v) in grid.indexed_iter() {
        out[[r * w + col, ch]] = v;
    }
    out
}

pub fn tokens_to_grid<F: Real>(tokens: &Array2<F>, h: usize, w: usize) -> Array3<F> {
    let c = tokens.ncols();
    let mut out = Array3::zeros((c, h, w));
    for ((i, ch), &v) in tokens.indexed_iter() {
        out[[ch, i / w, i % w]] = v;
    }
    out
}

/// Inputs of one forward pass, independent of roles.
pub struct ForwardInput<'a, F> {
    pub kinds: &'a [ViewKind],
    pub latents: &'a [&'a Array3<F>],
    pub times: &'a [f64],
    pub prompt: &'a TaskPrompt,
    /// Views whose tokens are hidden from every token outside the view.
    pub hidden_views: &'a [usize],
}

/// Gradients and loss of one training example.
pub struct LossGrads<F> {
    pub loss: f64,
    pub grads: Vec<Option<Array2<F>>>,
}

pub struct SeqFormer<F: Real> {
    config: ModelConfig,
    params: ParamStore<F>,
    slots: Slots,
}

impl<F: Real> Clone for SeqFormer<F> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            slots: slots_for(self.config.depth),
        }
    }
}

impl<F: Real> SeqFormer<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        for (name, rows, cols, init) in layout(&config) {
            let t = match init {
                Init::Zero => Array2::zeros((rows, cols)),
                Init::Normal(std) => params::normal_matrix(&mut rng, rows, cols, std),
            };
            params.push(name, t);
        }
        let slots = slots_for(config.depth);
        Ok(Self {
            config,
            params,
            slots,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (slot, (name, rows, cols, _)) in expected.iter().enumerate() {
            let t = params.get(slot);
            if params.name(slot) != name || t.dim() != (*rows, *cols) {
                return Err(Error::Format(format!(
                    "parameter {slot}: expected {name} {rows}x{cols}, found {} {:?}",
                    params.name(slot),
                    t.dim()
                )));
            }
        }
        let slots = slots_for(config.depth);
        Ok(Self {
            config,
            params,
            slots,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn cast<G: Real>(&self) -> SeqFormer<G> {
        SeqFormer {
            config: self.config.clone(),
            params: self.params.cast(),
            slots: slots_for(self.config.depth),
        }
    }

    /// Learned embeddings of the prompt tokens, task token first.
    pub fn embed_prompt(&self, prompt: &TaskPrompt) -> Result<Array2<F>> {
        let mut tape = Tape::new();
        let v = self.prompt_tokens(&mut tape, prompt)?;
        Ok(tape.value(v).clone())
    }

    fn prompt_tokens<'p>(&'p self, tape: &mut Tape<'p, F>, prompt: &TaskPrompt) -> Result<Var> {
        if prompt.is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        let ids = prompt
            .tokens
            .iter()
            .map(Vocabulary::index)
            .collect::<Result<Vec<_>>>()?;
        let mut feats = Array2::zeros((ids.len(), TOKEN_FEATURES));
        for (r, tok) in prompt.tokens.iter().enumerate() {
            for (c, v) in Vocabulary::features(tok).into_iter().enumerate() {
                feats[[r, c]] = F::of(v);
            }
        }
        let table = tape.param(self.slots.prompt_embed, self.params.get(self.slots.prompt_embed));
        let rows = tape.gather_rows(table, Rc::new(ids));
        let feats = tape.constant(feats);
        let proj = tape.param(self.slots.prompt_feature, self.params.get(self.slots.prompt_feature));
        let extra = tape.matmul(feats, proj);
        Ok(tape.add(rows, extra))
    }

    fn linear<'p>(&'p self, tape: &mut Tape<'p, F>, x: Var, (w, b): (usize, usize)) -> Var {
        let wv = tape.param(w, self.params.get(w));
        let bv = tape.param(b, self.params.get(b));
        let y = tape.matmul(x, wv);
        tape.add_row(y, bv)
    }

    fn modulate(tape: &mut Tape<'_, F>, x: Var, shift: Var, scale: Var) -> Var {
        let s = tape.add_scalar(scale, F::one());
        let y = tape.mul(x, s);
        tape.add(y, shift)
    }

    fn check_input(&self, input: &ForwardInput<'_, F>) -> Result<()> {
        let n = input.kinds.len();
        if n == 0 {
            return Err(Error::invalid("forward needs at least one view"));
        }
        if input.latents.len() != n || input.times.len() != n {
            return Err(Error::invalid(format!(
                "{} views but {} latents and {} times",
                n,
                input.latents.len(),
                input.times.len()
            )));
        }
        if n > self.config.max_views {
            return Err(Error::Capacity {
                got: n,
                max: self.config.max_views,
            });
        }
        for (i, (kind, lat)) in input.kinds.iter().zip(input.latents).enumerate() {
            let want = self.config.channels(*kind);
            if lat.dim().0 != want {
                return Err(Error::invalid(format!(
                    "view {i}: {kind:?} latent has {} channels, model expects {want}",
                    lat.dim().0
                )));
            }
        }
        if let Some(&v) = input.hidden_views.iter().find(|&&v| v >= n) {
            return Err(Error::invalid(format!("hidden view {v} out of range")));
        }
        Ok(())
    }

    /// Records the network on `tape`; returns one `(h·w) × C` output per view.
    fn build<'p>(&'p self, tape: &mut Tape<'p, F>, input: &ForwardInput<'_, F>) -> Result<Vec<Var>> {
        self.check_input(input)?;
        let cfg = &self.config;
        let n = input.kinds.len();
        let w = cfg.width;

        let mut parts = Vec::with_capacity(n + 1);
        let mut group = Vec::new();
        let mut positions = Vec::new();
        let mut spans = Vec::with_capacity(n);
        for (i, (kind, lat)) in input.kinds.iter().zip(input.latents).enumerate() {
            let (_, h, gw) = lat.dim();
            let tokens = tape.constant(grid_to_tokens(lat));
            let slot = match kind {
                ViewKind::Image => self.slots.input_image,
                ViewKind::Raymap => self.slots.input_raymap,
            };
            parts.push(self.linear(tape, tokens, slot));
            spans.push((group.len(), h, gw));
            for r in 0..h {
                for c in 0..gw {
                    group.push(i);
                    positions.push(TokenPosition::new(i, r, c));
                }
            }
        }
        let prompt = self.prompt_tokens(tape, input.prompt)?;
        for k in 0..input.prompt.len() {
            group.push(n);
            positions.push(TokenPosition::new(n, k, 0));
        }
        parts.push(prompt);
        let mut x = tape.concat_rows(&parts);
        let total = group.len();
        let group = Rc::new(group);

        // per-group conditioning vectors; the prompt group sits at the clean time
        let mut feats = Array2::zeros((n + 1, cfg.time_dim));
        for (g, &t) in input.times.iter().chain(std::iter::once(&CLEAN_TIME)).enumerate() {
            for (c, v) in time_features(t, cfg.time_dim).into_iter().enumerate() {
                feats[[g, c]] = F::of(v);
            }
        }
        let feats = tape.constant(feats);
        let c = self.linear(tape, feats, self.slots.time_fc1);
        let c = tape.silu(c);
        let c = self.linear(tape, c, self.slots.time_fc2);
        let cond = tape.silu(c);

        let hd = cfg.head_dim();
        let (cos, sin) = rope::rotary_tables::<F>(&positions, hd, cfg.rope_base, cfg.rope_max_freq)?;
        let mask = (!input.hidden_views.is_empty()).then(|| {
            let mut m = Array2::zeros((total, total));
            for q in 0..total {
                for k in 0..total {
                    let kg = group[k];
                    if group[q] != kg && input.hidden_views.contains(&kg) {
                        m[[q, k]] = F::neg_infinity();
                    }
                }
            }
            m
        });
        let attn_scale = F::of(1.0 / (hd as f64).sqrt());

        for block in &self.slots.blocks {
            let m = self.linear(tape, cond, block.modulation);
            let m = tape.gather_rows(m, group.clone());
            let chunk: Vec<Var> = (0..6).map(|i| tape.slice_cols(m, i * w, w)).collect();

            let h = tape.layer_norm(x, F::of(LN_EPS));
            let h = Self::modulate(tape, h, chunk[0], chunk[1]);
            let qkv = self.linear(tape, h, block.qkv);
            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let q = tape.slice_cols(qkv, head * hd, hd);
                let k = tape.slice_cols(qkv, w + head * hd, hd);
                let v = tape.slice_cols(qkv, 2 * w + head * hd, hd);
                let q = tape.rotary(q, cos.clone(), sin.clone());
                let k = tape.rotary(k, cos.clone(), sin.clone());
                let q = tape.scale(q, attn_scale);
                let mut logits = tape.matmul_nt(q, k);
                if let Some(mask) = &mask {
                    logits = tape.add_const(logits, mask);
                }
                let p = tape.softmax_rows(logits);
                heads.push(tape.matmul(p, v));
            }
            let a = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
            let a = self.linear(tape, a, block.attn_out);
            let a = tape.mul(a, chunk[2]);
            x = tape.add(x, a);

            let h = tape.layer_norm(x, F::of(LN_EPS));
            let h = Self::modulate(tape, h, chunk[3], chunk[4]);
            let h = self.linear(tape, h, block.fc1);
            let h = tape.silu(h);
            let h = self.linear(tape, h, block.fc2);
            let h = tape.mul(h, chunk[5]);
            x = tape.add(x, h);
        }

        let m = self.linear(tape, cond, self.slots.final_modulation);
        let m = tape.gather_rows(m, group);
        let shift = tape.slice_cols(m, 0, w);
        let scale = tape.slice_cols(m, w, w);
        let h = tape.layer_norm(x, F::of(LN_EPS));
        let h = Self::modulate(tape, h, shift, scale);

        let mut outputs = Vec::with_capacity(n);
        for (kind, &(start, gh, gw)) in input.kinds.iter().zip(&spans) {
            let rows = tape.slice_rows(h, start, gh * gw);
            let slot = match kind {
                ViewKind::Image => self.slots.output_image,
                ViewKind::Raymap => self.slots.output_raymap,
            };
            outputs.push(self.linear(tape, rows, slot));
        }
        Ok(outputs)
    }

    fn run(&self, input: &ForwardInput<'_, F>) -> Result<Vec<Array3<F>>> {
        let mut tape = Tape::new();
        let outs = self.build(&mut tape, input)?;
        Ok(outs
            .iter()
            .zip(input.latents)
            .map(|(&o, lat)| {
                let (_, h, w) = lat.dim();
                tokens_to_grid(tape.value(o), h, w)
            })
            .collect())
    }

    /// Velocity prediction for every view of `sequence` at `times`.
    pub fn forward(&self, sequence: &ViewSequence<F>, times: &TimeVector, prompt: &TaskPrompt) -> Result<Vec<Array3<F>>> {
        self.forward_masked(sequence, times, prompt, &[])
    }

    /// Like [`forward`](Self::forward), with the tokens of `hidden_views`
    /// invisible to every token outside their own view.
    pub fn forward_masked(
        &self,
        sequence: &ViewSequence<F>,
        times: &TimeVector,
        prompt: &TaskPrompt,
        hidden_views: &[usize],
    ) -> Result<Vec<Array3<F>>> {
        if times.len() != sequence.len() {
            return Err(Error::invalid(format!(
                "{} times for {} views",
                times.len(),
                sequence.len()
            )));
        }
        let kinds: Vec<ViewKind> = sequence.views.iter().map(|v| v.kind).collect();
        let latents: Vec<&Array3<F>> = sequence.views.iter().map(|v| &v.latent).collect();
        self.run(&ForwardInput {
            kinds: &kinds,
            latents: &latents,
            times: times.as_slice(),
            prompt,
            hidden_views,
        })
    }

    /// Joint flow-matching loss (mean over all elements) and its gradient.
    pub fn loss_and_grads(&self, input: &ForwardInput<'_, F>, targets: &[&Array3<F>]) -> Result<LossGrads<F>> {
        if targets.len() != input.latents.len() {
            return Err(Error::invalid("one velocity target per view is required"));
        }
        for (t, l) in targets.iter().zip(input.latents) {
            if t.dim() != l.dim() {
                return Err(Error::invalid("target shape differs from its view latent"));
            }
        }
        let mut tape = Tape::new();
        let outs = self.build(&mut tape, input)?;
        let mut total = None;
        let mut count = 0usize;
        for (&o, t) in outs.iter().zip(targets) {
            count += t.len();
            let e = tape.sq_err_sum(o, Rc::new(grid_to_tokens(t)));
            total = Some(match total {
                None => e,
                Some(acc) => tape.add(acc, e),
            });
        }
        let loss = tape.scale(total.expect("non-empty"), F::of(1.0 / count as f64));
        let value = tape.value(loss)[[0, 0]].as_f64();
        let grads = tape.backward(loss, self.params.len()).grads;
        Ok(LossGrads { loss: value, grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viewcodec::{PromptToken, TaskToken, View};
    use rand::Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
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
        }
    }

    fn random_grid(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn two_view_sequence(rng: &mut ChaCha8Rng) -> ViewSequence<f64> {
        ViewSequence::new(vec![
            View::target(ViewKind::Image, random_grid(rng, (12, 3, 3))),
            View::condition(ViewKind::Raymap, random_grid(rng, (6, 3, 3))),
            View::target(ViewKind::Image, random_grid(rng, (12, 3, 3))),
        ])
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::toy(4).validate().is_ok());
        let mut c = tiny_config();
        c.width = 16;
        c.heads = 2;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.max_views = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shapes_match_inputs() {
        let model = SeqFormer::<f64>::new(tiny_config(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = ViewSequence::new(vec![View::target(ViewKind::Image, random_grid(&mut rng, (12, 4, 5)))]);
        let prompt = TaskPrompt::task_only(TaskToken::Text2Image);
        let out = model.forward(&seq, &TimeVector::new(vec![0.3]).unwrap(), &prompt).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].dim(), (12, 4, 5));

        let seq = two_view_sequence(&mut rng);
        let times = TimeVector::new(vec![0.2, 1.0, 0.7]).unwrap();
        let out = model.forward(&seq, &times, &prompt).unwrap();
        for (o, v) in out.iter().zip(&seq.views) {
            assert_eq!(o.dim(), v.latent.dim());
        }
        let again = model.forward(&seq, &times, &prompt).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn forward_errors() {
        let model = SeqFormer::<f64>::new(tiny_config(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = two_view_sequence(&mut rng);
        let prompt = TaskPrompt::task_only(TaskToken::Multiview);
        let short = TimeVector::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(model.forward(&seq, &short, &prompt), Err(Error::InvalidArgument(_))));

        let many = ViewSequence::new(
            (0..13)
                .map(|_| View::target(ViewKind::Raymap, random_grid(&mut rng, (6, 1, 1))))
                .collect(),
        );
        let times = TimeVector::uniform(13, 0.5).unwrap();
        assert!(matches!(
            model.forward(&many, &times, &prompt),
            Err(Error::Capacity { got: 13, max: 12 })
        ));

        let bad = TaskPrompt {
            tokens: vec![PromptToken::Task(TaskToken::Text2Image), PromptToken::Word("zebra".into())],
        };
        let times = TimeVector::uniform(3, 0.5).unwrap();
        assert!(matches!(model.forward(&seq, &times, &bad), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn prompt_embedding_contract() {
        let model = SeqFormer::<f64>::new(tiny_config(), 5).unwrap();
        let a = TaskPrompt::from_strings(&["[[text2image]]"]).unwrap();
        assert_eq!(model.embed_prompt(&a).unwrap().nrows(), 1);
        let p1 = TaskPrompt::from_strings(&["[[text2image]]", "red", "box"]).unwrap();
        let p2 = TaskPrompt::from_strings(&["[[img2img]]", "red", "box"]).unwrap();
        let (e1, e2) = (model.embed_prompt(&p1).unwrap(), model.embed_prompt(&p2).unwrap());
        assert_eq!(e1, model.embed_prompt(&p1).unwrap());
        assert_ne!(e1.row(0), e2.row(0));
        assert_eq!(e1.row(1), e2.row(1));
        assert_eq!(e1.row(2), e2.row(2));
    }

    #[test]
    fn view_order_matters_with_fixed_positions() {
        let model = SeqFormer::<f64>::new(tiny_config(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seq = two_view_sequence(&mut rng);
        let times = TimeVector::new(vec![0.2, 1.0, 0.7]).unwrap();
        let prompt = TaskPrompt::task_only(TaskToken::Multiview);
        let out = model.forward(&seq, &times, &prompt).unwrap();
        let mut swapped = seq.clone();
        swapped.views.swap(0, 2);
        let st = TimeVector::new(vec![0.7, 1.0, 0.2]).unwrap();
        let out2 = model.forward(&swapped, &st, &prompt).unwrap();
        assert_ne!(out[0], out2[2]);
        let diff = (&out[0] - &out2[2]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff > 1e-9);
    }

    #[test]
    fn hidden_view_time_does_not_leak() {
        let model = SeqFormer::<f64>::new(tiny_config(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = two_view_sequence(&mut rng);
        let prompt = TaskPrompt::task_only(TaskToken::Multiview);
        let t1 = TimeVector::new(vec![0.2, 1.0, 0.7]).unwrap();
        let t2 = TimeVector::new(vec![0.2, 1.0, 0.1]).unwrap();
        let a = model.forward_masked(&seq, &t1, &prompt, &[2]).unwrap();
        let b = model.forward_masked(&seq, &t2, &prompt, &[2]).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert_ne!(a[2], b[2]);
        // without the mask the perturbation reaches the other views
        let c = model.forward(&seq, &t1, &prompt).unwrap();
        let d = model.forward(&seq, &t2, &prompt).unwrap();
        assert_ne!(c[0], d[0]);
    }

    #[test]
    fn zero_init_loss_is_mean_square_target() {
        let mut cfg = tiny_config();
        cfg.zero_init = true;
        let model = SeqFormer::<f64>::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let seq = two_view_sequence(&mut rng);
        let kinds: Vec<_> = seq.views.iter().map(|v| v.kind).collect();
        let lats: Vec<_> = seq.views.iter().map(|v| &v.latent).collect();
        let targets: Vec<Array3<f64>> = seq.views.iter().map(|v| random_grid(&mut rng, v.latent.dim())).collect();
        let trefs: Vec<_> = targets.iter().collect();
        let prompt = TaskPrompt::task_only(TaskToken::Multiview);
        let out = model
            .loss_and_grads(
                &ForwardInput { kinds: &kinds, latents: &lats, times: &[0.1, 0.5, 0.9], prompt: &prompt, hidden_views: &[] },
                &trefs,
            )
            .unwrap();
        let n: usize = targets.iter().map(|t| t.len()).sum();
        let ms: f64 = targets.iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>() / n as f64;
        assert!((out.loss - ms).abs() < 1e-12);
    }
}
