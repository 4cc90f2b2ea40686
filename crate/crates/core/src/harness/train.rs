use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, Array3, Zip};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::flowpath::{interpolate, sample_timesteps, velocity_target, TimeVector, CLEAN_TIME};
use crate::seqformer::{ForwardInput, SeqFormer};
use crate::synthgen::{Dataset, MANIFEST_FILE};
use crate::viewcodec::{LatentCodec, Task, TaskPrompt, ViewKind};

/// A dataset's records as clean latent sequences.
struct TaskData {
    task: Task,
    kinds: Vec<Vec<ViewKind>>,
    latents: Vec<Vec<Array3<f32>>>,
    prompts: Vec<TaskPrompt>,
}

impl TaskData {
    fn new(ds: &Dataset, codec: &LatentCodec, limit: Option<usize>) -> Result<Self> {
        let n = limit.map_or(ds.records.len(), |l| l.min(ds.records.len()));
        if n == 0 {
            return Err(Error::invalid(format!("dataset for task {} is empty", ds.task())));
        }
        let mut data = Self {
            task: ds.task(),
            kinds: Vec::with_capacity(n),
            latents: Vec::with_capacity(n),
            prompts: Vec::with_capacity(n),
        };
        for rec in &ds.records[..n] {
            let seq = rec.sequence(codec)?;
            data.kinds.push(seq.views.iter().map(|v| v.kind).collect());
            data.latents.push(seq.views.into_iter().map(|v| v.latent).collect());
            data.prompts.push(rec.prompt.clone());
        }
        Ok(data)
    }
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
    pub lr: f64,
    /// View count of every sample in the batch.
    pub views: Vec<usize>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
    pub written: Vec<PathBuf>,
}

/// Learning rate at 0-based `step`: linear warmup then cosine decay to
/// `final_lr_fraction` of the peak.
pub fn learning_rate_at(config: &TrainConfig, step: usize) -> f64 {
    let peak = config.learning_rate;
    if step < config.warmup_steps {
        return peak * (step + 1) as f64 / config.warmup_steps as f64;
    }
    let span = config.steps.saturating_sub(config.warmup_steps).max(1) as f64;
    let progress = ((step - config.warmup_steps) as f64 / span).min(1.0);
    let floor = peak * config.final_lr_fraction;
    floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Decoupled-weight-decay Adam state.
pub struct AdamW {
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &[Array2<f32>]) -> Self {
        Self {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f32>], grads: &[Array2<f32>], lr: f64, config: &TrainConfig) {
        self.t += 1;
        let [b1, b2] = config.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (b1, b2) = (b1 as f32, b2 as f32);
        let (eps, wd) = (config.eps as f32, config.weight_decay as f32);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / ((*v / c2).sqrt() + eps) + lr as f32 * wd * *p;
            });
        }
    }
}

/// Loads every dataset named in the mixture.
pub fn load_datasets(config: &TrainConfig) -> Result<Vec<Dataset>> {
    config
        .tasks
        .iter()
        .map(|src| {
            if !src.dataset.join(MANIFEST_FILE).is_file() {
                return Err(Error::io(
                    &src.dataset,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("no dataset for task {} (missing {MANIFEST_FILE})", src.task),
                    ),
                ));
            }
            let ds = Dataset::load(&src.dataset)?;
            if ds.task() != src.task {
                return Err(Error::invalid(format!(
                    "{} holds task {}, configured as {}",
                    src.dataset.display(),
                    ds.task(),
                    src.task
                )));
            }
            Ok(ds)
        })
        .collect()
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    train_on(config, &datasets)
}

/// Trains on already loaded datasets (one per mixture entry, same order).
pub fn train_on(config: &TrainConfig, datasets: &[Dataset]) -> Result<TrainOutcome> {
    config.validate()?;
    if datasets.len() != config.tasks.len() {
        return Err(Error::invalid("one dataset per mixture entry is required"));
    }
    let codec = datasets[0].codec()?;
    for ds in datasets {
        if ds.codec()? != codec {
            return Err(Error::invalid(format!(
                "dataset {} uses a different patch size or ray scaling",
                ds.dir.display()
            )));
        }
    }
    if codec.image_channels() != config.model.image_channels {
        return Err(Error::invalid(format!(
            "model expects {} image channels, datasets have patch {}",
            config.model.image_channels, codec.patch
        )));
    }
    let data = datasets
        .iter()
        .map(|ds| TaskData::new(ds, &codec, config.max_records))
        .collect::<Result<Vec<_>>>()?;

    let mut model = SeqFormer::<f32>::new(config.model.clone(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mixture = WeightedIndex::new(config.mixture()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut opt = AdamW::new(model.params().tensors());
    let mut log = Vec::with_capacity(config.steps);
    let mut written = Vec::new();
    let tasks: Vec<Task> = config.tasks.iter().map(|t| t.task).collect();
    let started = Instant::now();

    for step in 0..config.steps {
        let td = &data[mixture.sample(&mut rng)];
        let picks: Vec<(usize, u64)> = (0..config.batch_size)
            .map(|_| (rng.random_range(0..td.latents.len()), rng.random()))
            .collect();
        let results = picks
            .par_iter()
            .map(|&(rec, seed)| sample_loss(&model, td, rec, seed, config))
            .collect::<Result<Vec<_>>>()?;

        let inv = 1.0 / results.len() as f64;
        let loss = results.iter().map(|r| r.0).sum::<f64>() * inv;
        let mut grads: Vec<Array2<f32>> = model.params().tensors().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        for (_, g) in &results {
            for (acc, gi) in grads.iter_mut().zip(g) {
                if let Some(gi) = gi {
                    *acc += gi;
                }
            }
        }
        let mut sq = 0.0f64;
        for g in &mut grads {
            *g *= inv as f32;
            sq += g.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>();
        }
        let norm = sq.sqrt();
        if config.grad_clip > 0.0 && norm > config.grad_clip {
            let s = (config.grad_clip / norm) as f32;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        let lr = learning_rate_at(config, step);
        opt.step(model.params_mut().tensors_mut(), &grads, lr, config);

        log.push(StepLog {
            step: step + 1,
            task: td.task,
            loss,
            lr,
            views: picks.iter().map(|&(r, _)| td.kinds[r].len()).collect(),
        });
        let every = (config.steps / 20).max(1);
        if (step + 1) % every == 0 || step == 0 {
            log::info!(
                "step {}/{} task {} loss {:.5} lr {:.2e} ({:.1}s)",
                step + 1,
                config.steps,
                td.task,
                loss,
                lr,
                started.elapsed().as_secs_f64()
            );
        }
        if let Some(dir) = &config.out_dir {
            let last = step + 1 == config.steps;
            if last || (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
                let path = if last {
                    dir.join("final.ogck")
                } else {
                    dir.join(format!("step_{:06}.ogck", step + 1))
                };
                Checkpoint {
                    model: model.clone(),
                    codec,
                    step: step + 1,
                    tasks: tasks.clone(),
                }
                .save(&path)?;
                written.push(path);
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            codec,
            step: config.steps,
            tasks,
        },
        log,
        written,
    })
}

type SampleResult = (f64, Vec<Option<Array2<f32>>>);

/// Noises every view of one record at its own time and returns the loss and
/// gradients of the velocity regression.
fn sample_loss(model: &SeqFormer<f32>, td: &TaskData, rec: usize, seed: u64, config: &TrainConfig) -> Result<SampleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = &td.latents[rec];
    let times = clean_some_views(sample_timesteps(clean.len(), &mut rng)?, config.clean_view_prob, &mut rng)?;
    let mut noisy = Vec::with_capacity(clean.len());
    let mut targets = Vec::with_capacity(clean.len());
    for (k, x) in clean.iter().enumerate() {
        let mut eps = Array3::from_shape_simple_fn(x.raw_dim(), || rng.sample::<f32, _>(StandardNormal));
        if times.get(k) == CLEAN_TIME {
            // E[x - eps] = x: same expected loss gradient, without the noise.
            eps.fill(0.0);
        }
        noisy.push(interpolate(x, &eps, times.get(k) as f32)?);
        targets.push(velocity_target(x, &eps)?);
    }
    let null = TaskPrompt::null();
    let prompt = if rng.random::<f64>() < config.null_prompt_prob { &null } else { &td.prompts[rec] };
    let latents: Vec<&Array3<f32>> = noisy.iter().collect();
    let target_refs: Vec<&Array3<f32>> = targets.iter().collect();
    let out = model.loss_and_grads(
        &ForwardInput {
            kinds: &td.kinds[rec],
            latents: &latents,
            times: times.as_slice(),
            prompt,
            hidden_views: &[],
        },
        &target_refs,
    )?;
    Ok((out.loss, out.grads))
}

/// Sets each time to 1 with probability `p`, keeping one view noisy, so the
/// model sees clean views at the time the sampler gives conditions.
fn clean_some_views(times: TimeVector, p: f64, rng: &mut ChaCha8Rng) -> Result<TimeVector> {
    let mut t = times.as_slice().to_vec();
    if t.len() < 2 || p == 0.0 {
        return Ok(times);
    }
    let keep = rng.random_range(0..t.len());
    for (i, ti) in t.iter_mut().enumerate() {
        if rng.random::<f64>() < p && i != keep {
            *ti = CLEAN_TIME;
        }
    }
    TimeVector::new(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let mut c = TrainConfig::new(crate::seqformer::ModelConfig::toy(2), vec![], 100, 1);
        c.warmup_steps = 10;
        assert!((learning_rate_at(&c, 9) - 5e-4).abs() < 1e-15);
        assert!(learning_rate_at(&c, 0) < learning_rate_at(&c, 5));
        assert!((learning_rate_at(&c, 10) - 5e-4).abs() < 1e-15);
        assert!(learning_rate_at(&c, 60) < learning_rate_at(&c, 30));
        assert!((learning_rate_at(&c, 100) - 5e-5).abs() < 1e-12);
    }
}
