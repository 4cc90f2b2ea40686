//! Training loop behaviour on small synthetic datasets.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seqflow::flowpath::{interpolate, velocity_target};
use seqflow::harness::{train_on, Checkpoint, TrainConfig};
use seqflow::seqformer::{ForwardInput, ModelConfig, SeqFormer};
use seqflow::synthgen::{make_dataset, Dataset, DatasetSpec};
use seqflow::viewcodec::{Task, TaskPrompt, TaskToken, ViewKind};

fn small_model() -> ModelConfig {
    let mut m = ModelConfig::toy(2);
    m.width = 24;
    m.heads = 2;
    m.depth = 1;
    m
}

fn dataset(task: Task, n: usize, dir: &std::path::Path) -> Dataset {
    let path = dir.join(task.as_str());
    make_dataset(&DatasetSpec::new(task, n, 5, 16), &path).unwrap();
    Dataset::load(&path).unwrap()
}

#[test]
fn same_config_same_weights() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(Task::Depth2image, 4, dir.path());
    let config = TrainConfig::new(small_model(), vec![(Task::Depth2image, ds.dir.clone())], 4, 3);
    let a = train_on(&config, std::slice::from_ref(&ds)).unwrap();
    let b = train_on(&config, std::slice::from_ref(&ds)).unwrap();
    assert_eq!(a.checkpoint.model.params().digest(), b.checkpoint.model.params().digest());
    let losses = |o: &seqflow::harness::TrainOutcome| o.log.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));

    let mut other = config.clone();
    other.seed = 1;
    let c = train_on(&other, std::slice::from_ref(&ds)).unwrap();
    assert_ne!(a.checkpoint.model.params().digest(), c.checkpoint.model.params().digest());
}

#[test]
fn mixture_weights_select_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let t2i = dataset(Task::Text2image, 3, dir.path());
    let mv = dataset(Task::Multiview, 2, dir.path());
    let mut config = TrainConfig::new(
        small_model(),
        vec![(Task::Text2image, t2i.dir.clone()), (Task::Multiview, mv.dir.clone())],
        6,
        2,
    );
    config.tasks[1].weight = 0.0;
    let out = train_on(&config, &[t2i.clone(), mv.clone()]).unwrap();
    assert!(out.log.iter().all(|s| s.task == Task::Text2image && s.views.iter().all(|&v| v == 1)));

    config.tasks[0].weight = 0.0;
    config.tasks[1].weight = 1.0;
    let out = train_on(&config, &[t2i, mv]).unwrap();
    assert!(out.log.iter().all(|s| s.task == Task::Multiview && s.views.iter().all(|&v| v == 8)));
}

#[test]
fn checkpoints_are_written_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(Task::Img2imgDeblur, 3, dir.path());
    let mut config = TrainConfig::new(small_model(), vec![(Task::Img2imgDeblur, ds.dir.clone())], 4, 1);
    config.out_dir = Some(dir.path().join("ck"));
    config.checkpoint_every = 2;
    let out = train_on(&config, std::slice::from_ref(&ds)).unwrap();
    let names: Vec<String> = out.written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["step_000002.ogck", "final.ogck"]);
    let ck = Checkpoint::load(&out.written[1]).unwrap();
    assert_eq!(ck.step, 4);
    assert_eq!(ck.tasks, [Task::Img2imgDeblur]);
    assert_eq!(ck.model.params().digest(), out.checkpoint.model.params().digest());
}

#[test]
fn missing_dataset_is_reported() {
    let config = TrainConfig::new(small_model(), vec![(Task::Text2image, "/nonexistent/ds".into())], 1, 1);
    let Err(err) = seqflow::harness::train(&config) else { panic!("training without data succeeded") };
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("text2image"), "{err}");
}

#[test]
fn zero_init_loss_is_target_energy() {
    let model = SeqFormer::<f64>::new(small_model(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut draw = |c| Array3::from_shape_simple_fn((c, 8, 8), || StandardNormal.sample(&mut rng));
    let (x0, e0, x1, e1) = (draw(12), draw(12), draw(6), draw(6));
    let n0 = interpolate(&x0, &e0, 0.3).unwrap();
    let n1 = interpolate(&x1, &e1, 0.8).unwrap();
    let u0 = velocity_target(&x0, &e0).unwrap();
    let u1 = velocity_target(&x1, &e1).unwrap();
    let prompt = TaskPrompt::task_only(TaskToken::Multiview);
    let out = model
        .loss_and_grads(
            &ForwardInput {
                kinds: &[ViewKind::Image, ViewKind::Raymap],
                latents: &[&n0, &n1],
                times: &[0.3, 0.8],
                prompt: &prompt,
                hidden_views: &[],
            },
            &[&u0, &u1],
        )
        .unwrap();
    let energy = (u0.mapv(|v| v * v).sum() + u1.mapv(|v| v * v).sum()) / (u0.len() + u1.len()) as f64;
    assert!((out.loss - energy).abs() < 1e-12 * energy, "{} vs {energy}", out.loss);
}
