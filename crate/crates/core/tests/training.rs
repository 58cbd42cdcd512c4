use banknet::config::{EncoderMode, ModelConfig, RunConfig, TrainConfig};
use banknet::data::{gen_scene, Dataset};
use banknet::model::{level_dims, Network};
use banknet::optim::Adam;
use banknet::params::ParamStore;
use banknet::tape::Tape;
use banknet::tensor::{shape, Tensor};
use banknet::train::{fit, train_step, FitOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(model: ModelConfig, lr: f64, batch_size: usize) -> RunConfig {
    RunConfig {
        model,
        train: TrainConfig {
            lr,
            batch_size,
            ..TrainConfig::default()
        },
    }
}

fn opts(iterations: usize, seed: u64) -> FitOptions {
    FitOptions {
        iterations,
        seed,
        out: None,
        verbose: false,
    }
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let data = Dataset::<f32>::generate(0..2, 64, 64).unwrap();
    for model in [ModelConfig::toy(), ModelConfig::toy_banked()] {
        let cfg = run(model, 0.0, 2);
        let r = fit(&cfg, &data, None, &opts(1, 3)).unwrap();
        let fresh = ParamStore::<f32>::init(&cfg.model, 3).unwrap();
        assert_eq!(r.store, fresh);
        assert_eq!(r.losses.len(), 1);
    }
}

#[test]
fn overfits_a_single_scene() {
    let data = Dataset::<f32>::generate(42..43, 64, 64).unwrap();
    for model in [ModelConfig::toy(), ModelConfig::toy_banked()] {
        let cfg = run(model, 1e-3, 1);
        let r = fit(&cfg, &data, None, &opts(500, 1)).unwrap();
        let (first, last) = (r.evals[0].l1, r.evals.last().unwrap().l1);
        assert!(last < 0.2 * first, "l1 {first} -> {last}");
    }
}

#[test]
fn identical_seeds_give_identical_loss_curves() {
    let data = Dataset::<f32>::generate(0..6, 64, 64).unwrap();
    let cfg = run(ModelConfig::toy_banked(), 1e-3, 2);
    let a = fit(&cfg, &data, None, &opts(6, 9)).unwrap();
    let b = fit(&cfg, &data, None, &opts(6, 9)).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.losses), bits(&b.losses));
    assert_eq!(a.store, b.store);
    let c = fit(&cfg, &data, None, &opts(6, 10)).unwrap();
    assert_ne!(bits(&a.losses), bits(&c.losses));
}

#[test]
fn odd_feature_maps_survive_a_full_step() {
    // 126x98 gives a 9x7 token grid.
    let mut model = ModelConfig::toy_banked();
    model.mode = EncoderMode::VitLike;
    let levels = level_dims(&model, 126, 98).unwrap();
    assert_eq!(levels[2], (9, 7));
    assert_eq!(levels[3], (5, 4));

    let mut store = ParamStore::<f32>::init(&model, 2).unwrap();
    // Non-zero offsets so the samplers take non-trivial positions.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let names: Vec<String> = store.names().filter(|n| n.contains("sampler")).map(String::from).collect();
    for n in names {
        let e = store.get_mut(&n).unwrap();
        e.conv.weight = Tensor::uniform(e.conv.weight.shape(), -0.2, 0.2, &mut rng);
    }
    let before = store.clone();
    let scene = gen_scene(11, 126, 98).unwrap();

    let mut tape = Tape::new();
    let net = Network::bind(&model, &store, &mut tape).unwrap();
    let x = tape.constant(scene.image.clone());
    let trace = net.forward(&mut tape, x).unwrap();
    assert_eq!(tape.shape(trace.depth), shape(1, 1, 126, 98));
    assert_eq!(tape.shape(trace.blocks[0].output).spatial(), (9, 7));
    assert!(tape.all_finite());

    let train = TrainConfig {
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut opt = Adam::new(store.tensors().into_iter().map(|(_, t)| t), &train);
    let loss = train_step(&model, &mut store, &mut opt, &scene.image, &scene.depth).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(opt.step, 1);
    assert!(store.tensors().iter().all(|(_, t)| t.is_finite()));
    assert_ne!(store, before);
}
