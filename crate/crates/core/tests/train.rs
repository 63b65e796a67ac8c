use dws_autodiff::{Tape, Tensor};
use dwsformer::checkpoint::{Checkpoint, VERSION};
use dwsformer::data::{ImuWindow, RandomWalkSpec, SynthSpec};
use dwsformer::params::ParamStore;
use dwsformer::train::*;
use dwsformer::{DwsformerModel, Error, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_data(windows: usize) -> TrainData {
    let cfg = ModelConfig::reduced();
    let seqs = SynthSpec::RandomWalk(RandomWalkSpec {
        duration_s: 20.0,
        ..RandomWalkSpec::default()
    })
    .generate(2, 3)
    .unwrap();
    let p = dwsformer::pipeline::prepare(&seqs[..1], &seqs[1..], cfg.window_len, cfg.window_len).unwrap();
    TrainData {
        train: p.data.train.into_iter().take(windows).collect(),
        val: p.data.val.into_iter().take(8).collect(),
    }
}

fn trainer(seed: u64) -> Trainer {
    let model = DwsformerModel::<f32>::new(ModelConfig::reduced(), seed).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        seed,
        max_epochs: 50,
        ..TrainConfig::default()
    };
    Trainer::new(model, cfg, None).unwrap()
}

#[test]
fn mse_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
    let t: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
    let tape = Tape::<f64>::new();
    let pv = tape.constant(Tensor::from_f64([5, 2], &p).unwrap());
    let tv = tape.constant(Tensor::from_f64([5, 2], &t).unwrap());
    let got = mse_loss(&pv, &tv).unwrap().value().item().unwrap();
    let mut sum = 0.0;
    for i in 0..10 {
        sum += (p[i] - t[i]) * (p[i] - t[i]);
    }
    assert!((got - sum / 10.0).abs() <= 1e-9);

    let ones: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
    let ov = tape.constant(Tensor::from_f64([5, 2], &ones).unwrap());
    assert!((mse_loss(&ov, &pv).unwrap().value().item().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn one_adam_step_decreases_a_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::from_f64([6], &w0).unwrap());
    let f = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
    let grad: Vec<f64> = w0.iter().map(|v| 2.0 * v).collect();
    store.get_mut("w").unwrap().set_grad(Tensor::from_f64([6], &grad).unwrap()).unwrap();
    let mut adam = Adam::new(1e-3, AdamConfig::default());
    adam.step(&mut store).unwrap();
    assert!(f(store.value("w").unwrap().data()) < f(&w0));
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let data = small_data(16);
    let run = || {
        let mut t = trainer(9);
        let batch: Vec<&ImuWindow> = data.train.iter().collect();
        for _ in 0..5 {
            t.train_batch(&batch).unwrap();
        }
        t.model
    };
    let (a, b) = (run(), run());
    for ((na, pa), (nb, pb)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(na, nb);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa.value), bits(&pb.value), "{na}");
    }
}

/// Independent re-statement of the plateau rule: returns the epoch at which
/// training stops for a validation history, or `None`.
fn simulate_stop(history: &[f64], lr0: f64, patience: usize, factor: f64, floor: f64) -> Option<usize> {
    let mut best = f64::INFINITY;
    let mut since = 0;
    let mut decays = 0i32;
    for (i, &v) in history.iter().enumerate() {
        if v < best {
            best = v;
            since = 0;
            continue;
        }
        since += 1;
        if since == patience {
            since = 0;
            decays += 1;
            // compare in log space so the oracle does not share rounding
            if (lr0.log10() + decays as f64 * factor.log10()) < floor.log10() - 1e-9 {
                return Some(i + 1);
            }
        }
    }
    None
}

#[test]
fn schedule_stop_epoch_matches_simulation() {
    let flat = vec![1.0; 100];
    assert_eq!(simulate_stop(&flat, 1e-3, 10, 0.1, 1e-6), Some(41));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let history: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut s = PlateauSchedule::new(1e-3, 10, 0.1, 1e-6);
        let mut stop = None;
        let mut lrs = vec![];
        for (i, &v) in history.iter().enumerate() {
            lrs.push(s.lr);
            if s.step(v) == ScheduleAction::Terminate {
                stop = Some(i + 1);
                break;
            }
        }
        assert_eq!(stop, simulate_stop(&history, 1e-3, 10, 0.1, 1e-6));
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
    let mut s = PlateauSchedule::new(1e-3, 10, 0.1, 1e-6);
    let mut lr_at_stop = 0.0;
    for _ in 0..41 {
        if s.step(1.0) == ScheduleAction::Terminate {
            lr_at_stop = s.lr;
        }
    }
    assert!(lr_at_stop < 1e-6);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = small_data(16);
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(4).with_out_dir(dir.path()).unwrap();
    t.step_epoch(&data).unwrap();
    t.step_epoch(&data).unwrap();
    let ckpt = Checkpoint::load(dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ckpt, t.checkpoint());
    assert_eq!(ckpt.to_bytes(), t.checkpoint().to_bytes());
    let state = ckpt.train.as_ref().unwrap();
    assert_eq!(state.epoch, 2);
    assert_eq!(state.adam.m.len(), ckpt.model.params().len());
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
}

#[test]
fn checkpoint_rejects_other_versions_and_mismatched_configs() {
    let model = DwsformerModel::<f32>::new(ModelConfig::reduced(), 0).unwrap();
    let mut bytes = Checkpoint::new(model.clone()).to_bytes();
    bytes[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(Error::CheckpointVersion { found, .. }) if found == VERSION + 1
    ));

    // Parameters of the full block stack under an ablation configuration.
    let good = Checkpoint::new(model.clone()).to_bytes();
    let cfg_len = u32::from_le_bytes(good[12..16].try_into().unwrap()) as usize;
    let ablation = model.config().ablation().to_toml();
    let mut swapped = good[..12].to_vec();
    swapped.extend_from_slice(&(ablation.len() as u32).to_le_bytes());
    swapped.extend_from_slice(ablation.as_bytes());
    swapped.extend_from_slice(&good[16 + cfg_len..]);
    let err = Checkpoint::from_bytes(&swapped).unwrap_err();
    assert!(err.to_string().contains("mismatch"), "{err}");

    assert!(Checkpoint::from_bytes(&good[..good.len() - 3]).is_err());
}

#[test]
fn resume_reproduces_the_next_epoch() {
    let data = small_data(24);
    let mut straight = trainer(6);
    for _ in 0..3 {
        straight.step_epoch(&data).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let mut first = trainer(6).with_out_dir(dir.path()).unwrap();
    first.step_epoch(&data).unwrap();
    first.step_epoch(&data).unwrap();
    drop(first);
    let ckpt = Checkpoint::load(dir.path().join(LAST_CHECKPOINT)).unwrap();
    let mut resumed = Trainer::resume(ckpt).unwrap().with_out_dir(dir.path()).unwrap();
    assert_eq!(resumed.log.len(), 2);
    let (log, _) = resumed.step_epoch(&data).unwrap();

    let expect = &straight.log[2];
    assert_eq!(log.epoch, 3);
    assert_eq!(log.train_loss.to_bits(), expect.train_loss.to_bits());
    assert_eq!(log.val_loss.to_bits(), expect.val_loss.to_bits());
    assert_eq!(resumed.model, straight.model);

    let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(EpochLog::parse_csv(&text).unwrap(), straight.log);
}

#[test]
fn lr_trace_never_increases() {
    let data = small_data(16);
    let model = DwsformerModel::<f32>::new(ModelConfig::reduced(), 1).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        patience: 1,
        decay_factor: 0.5,
        lr: 1e-2,
        min_lr: 1e-4,
        max_epochs: 15,
        ..TrainConfig::default()
    };
    let out = Trainer::new(model, cfg, None).unwrap().run(&data).unwrap();
    assert!(out.log.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert!(out.log.last().unwrap().lr < 1e-2);
    assert!(out.best_epoch >= 1 && out.best_epoch <= out.log.len());
}

#[test]
fn validation_runs_in_inference_mode() {
    let data = small_data(16);
    let mut t = trainer(2);
    let (log, _) = t.step_epoch(&data).unwrap();
    assert_eq!((log.train_mode.as_str(), log.val_mode.as_str()), ("train", "eval"));
    // Recomputing with running statistics gives the logged value exactly.
    assert_eq!(log.val_loss, evaluate_mse(&t.model, &data.val, 8).unwrap());
}

#[test]
fn divergence_keeps_the_last_good_checkpoint() {
    let mut data = small_data(16);
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(3).with_out_dir(dir.path()).unwrap();
    t.step_epoch(&data).unwrap();
    let before = std::fs::read(dir.path().join(BEST_CHECKPOINT)).unwrap();
    for w in &mut data.train {
        w.features[0] = f64::NAN;
    }
    match t.step_epoch(&data) {
        Err(Error::Diverged { epoch, last_good }) => {
            assert_eq!(epoch, 2);
            let path = last_good.expect("best checkpoint");
            assert_eq!(std::fs::read(path).unwrap(), before);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.0)),
    }
}

#[test]
fn empty_validation_part_is_rejected() {
    let mut data = small_data(8);
    data.val.clear();
    assert!(matches!(trainer(0).step_epoch(&data), Err(Error::Data(_))));
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig {
            decay_factor: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            min_lr: 1e-2,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err());
    }
    let text = toml::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), TrainConfig::default());
    assert!(toml::from_str::<TrainConfig>("learning_rate = 1.0").is_err());
}
