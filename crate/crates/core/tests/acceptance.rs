//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 2 7`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use dws_autodiff::gradcheck::{check_gradients, GradCheckOptions};
use dws_autodiff::ops::{self, BatchNormConfig, Conv1dSpec, NormMode, RunningStats};
use dws_autodiff::{AutodiffError, Scalar, Tape, Tensor, Var};
use dwsformer::checkpoint::Checkpoint;
use dwsformer::data::{self, ImuSequence, RandomWalkSpec, SplitPart, SplitSpec, SynthSpec};
use dwsformer::eval::{self, ate, pde, rte, EvalOptions, Trajectory};
use dwsformer::model::blocks;
use dwsformer::params::Binder;
use dwsformer::pipeline;
use dwsformer::train::{PlateauSchedule, ScheduleAction, TrainConfig, TrainData, Trainer, BEST_CHECKPOINT};
use dwsformer::{DwsformerModel, ModelConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

// ---------------------------------------------------------------- 1

type OpFn<T> = Box<dyn Fn(&Tape<T>, &[Var<T>]) -> dws_autodiff::Result<Var<T>>>;

/// Ops that are polynomials of degree <= 2 in every single input coordinate.
/// Central differences are exact for them, so only roundoff limits the
/// step size.
const QUADRATIC: &[&str] = &[
    "affine", "conv1d/same", "conv1d/stride3", "conv1d/depthwise", "batch_norm/eval", "avg_pool",
    "global_avg_pool", "mul/broadcast", "add/sub", "scale_by", "transpose", "reshape/mean",
];

fn op_suite<T: Scalar>() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn<T>)> {
    let down = Conv1dSpec {
        stride: 3,
        padding: 1,
        groups: 1,
    };
    let s = |v: &[&[usize]]| v.iter().map(|x| x.to_vec()).collect::<Vec<_>>();
    vec![
        ("affine", s(&[&[3, 4], &[5, 4], &[5]]), Box::new(|_, v| ops::affine(&v[0], &v[1], Some(&v[2])))),
        ("conv1d/same", s(&[&[2, 3, 9], &[4, 3, 3], &[4]]), Box::new(|_, v| {
            ops::conv1d(&v[0], &v[1], Some(&v[2]), Conv1dSpec::same(3))
        })),
        ("conv1d/stride3", s(&[&[2, 2, 11], &[3, 2, 3], &[3]]), Box::new(move |_, v| {
            ops::conv1d(&v[0], &v[1], Some(&v[2]), down)
        })),
        ("conv1d/depthwise", s(&[&[2, 4, 7], &[4, 1, 3], &[4]]), Box::new(|_, v| {
            ops::conv1d(&v[0], &v[1], Some(&v[2]), Conv1dSpec::depthwise(3, 4))
        })),
        ("batch_norm/train", s(&[&[3, 2, 5], &[2], &[2]]), Box::new(|_, v| {
            let st = RunningStats::new(2);
            Ok(ops::batch_norm1d(&v[0], &v[1], &v[2], &st, NormMode::Train, BatchNormConfig::default())?.0)
        })),
        ("batch_norm/eval", s(&[&[2, 2, 4], &[2], &[2]]), Box::new(|_, v| {
            let st = RunningStats {
                mean: vec![T::from_f64_lossy(0.3), T::from_f64_lossy(-0.2)],
                var: vec![T::from_f64_lossy(1.5), T::from_f64_lossy(0.4)],
                batches_tracked: 3,
            };
            Ok(ops::batch_norm1d(&v[0], &v[1], &v[2], &st, NormMode::Eval, BatchNormConfig::default())?.0)
        })),
        ("avg_pool", s(&[&[2, 3, 6]]), Box::new(|_, v| ops::adaptive_avg_pool(&v[0]))),
        ("std_pool", s(&[&[2, 3, 6]]), Box::new(|_, v| ops::adaptive_std_pool(&v[0]))),
        ("global_avg_pool", s(&[&[2, 4, 5]]), Box::new(|_, v| ops::global_avg_pool_time(&v[0]))),
        ("softmax", s(&[&[3, 5]]), Box::new(|_, v| ops::softmax(&v[0], 1))),
        ("mul/broadcast", s(&[&[2, 4, 7], &[2, 4, 1], &[2, 1, 7]]), Box::new(|_, v| {
            ops::mul(&ops::mul(&v[0], &v[1])?, &v[2])
        })),
        ("add/sub", s(&[&[3, 4], &[1, 4], &[3, 1]]), Box::new(|_, v| ops::sub(&ops::add(&v[0], &v[1])?, &v[2]))),
        ("sigmoid", s(&[&[5, 3]]), Box::new(|_, v| ops::sigmoid(&v[0]))),
        ("scale_by", s(&[&[3, 4], &[1]]), Box::new(|_, v| ops::scale_by(&v[0], &v[1]))),
        ("transpose", s(&[&[2, 3, 4]]), Box::new(|_, v| ops::transpose(&v[0]))),
        ("reshape/mean", s(&[&[2, 6]]), Box::new(|_, v| {
            let r = ops::reshape(&v[0], [3, 4])?;
            ops::reshape(&ops::mean(&ops::mul(&r, &r)?)?, [1])
        })),
    ]
}

fn op_max_err<T: Scalar>(shapes: &[Vec<usize>], f: &OpFn<T>, step: f64, floor: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs: Vec<Tensor<T>> = shapes.iter().map(|s| uniform(&mut rng, s, -2.0, 2.0)).collect();
    let r = check_gradients(
        |tape, v| {
            let out = f(tape, v)?;
            let w = tape.constant(uniform(&mut ChaCha8Rng::seed_from_u64(99), out.shape(), -2.0, 2.0));
            ops::sum(&ops::mul(&out, &w)?)
        },
        &inputs,
        &GradCheckOptions {
            step,
            denom_floor: floor,
            coords: None,
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(r.max_rel_err)
}

fn reduced_model_max_err() -> Result<f64, String> {
    let model = DwsformerModel::<f64>::new(ModelConfig::reduced(), 3).unwrap();
    let names: Vec<String> = model.params().names().cloned().collect();
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| model.params().value(n).unwrap().clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    inputs.push(uniform(&mut rng, &[2, 6, 50], -2.0, 2.0));
    let target = uniform::<f64>(&mut rng, &[2, 2], -1.0, 1.0);
    let coords: Vec<(usize, usize)> = (0..80)
        .map(|_| {
            let i = rng.random_range(0..inputs.len());
            (i, rng.random_range(0..inputs[i].numel()))
        })
        .collect();
    let loss = |tape: &Tape<f64>, v: &[Var<f64>]| -> dws_autodiff::Result<Var<f64>> {
        let to_ad = |e: dwsformer::Error| AutodiffError::Contract(e.to_string());
        let b = Binder::new(tape, model.params(), NormMode::Train, true);
        for (n, var) in names.iter().zip(v) {
            b.bind(n, var.clone()).map_err(to_ad)?;
        }
        let y = model.forward_with(&b, &v[names.len()]).map_err(to_ad)?;
        let d = ops::sub(&y, &tape.constant(target.clone()))?;
        ops::mean(&ops::mul(&d, &d)?)
    };
    let opts = GradCheckOptions {
        coords: Some(coords),
        ..GradCheckOptions::default()
    };
    Ok(check_gradients(loss, &inputs, &opts).map_err(|e| e.to_string())?.max_rel_err)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst64 = 0.0f64;
    let suite = op_suite::<f64>();
    for (name, shapes, f) in &suite {
        let e = op_max_err(shapes, f, 1e-3, 1e-3)?;
        ensure(e <= 1e-4, || format!("{name} (f64): rel err {e:.2e}"))?;
        worst64 = worst64.max(e);
    }
    let mut worst32 = 0.0f64;
    for (name, shapes, f) in &op_suite::<f32>() {
        // f32 roundoff in f(x ± h) is ~1e-7 |f| / h: widen the step as far
        // as truncation error allows, and floor the denominator at 0.1
        let step = if QUADRATIC.contains(name) { 1e-1 } else { 1e-2 };
        let e = op_max_err(shapes, f, step, 0.1)?;
        ensure(e <= 1e-3, || format!("{name} (f32): rel err {e:.2e}"))?;
        worst32 = worst32.max(e);
    }
    let model = reduced_model_max_err()?;
    ensure(model <= 1e-4, || format!("reduced model: rel err {model:.2e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 120.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "{} ops, max rel err f64 {worst64:.1e} / f32 {worst32:.1e}; reduced model {model:.1e}",
        suite.len()
    ))
}

// ---------------------------------------------------------------- 2

fn one_block(c: usize, m: usize, bn: bool, msgcu: bool) -> ModelConfig {
    ModelConfig {
        stage_widths: vec![c],
        stage_depths: vec![1],
        star_expansion: m as f64 / c as f64,
        star_batch_norm: bn,
        enable_msgcu: msgcu,
        gate_hidden_ratio: 0.5,
        window_len: 8,
        ..ModelConfig::default()
    }
}

const BLOCK: &str = "stages.0.blocks.0";

fn star_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = rng.random_range(1..=4usize);
        let m = rng.random_range(1..=6usize);
        let l = rng.random_range(1..=6usize);
        let model = DwsformerModel::<f64>::new(one_block(c, m, false, false), rng.random()).unwrap();
        let tape = Tape::new();
        let b = Binder::new(&tape, model.params(), NormMode::Train, false);
        let x = tape.constant(uniform(&mut rng, &[1, c, l], -2.0, 2.0));
        let prefix = format!("{BLOCK}.star");
        let h = blocks::star_local(&b, &prefix, &x, model.config()).map_err(|e| e.to_string())?;
        let prod = blocks::star_mix(&b, &prefix, &h).map_err(|e| e.to_string())?;
        let p = model.params();
        let get = |n: &str| p.value(&format!("{prefix}.{n}")).unwrap();
        let (w1, b1, w2, b2) = (get("pw1.weight"), get("pw1.bias"), get("pw2.weight"), get("pw2.bias"));
        for t in 0..l {
            let xa: Vec<f64> = (0..c).map(|i| h.value().at(&[0, i, t])).chain([1.0]).collect();
            for o in 0..m {
                let wa: Vec<f64> = (0..c).map(|i| w1.at(&[o, i, 0])).chain([b1.at(&[o])]).collect();
                let wb: Vec<f64> = (0..c).map(|j| w2.at(&[o, j, 0])).chain([b2.at(&[o])]).collect();
                let mut q = 0.0;
                for i in 0..=c {
                    for j in 0..=c {
                        q += wa[i] * wb[j] * xa[i] * xa[j];
                    }
                }
                worst = worst.max((q - prod.value().at(&[0, o, t])).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max abs diff {worst:.2e}"))?;
    Ok(format!("100 instances, max abs diff {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn shape_contract() -> Outcome {
    let model = DwsformerModel::<f32>::new(ModelConfig::default(), 0).unwrap();
    let lens: Vec<usize> = model.stage_shapes(200).unwrap().iter().map(|s| s.len).collect();
    ensure(lens == [200, 67, 23, 8], || format!("stage lengths {lens:?}"))?;

    // the downsampling convolution itself, run on data
    let tape = Tape::<f32>::new();
    let mut x = tape.constant(Tensor::zeros([1, 2, 200]));
    let mut seen = vec![200];
    let w = tape.constant(Tensor::zeros([2, 2, 3]));
    for _ in 0..3 {
        x = ops::conv1d(&x, &w, None, Conv1dSpec { stride: 3, padding: 1, groups: 1 }).unwrap();
        seen.push(x.shape()[2]);
    }
    ensure(seen == [200, 67, 23, 8], || format!("strided conv lengths {seen:?}"))?;

    let mut runner = TestRunner::new(PropConfig {
        cases: 64,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (1usize..9, 1usize..40, 1usize..3, 0u64..1000);
    runner
        .run(&strategy, |(c, l, batch, seed)| {
            prop_assume!(batch * l >= 2);
            let cfg = ModelConfig {
                gate_hidden_ratio: 1.0,
                ..one_block(c, 2 * c, true, true)
            };
            let model = DwsformerModel::<f32>::new(cfg, seed).unwrap();
            let x = uniform::<f32>(&mut ChaCha8Rng::seed_from_u64(seed), &[batch, c, l], -2.0, 2.0);
            let tape = Tape::new();
            let b = Binder::new(&tape, model.params(), NormMode::Train, false);
            let y = blocks::dwstb(&b, BLOCK, &tape.constant(x), model.config()).unwrap();
            prop_assert_eq!(y.shape(), &[batch, c, l][..]);
            Ok(())
        })
        .map_err(|e| format!("block shape property: {e}"))?;
    Ok("stage lengths 200→67→23→8; block shape property held on 64 cases".into())
}

// ---------------------------------------------------------------- 4

fn msgcu_params_by_hand(cfg: &ModelConfig) -> usize {
    cfg.stage_widths
        .iter()
        .zip(&cfg.stage_depths)
        .map(|(&c, &n)| {
            let h = (c as f64 * cfg.gate_hidden_ratio).floor() as usize;
            n * ((c * 3 + c) + (h * c + h) + (c * h + c))
        })
        .sum()
}

fn parameter_budget() -> Outcome {
    let full = DwsformerModel::<f32>::new(ModelConfig::default(), 0).unwrap();
    let abl = DwsformerModel::<f32>::new(ModelConfig::default().ablation(), 0).unwrap();
    let (pf, pa) = (full.count_parameters(), abl.count_parameters());
    let ff = full.count_flops(200).unwrap();
    let by_hand = msgcu_params_by_hand(full.config());
    ensure(pf - pa == by_hand, || format!("difference {} vs summed {by_hand}", pf - pa))?;
    let rel = |v: u64, target: f64| v as f64 / target - 1.0;
    ensure(rel(pf as u64, 2.76e6).abs() <= 0.2, || format!("full {pf}"))?;
    ensure(rel(pa as u64, 2.25e6).abs() <= 0.2, || format!("ablation {pa}"))?;
    ensure(rel(ff, 25.12e6).abs() <= 0.3, || format!("MACs {ff}"))?;
    Ok(format!(
        "params {pf} ({:+.1}%), ablation {pa} ({:+.1}%), MSGCU {by_hand}; MACs@200 {ff} ({:+.1}%)",
        100.0 * rel(pf as u64, 2.76e6),
        100.0 * rel(pa as u64, 2.25e6),
        100.0 * rel(ff, 25.12e6)
    ))
}

// ---------------------------------------------------------------- 5

/// Plateau rule restated independently; returns the stopping epoch.
fn simulate_stop(history: &[f64], lr0: f64, patience: usize, factor: f64, floor: f64) -> Option<usize> {
    let (mut best, mut since, mut decays) = (f64::INFINITY, 0, 0i32);
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
            if lr0.log10() + decays as f64 * factor.log10() < floor.log10() - 1e-9 {
                return Some(i + 1);
            }
        }
    }
    None
}

fn schedule_stop(history: &[f64]) -> (Option<usize>, f64) {
    let mut s = PlateauSchedule::new(1e-3, 10, 0.1, 1e-6);
    for (i, &v) in history.iter().enumerate() {
        if s.step(v) == ScheduleAction::Terminate {
            return (Some(i + 1), s.lr);
        }
    }
    (None, s.lr)
}

fn training_smoke() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::reduced();
    let seqs = SynthSpec::RandomWalk(RandomWalkSpec {
        duration_s: 40.0,
        ..RandomWalkSpec::default()
    })
    .generate(2, 3)
    .unwrap();
    let p = pipeline::prepare(&seqs, &seqs[..1], cfg.window_len, cfg.window_len).unwrap();
    let windows: Vec<_> = p.data.train.into_iter().take(64).collect();
    ensure(windows.len() == 64, || format!("only {} windows", windows.len()))?;
    let data = TrainData {
        train: windows.clone(),
        val: windows,
    };
    let tc = TrainConfig {
        batch_size: 64,
        max_epochs: 500,
        seed: 1,
        ..TrainConfig::default()
    };
    let model = DwsformerModel::<f32>::new(cfg, 1).unwrap();
    let mut t = Trainer::new(model, tc, Some(p.normalizer)).unwrap();
    let mut reached = None;
    let mut last = f64::NAN;
    for _ in 0..500 {
        let (log, action) = t.step_epoch(&data).map_err(|e| e.to_string())?;
        // val == train here, evaluated with running statistics
        last = log.val_loss;
        if last < 1e-3 {
            reached = Some(log.epoch);
            break;
        }
        if action == ScheduleAction::Terminate {
            break;
        }
    }
    let epoch = reached.ok_or_else(|| format!("MSE {last:.2e} after {} epochs", t.epoch))?;

    let flat = vec![1.0; 100];
    let (stop, lr) = schedule_stop(&flat);
    ensure(stop == Some(41) && simulate_stop(&flat, 1e-3, 10, 0.1, 1e-6) == Some(41), || {
        format!("flat history stops at {stop:?}")
    })?;
    ensure(lr < 1e-6, || format!("lr at stop {lr}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let h: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let (got, _) = schedule_stop(&h);
        let want = simulate_stop(&h, 1e-3, 10, 0.1, 1e-6);
        ensure(got == want, || format!("schedule stops at {got:?}, oracle {want:?}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 300.0, || format!("took {secs:.0} s"))?;
    Ok(format!("MSE {last:.2e} at epoch {epoch}; flat schedule stops at epoch 41 with lr {lr:.0e}; {secs:.0} s"))
}

// ---------------------------------------------------------------- 6

fn mean_test_ate(model: &DwsformerModel<f32>, norm: &data::Normalizer, test: &[ImuSequence]) -> (f64, Vec<f64>) {
    let rs = pipeline::evaluate_all(model, norm, test, &EvalOptions::default()).unwrap();
    let ates: Vec<f64> = rs.iter().map(|r| r.metrics.ate_m).collect();
    (ates.iter().sum::<f64>() / ates.len() as f64, ates)
}

/// Trains with the given configuration and returns the best-validation model.
fn train_best(cfg: ModelConfig, data: &TrainData, norm: &data::Normalizer, dir: &Path) -> (DwsformerModel<f32>, usize) {
    let tc = TrainConfig {
        max_epochs: BENCH_EPOCHS,
        seed: 42,
        ..TrainConfig::default()
    };
    let model = DwsformerModel::<f32>::new(cfg, 42).unwrap();
    let mut t = Trainer::new(model, tc, Some(norm.clone())).unwrap().with_out_dir(dir).unwrap();
    let out = t.run(data).unwrap();
    (Checkpoint::load(dir.join(BEST_CHECKPOINT)).unwrap().model, out.best_epoch)
}

const BENCH_EPOCHS: usize = 20;

fn synthetic_benchmark() -> Outcome {
    let seqs = SynthSpec::RandomWalk(RandomWalkSpec::default()).generate(20, 42).unwrap();
    let ids: Vec<String> = seqs.iter().map(|s| s.id.clone()).collect();
    let split = SplitSpec::new(&ids, 42);
    let part = |p: SplitPart| -> Vec<ImuSequence> {
        let want = split.part(p);
        seqs.iter().filter(|s| want.contains(&s.id)).cloned().collect()
    };
    let (train, val, test) = (part(SplitPart::Train), part(SplitPart::Val), part(SplitPart::Test));
    let cfg = ModelConfig::default();
    let len = cfg.window_len;
    let p = pipeline::prepare(&train, &val, len, len / 2).unwrap();

    // freshly initialised weights with the initial statistics (mean 0, var 1)
    let mut init = DwsformerModel::new(cfg.clone(), 42).unwrap();
    init.params_mut().reset_running_stats();
    let (untrained, _) = mean_test_ate(&init, &p.normalizer, &test);
    let dir = tempfile::tempdir().unwrap();
    let (full_dir, abl_dir) = (dir.path().join("full"), dir.path().join("ablation"));
    let (full, full_epoch) = train_best(cfg.clone(), &p.data, &p.normalizer, &full_dir);
    let (abl, abl_epoch) = train_best(cfg.ablation(), &p.data, &p.normalizer, &abl_dir);
    let (full_ate, full_each) = mean_test_ate(&full, &p.normalizer, &test);
    let (abl_ate, abl_each) = mean_test_ate(&abl, &p.normalizer, &test);
    let detail = format!(
        "mean test ATE over {} sequences: full {full_ate:.3} m {full_each:.2?} (best epoch {full_epoch}), \
         ablation {abl_ate:.3} m {abl_each:.2?} (best epoch {abl_epoch}), untrained {untrained:.3} m",
        test.len()
    );
    ensure(full_ate < untrained && full_ate < abl_ate, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn traj(times: Vec<f64>, positions: Vec<[f64; 2]>) -> Trajectory {
    Trajectory::new(times, positions).unwrap()
}

fn ate_ref(e: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
    let s: f64 = e.iter().zip(g).map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sum();
    (s / e.len() as f64).sqrt()
}

fn rte_ref(times: &[f64], e: &[[f64; 2]], g: &[[f64; 2]], interval: f64) -> f64 {
    let mut bounds = vec![0];
    for k in 1..times.len() {
        if times[k] - times[*bounds.last().unwrap()] >= interval - 5e-7 {
            bounds.push(k);
        }
    }
    let mut total = 0.0;
    for w in bounds.windows(2) {
        let (i, j) = (w[0], w[1]);
        let shift = [g[i][0] - e[i][0], g[i][1] - e[i][1]];
        let mut s = 0.0;
        for k in i..=j {
            s += (e[k][0] + shift[0] - g[k][0]).powi(2) + (e[k][1] + shift[1] - g[k][1]).powi(2);
        }
        total += (s / (j - i + 1) as f64).sqrt();
    }
    total / (bounds.len() - 1) as f64
}

fn pde_ref(e: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
    let n = e.len() - 1;
    let len: f64 = g.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt()).sum();
    ((e[n][0] - g[n][0]).powi(2) + (e[n][1] - g[n][1]).powi(2)).sqrt() / len
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut full_intervals = 0;
    for _ in 0..50 {
        let n = rng.random_range(3..400);
        let dt = rng.random_range(0.2..2.0);
        let mut p = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let mut g = vec![p];
        for _ in 1..n {
            p = [p[0] + rng.random_range(-1.0..1.5), p[1] + rng.random_range(-1.0..1.0)];
            g.push(p);
        }
        let e: Vec<[f64; 2]> = g
            .iter()
            .map(|q| [q[0] + rng.random_range(-2.0..2.0), q[1] + rng.random_range(-2.0..2.0)])
            .collect();
        let times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let (est, gt) = (traj(times.clone(), e.clone()), traj(times.clone(), g.clone()));
        worst = worst.max((ate(&est, &gt).unwrap() - ate_ref(&e, &g)).abs());
        worst = worst.max((pde(&est, &gt).unwrap() - pde_ref(&e, &g)).abs());
        let r = rte(&est, &gt, 60.0).unwrap();
        if !r.extrapolated {
            full_intervals += 1;
            worst = worst.max((r.value - rte_ref(&times, &e, &g, 60.0)).abs());
        }
        // translating both trajectories leaves PDE unchanged
        let d = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        let moved = pde(&est.translated(d), &gt.translated(d)).unwrap();
        ensure((moved - pde(&est, &gt).unwrap()).abs() <= 1e-9, || "PDE not translation invariant".into())?;
    }
    ensure(worst <= 1e-9, || format!("max deviation from brute force {worst:.2e}"))?;
    ensure(full_intervals > 10, || format!("only {full_intervals} pairs span an RTE interval"))?;

    let times: Vec<f64> = (0..200).map(|k| k as f64).collect();
    let g: Vec<[f64; 2]> = times.iter().map(|t| [t.sin() * 3.0, 0.5 * t]).collect();
    let e: Vec<[f64; 2]> = g.iter().map(|q| [q[0] + 3.0, q[1] + 4.0]).collect();
    let (est, gt) = (traj(times.clone(), e), traj(times, g));
    let a = ate(&est, &gt).unwrap();
    ensure((a - 5.0).abs() <= 1e-9, || format!("constant offset ATE {a}"))?;
    let r = rte(&est, &gt, 60.0).unwrap();
    ensure(r.value.abs() <= 1e-9 && r.intervals >= 3, || format!("constant offset RTE {:?}", r))?;
    Ok(format!("50 random pairs within {worst:.1e}; offset ATE 5, RTE 0, PDE translation invariant"))
}

// ---------------------------------------------------------------- 8

fn pipeline_run(root: &Path) -> Vec<u8> {
    let data_dir = root.join("data");
    let spec = SynthSpec::RandomWalk(RandomWalkSpec {
        duration_s: 20.0,
        ..RandomWalkSpec::default()
    });
    let seqs = spec.generate(20, 5).unwrap();
    let ids: Vec<String> = seqs.iter().map(|s| s.id.clone()).collect();
    data::write_corpus(&data_dir, &seqs, &SplitSpec::new(&ids, 5)).unwrap();

    let cfg = ModelConfig::reduced();
    let (split, p) = pipeline::prepare_dir(&data_dir, cfg.window_len, cfg.window_len / 2).unwrap();
    let tc = TrainConfig {
        max_epochs: 3,
        batch_size: 32,
        seed: 5,
        ..TrainConfig::default()
    };
    let run_dir = root.join("run");
    let model = DwsformerModel::<f32>::new(cfg, 5).unwrap();
    Trainer::new(model, tc, Some(p.normalizer.clone()))
        .unwrap()
        .with_out_dir(&run_dir)
        .unwrap()
        .run(&p.data)
        .unwrap();

    let ckpt = Checkpoint::load(run_dir.join(BEST_CHECKPOINT)).unwrap();
    let test = pipeline::load_part(&data_dir, &split, SplitPart::Test).unwrap();
    let rs = pipeline::evaluate_all(&ckpt.model, &ckpt.normalizer.unwrap(), &test, &EvalOptions::default()).unwrap();
    let out = root.join("eval");
    eval::write_report(&out, "determinism", &rs).unwrap();
    std::fs::read(out.join(eval::METRICS_FILE)).unwrap()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ta, tb) = (pipeline_run(a.path()), pipeline_run(b.path()));
    ensure(ta == tb, || "metric tables differ between runs".into())?;
    let rows = String::from_utf8_lossy(&ta).lines().filter(|l| !l.starts_with('#')).count() - 1;
    Ok(format!("two runs gave byte-identical metric tables ({rows} sequences)"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite),
        ("star-operation oracle", star_oracle),
        ("architecture shape contract", shape_contract),
        ("parameter budget", parameter_budget),
        ("training smoke test", training_smoke),
        ("synthetic benchmark", synthetic_benchmark),
        ("metric oracles", metric_oracles),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1} s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1} s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
