//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! lines are printed even when everything passes.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use deepoformer::autodiff::Tape;
use deepoformer::blocks::{Ctx, Mode, ATTENTION_ROW_TOL};
use deepoformer::dataset::{split_curves, FatigueRecord, Vocabulary};
use deepoformer::evaluation::{mae, mre, r_squared};
use deepoformer::features::{encode_records, fit_standardizer, LogBase};
use deepoformer::model::{Branch, DeepOFormer, Injection, ModelBatch, ModelDims, Variant};
use deepoformer::selftest;
use deepoformer::synthgen::{self, FIXTURE_NOISE_STD};
use deepoformer::training::{self, Experiment, LossConfig, RepetitionConfig, TrainConfig};

const BIN: &str = env!("CARGO_BIN_EXE_deepoformer");

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

/// User plus system CPU time of this process, all threads.
fn cpu_time() -> Duration {
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut usage) };
    let tv = |t: libc::timeval| Duration::from_secs(t.tv_sec as u64) + Duration::from_micros(t.tv_usec as u64);
    tv(usage.ru_utime) + tv(usage.ru_stime)
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let out = bin(&["selftest", "--suite", "gradients"]);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let checks = text.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).count();
    let failed = text.lines().filter(|l| l.starts_with("[FAIL]")).count();
    verdict(
        out.status.success() && failed == 0 && checks > 0 && elapsed < Duration::from_secs(60),
        format!("{checks} gradient checks, {failed} failed, {elapsed:.1?} (limit 60 s)"),
    )
}

fn metrics() -> Verdict {
    let suite = selftest::metric_checks();
    let failed: Vec<String> = suite.iter().filter(|r| !r.passed).map(|r| r.line()).collect();
    let y = [1.0, 2.0, 3.0];
    let p = [1.1, 1.9, 3.2];
    let got = (r_squared(&y, &p).unwrap(), mae(&y, &p).unwrap(), mre(&y, &p).unwrap());
    let worked = (got.0 - 0.97).abs() < 5e-7 && (got.1 - 0.133333).abs() < 5e-7 && (got.2 - 0.349830).abs() < 5e-7;
    verdict(
        failed.is_empty() && worked,
        format!(
            "{} oracle checks, {} failed; worked example ({:.6}, {:.6}, {:.6})",
            suite.len(),
            failed.len(),
            got.0,
            got.1,
            got.2
        ),
    )
}

fn features() -> Verdict {
    let suite = selftest::feature_checks();
    let failed = suite.iter().filter(|r| !r.passed).count();
    verdict(failed == 0, format!("{} feature checks, {failed} failed", suite.len()))
}

fn capacity() -> Verdict {
    let start = Instant::now();
    let mut specs = synthgen::fixture_specs(2, 0.0, 0).unwrap();
    for s in &mut specs {
        s.n_points = 4;
    }
    let curves = synthgen::generate(&specs, 0).unwrap();
    let records: Vec<&FatigueRecord> = curves.iter().flat_map(|c| &c.records).collect();
    let vocab = Vocabulary::build(records.iter().map(|r| r.temper.as_str()));
    let std = fit_standardizer(records.iter().copied(), LogBase::Ten).unwrap();
    let set = encode_records(records.iter().copied(), &vocab, &std, LogBase::Ten).unwrap();
    let mut model = DeepOFormer::build(Variant::Full, &ModelDims::default(), &[vocab.size()], 0).unwrap();
    let cfg = TrainConfig {
        epochs: 3000,
        ..TrainConfig::default()
    };
    training::train(&mut model, &set, &LossConfig::for_variant(Variant::Full), &cfg).unwrap();
    let pred = model.predict(&ModelBatch::from_inputs(&set.inputs)).unwrap();
    let train_mae = mae(&set.targets, &pred).unwrap();
    let elapsed = start.elapsed();
    verdict(
        set.len() == 8 && train_mae < 0.05 && elapsed < Duration::from_secs(120),
        format!("{} records, train MAE {train_mae:.4} (limit 0.05), {elapsed:.1?} (limit 120 s)", set.len()),
    )
}

fn end_to_end() -> Verdict {
    let start = Instant::now();
    let cpu_start = cpu_time();
    let curves = synthgen::default_fixture(1);
    let split = split_curves(&curves, 7, 2).unwrap();
    let data = training::prepare(&curves, &split, LogBase::Ten, 0).unwrap();
    let exp = Experiment {
        variant: Variant::Full,
        dims: ModelDims::default(),
        loss: LossConfig::for_variant(Variant::Full),
        train: TrainConfig::default(),
    };
    let rep = RepetitionConfig {
        n_repetitions: 10,
        base_seed: 0,
        workers: workers(),
    };
    let out = training::run_repetitions(&data, &exp, &rep, "").unwrap();
    let r = &out.report;
    let elapsed = start.elapsed();
    let cpu = cpu_time() - cpu_start;
    verdict(
        r.completed == 10 && r.mean.r2 >= 0.90 && r.mean.mae <= 0.30 && cpu < Duration::from_secs(15 * 60),
        format!(
            "{}/{} train/test curves, noise {FIXTURE_NOISE_STD}, {} epochs x {} reps: R2 {:.4} ± {:.4} (min 0.90), MAE {:.4} ± {:.4} (max 0.30), CPU {:.0} s (limit 900 s), wall {:.0} s on {} worker(s)",
            split.train_curve_ids.len(),
            split.test_curve_ids.len(),
            exp.train.epochs,
            r.completed,
            r.mean.r2,
            r.std.r2,
            r.mean.mae,
            r.std.mae,
            cpu.as_secs_f64(),
            elapsed.as_secs_f64(),
            rep.workers
        ),
    )
}

fn short_train(data: &Path, out: &Path, variant: &str, epochs: &str) -> bool {
    bin(&[
        "train", "--data", data.to_str().unwrap(), "--variant", variant, "--epochs", epochs, "--reps", "2", "--out",
        out.to_str().unwrap(),
    ])
    .status
    .success()
}

fn ablations(dir: &Path, data: &Path) -> Verdict {
    let mut dirs = Vec::new();
    let mut trained = 0;
    for v in Variant::ALL {
        let out = dir.join(v.as_str());
        if short_train(data, &out, v.as_str(), "100") {
            trained += 1;
        }
        dirs.push(out.to_str().unwrap().to_string());
    }
    let mut args = vec!["report"];
    args.extend(dirs.iter().map(String::as_str));
    let out = bin(&args);
    let table = String::from_utf8_lossy(&out.stdout);
    let rows = Variant::ALL.iter().filter(|v| table.lines().any(|l| l.starts_with(v.as_str()) && l.contains('±'))).count();
    verdict(
        out.status.success() && trained == 5 && rows == 5,
        format!("{trained}/5 variants trained, {rows}/5 rows in the report matrix"),
    )
}

fn determinism(dir: &Path, data: &Path) -> Verdict {
    let (a, b) = (dir.join("det_a"), dir.join("det_b"));
    let ok = short_train(data, &a, "full", "30") && short_train(data, &b, "full", "30");
    let same = ok && fs::read(a.join("metrics.csv")).ok() == fs::read(b.join("metrics.csv")).ok();
    verdict(same, format!("two identical runs, metrics.csv byte-identical: {same}"))
}

fn structure() -> Verdict {
    let curves = synthgen::default_fixture(1);
    let records: Vec<&FatigueRecord> = curves.iter().take(6).flat_map(|c| &c.records).collect();
    let vocab = Vocabulary::build(records.iter().map(|r| r.temper.as_str()));
    let std = fit_standardizer(records.iter().copied(), LogBase::Ten).unwrap();
    let set = encode_records(records.iter().copied(), &vocab, &std, LogBase::Ten).unwrap();
    let batch = ModelBatch::from_inputs(&set.inputs);
    let dims = ModelDims::default();
    let model = DeepOFormer::build(Variant::Full, &dims, &[vocab.size()], 3).unwrap();

    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, false);
    let mut ctx = Ctx::new(&mut tape, &vars, Mode::Eval).with_debug_checks(true);
    let forward_ok = model.forward(&mut ctx, &batch, &Injection::default()).is_ok();
    let row_err = ctx.max_attention_row_error();

    let branch = model.evaluate(&batch, &Injection::default(), false).unwrap().branch.unwrap();
    let p = branch.shape()[1];
    let rows = branch.data();
    let mut spread: f64 = 0.0;
    for i in 0..set.len() {
        for j in 0..set.len() {
            if set.curve_ids[i] == set.curve_ids[j] {
                for k in 0..p {
                    spread = spread.max((rows[i * p + k] - rows[j * p + k]).abs());
                }
            }
        }
    }
    let ffn_ok = match &model.branch {
        Branch::Transformer(enc) => enc.blocks.iter().all(|b| b.ffn_hidden == 4 * dims.attention.model_dim),
        Branch::Mlp { .. } => false,
    };
    verdict(
        forward_ok && row_err <= 1e-9 && ATTENTION_ROW_TOL <= 1e-9 && spread == 0.0 && ffn_ok,
        format!("attention row error {row_err:e}, in-curve branch spread {spread:e}, FFN width 4 x model_dim: {ffn_ok}"),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixture.csv");
    let synth = bin(&["synth", "--curves", "54", "--seed", "1", "--out", data.to_str().unwrap()]);
    assert!(synth.status.success(), "synth failed");

    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let checks: Vec<(&str, Check)> = vec![
        ("1 gradient correctness", Box::new(gradients)),
        ("2 metric oracles", Box::new(metrics)),
        ("3 feature formulas", Box::new(features)),
        ("4 capacity", Box::new(capacity)),
        ("5 synthetic end-to-end", Box::new(end_to_end)),
        ("6 ablation machinery", Box::new(|| ablations(dir.path(), &data))),
        ("7 determinism", Box::new(|| determinism(dir.path(), &data))),
        ("8 structural invariants", Box::new(structure)),
    ];
    let only: Option<String> = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in &checks {
        if only.as_deref().is_some_and(|o| !name.starts_with(o)) {
            continue;
        }
        let v = check();
        println!("[{}] criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
