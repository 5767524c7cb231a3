//! Built-in correctness checks: gradient checks of every block and of the
//! full model under the ML2RE loss, metric oracles, and feature formulas.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, AutodiffError, GradCheckReport, Tape, Tensor, Var};
use crate::blocks::{
    attention, softmax_last, AttentionConfig, ColumnEmbedding, Ctx, LayerNorm, Linear, Mlp, Mode, ParamStore, TransformerBlock,
    LEAKY_SLOPE,
};
use crate::dataset::{FatigueRecord, Vocabulary};
use crate::evaluation::{mae, mre, r_squared};
use crate::features::{encode_records, fit_standardizer, pm_feature, stussi_feature, weibull_feature, LogBase};
use crate::model::{DeepOFormer, Injection, ModelBatch, ModelDims, ModelError, Variant};
use crate::training::LossConfig;

/// Relative tolerance of every gradient check.
pub const GRAD_TOL: f64 = 1e-4;
pub const SEEDS: u64 = 5;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn from_report(name: String, report: GradCheckReport) -> CheckResult {
    let detail = match &report.error {
        Some(e) => format!("error: {e}"),
        None => format!(
            "{} elements, max rel err {:.2e}, {} mismatches",
            report.checked,
            report.max_rel_error,
            report.mismatches.len()
        ),
    };
    CheckResult::new(name, report.passed(), detail)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Grad-checks the parameters in `store` plus one input tensor through a
/// weighted sum of the block output.
fn check_block<F>(store: &ParamStore, input: Tensor, f: F) -> GradCheckReport
where
    F: Fn(&mut Ctx, Var) -> Result<Var, AutodiffError>,
{
    let mut inputs = store.tensors().to_vec();
    inputs.push(input);
    grad_check(
        |tape, vars| {
            let (params, x) = vars.split_at(vars.len() - 1);
            let mut ctx = Ctx::new(tape, params, Mode::Eval);
            let y = f(&mut ctx, x[0])?;
            let n = ctx.tape.value(y).numel();
            let shape = ctx.tape.shape(y).to_vec();
            let w = ctx.tape.constant(Tensor::new(shape, (0..n).map(|i| 0.3 + (i % 7) as f64 * 0.1).collect())?);
            let wy = ctx.tape.mul(y, w)?;
            ctx.tape.sum_all(wy)
        },
        &inputs,
        GRAD_TOL,
    )
}

fn randomize_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    // Nonzero biases keep pre-activations away from the Leaky ReLU kink.
    let names = store.names().to_vec();
    for (name, t) in names.iter().zip(store.tensors_mut()) {
        if name.ends_with(".bias") || name == "bias" {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
    }
}

fn block_config() -> AttentionConfig {
    AttentionConfig {
        n_heads: 2,
        head_dim: 3,
        model_dim: 6,
        attention_dropout: 0.2,
        ffn_dropout: 0.1,
    }
}

/// Every building block on 5 seeds.
pub fn block_gradient_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut push = |name: &str, seed: u64, r: GradCheckReport| out.push(from_report(format!("grad {name} (seed {seed})"), r));
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 4, 3, true, &mut rng);
        randomize_biases(&mut store, &mut rng);
        push("linear", seed, check_block(&store, uniform(&mut rng, &[3, 4]), |ctx, x| lin.forward(ctx, x)));

        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", &[4, 5, 5, 3], LEAKY_SLOPE, Some(LEAKY_SLOPE), &mut rng);
        randomize_biases(&mut store, &mut rng);
        push("mlp", seed, check_block(&store, uniform(&mut rng, &[3, 4]), |ctx, x| mlp.forward(ctx, x)));

        let mut store = ParamStore::new();
        let norm = LayerNorm::new(&mut store, "ln", 5);
        let gain = uniform(&mut rng, &[5]);
        store.get_mut(norm.gain).data_mut().copy_from_slice(gain.data());
        push("layer_norm", seed, check_block(&store, uniform(&mut rng, &[4, 5]), |ctx, x| norm.forward(ctx, x)));

        let store = ParamStore::new();
        push("softmax", seed, check_block(&store, uniform(&mut rng, &[2, 3, 4]), softmax_last));
        push(
            "attention",
            seed,
            check_block(&store, uniform(&mut rng, &[2, 3, 4]), |ctx, x| {
                let q = ctx.tape.scale(x, 2.0)?;
                let v = ctx.tape.exp(x)?;
                attention(ctx, q, x, v, 0.2)
            }),
        );

        let mut store = ParamStore::new();
        let emb = ColumnEmbedding::new(&mut store, "emb", &[3, 2], 4, &mut rng);
        push(
            "column_embedding",
            seed,
            check_block(&store, uniform(&mut rng, &[1]), |ctx, x| {
                let e = emb.forward(ctx, &[vec![1, 0], vec![2, 1], vec![1, 1]])?;
                ctx.tape.mul(e, x)
            }),
        );

        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "blk", block_config(), &mut rng);
        randomize_biases(&mut store, &mut rng);
        push(
            "transformer_block",
            seed,
            check_block(&store, uniform(&mut rng, &[2, 3, 6]), |ctx, x| block.forward(ctx, x)),
        );
    }
    out
}

/// Reduced widths so every parameter of the full model can be perturbed.
pub fn gradient_check_dims() -> ModelDims {
    ModelDims {
        attention: AttentionConfig {
            n_heads: 2,
            head_dim: 4,
            model_dim: 8,
            ..AttentionConfig::default()
        },
        p: 4,
        hidden_width: 8,
        ..ModelDims::default()
    }
}

fn synthetic_batch(rng: &mut ChaCha8Rng) -> (Vec<FatigueRecord>, Vocabulary) {
    let tempers = ["T6", "T4", "T73"];
    let records: Vec<FatigueRecord> = (0..4)
        .map(|i| {
            let uts = rng.gen_range(350.0..550.0);
            let fs = rng.gen_range(100.0..160.0);
            let sigma_a = rng.gen_range(fs * 1.1..uts * 0.8);
            FatigueRecord {
                curve_id: i as u32 + 1,
                uts,
                tys: 0.85 * uts,
                fatigue_strength: fs,
                temper: tempers[i % tempers.len()].into(),
                stress_ratio_r: -1.0,
                sigma_a,
                log_n: rng.gen_range(4.5..8.0),
            }
        })
        .collect();
    let vocab = Vocabulary::build(records.iter().map(|r| r.temper.as_str()));
    (records, vocab)
}

/// Full model forward plus the ML2RE loss on a 4-record batch, every
/// parameter checked, dropout off (eval mode).
pub fn model_gradient_check(variant: Variant, seed: u64) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let (records, vocab) = synthetic_batch(&mut rng);
    let std = fit_standardizer(&records, LogBase::Ten)?;
    let enc = encode_records(&records, &vocab, &std, LogBase::Ten)?;
    let batch = ModelBatch::from_inputs(&enc.inputs);
    let mut model = DeepOFormer::build(variant, &gradient_check_dims(), &[vocab.size()], seed)?;
    randomize_biases(&mut model.params, &mut rng);
    let loss = LossConfig::for_variant(variant);
    let targets = enc.targets;
    let model = &model;
    Ok(grad_check(
        |tape: &mut Tape, vars: &[Var]| {
            let mut ctx = Ctx::new(tape, vars, Mode::Eval);
            let out = model.forward(&mut ctx, &batch, &Injection::default()).map_err(|e| match e {
                ModelError::Autodiff(a) => a,
                other => AutodiffError::Invariant(other.to_string()),
            })?;
            loss.on_tape(ctx.tape, out.prediction, &targets)
                .map_err(|e| AutodiffError::Invariant(e.to_string()))
        },
        model.params.tensors(),
        GRAD_TOL,
    ))
}

pub fn model_gradient_checks() -> Vec<CheckResult> {
    (0..SEEDS)
        .map(|seed| {
            let name = format!("grad full model + ML2RE (seed {seed})");
            match model_gradient_check(Variant::Full, seed) {
                Ok(r) => from_report(name, r),
                Err(e) => CheckResult::new(name, false, format!("error: {e}")),
            }
        })
        .collect()
}

pub const ORACLE_VECTORS: usize = 1000;
pub const ORACLE_TOL: f64 = 1e-12;

/// Metrics against straightforward scalar loops, plus the worked example.
pub fn metric_checks() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut failure = None;
    for _ in 0..ORACLE_VECTORS {
        let n = rng.gen_range(2..50);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(3.0..9.0)).collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();

        let mean = y.iter().sum::<f64>() / n as f64;
        let (mut res, mut tot, mut abs, mut rel) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            res += (y[i] - p[i]) * (y[i] - p[i]);
            tot += (y[i] - mean) * (y[i] - mean);
            abs += (y[i] - p[i]).abs();
            let c = 10f64.powf(y[i]);
            rel += (c - 10f64.powf(p[i])).abs() / (c + 1e-12);
        }
        let oracle = [1.0 - res / (tot + 1e-12), abs / n as f64, rel / n as f64];
        let got = match (r_squared(&y, &p), mae(&y, &p), mre(&y, &p)) {
            (Ok(a), Ok(b), Ok(c)) => [a, b, c],
            _ => {
                failure = Some("metric returned an error".to_string());
                break;
            }
        };
        for (g, o) in got.iter().zip(oracle) {
            worst = worst.max((g - o).abs());
        }
    }
    let mut out = vec![CheckResult::new(
        "metric oracles (1000 random vectors)",
        failure.is_none() && worst <= ORACLE_TOL,
        failure.unwrap_or_else(|| format!("max abs diff {worst:.2e}")),
    )];

    let (y, p) = ([1.0, 2.0, 3.0], [1.1, 1.9, 3.2]);
    let got = (r_squared(&y, &p), mae(&y, &p), mre(&y, &p));
    let ok = match got {
        (Ok(r2), Ok(m), Ok(e)) => (r2 - 0.97).abs() < 1e-9 && (m - 0.133333).abs() < 1e-6 && (e - 0.349830).abs() < 1e-6,
        _ => false,
    };
    out.push(CheckResult::new("metric worked example", ok, format!("{got:?}")));
    out
}

pub const FEATURE_TOL: f64 = 1e-9;
pub const MONOTONE_TRIPLES: usize = 10_000;

/// Feature values against directly computed logarithms, and monotonicity
/// in the stress amplitude.
pub fn feature_checks() -> Vec<CheckResult> {
    let cases: [(&str, Result<f64, _>, f64); 6] = [
        ("Stussi(500,300,200)", stussi_feature(500.0, 300.0, 200.0), 0.0),
        ("Stussi(470,200,150)", stussi_feature(470.0, 200.0, 150.0), (270f64 / 150.0).log10()),
        ("Weibull(500,300,200)", weibull_feature(500.0, 300.0, 200.0), (300f64 / 200.0).log10()),
        ("Weibull(400,300,150)", weibull_feature(400.0, 300.0, 150.0), 0.0),
        ("PM(300,200)", pm_feature(300.0, 200.0), 0.0),
        ("PM(250,150)", pm_feature(250.0, 150.0), (150f64 / 200.0).log10()),
    ];
    let mut out: Vec<CheckResult> = cases
        .into_iter()
        .map(|(name, got, want)| {
            let ok = got.as_ref().map(|g| (g - want).abs() <= FEATURE_TOL).unwrap_or(false);
            CheckResult::new(format!("feature {name}"), ok, format!("{got:?} vs {want}"))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut violations = 0;
    for _ in 0..MONOTONE_TRIPLES {
        let uts: f64 = rng.gen_range(200.0..800.0);
        let fs: f64 = uts * rng.gen_range(0.1..0.6);
        let floor = (fs - 99.0).max(1.0);
        let s1 = rng.gen_range(floor..uts * 0.999);
        let s2 = rng.gen_range(s1..uts);
        if s2 - s1 < 1e-6 {
            continue;
        }
        let dec = |f: &dyn Fn(f64) -> Result<f64, crate::features::FeatureError>| match (f(s1), f(s2)) {
            (Ok(a), Ok(b)) => a > b,
            _ => false,
        };
        let ok = dec(&|s| stussi_feature(uts, s, fs)) && dec(&|s| weibull_feature(uts, s, fs)) && dec(&|s| pm_feature(s, fs));
        if !ok {
            violations += 1;
        }
    }
    out.push(CheckResult::new(
        "feature monotonicity (10^4 random triples)",
        violations == 0,
        format!("{violations} violations"),
    ));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Metrics,
    Features,
}

pub fn run(suites: &[Suite]) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for s in suites {
        let start = Instant::now();
        let mut results = match s {
            Suite::Gradients => {
                let mut r = block_gradient_checks();
                r.extend(model_gradient_checks());
                r
            }
            Suite::Metrics => metric_checks(),
            Suite::Features => feature_checks(),
        };
        log::info!("{s:?} checks took {:.1?}", start.elapsed());
        out.append(&mut results);
    }
    out
}

pub fn run_all() -> Vec<CheckResult> {
    run(&[Suite::Gradients, Suite::Metrics, Suite::Features])
}
