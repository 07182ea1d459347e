//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{gradients, oracles};
use ctsgan_core::ctsgan::{CtsganModel, Hyperparams, NetworkKind, Stage};
use ctsgan_core::data::{minmax_fit_normalize, MinMax, RawSeries};
use ctsgan_core::harness::{self, emit_report, ExperimentConfig};
use ctsgan_core::metrics::{self, PredictionInterval, RunCollection};
use ctsgan_core::nn::{sample_gaussian, NoiseSpec};
use ctsgan_core::{seed, Error};
use rand::Rng as _;

type Check = fn() -> Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:.1?}, limit {limit:?}"))
}

fn worked_example() -> Result<(), String> {
    let started = Instant::now();
    let actuals: Vec<f64> = (0..20).map(|t| t as f64).collect();
    let lower: Vec<f64> = actuals.iter().map(|a| a - 1.0).collect();
    let mut upper: Vec<f64> = actuals.iter().map(|a| a + 1.0).collect();
    upper[4] = actuals[4] - 0.5;
    upper[13] = actuals[13] - 0.5;
    let iv = PredictionInterval::new(lower, upper).unwrap();
    let delta = metrics::ecpas(&actuals, &iv).unwrap();
    ensure(delta == 0.9, || format!("ECPAS {delta}"))?;
    within(started, Duration::from_secs(1))
}

fn oracle_equivalence() -> Result<(), String> {
    let started = Instant::now();
    for i in 0..1000 {
        let mut rng = seed::rng(seed::mix(2024, i));
        let runs = oracles::random_runs(&mut rng, 50, 20);
        let actuals = runs.actuals();
        for iv in runs.runs() {
            ensure(metrics::ecpas(actuals, iv).unwrap() == oracles::ecpas(actuals, iv), || format!("ecpas, instance {i}"))?;
            ensure(metrics::eawapi(iv).unwrap() == oracles::eawapi(iv), || format!("eawapi, instance {i}"))?;
        }
        for t in 0..runs.num_samples() {
            ensure(metrics::ecp_one(&runs, t).unwrap() == oracles::ecp_one(&runs, t), || format!("ecp_one, instance {i}"))?;
            ensure(metrics::eaw_one(&runs, t).unwrap() == oracles::eaw_one(&runs, t), || format!("eaw_one, instance {i}"))?;
        }
        let mut deltas = metrics::delta_per_run(&runs);
        deltas.extend([0.0, 0.5, 1.0, rng.random::<f64>()]);
        for d in deltas {
            ensure(
                metrics::confidence_level_ecpas(&runs, d).unwrap() == oracles::phi(&runs, d),
                || format!("phi at {d}, instance {i}"),
            )?;
        }
        let mut xis = metrics::xi_per_run(&runs);
        xis.extend([0.0, 1.0, 5.0, 5.0 * rng.random::<f64>()]);
        for x in xis {
            ensure(
                metrics::confidence_level_eawapi(&runs, x).unwrap() == oracles::varphi(&runs, x),
                || format!("varphi at {x}, instance {i}"),
            )?;
        }
    }
    within(started, Duration::from_secs(10))
}

fn identities() -> Result<(), String> {
    for i in 0..100 {
        let mut rng = seed::rng(seed::mix(77, i));
        let runs = oracles::random_runs(&mut rng, 50, 20);
        let report = metrics::assemble_default_report(&runs).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let gap_delta = (mean(&report.ecp_per_sample) - mean(&report.delta_per_run)).abs();
        let gap_xi = (mean(&report.eaw_per_sample) - mean(&report.xi_per_run)).abs();
        ensure(gap_delta < 1e-12 && gap_xi < 1e-12, || format!("instance {i}: gaps {gap_delta:e}, {gap_xi:e}"))?;
        ensure(report.phi_curve.windows(2).all(|w| w[1].phi <= w[0].phi), || format!("phi rises, instance {i}"))?;
        ensure(
            report.varphi_curve.windows(2).all(|w| w[1].varphi >= w[0].varphi),
            || format!("varphi falls, instance {i}"),
        )?;
    }
    Ok(())
}

fn gaussian_anchor() -> Result<(), String> {
    let started = Instant::now();
    let n = 100_000;
    let mut rng = seed::rng(seed::mix(4, seed::domain::SYNTHETIC));
    let z = sample_gaussian(&NoiseSpec::with_sigma(1.0), &[n], &mut rng).unwrap();
    let bands = [(1.0, 0.66, 0.70), (2.0, 0.945, 0.963), (3.0, 0.995, 0.999)];
    for (k, lo, hi) in bands {
        let frac = z.data().iter().filter(|v| v.abs() <= k).count() as f64 / n as f64;
        ensure(frac >= lo && frac <= hi, || format!("within {k}σ: {frac}"))?;
    }
    within(started, Duration::from_secs(2))
}

fn gradient_checks() -> Result<(), String> {
    let started = Instant::now();
    for (name, err) in gradients::all(100) {
        ensure(err < gradients::TOLERANCE, || format!("{name}: relative error {err:e}"))?;
    }
    within(started, Duration::from_secs(30))
}

fn stage_one_learning() -> Result<(), String> {
    let started = Instant::now();
    let ds = common::sine_dataset(500, 24, 10.0, 7);
    let hp = Hyperparams {
        seq_len: 24,
        cond_dim: ds.cond_dim,
        ..Default::default()
    };
    let mut model = CtsganModel::build(hp, 7).unwrap();
    let initial = model.reconstruction_mse(&ds).unwrap();
    model.train_stage1(&ds, 2000).unwrap();
    let last = model.reconstruction_mse(&ds).unwrap();
    ensure(last <= 0.2 * initial, || format!("MSE {initial} -> {last}"))?;
    within(started, Duration::from_secs(300))
}

fn stage_isolation() -> Result<(), String> {
    let ds = common::sine_dataset(60, 12, 10.0, 1);
    let hp = Hyperparams {
        latent_dim: 4,
        hidden_dim: 6,
        noise_dim: 3,
        batch_size: 8,
        seq_len: 12,
        cond_dim: ds.cond_dim,
        ..Default::default()
    };
    let sums = |m: &CtsganModel| NetworkKind::ALL.map(|k| (k, m.checksum(k)));
    let mut model = CtsganModel::build(hp.clone(), 3).unwrap();
    let before = sums(&model);
    model.train_stage1(&ds, 20).unwrap();
    let after_one = sums(&model);
    for ((kind, a), (_, b)) in before.iter().zip(&after_one) {
        let touched = matches!(kind, NetworkKind::Embedder | NetworkKind::Recovery);
        ensure((a != b) == touched, || format!("stage 1 and {}", kind.name()))?;
    }
    model.train_stage2(&ds, 20).unwrap();
    let after_two = sums(&model);
    for ((kind, a), (_, b)) in after_one.iter().zip(&after_two) {
        let touched = matches!(kind, NetworkKind::Generator);
        ensure((a != b) == touched, || format!("stage 2 and {}", kind.name()))?;
    }

    let mut fresh = CtsganModel::build(hp, 3).unwrap();
    ensure(matches!(fresh.train_stage2(&ds, 1), Err(Error::StageOrder(_))), || "stage 2 before 1".into())?;
    ensure(matches!(fresh.train_stage3(&ds, 1), Err(Error::StageOrder(_))), || "stage 3 before 1".into())?;
    fresh.train_stage1(&ds, 1).unwrap();
    ensure(matches!(fresh.train_stage1(&ds, 1), Err(Error::StageOrder(_))), || "stage 1 twice".into())?;
    ensure(matches!(fresh.train_stage3(&ds, 1), Err(Error::StageOrder(_))), || "stage 3 before 2".into())?;
    ensure(fresh.stage() == Stage::Reconstruction, || "stage changed by a rejected call".into())
}

fn union_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "data": {"synthetic": {"kind": "sine_with_spikes", "length": 720}},
            "split": {"train_end": 600, "test_start": 600, "test_len": 96},
            "seq_len": 24,
            "hyperparams": {"latent_dim": 6, "hidden_dim": 12, "noise_dim": 4, "batch_size": 32},
            "training": {"reconstruction": 300, "supervised": 300, "joint": 300},
            "runs": 20,
            "scenarios": 100,
            "sigma_list": [1.0, 2.0, 3.0],
            "interval_rule": {"rule": "envelope"},
            "fine_tune_steps": 10,
            "seed": 8
        }"#,
    )
    .unwrap()
}

fn union_monotonicity() -> Result<(), String> {
    let started = Instant::now();
    let result = harness::run_experiment(&union_config()).map_err(|e| e.to_string())?;
    let patterns = result.document.patterns.as_ref().ok_or("no pattern results")?;
    ensure(patterns.runs.len() == 20, || format!("{} runs", patterns.runs.len()))?;
    for (s, run) in patterns.runs.iter().enumerate() {
        ensure(run.base_sigma == 1.0, || format!("run {s}: base σ {}", run.base_sigma))?;
        ensure(run.union_coverage >= run.base_coverage, || {
            format!("run {s}: union {} < base {}", run.union_coverage, run.base_coverage)
        })?;
        let (sup, base) = (&run.superset_interval, &run.base_interval);
        for t in 0..sup.len() {
            ensure(sup.lower()[t] <= base.lower()[t] && sup.upper()[t] >= base.upper()[t], || {
                format!("run {s}, t={t}: superset envelope does not contain the σ=1 envelope")
            })?;
        }
    }
    within(started, Duration::from_secs(600))
}

fn determinism() -> Result<(), String> {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "data": {"synthetic": {"kind": "sine_with_spikes", "length": 400}},
            "split": {"train_end": 300, "test_start": 300, "test_len": 48},
            "seq_len": 24,
            "hyperparams": {"latent_dim": 3, "hidden_dim": 6, "noise_dim": 3, "batch_size": 8},
            "training": {"reconstruction": 40, "supervised": 40, "joint": 20},
            "runs": 3,
            "scenarios": 20,
            "seed": 21
        }"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let result = harness::run_experiment(&cfg).map_err(|e| e.to_string())?;
        emit_report(&result, dir.path().join(name)).map_err(|e| e.to_string())?;
        reports.push(std::fs::read(dir.path().join(name).join("report.json")).unwrap());
    }
    ensure(reports[0] == reports[1], || "report.json differs between executions".into())?;

    let data = harness::prepare(&cfg).unwrap();
    let model = harness::train_model(&cfg, &data, Stage::Joint).unwrap();
    let restored = CtsganModel::from_checkpoint_json(&model.to_checkpoint_json().unwrap()).unwrap();
    let noise = NoiseSpec::with_sigma(2.0);
    let a = harness::generate_horizon(&model, &data, 30, &noise, cfg.units, 99).unwrap();
    let b = harness::generate_horizon(&restored, &data, 30, &noise, cfg.units, 99).unwrap();
    let bits = |s: &ctsgan_core::intervals::ScenarioSet| -> Vec<u64> {
        s.scenarios().iter().flatten().map(|v| v.to_bits()).collect()
    };
    ensure(bits(&a) == bits(&b), || "generation differs after checkpoint round trip".into())
}

fn normalization_round_trip() -> Result<(), String> {
    let mut rng = seed::rng(10);
    let mm = MinMax {
        name: "value".into(),
        min: -37.5,
        max: 412.25,
    };
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let v = rng.random_range(-1000.0..1000.0);
        worst = worst.max((mm.denormalize(mm.normalize(v)) - v).abs());
    }
    ensure(worst < 1e-9, || format!("max error {worst:e}"))?;

    let ts = (0..10).map(|i| common::MONDAY + i * common::HOUR).collect();
    let flat = RawSeries::new(ts, vec![42.0; 10], vec![]).unwrap();
    ensure(matches!(minmax_fit_normalize(&flat), Err(Error::DegenerateRange(_))), || {
        "constant series accepted".into()
    })
}

fn boundary_semantics() -> Result<(), String> {
    let actuals = vec![1.0, 2.0, 3.0, 4.0];
    let iv = |lower: Vec<f64>, upper: Vec<f64>| PredictionInterval::new(lower, upper).unwrap();
    let exact = iv(vec![1.0, 1.5, 2.5, 4.0], vec![1.5, 2.0, 3.5, 4.0]);
    ensure(metrics::ecpas(&actuals, &exact).unwrap() == 1.0, || "closed endpoints not covered".into())?;

    let half = iv(vec![0.0, 0.0, 3.5, 4.5], vec![2.0, 3.0, 4.0, 5.0]);
    let runs = RunCollection::new(actuals, vec![exact, half]).unwrap();
    let deltas = metrics::delta_per_run(&runs);
    let xis = metrics::xi_per_run(&runs);
    ensure(deltas == vec![1.0, 0.5], || format!("deltas {deltas:?}"))?;
    ensure(metrics::confidence_level_ecpas(&runs, 0.5).unwrap() == 1.0, || "δ^s = δ′ not counted".into())?;
    ensure(metrics::confidence_level_ecpas(&runs, 1.0).unwrap() == 0.5, || "δ^s = δ′ = 1 not counted".into())?;
    ensure(metrics::confidence_level_eawapi(&runs, xis[1]).unwrap() == 0.5, || "ξ^s = ξ′ counted".into())?;
    ensure(metrics::confidence_level_eawapi(&runs, xis[0]).unwrap() == 0.0, || "ξ^s = ξ′ counted".into())
}

#[test]
fn acceptance() {
    let checks: [(&str, Check); 11] = [
        ("worked example: ECPAS of 20 samples with 2 misses", worked_example),
        ("metric oracle equivalence", oracle_equivalence),
        ("metric identities and curve monotonicity", identities),
        ("Gaussian 1/2/3 sigma anchors", gaussian_anchor),
        ("finite-difference gradient checks", gradient_checks),
        ("reconstruction learning on sine windows", stage_one_learning),
        ("stage isolation and ordering", stage_isolation),
        ("union coverage monotonicity", union_monotonicity),
        ("determinism of reports and checkpoints", determinism),
        ("normalization round trip and degenerate range", normalization_round_trip),
        ("threshold boundary semantics", boundary_semantics),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(()) => println!("PASS {:>2} {name} ({:.2?})", i + 1, started.elapsed()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
