//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs the full desk-scale workflow (about 45 minutes on one core). The
//! process exits 0 whatever the outcome so `cargo test` stays usable; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails. Set
//! `ACCEPTANCE_ONLY=1,9` to run a subset.

mod common;

use std::path::Path;
use std::time::Instant;

use common::{brute_nearest, model_loss_grad_error, op_grad_error, rng, two_pass_mean, OPS};
use phase_core::ablation::{run_ablation_suite, score_test, AblationSuite};
use phase_core::fsutil::write_dir_atomic;
use phase_core::metrics::{latitudinal_errors, mean_state_r2, truth_of, Band, EvalReport, EvalRun};
use phase_core::model::heads::{default_registry, predict_all};
use phase_core::model::{Config, Variant};
use phase_core::pipeline::{aggregate_monthly, batch_by_latlon, kdtree_map, minmax_fit_apply, split_shuffle};
use phase_core::restart::RestartFile;
use phase_core::sim::{generate_world, load_world, save_world};
use phase_core::train::{evaluate_loss, fine_tune, train, SurrogateModel};
use phase_core::workflow::{build_dataset, predict_world, restart_check, RestartCheckOptions};
use phase_core::{Dataset, Graph, GridKind, GridSpec, Task, Tensor, World};
use rand::Rng;

const WORLD_SEED: u64 = 7;
const YEARS: usize = 20;
const WINDOW: usize = 20;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn minutes(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() / 60.0
}

fn world(kind: GridKind) -> World {
    generate_world(WORLD_SEED, &GridSpec::preset(kind, WORLD_SEED), YEARS, 5).expect("world")
}

fn c1_autodiff() -> Outcome {
    let t = Instant::now();
    let mut worst_op = (0.0f64, "");
    let mut cases = 0;
    for case in 0..4 * OPS.len() {
        let op = case % OPS.len();
        let e = op_grad_error(op, 10_000 + case as u64);
        if e > worst_op.0 {
            worst_op = (e, OPS[op]);
        }
        cases += 1;
    }
    let mut worst_model = (0.0f64, Variant::Full);
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        let e = model_loss_grad_error(v, 20_000 + i as u64, 4);
        if e > worst_model.0 {
            worst_model = (e, v);
        }
        cases += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst_op.0 < 1e-4 && worst_model.0 < 1e-4 && cases >= 100 && secs < 120.0,
        format!(
            "{cases} cases; worst op error {:.2e} ({}), worst model-loss error {:.2e} ({}); {secs:.1} s (limits 1e-4, 120 s)",
            worst_op.0, worst_op.1, worst_model.0, worst_model.1
        ),
    )
}

fn c2_positivity(model: &SurrogateModel, w: &World) -> Outcome {
    let d = model.config.model.d_model;
    let registry = default_registry(model.dims.n_pft);
    let mut r = rng(2);
    let mut z: Vec<f64> = (0..10_000 * d).map(|_| r.random_range(-10.0..10.0)).collect();
    for (i, v) in z.iter_mut().enumerate() {
        match i % 11 {
            0 => *v = 100.0,
            1 => *v = -100.0,
            _ => {}
        }
    }
    for j in 0..d {
        z[j] = 100.0;
        z[d + j] = -100.0;
    }
    let latent = Tensor::new(vec![10_000, d], z).unwrap();
    let mut min64 = f64::INFINITY;
    let g = Graph::<f64>::new();
    let b = model.params.bind(&g, false);
    for out in predict_all(&b, &registry, g.constant(latent.clone())).unwrap().outputs {
        min64 = min64.min(out.value().data().iter().copied().fold(f64::INFINITY, f64::min));
    }
    let p32 = model.params.cast::<f32>();
    let g32 = Graph::<f32>::new();
    let b32 = p32.bind(&g32, false);
    let mut min32 = f32::INFINITY;
    for out in predict_all(&b32, &registry, g32.constant(latent.cast())).unwrap().outputs {
        min32 = min32.min(out.value().data().iter().copied().fold(f32::INFINITY, f32::min));
    }
    let (accepted, errors) = match predict_world(model, w).and_then(|p| p.restart.encode()) {
        Ok(bytes) => match RestartFile::decode(&bytes) {
            Ok(file) => match file.to_states(w) {
                Ok(states) => (states.len(), 0),
                Err(e) => (0, e.to_string().len().min(1)),
            },
            Err(_) => (0, 1),
        },
        Err(_) => (0, 1),
    };
    outcome(
        min64 > 0.0 && min32 > 0.0 && errors == 0 && accepted == w.cells.len(),
        format!(
            "min head output over 10,000 latents: {min64:.3e} (f64), {min32:.3e} (f32); restart file accepted for {accepted}/{} cells, {errors} validation errors",
            w.cells.len()
        ),
    )
}

fn c3_physics(suite: &AblationSuite, ds: &Dataset, runtime_min: f64) -> Outcome {
    let test = ds.test();
    let resid = |m: &SurrogateModel| -> f64 {
        let prepared = m.prepare(&test).unwrap();
        evaluate_loss(m, &prepared).unwrap().phys
    };
    let mut with = Vec::new();
    let mut without = Vec::new();
    for &seed in &SEEDS {
        let a = suite.runs_of(Variant::Full).find(|r| r.seed == seed).unwrap();
        let b = suite.runs_of(Variant::NoPhys).find(|r| r.seed == seed).unwrap();
        with.push(resid(&a.model));
        without.push(resid(&b.model));
    }
    let paired = with.iter().zip(&without).all(|(a, b)| a < b);
    let (m1, m0) = (mean(&with), mean(&without));
    let reduction = 1.0 - m1 / m0;
    outcome(
        paired && reduction >= 0.5 && runtime_min < 15.0,
        format!(
            "held-out residual λ=1 {m1:.3e} vs λ=0 {m0:.3e} (per seed {}); reduction {:.1}% (need ≥ 50%); {runtime_min:.1} min",
            with.iter()
                .zip(&without)
                .map(|(a, b)| format!("{a:.2e}/{b:.2e}"))
                .collect::<Vec<_>>()
                .join(", "),
            100.0 * reduction
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c4_accuracy(suite: &AblationSuite, per_seed_min: f64) -> Outcome {
    let s = suite.summary(Variant::Full).unwrap();
    let parts: Vec<String> = Task::STATE
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{} {:.3}±{:.3}", t.name(), s.r2[i], s.r2_std[i]))
        .collect();
    let worst = s.r2.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        worst >= 0.90 && per_seed_min < 10.0,
        format!("R² {}; min {worst:.3} (need ≥ 0.90); {per_seed_min:.1} min per seed", parts.join(", ")),
    )
}

fn c5_restart(model: &SurrogateModel, w: &World, dir: &Path) -> Outcome {
    let t = Instant::now();
    let check = match restart_check(model, w, Some(&dir.join("restart.bin")), &RestartCheckOptions::default()) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("restart check failed: {e}")),
    };
    let cold: Vec<Option<usize>> = check.cold_start_years.iter().map(|(_, y)| *y).collect();
    let cold_ok = cold.iter().all(|y| y.is_some_and(|y| y >= 1200));
    let slow = check.max_slow_error();
    let fast = check.drift.max_fast_dist_after();
    let drift = check.drift.max_slow_drift();
    let mins = minutes(t);
    let errs: Vec<String> = check
        .slow_errors
        .iter()
        .map(|e| format!("{} {:.3}", e.pool.name(), e.median_rel_error))
        .collect();
    outcome(
        cold_ok && slow <= 0.05 && fast < 0.005 && drift < 0.01 && check.speedup >= 60.0 && mins < 5.0,
        format!(
            "cold start {} yr (need ≥ 1200); slow median rel err {} (need ≤ 0.05); fast dist after {fast:.2e} (< 5e-3); slow drift {drift:.2e} (< 1e-2); speedup {:.1}x (≥ 60); {mins:.1} min",
            check
                .cold_start_years
                .iter()
                .map(|(p, y)| format!("{}={}", p.name(), y.map_or("none".into(), |y| y.to_string())))
                .collect::<Vec<_>>()
                .join("/"),
            errs.join(", "),
            check.speedup
        ),
    )
}

fn c6_ablation(suite: &AblationSuite, runtime_min: f64) -> Outcome {
    let full = suite.summary(Variant::Full).unwrap().mean_r2;
    let mut pass = runtime_min < 60.0;
    let mut parts = vec![format!("full {full:.4}")];
    for v in [Variant::NoCnn, Variant::NoFc, Variant::NoLstm, Variant::NoTrans, Variant::NoPhys] {
        let m = suite.summary(v).unwrap().mean_r2;
        pass &= full - m >= 0.02;
        parts.push(format!("{v} {m:.4} (Δ {:+.4})", m - full));
    }
    for v in [Variant::BaselineMlp, Variant::BaselinePinn] {
        parts.push(format!("{v} {:.4}", suite.summary(v).unwrap().mean_r2));
    }
    outcome(pass, format!("mean R² {}; need full ahead by ≥ 0.02; {runtime_min:.1} min", parts.join(", ")))
}

fn c7_transfer(coarse: &SurrogateModel, cfg: &Config) -> Outcome {
    let t = Instant::now();
    let fine_world = world(GridKind::Fine);
    let fine = build_dataset(&fine_world, WORLD_SEED, WINDOW, 32).unwrap();
    let score = |m: &SurrogateModel| mean_state_r2(&score_test(m, &fine).unwrap());
    let zero = score(coarse);
    let few5 = score(&fine_tune(coarse, &fine, 0.05, &cfg.train).unwrap());
    let few10 = score(&fine_tune(coarse, &fine, 0.10, &cfg.train).unwrap());
    let full = score(&train(cfg, Variant::Full, &fine).unwrap());
    let mins = minutes(t);
    outcome(
        zero < few5 && few5 <= few10 && few10 <= full && mins < 30.0,
        format!(
            "fine grid ({} samples) mean R²: zero-shot {zero:.4} < 5% {few5:.4} ≤ 10% {few10:.4} ≤ full {full:.4}; {mins:.1} min",
            fine.records.len()
        ),
    )
}

fn band_rmse(model: &SurrogateModel, ds: &Dataset, band: Band) -> f64 {
    let test = ds.test();
    let pred = model.predict(&test).unwrap();
    let lats: Vec<f64> = test.iter().map(|r| r.lat).collect();
    latitudinal_errors(&pred, &truth_of(&test), &lats, Task::Soil3c, band).unwrap().rmse
}

fn c8_nutrient(suite: &AblationSuite, ds: &Dataset, cfg: &Config) -> Outcome {
    let t = Instant::now();
    let mut with = [Vec::new(), Vec::new()];
    let mut without = [Vec::new(), Vec::new()];
    for &seed in &SEEDS {
        let a = &suite.runs_of(Variant::Full).find(|r| r.seed == seed).unwrap().model;
        let mut c = cfg.clone();
        c.train.seed = seed;
        c.model.drop_static = vec!["nutrient".into()];
        let b = train(&c, Variant::Full, ds).unwrap();
        for (i, band) in Band::ALL.into_iter().enumerate() {
            with[i].push(band_rmse(a, ds, band));
            without[i].push(band_rmse(&b, ds, band));
        }
    }
    let trop = mean(&without[0]) / mean(&with[0]) - 1.0;
    let extra = mean(&without[1]) / mean(&with[1]) - 1.0;
    let mins = minutes(t);
    outcome(
        trop >= 0.20 && extra.abs() < 0.10 && mins < 20.0,
        format!(
            "soil3c RMSE without/with nutrient: tropics {:.4}/{:.4} ({:+.1}%, need ≥ +20%), extratropics {:.4}/{:.4} ({:+.1}%, need |Δ| < 10%); {mins:.1} min",
            mean(&without[0]),
            mean(&with[0]),
            100.0 * trop,
            mean(&without[1]),
            mean(&with[1]),
            100.0 * extra
        ),
    )
}

fn c9_pipeline() -> Outcome {
    let t = Instant::now();
    let mut r = rng(9);
    let mut failures = Vec::new();

    let forcing: Vec<(f64, f64)> = (0..1000)
        .map(|_| (r.random_range(-90.0..90.0), r.random_range(-180.0..180.0)))
        .collect();
    let mut lattice = Vec::new();
    for a in -9..9 {
        for b in -18..18 {
            lattice.push((a as f64 * 10.0 + 5.0, b as f64 * 10.0 + 5.0));
        }
    }
    let queries: Vec<(f64, f64)> = (0..1000)
        .map(|i| {
            if i % 4 == 0 {
                // Cell corners sit at equal distance from four lattice points.
                ((r.random_range(-9..9) * 10) as f64, (r.random_range(-18..18) * 10) as f64)
            } else {
                (r.random_range(-90.0..90.0), r.random_range(-180.0..180.0))
            }
        })
        .collect();
    for pts in [&forcing, &lattice] {
        let mapped = kdtree_map(&queries, pts);
        let mismatches = queries.iter().zip(&mapped).filter(|(q, m)| **m != brute_nearest(pts, **q)).count();
        if mismatches > 0 {
            failures.push(format!("kd-tree: {mismatches} mismatches"));
        }
    }

    let series: Vec<f64> = (0..24 * 120).map(|_| r.random_range(-1e3..1e5)).collect();
    let agg = aggregate_monthly(&series).unwrap();
    let agg_err = agg
        .iter()
        .enumerate()
        .map(|(m, g)| {
            let want = two_pass_mean(&series[m * 120..(m + 1) * 120]);
            (g - want).abs() / want.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    if agg.len() != 24 || agg_err > 1e-6 {
        failures.push(format!("aggregation error {agg_err:.2e}"));
    }

    let xs: Vec<f64> = (0..10_000).map(|_| r.random_range(-5e4..3e5)).collect();
    let (s, ys) = minmax_fit_apply(&xs).unwrap();
    let rt = xs.iter().zip(&ys).map(|(x, y)| (s.invert(*y) - x).abs() / s.range()).fold(0.0, f64::max);
    if rt > 1e-6 || ys.iter().any(|y| !(0.0..=1.0).contains(y)) {
        failures.push(format!("min-max round trip error {rt:.2e}"));
    }

    let ids: Vec<u64> = (0..20_975).collect();
    let (tr, te) = split_shuffle(&ids, 0).unwrap();
    let mut all: Vec<u64> = tr.iter().chain(&te).copied().collect();
    all.sort_unstable();
    if (tr.len(), te.len()) != (16_780, 4_195) || all != ids {
        failures.push(format!("split {} / {}", tr.len(), te.len()));
    }

    let coords: Vec<(f64, f64)> = (0..1000)
        .map(|_| (r.random_range(-3..3) as f64, r.random_range(-180.0..180.0)))
        .collect();
    let batches = batch_by_latlon(&coords, 64).unwrap();
    let flat: Vec<usize> = batches.concat();
    let mut sorted = flat.clone();
    sorted.sort_unstable();
    let ordered = flat.windows(2).all(|w| {
        let (a, b) = (coords[w[0]], coords[w[1]]);
        a.0 < b.0 || (a.0 == b.0 && a.1 <= b.1)
    });
    let sized = batches[..batches.len() - 1].iter().all(|b| b.len() == 64);
    if sorted != (0..1000).collect::<Vec<_>>() || !ordered || !sized {
        failures.push("batch partition".into());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < 60.0,
        if failures.is_empty() {
            format!("kd-tree = brute force on 2x1000 queries (ties included), aggregation err {agg_err:.1e}, min-max err {rt:.1e}, split 16780/4195, batches partition; {secs:.1} s")
        } else {
            failures.join("; ")
        },
    )
}

/// gen-data → build-dataset → train → eval into `dir`, through files.
fn determinism_run(dir: &Path) -> phase_core::Result<()> {
    let w = generate_world(11, &GridSpec::preset(GridKind::Coarse, 11), 2, 5)?;
    write_dir_atomic(&dir.join("world"), |d| save_world(&w, d))?;
    let w = load_world(&dir.join("world"))?;
    let ds = build_dataset(&w, 11, 1, 32)?;
    write_dir_atomic(&dir.join("data"), |d| ds.write(d))?;
    let ds = Dataset::load(&dir.join("data"))?;
    let mut cfg = Config::desk();
    cfg.train.max_epochs = 3;
    let model = train(&cfg, Variant::Full, &ds)?;
    model.save(&dir.join("model.phm"))?;
    let model = SurrogateModel::load(&dir.join("model.phm"))?;
    let test = ds.test();
    let pred = model.predict(&test)?;
    let report = EvalReport::build(&[EvalRun { recs: &test, pred: &pred }], true)?;
    write_dir_atomic(&dir.join("report"), |d| report.write(d))
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = determinism_run(a.path()).and_then(|_| determinism_run(b.path())) {
        return outcome(false, format!("run failed: {e}"));
    }
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        fa.len() == fb.len() && differing.is_empty() && fa.iter().any(|f| f.0 == "model.phm"),
        format!("{} files compared (world, dataset, model, metric CSVs); {} differ {:?}", fa.len(), differing.len(), differing),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut record = |n: u32, o: Outcome| {
        println!("criterion {n}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };

    if wanted(1) {
        record(1, c1_autodiff());
    }
    if wanted(9) {
        record(9, c9_pipeline());
    }
    let needs_suite = [2, 3, 4, 5, 6, 7, 8].iter().any(|&n| wanted(n));
    if needs_suite {
        let cfg = Config::desk();
        let coarse = world(GridKind::Coarse);
        let ds = build_dataset(&coarse, WORLD_SEED, WINDOW, 32).unwrap();
        let variants: Vec<Variant> = if wanted(6) {
            Variant::ALL.to_vec()
        } else {
            vec![Variant::Full, Variant::NoPhys]
        };
        let t = Instant::now();
        let mut per_variant_min = Vec::new();
        let mut runs = Vec::new();
        for v in &variants {
            let tv = Instant::now();
            runs.extend(run_ablation_suite(&cfg, &ds, &SEEDS, &[*v]).unwrap().runs);
            per_variant_min.push((*v, minutes(tv)));
        }
        let suite = AblationSuite { runs };
        let suite_min = minutes(t);
        let variant_min = |v: Variant| per_variant_min.iter().find(|(x, _)| *x == v).map_or(0.0, |p| p.1);
        let full0 = &suite.runs_of(Variant::Full).find(|r| r.seed == SEEDS[0]).unwrap().model;
        if wanted(2) {
            record(2, c2_positivity(full0, &coarse));
        }
        if wanted(3) {
            record(3, c3_physics(&suite, &ds, variant_min(Variant::Full) + variant_min(Variant::NoPhys)));
        }
        if wanted(4) {
            record(4, c4_accuracy(&suite, variant_min(Variant::Full) / SEEDS.len() as f64));
        }
        if wanted(5) {
            let dir = tempfile::tempdir().unwrap();
            record(5, c5_restart(full0, &coarse, dir.path()));
        }
        if wanted(6) {
            record(6, c6_ablation(&suite, suite_min));
        }
        if wanted(8) {
            record(8, c8_nutrient(&suite, &ds, &cfg));
        }
        if wanted(7) {
            record(7, c7_transfer(full0, &cfg));
        }
    }
    if wanted(10) {
        record(10, c10_determinism());
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failing {failed:?}") }
    );
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
