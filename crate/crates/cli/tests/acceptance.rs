//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xrpo_core::dataset::{sample_multiplier, DEFAULT_FRACTIONS};
use xrpo_core::oracle::{
    newton_raphson, permutation_shapley, random_operating_point, random_radial_network,
    truncated_normal_mean, RandomMlp,
};
use xrpo_core::regressor::{synthetic_sample, FnPredictor};
use xrpo_core::rpo::{lattice_size, solve_rpo_exhaustive};
use xrpo_core::shapley::spearman;
use xrpo_core::{
    exact_shapley, kernel_shapley, solve_power_flow, solve_rpo_ga, split_dataset, Background,
    ControlVector, GaParams, LoadScenario, NetworkModel, ObjectiveWeights, RunReport, Sigma,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn xrpo(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_xrpo"))
        .args(args)
        .output()
        .expect("xrpo binary runs");
    if !out.status.success() {
        eprintln!(
            "xrpo {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

fn base_case_fidelity() -> Outcome {
    let net = NetworkModel::ieee33();
    let start = Instant::now();
    let r = solve_power_flow(&net, &LoadScenario::base(&net), &ControlVector::zeros(&net)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (r.loss_kw - 202.65).abs() <= 2.0 && (r.du_pu - 0.052).abs() <= 0.008 && secs < 1.0,
        format!(
            "loss {:.3} kW, dU {:.5} p.u., {:.4} s",
            r.loss_kw, r.du_pu, secs
        ),
    )
}

fn rpo_improvement() -> Outcome {
    let net = NetworkModel::ieee33();
    let ga = GaParams {
        restarts: 5,
        seed: 7,
        ..GaParams::default()
    };
    let start = Instant::now();
    let sol = solve_rpo_ga(
        &net,
        &LoadScenario::base(&net),
        ObjectiveWeights::default(),
        &ga,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        sol.loss_after_kw <= 145.0 && sol.du_after_pu <= 0.020 && sol.feasible && secs < 60.0,
        format!(
            "loss {:.2} kW, dU {:.5} p.u., feasible {}, {:.2} s",
            sol.loss_after_kw, sol.du_after_pu, sol.feasible, secs
        ),
    )
}

fn power_flow_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = 2 + k % 9;
        let net = random_radial_network(&mut rng, n, k % 2 == 0);
        let (controls, dg_p) = random_operating_point(&mut rng, &net);
        let mut scen = LoadScenario::base(&net);
        scen.dg_p_kw = dg_p;
        let sweep = solve_power_flow(&net, &scen, &controls).unwrap();
        let nr = newton_raphson(&net, &scen, &controls).unwrap();
        for (a, b) in sweep.v_pu.iter().zip(&nr.v_pu) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("50 networks, max |dV| {worst:.2e} p.u."),
    )
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn shapley_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut failures, mut worst_perm) = (0usize, 0.0f64);
    for k in 0..50 {
        let p = 4 + k % 5;
        let (d, s, t) = (p - 1, 0, 1);
        let f_net = RandomMlp::new(&mut rng, p - 1, 6);
        let g_net = RandomMlp::new(&mut rng, p, 4);
        let lift = |x: &[f64]| -> Vec<f64> {
            let mut z = vec![x[s] + x[t], x[s] * x[t]];
            z.extend((2..p - 1).map(|i| x[i]));
            z
        };
        let f = |x: &[f64]| f_net.eval(&lift(x));
        let g = |x: &[f64]| g_net.eval(x);
        let mut rows = random_rows(&mut rng, 10, p);
        let swapped: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.swap(s, t);
                r
            })
            .collect();
        rows.extend(swapped);
        let bg = Background::new(rows).unwrap();
        let mut x = random_rows(&mut rng, 1, p).remove(0);
        x[t] = x[s];
        let c = rng.random_range(-3.0..3.0);
        let af = exact_shapley(&FnPredictor::new("f", p, f), &x, 0, &bg).unwrap();
        let ag = exact_shapley(&FnPredictor::new("g", p, g), &x, 0, &bg).unwrap();
        let asum = exact_shapley(
            &FnPredictor::new("f+g", p, |z: &[f64]| f(z) + g(z)),
            &x,
            0,
            &bg,
        )
        .unwrap();
        let acf =
            exact_shapley(&FnPredictor::new("cf", p, |z: &[f64]| c * f(z)), &x, 0, &bg).unwrap();
        let efficient = [&af, &ag, &asum, &acf]
            .iter()
            .all(|a| rel_close(a.phi0 + a.phi.iter().sum::<f64>(), a.prediction, 1e-9));
        let ok = efficient
            && af.phi[d] == 0.0
            && rel_close(af.phi[s], af.phi[t], 1e-9)
            && (0..p).all(|i| rel_close(asum.phi[i], af.phi[i] + ag.phi[i], 1e-9))
            && (0..p).all(|i| rel_close(acf.phi[i], c * af.phi[i], 1e-9));
        failures += usize::from(!ok);
    }
    for k in 0..20 {
        let p = 1 + k % 4;
        let mlp = RandomMlp::new(&mut rng, p, 5);
        let rows = random_rows(&mut rng, 12, p);
        let x = random_rows(&mut rng, 1, p).remove(0);
        let attr = exact_shapley(
            &FnPredictor::new("mlp", p, |z: &[f64]| mlp.eval(z)),
            &x,
            0,
            &Background::new(rows.clone()).unwrap(),
        )
        .unwrap();
        let oracle = permutation_shapley(&|z: &[f64]| mlp.eval(z), &x, &rows);
        for (a, b) in attr.phi.iter().zip(&oracle) {
            worst_perm = worst_perm.max((a - b).abs());
        }
    }
    outcome(
        failures == 0 && worst_perm < 1e-12,
        format!("{failures}/50 axiom failures, permutation oracle max |dphi| {worst_perm:.2e}"),
    )
}

/// Spearman correlation between kernel and exact attributions, pooled over
/// ten instances (60 attribution values) per predictor.
fn calibration_trial(rng: &mut ChaCha8Rng, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
    const P: usize = 6;
    let normal = rand_distr::StandardNormal;
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..P).map(|_| rng.sample::<f64, _>(normal)).collect())
            .collect()
    };
    let bg = Background::new(draw(100)).unwrap();
    let pred = FnPredictor::new("trial", P, f);
    let (mut kernel, mut exact) = (Vec::new(), Vec::new());
    for x in draw(10) {
        kernel.extend(
            kernel_shapley(&pred, &x, 0, &bg, Sigma::Median)
                .unwrap()
                .phi,
        );
        exact.extend(exact_shapley(&pred, &x, 0, &bg).unwrap().phi);
    }
    spearman(&kernel, &exact)
}

fn kernel_calibration(report_dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut linear = Vec::new();
    for _ in 0..20 {
        let beta: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = move |x: &[f64]| x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        linear.push(calibration_trial(&mut rng, &f));
    }
    let mut mlp = Vec::new();
    for _ in 0..20 {
        let net = RandomMlp::new(&mut rng, 6, 8);
        mlp.push(calibration_trial(&mut rng, &|x: &[f64]| net.eval(x)));
    }
    let path = report_dir.join("calibration.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&serde_json::json!({"linear": linear, "mlp": mlp})).unwrap(),
    )
    .unwrap();
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("    linear rho: {}", fmt(&linear));
    println!("    mlp rho:    {}", fmt(&mlp));
    outcome(
        linear.iter().chain(&mlp).all(|&r| r >= 0.8),
        format!(
            "min rho linear {:.3}, mlp {:.3}; distribution in {}",
            min(&linear),
            min(&mlp),
            path.display()
        ),
    )
}

fn ga_oracle() -> Outcome {
    let net = NetworkModel::from_json_str(
        r#"{
          "base_kv": 12.66, "base_mva": 10.0, "v_min_pu": 0.9, "v_max_pu": 1.1,
          "buses": [
            {"id": 1, "kind": "slack", "p_load_kw": 0, "q_load_kvar": 0},
            {"id": 2, "kind": "load", "p_load_kw": 2500, "q_load_kvar": 1800}
          ],
          "branches": [{"from_bus": 1, "to_bus": 2, "r_ohm": 2.0, "x_ohm": 1.6}],
          "transformer": {"at_branch": 1, "tap_min": -8, "tap_max": 8, "tap_step_frac": 0.0125},
          "capacitor_banks": [{"at_bus": 2, "n_steps": 10, "kvar_per_step": 100}]
        }"#,
    )
    .unwrap();
    let scen = LoadScenario::base(&net);
    let w = ObjectiveWeights::default();
    let best = solve_rpo_exhaustive(&net, &scen, w, 10.0).unwrap();
    let hits = (0..20u64)
        .filter(|&seed| {
            let ga = GaParams {
                seed,
                restarts: 1,
                ..GaParams::default()
            };
            solve_rpo_ga(&net, &scen, w, &ga).unwrap().controls == best.controls
        })
        .count();
    outcome(
        hits == 20,
        format!(
            "{hits}/20 seeds reach the enumerated optimum over {} combinations",
            lattice_size(&net)
        ),
    )
}

fn dataset_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws: Vec<f64> = (0..100_000).map(|_| sample_multiplier(&mut rng)).collect();
    let in_window = draws.iter().all(|m| (0.2..=2.0).contains(m));
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let truth = truncated_normal_mean(1.1, 0.9, 0.2, 2.0);
    let samples = (0..5000)
        .map(|k| synthetic_sample(vec![k as f64], vec![0.0]))
        .collect();
    let split = split_dataset(samples, DEFAULT_FRACTIONS, 8).unwrap();
    let sizes = (split.train.len(), split.val.len(), split.test.len());
    outcome(
        in_window && (mean - truth).abs() <= 0.02 && sizes == (4000, 500, 500),
        format!("all in window {in_window}, mean {mean:.4} vs {truth:.4}, split {sizes:?}"),
    )
}

const SMALL_FEEDER: &str = r#"{
  "name": "eight-bus",
  "base_kv": 12.66, "base_mva": 10.0, "v_min_pu": 0.95, "v_max_pu": 1.05,
  "buses": [
    {"id": 1, "kind": "slack", "p_load_kw": 0, "q_load_kvar": 0},
    {"id": 2, "kind": "load", "p_load_kw": 100, "q_load_kvar": 60},
    {"id": 3, "kind": "load", "p_load_kw": 90, "q_load_kvar": 40},
    {"id": 4, "kind": "load", "p_load_kw": 120, "q_load_kvar": 80},
    {"id": 5, "kind": "load", "p_load_kw": 60, "q_load_kvar": 30},
    {"id": 6, "kind": "load", "p_load_kw": 60, "q_load_kvar": 20},
    {"id": 7, "kind": "load", "p_load_kw": 200, "q_load_kvar": 100},
    {"id": 8, "kind": "load", "p_load_kw": 200, "q_load_kvar": 100}
  ],
  "branches": [
    {"from_bus": 1, "to_bus": 2, "r_ohm": 0.0922, "x_ohm": 0.047},
    {"from_bus": 2, "to_bus": 3, "r_ohm": 0.493, "x_ohm": 0.2511},
    {"from_bus": 3, "to_bus": 4, "r_ohm": 0.366, "x_ohm": 0.1864},
    {"from_bus": 4, "to_bus": 5, "r_ohm": 0.3811, "x_ohm": 0.1941},
    {"from_bus": 5, "to_bus": 6, "r_ohm": 0.819, "x_ohm": 0.707},
    {"from_bus": 3, "to_bus": 7, "r_ohm": 0.732, "x_ohm": 0.574},
    {"from_bus": 7, "to_bus": 8, "r_ohm": 0.164, "x_ohm": 0.1565}
  ],
  "transformer": {"at_branch": 1, "tap_min": -8, "tap_max": 8, "tap_step_frac": 0.0125},
  "capacitor_banks": [{"at_bus": 6, "n_steps": 5, "kvar_per_step": 50}],
  "dg_units": [{"at_bus": 8, "kind": "pv", "s_kva": 200, "p_kw": 100}]
}"#;

fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Runs the CLI chain on an eight-bus feeder (14 features, small enough for
/// exact attributions), then checks waterfall endpoints and kernel residuals.
fn explanation_reconstruction(dir: &Path) -> Outcome {
    let net = dir.join("feeder.json");
    std::fs::write(&net, SMALL_FEEDER).unwrap();
    let p = |name: &str| dir.join(name).display().to_string();
    let n = net.display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "data",
            "gen",
            "--network",
            &n,
            "--count",
            "80",
            "--out",
            &p("scen.jsonl"),
        ],
        vec![
            "data",
            "label",
            "--network",
            &n,
            "--restarts",
            "1",
            "--scenarios",
            &p("scen.jsonl"),
            "--out",
            &p("labeled.jsonl"),
        ],
        vec![
            "data",
            "split",
            "--data",
            &p("labeled.jsonl"),
            "--out",
            &p("split"),
        ],
        vec![
            "model",
            "train",
            "--data",
            &p("split"),
            "--hidden",
            "16,16",
            "--epochs",
            "50",
            "--out",
            &p("model.json"),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        if !xrpo(&[&["--seed", "3"][..], &args].concat())
            .status
            .success()
        {
            return outcome(false, format!("`xrpo {}` failed", step.join(" ")));
        }
    }
    let test = p("split/test.jsonl");
    for method in ["exact", "kernel"] {
        let out = p(&format!("{method}.jsonl"));
        let args = [
            "--seed",
            "3",
            "explain",
            "compute",
            "--network",
            &n,
            "--model",
            &p("model.json"),
            "--data",
            &test,
            "--method",
            method,
            "--background",
            "20",
            "--out",
            &out,
        ];
        if !xrpo(&args).status.success() {
            return outcome(false, format!("explain compute --method {method} failed"));
        }
    }
    let exact = read_jsonl(&dir.join("exact.jsonl"));
    let mut worst = 0.0f64;
    for i in 0..exact.len() {
        let out = xrpo(&[
            "explain",
            "report",
            "--network",
            &n,
            "--attributions",
            &p("exact.jsonl"),
            "--product",
            "waterfall",
            "--instance",
            &i.to_string(),
        ]);
        let w: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let (end, pred) = (
            w["endpoint"].as_f64().unwrap(),
            w["prediction"].as_f64().unwrap(),
        );
        let last = w["waterfall"].as_array().unwrap().last().unwrap()["end"]
            .as_f64()
            .unwrap();
        worst = worst.max((end - pred).abs() / pred.abs().max(1.0));
        worst = worst.max((last - pred).abs() / pred.abs().max(1.0));
    }
    let kernel = read_jsonl(&dir.join("kernel.jsonl"));
    let residuals = kernel
        .iter()
        .filter(|r| {
            r["reconstruction_residual"]
                .as_f64()
                .is_some_and(f64::is_finite)
        })
        .count();
    outcome(
        !exact.is_empty() && worst <= 1e-9 && residuals == kernel.len() && !kernel.is_empty(),
        format!(
            "{} exact waterfalls, max rel endpoint error {worst:.2e}; residual present in {residuals}/{} kernel records",
            exact.len(),
            kernel.len()
        ),
    )
}

fn demo_report(dir: &Path) -> Option<(RunReport, Vec<u8>)> {
    let out = xrpo(&[
        "--seed",
        "7",
        "--profile",
        "desk",
        "demo",
        "--out",
        &dir.display().to_string(),
    ]);
    if !out.status.success() {
        return None;
    }
    let bytes = std::fs::read(dir.join("report.json")).ok()?;
    Some((serde_json::from_slice(&bytes).ok()?, bytes))
}

fn main() {
    let root: PathBuf = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();

    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "base-case fidelity", base_case_fidelity()),
        (2, "RPO improvement", rpo_improvement()),
        (3, "power-flow oracle equivalence", power_flow_oracle()),
        (4, "Shapley axiom suite", shapley_axioms()),
        (5, "kernel vs exact calibration", kernel_calibration(&root)),
        (6, "GA oracle equivalence", ga_oracle()),
    ];

    let first = demo_report(&root.join("demo-a"));
    let second = demo_report(&root.join("demo-b"));
    let trust = match &first {
        Some((r, _)) => {
            let a = r.trust.agreement_fraction;
            outcome(
                a >= 0.80 && a - 0.5 >= 0.25,
                format!(
                    "tap sign agreement {a:.4} over {} cells ({} scenarios, {} restarts)",
                    r.trust.cells, r.dataset.scenarios, 5
                ),
            )
        }
        None => outcome(false, "demo run failed".into()),
    };
    results.push((7, "trust check, desk scale", trust));
    results.push((8, "dataset invariants", dataset_invariants()));
    let recon_dir = root.join("reconstruction");
    std::fs::create_dir_all(&recon_dir).unwrap();
    results.push((
        9,
        "explanation reconstruction",
        explanation_reconstruction(&recon_dir),
    ));
    let determinism = match (&first, &second) {
        (Some((_, a)), Some((_, b))) => outcome(
            a == b,
            format!(
                "two `demo --seed 7` reports, {} bytes, identical {}",
                a.len(),
                a == b
            ),
        ),
        _ => outcome(false, "demo run failed".into()),
    };
    results.push((10, "determinism", determinism));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
