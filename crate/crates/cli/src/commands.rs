use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use xrpo_core::dataset::{read_jsonl, write_jsonl, DroppedScenario};
use xrpo_core::explain::{
    dependence_records, emit_svg, feature_medians, feature_names, global_importance,
    instance_explanation, output_index, output_names, summary_records, trust_check, Product,
};
use xrpo_core::regressor::{evaluate, train_mlp_l2_grid};
use xrpo_core::shapley::explain_batch;
use xrpo_core::{
    generate_scenarios, label_scenarios, load_network, run_pipeline, seed, solve_power_flow,
    solve_rpo_ga, split_dataset, train_linear, Background, ControlVector, DatasetSplit, GaParams,
    LabeledSample, LoadScenario, Method, MlpParams, NetworkModel, ObjectiveWeights, RunConfig,
    ShapleyAttribution, Sigma, TrainedRegressor,
};

use crate::Global;

/// Profile defaults, then the config file, then `--profile` and `--seed`.
fn run_config(g: &Global) -> Result<RunConfig> {
    let mut value = match &g.config {
        Some(path) => RunConfig::read_overrides(path)?,
        None => serde_json::json!({}),
    };
    let obj = value
        .as_object_mut()
        .context("config file must hold a table at the top level")?;
    if let Some(p) = g.profile {
        obj.insert("profile".into(), serde_json::to_value(p)?);
    }
    if let Some(s) = g.seed {
        obj.insert("seed".into(), s.into());
    }
    Ok(RunConfig::from_overrides(value)?)
}

fn network(path: Option<&Path>, cfg: Option<&RunConfig>) -> Result<NetworkModel> {
    let net = match (path, cfg) {
        (Some(p), _) => load_network(p)?,
        (None, Some(c)) => return Ok(c.network()?),
        (None, None) => NetworkModel::ieee33(),
    };
    net.validate()?;
    Ok(net)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| xrpo_core::Error::io(path, e))?;
    Ok(serde_json::from_str(&text)
        .map_err(|e| xrpo_core::Error::parse(path.display().to_string(), e))?)
}

/// Pretty JSON to `out`, or stdout when absent.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| xrpo_core::Error::io(dir, e))?;
            }
            std::fs::write(path, text).map_err(|e| xrpo_core::Error::io(path, e))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("bad {what} entry `{t}`"))
        })
        .collect()
}

/// Base loads scaled by `scale`, or the scenario file when given.
fn scenario(net: &NetworkModel, file: Option<&Path>, scale: f64) -> Result<LoadScenario> {
    let scen = match file {
        Some(p) => read_json(p)?,
        None => LoadScenario::scaled(net, scale),
    };
    scen.validate(net)?;
    Ok(scen)
}

#[derive(Args)]
pub struct NetArgs {
    /// Network JSON; the bundled IEEE 33-bus feeder when omitted.
    #[arg(long)]
    network: Option<PathBuf>,
}

pub fn net_validate(a: NetArgs) -> Result<()> {
    let net = match &a.network {
        Some(p) => load_network(p)?,
        None => NetworkModel::ieee33(),
    };
    let topo = net.validate()?;
    let (p_kw, q_kvar) = net.total_load();
    emit(
        &serde_json::json!({
            "name": net.name,
            "buses": net.buses.len(),
            "branches": net.branches.len(),
            "reachable_buses": topo.order.len(),
            "total_load_kw": p_kw,
            "total_load_kvar": q_kvar,
            "transformer": net.transformer.is_some(),
            "capacitor_banks": net.capacitor_banks.len(),
            "dg_units": net.dg_units.len(),
            "features": feature_names(&net).len(),
            "outputs": output_names(&net),
        }),
        None,
    )
}

#[derive(Args)]
pub struct PfArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    /// LoadScenario JSON; base loads times `--scale` when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// ControlVector JSON; all controls at zero when omitted.
    #[arg(long)]
    controls: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn pf_run(a: PfArgs) -> Result<()> {
    let net = network(a.network.as_deref(), None)?;
    let scen = scenario(&net, a.scenario.as_deref(), a.scale)?;
    let controls: ControlVector = match &a.controls {
        Some(p) => read_json(p)?,
        None => ControlVector::zeros(&net),
    };
    emit(&solve_power_flow(&net, &scen, &controls)?, a.out.as_deref())
}

#[derive(Args)]
pub struct RpoArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Loss and voltage-deviation weights, e.g. `0.5,0.5`.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, visible_alias = "restarts")]
    ga_restarts: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn rpo_solve(g: &Global, a: RpoArgs) -> Result<()> {
    let cfg = run_config(g)?;
    let net = network(a.network.as_deref(), Some(&cfg))?;
    let scen = scenario(&net, a.scenario.as_deref(), a.scale)?;
    let weights = match &a.weights {
        Some(w) => match parse_list::<f64>(w, "weight")?[..] {
            [l, u] => ObjectiveWeights::new(l, u)?,
            _ => bail!("--weights takes two numbers, e.g. 0.5,0.5"),
        },
        None => cfg.weights,
    };
    let ga = GaParams {
        seed: seed::for_stage(cfg.seed, "rpo"),
        restarts: a.ga_restarts.unwrap_or(cfg.ga.restarts),
        population: a.population.unwrap_or(cfg.ga.population),
        generations: a.generations.unwrap_or(cfg.ga.generations),
        ..cfg.ga.clone()
    };
    emit(&solve_rpo_ga(&net, &scen, weights, &ga)?, a.out.as_deref())
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    /// Scenario count; the profile default when omitted.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn data_gen(g: &Global, a: GenArgs) -> Result<()> {
    let mut cfg = run_config(g)?;
    if let Some(c) = a.count {
        cfg.scenarios = c;
        cfg.validate()?;
    }
    let net = network(a.network.as_deref(), Some(&cfg))?;
    let scen = generate_scenarios(
        &net,
        cfg.scenarios,
        seed::for_stage(cfg.seed, "gen"),
        &cfg.dataset,
    )?;
    write_jsonl(&a.out, &scen)?;
    eprintln!("{} scenarios -> {}", scen.len(), a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct LabelArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    /// Scenario JSONL from `data gen`.
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Where to list dropped scenarios; `<out>.dropped.json` by default.
    #[arg(long)]
    dropped: Option<PathBuf>,
}

pub fn data_label(g: &Global, a: LabelArgs) -> Result<()> {
    let mut cfg = run_config(g)?;
    if let Some(r) = a.restarts {
        cfg.ga.restarts = r;
        cfg.validate()?;
    }
    let net = network(a.network.as_deref(), Some(&cfg))?;
    let scen: Vec<LoadScenario> = read_jsonl(&a.scenarios)?;
    let ga = GaParams {
        seed: seed::for_stage(cfg.seed, "label"),
        ..cfg.ga.clone()
    };
    let outcome = label_scenarios(&net, &scen, cfg.weights, &ga)?;
    write_jsonl(&a.out, &outcome.samples)?;
    let dropped = a
        .dropped
        .unwrap_or_else(|| a.out.with_extension("dropped.json"));
    emit::<Vec<DroppedScenario>>(&outcome.dropped, Some(&dropped))?;
    eprintln!(
        "{} labelled, {} dropped -> {}",
        outcome.samples.len(),
        outcome.dropped.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct SplitArgs {
    /// Labelled JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving train/val/test JSONL.
    #[arg(long)]
    out: PathBuf,
}

pub fn data_split(g: &Global, a: SplitArgs) -> Result<()> {
    let cfg = run_config(g)?;
    let samples: Vec<LabeledSample> = read_jsonl(&a.data)?;
    let split = split_dataset(samples, cfg.split, seed::for_stage(cfg.seed, "split"))?;
    split.save(&a.out)?;
    eprintln!(
        "train {} / val {} / test {} -> {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Split directory from `data split`.
    #[arg(long)]
    data: PathBuf,
    /// Hidden layer widths, e.g. `128,128`.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight decay; overrides the configured candidate grid.
    #[arg(long)]
    l2: Option<f64>,
    /// Fit a least-squares linear map instead of the MLP.
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn model_train(g: &Global, a: TrainArgs) -> Result<()> {
    let cfg = run_config(g)?;
    let split = DatasetSplit::load(&a.data)?;
    let model = if a.linear {
        train_linear(&split)?
    } else {
        let params = MlpParams {
            hidden: match &a.hidden {
                Some(h) => parse_list(h, "hidden width")?,
                None => cfg.mlp.hidden.clone(),
            },
            epochs: a.epochs.unwrap_or(cfg.mlp.epochs),
            lr: a.lr.unwrap_or(cfg.mlp.lr),
            seed: seed::for_stage(cfg.seed, "train"),
            l2: a.l2.unwrap_or(cfg.mlp.l2),
            ..cfg.mlp.clone()
        };
        let grid = if a.l2.is_some() {
            &[][..]
        } else {
            &cfg.l2_grid[..]
        };
        train_mlp_l2_grid(&split, &params, grid)?
    };
    model.save(&a.out)?;
    eprintln!(
        "l2 {}, {} epochs, val MAE {:?} -> {}",
        model.train_metrics.l2,
        model.train_metrics.epochs_run,
        model.train_metrics.val_mae,
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    /// Split directory; the test part is evaluated.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn model_eval(a: EvalArgs) -> Result<()> {
    let net = network(a.network.as_deref(), None)?;
    let split = DatasetSplit::load(&a.data)?;
    let model = TrainedRegressor::load(&a.model)?;
    let report = evaluate(&model, &net, &split.test)?;
    let mae: serde_json::Map<String, serde_json::Value> = output_names(&net)
        .into_iter()
        .zip(report.mae.iter().map(|&m| m.into()))
        .collect();
    emit(
        &serde_json::json!({
            "samples": report.samples,
            "mae": mae,
            "feasibility_rate": report.feasibility_rate,
        }),
        a.out.as_deref(),
    )
}

#[derive(Args)]
pub struct ComputeArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// Labelled JSONL whose instances are explained.
    #[arg(long)]
    data: PathBuf,
    /// Background pool; `train.jsonl` next to `--data` by default.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value = "tap")]
    output_dim: String,
    #[arg(long, default_value = "kernel")]
    method: Method,
    /// Background size.
    #[arg(long, default_value_t = 100)]
    background: usize,
    /// `median` or a positive bandwidth.
    #[arg(long, default_value = "median")]
    sigma: Sigma,
    /// Explain only the first N instances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn explain_compute(g: &Global, a: ComputeArgs) -> Result<()> {
    let cfg = run_config(g)?;
    let net = network(a.network.as_deref(), Some(&cfg))?;
    let model = TrainedRegressor::load(&a.model)?;
    let output = output_index(&net, &a.output_dim)?;
    let samples: Vec<LabeledSample> = read_jsonl(&a.data)?;
    let n = a.limit.unwrap_or(usize::MAX).min(samples.len());
    let instances: Vec<Vec<f64>> = samples[..n].iter().map(|s| s.x.clone()).collect();
    let train_path = a
        .train
        .unwrap_or_else(|| a.data.with_file_name("train.jsonl"));
    let pool: Vec<Vec<f64>> = read_jsonl::<LabeledSample>(&train_path)?
        .into_iter()
        .map(|s| s.x)
        .collect();
    let bg = Background::sample(&pool, a.background, seed::for_stage(cfg.seed, "background"))?;
    let attrs = explain_batch(&model, &instances, output, a.method, &bg, a.sigma)?;
    write_jsonl(&a.out, &attrs)?;
    eprintln!("{} attributions -> {}", attrs.len(), a.out.display());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ProductKind {
    Bar,
    Summary,
    Dependence,
    Force,
    Waterfall,
    Trust,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Svg,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    attributions: PathBuf,
    /// Labelled JSONL supplying trust thresholds (per-feature medians).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    product: ProductKind,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, default_value = "P18")]
    feature_a: String,
    #[arg(long, default_value = "Q18")]
    feature_b: String,
    #[arg(long, default_value_t = 0)]
    instance: usize,
    /// Features kept in the summary product.
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn explain_report(a: ReportArgs) -> Result<()> {
    let net = network(a.network.as_deref(), None)?;
    let attrs: Vec<ShapleyAttribution> = read_jsonl(&a.attributions)?;
    let names = feature_names(&net);
    let first = attrs.first().context("no attributions in file")?;
    let output = output_names(&net)
        .get(first.output_dim)
        .cloned()
        .with_context(|| format!("output index {} not in network", first.output_dim))?;
    let one = |i: usize| -> Result<_> {
        let attr = attrs
            .get(i)
            .with_context(|| format!("instance {i} out of range (0..{})", attrs.len()))?;
        Ok(instance_explanation(i, attr, &names)?)
    };
    let product = match a.product {
        ProductKind::Bar => Product::Bar(global_importance(&attrs, &names, &output)?),
        ProductKind::Summary => Product::Summary {
            records: summary_records(&attrs, &names, a.top_k)?,
        },
        ProductKind::Dependence => Product::Dependence(dependence_records(
            &attrs,
            &names,
            &a.feature_a,
            &a.feature_b,
        )?),
        ProductKind::Force => Product::Force(one(a.instance)?),
        ProductKind::Waterfall => Product::Waterfall(one(a.instance)?),
        ProductKind::Trust => {
            if matches!(a.format, Format::Svg) {
                bail!("the trust product has no SVG rendering; use --format json");
            }
            let data = a
                .data
                .as_deref()
                .context("--data is required for the trust product")?;
            return emit(&trust_from(&attrs, data)?, a.out.as_deref());
        }
    };
    match a.format {
        Format::Json => emit(&product, a.out.as_deref()),
        Format::Svg => {
            let out = a
                .out
                .as_deref()
                .context("--out is required for SVG output")?;
            Ok(emit_svg(&product, out)?)
        }
    }
}

fn trust_from(
    attrs: &[ShapleyAttribution],
    train: &Path,
) -> Result<xrpo_core::explain::TrustCheckResult> {
    let rows: Vec<Vec<f64>> = read_jsonl::<LabeledSample>(train)?
        .into_iter()
        .map(|s| s.x)
        .collect();
    Ok(trust_check(
        attrs,
        &feature_medians(&rows)?,
        "train-median",
    )?)
}

#[derive(Args)]
pub struct TrustArgs {
    #[arg(long)]
    attributions: PathBuf,
    /// Training JSONL; its per-feature medians split light from heavy.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn trust_run(a: TrustArgs) -> Result<()> {
    let attrs: Vec<ShapleyAttribution> = read_jsonl(&a.attributions)?;
    let result = trust_from(&attrs, &a.train)?;
    eprintln!("sign agreement {:.4}", result.agreement_fraction);
    emit(&result, a.out.as_deref())
}

#[derive(Args)]
pub struct DemoArgs {
    /// Run directory; the config's `out_dir` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn demo(g: &Global, a: DemoArgs) -> Result<()> {
    let mut cfg = run_config(g)?;
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    let outcome = run_pipeline(&cfg)?;
    for s in &outcome.stages {
        eprintln!(
            "{:<8} {}",
            s.stage,
            if s.skipped { "cached" } else { "ran" }
        );
    }
    let r = &outcome.report;
    eprintln!(
        "base loss {:.2} kW, dU {:.4}; GA loss {:.2} kW, dU {:.4}; trust {:.4}",
        r.base_case.loss_kw,
        r.base_case.du_pu,
        r.rpo_base_case.loss_kw,
        r.rpo_base_case.du_pu,
        r.trust.agreement_fraction
    );
    println!("{}", outcome.report_path.display());
    Ok(())
}
