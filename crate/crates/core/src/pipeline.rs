//! End-to-end run: scenario generation, GA labelling, split, surrogate
//! training, attribution and trust check, with per-stage caching.
//!
//! Each stage writes its outputs under the run directory plus a stamp in
//! `stages/<name>.json` holding the config hash and the content hashes of
//! the files it read. A stage is skipped when its stamp matches and its
//! outputs exist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    features, generate_scenarios, label_scenarios, read_jsonl, split_dataset, write_jsonl,
    DatasetSplit, DroppedScenario, LabeledSample, ScenarioConfig, DEFAULT_FRACTIONS,
};
use crate::error::{Error, Result};
use crate::explain::{
    feature_medians, feature_names, global_importance, output_index, output_names, trust_check,
    GlobalImportance, TrustCheckResult,
};
use crate::network::{load_network, NetworkModel};
use crate::powerflow::{solve_power_flow, ControlVector, LoadScenario};
use crate::regressor::{evaluate, train_mlp_l2_grid, MlpParams, TrainedRegressor};
use crate::rpo::{solve_rpo_ga, GaParams, ObjectiveWeights};
use crate::seed;
use crate::shapley::{explain_batch, Background, Method, ShapleyAttribution, Sigma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::InvalidInput {
                what: "profile",
                reason: format!("expected `desk` or `full`, got `{s}`"),
            }),
        }
    }
}

pub const DEFAULT_L2_GRID: [f64; 4] = [0.0, 0.5, 2.0, 8.0];
pub const DESK_MAX_SCENARIOS: usize = 1000;
pub const DESK_MAX_RESTARTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    /// Output explained and trust-checked, by name.
    pub output: String,
    pub method: Method,
    pub background: usize,
    pub sigma: Sigma,
    /// Cap on explained test instances; all when `None`.
    pub max_instances: Option<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            output: "tap".into(),
            method: Method::Kernel,
            background: 100,
            sigma: Sigma::Median,
            max_instances: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Network file; the bundled IEEE 33-bus feeder when `None`.
    pub network: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub scenarios: usize,
    pub weights: ObjectiveWeights,
    pub ga: GaParams,
    pub dataset: ScenarioConfig,
    pub split: (f64, f64, f64),
    pub mlp: MlpParams,
    /// Weight-decay candidates for the surrogate, chosen by validation MSE;
    /// empty trains with `mlp.l2` alone.
    pub l2_grid: Vec<f64>,
    pub explain: ExplainConfig,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (scenarios, restarts) = match profile {
            Profile::Desk => (500, 5),
            Profile::Full => (5000, 50),
        };
        Self {
            profile,
            seed: 0,
            network: None,
            out_dir: PathBuf::from("xrpo-run"),
            scenarios,
            weights: ObjectiveWeights::default(),
            ga: GaParams {
                restarts,
                ..GaParams::default()
            },
            dataset: ScenarioConfig::default(),
            split: DEFAULT_FRACTIONS,
            mlp: MlpParams::default(),
            l2_grid: DEFAULT_L2_GRID.to_vec(),
            explain: ExplainConfig::default(),
        }
    }

    /// Reads a TOML (`.toml`) or JSON file. Keys absent from the file take
    /// the defaults of the profile the file names (desk when unnamed).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_overrides(Self::read_overrides(path)?).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// Raw key/value overrides from a TOML or JSON file.
    pub fn read_overrides(path: impl AsRef<Path>) -> Result<serde_json::Value> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        if path.extension().is_some_and(|e| e == "toml") {
            let t: toml::Value = toml::from_str(&text).map_err(|e| Error::parse(&ctx, e))?;
            serde_json::to_value(t).map_err(|e| Error::parse(&ctx, e))
        } else {
            serde_json::from_str(&text).map_err(|e| Error::parse(&ctx, e))
        }
    }

    pub fn from_overrides(value: serde_json::Value) -> Result<Self> {
        let profile = match value.get("profile") {
            Some(p) => {
                serde_json::from_value(p.clone()).map_err(|e| Error::parse("config profile", e))?
            }
            None => Profile::Desk,
        };
        let mut base = serde_json::to_value(Self::for_profile(profile)).expect("config serializes");
        merge(&mut base, value);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::parse("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ga.validate()?;
        self.weights.validate()?;
        self.mlp.validate()?;
        for &l2 in &self.l2_grid {
            MlpParams {
                l2,
                ..self.mlp.clone()
            }
            .validate()?;
        }
        self.dataset.multiplier()?;
        if self.scenarios == 0 {
            return Err(Error::InvalidInput {
                what: "scenarios",
                reason: "must be at least 1".into(),
            });
        }
        if self.explain.background == 0 {
            return Err(Error::InvalidInput {
                what: "explain.background",
                reason: "must be at least 1".into(),
            });
        }
        if self.profile == Profile::Desk
            && (self.scenarios > DESK_MAX_SCENARIOS || self.ga.restarts > DESK_MAX_RESTARTS)
        {
            return Err(Error::InvalidInput {
                what: "desk profile",
                reason: format!(
                    "scenarios <= {DESK_MAX_SCENARIOS} and restarts <= {DESK_MAX_RESTARTS} required, got {} and {}",
                    self.scenarios, self.ga.restarts
                ),
            });
        }
        Ok(())
    }

    pub fn network(&self) -> Result<NetworkModel> {
        let net = match &self.network {
            Some(p) => load_network(p)?,
            None => NetworkModel::ieee33(),
        };
        net.validate()?;
        Ok(net)
    }

    /// Hash of everything that shapes the outputs (the run directory is
    /// excluded) plus the network contents.
    pub fn hash(&self, net: &NetworkModel) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("network");
        }
        let mut h = Sha256::new();
        h.update(v.to_string().as_bytes());
        h.update(net.to_json_string().as_bytes());
        hex::encode(h.finalize())
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub const STAGES: [&str; 6] = ["gen", "label", "split", "train", "explain", "trust"];

/// Files of a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn scenarios(&self) -> PathBuf {
        self.root.join("scenarios.jsonl")
    }
    pub fn labeled(&self) -> PathBuf {
        self.root.join("labeled.jsonl")
    }
    pub fn dropped(&self) -> PathBuf {
        self.root.join("dropped.json")
    }
    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }
    pub fn split_files(&self) -> Vec<PathBuf> {
        DatasetSplit::FILES
            .iter()
            .map(|f| self.split_dir().join(f))
            .collect()
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }
    pub fn attributions(&self) -> PathBuf {
        self.root.join("attributions.jsonl")
    }
    pub fn importance(&self) -> PathBuf {
        self.root.join("importance.json")
    }
    pub fn trust(&self) -> PathBuf {
        self.root.join("trust.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn stamp(&self, stage: &str) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.json"))
    }

    fn io(&self, stage: &str) -> (Vec<PathBuf>, Vec<PathBuf>) {
        match stage {
            "gen" => (vec![], vec![self.scenarios()]),
            "label" => (vec![self.scenarios()], vec![self.labeled(), self.dropped()]),
            "split" => (vec![self.labeled()], self.split_files()),
            "train" => (self.split_files(), vec![self.model()]),
            "explain" => {
                let mut inputs = self.split_files();
                inputs.push(self.model());
                (inputs, vec![self.attributions(), self.importance()])
            }
            "trust" => (
                vec![self.split_files()[0].clone(), self.attributions()],
                vec![self.trust()],
            ),
            _ => unreachable!("unknown stage {stage}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    config_hash: String,
    inputs: BTreeMap<String, String>,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub skipped: bool,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    net: NetworkModel,
    layout: RunLayout,
    hash: String,
}

impl Run<'_> {
    fn input_hashes(&self, stage: &str) -> Result<BTreeMap<String, String>> {
        let (inputs, _) = self.layout.io(stage);
        inputs
            .iter()
            .map(|p| {
                let rel = p
                    .strip_prefix(&self.layout.root)
                    .unwrap_or(p)
                    .display()
                    .to_string();
                Ok((rel, file_hash(p)?))
            })
            .collect()
    }

    fn is_fresh(&self, stage: &str) -> bool {
        let (_, outputs) = self.layout.io(stage);
        if !outputs.iter().all(|p| p.exists()) {
            return false;
        }
        let Ok(stamp) = read_json::<Stamp>(&self.layout.stamp(stage)) else {
            return false;
        };
        stamp.config_hash == self.hash && self.input_hashes(stage).is_ok_and(|h| h == stamp.inputs)
    }

    fn stage(
        &self,
        stage: &'static str,
        body: impl FnOnce(&Self) -> Result<()>,
    ) -> Result<StageStatus> {
        let wrap = |e: Error| Error::Stage {
            stage,
            source: Box::new(e),
        };
        if self.is_fresh(stage) {
            return Ok(StageStatus {
                stage: stage.into(),
                skipped: true,
            });
        }
        let _ = std::fs::remove_file(self.layout.stamp(stage));
        body(self).map_err(wrap)?;
        let stamp = Stamp {
            stage: stage.into(),
            config_hash: self.hash.clone(),
            inputs: self.input_hashes(stage).map_err(wrap)?,
        };
        write_json(&self.layout.stamp(stage), &stamp).map_err(wrap)?;
        Ok(StageStatus {
            stage: stage.into(),
            skipped: false,
        })
    }

    fn gen(&self) -> Result<()> {
        let scen = generate_scenarios(
            &self.net,
            self.cfg.scenarios,
            seed::for_stage(self.cfg.seed, "gen"),
            &self.cfg.dataset,
        )?;
        write_jsonl(self.layout.scenarios(), &scen)
    }

    fn label(&self) -> Result<()> {
        let scen: Vec<LoadScenario> = read_jsonl(self.layout.scenarios())?;
        let ga = GaParams {
            seed: seed::for_stage(self.cfg.seed, "label"),
            ..self.cfg.ga.clone()
        };
        let out = label_scenarios(&self.net, &scen, self.cfg.weights, &ga)?;
        if out.samples.is_empty() {
            return Err(Error::Empty(
                "labelled dataset (every scenario was dropped)",
            ));
        }
        write_jsonl(self.layout.labeled(), &out.samples)?;
        write_json(&self.layout.dropped(), &out.dropped)
    }

    fn split(&self) -> Result<()> {
        let samples: Vec<LabeledSample> = read_jsonl(self.layout.labeled())?;
        let split = split_dataset(
            samples,
            self.cfg.split,
            seed::for_stage(self.cfg.seed, "split"),
        )?;
        split.save(self.layout.split_dir())
    }

    fn train(&self) -> Result<()> {
        let split = DatasetSplit::load(self.layout.split_dir())?;
        let params = MlpParams {
            seed: seed::for_stage(self.cfg.seed, "train"),
            ..self.cfg.mlp.clone()
        };
        train_mlp_l2_grid(&split, &params, &self.cfg.l2_grid)?.save(self.layout.model())
    }

    fn explained_instances(&self, split: &DatasetSplit) -> Vec<Vec<f64>> {
        let source = if split.test.is_empty() {
            &split.train
        } else {
            &split.test
        };
        let n = self
            .cfg
            .explain
            .max_instances
            .unwrap_or(usize::MAX)
            .min(source.len());
        source[..n].iter().map(|s| s.x.clone()).collect()
    }

    fn explain(&self) -> Result<()> {
        let split = DatasetSplit::load(self.layout.split_dir())?;
        let model = TrainedRegressor::load(self.layout.model())?;
        let output = output_index(&self.net, &self.cfg.explain.output)?;
        let pool: Vec<Vec<f64>> = split.train.iter().map(|s| s.x.clone()).collect();
        let bg = Background::sample(
            &pool,
            self.cfg.explain.background,
            seed::for_stage(self.cfg.seed, "background"),
        )?;
        let attrs = explain_batch(
            &model,
            &self.explained_instances(&split),
            output,
            self.cfg.explain.method,
            &bg,
            self.cfg.explain.sigma,
        )?;
        write_jsonl(self.layout.attributions(), &attrs)?;
        let names = feature_names(&self.net);
        write_json(
            &self.layout.importance(),
            &global_importance(&attrs, &names, &self.cfg.explain.output)?,
        )
    }

    fn trust(&self) -> Result<()> {
        let train: Vec<LabeledSample> = read_jsonl(&self.layout.split_files()[0])?;
        let attrs: Vec<ShapleyAttribution> = read_jsonl(self.layout.attributions())?;
        let rows: Vec<Vec<f64>> = train.into_iter().map(|s| s.x).collect();
        let result = trust_check(&attrs, &feature_medians(&rows)?, "train-median")?;
        write_json(&self.layout.trust(), &result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub loss_kw: f64,
    pub du_pu: f64,
    pub v_min_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingMetrics {
    pub controls: ControlVector,
    pub loss_kw: f64,
    pub du_pu: f64,
    pub objective_f: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub scenarios: usize,
    pub labeled: usize,
    pub dropped: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Pearson correlation of P18 and Q18 over the labelled scenarios.
    pub p18_q18_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub architecture: Vec<usize>,
    pub epochs_run: usize,
    pub l2: f64,
    pub val_mae: BTreeMap<String, f64>,
    pub test_mae: BTreeMap<String, f64>,
    pub test_feasibility_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    pub output: String,
    pub method: Method,
    pub instances: usize,
    pub top_features: Vec<(String, f64)>,
    pub mean_reconstruction_residual: f64,
    pub degenerate_kernels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustSummary {
    pub agreement_fraction: f64,
    pub threshold_mode: String,
    pub cells: usize,
}

/// Deterministic run summary; holds no timings or paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub profile: Profile,
    pub seed: u64,
    pub network: String,
    pub base_case: FlowMetrics,
    pub rpo_base_case: SettingMetrics,
    pub surrogate_base_case: SettingMetrics,
    pub dataset: DatasetSummary,
    pub model: ModelSummary,
    pub explanation: ExplanationSummary,
    pub trust: TrustSummary,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: RunReport,
    pub stages: Vec<StageStatus>,
    pub report_path: PathBuf,
}

fn setting_metrics(
    net: &NetworkModel,
    scen: &LoadScenario,
    controls: ControlVector,
    weights: ObjectiveWeights,
) -> Result<SettingMetrics> {
    let before = solve_power_flow(net, scen, &ControlVector::zeros(net))?;
    let after = solve_power_flow(net, scen, &controls)?;
    let violations = crate::rpo::check_feasibility(net, &after, &controls, scen);
    Ok(SettingMetrics {
        objective_f: crate::rpo::objective((&before).into(), (&after).into(), weights)?,
        loss_kw: after.loss_kw,
        du_pu: after.du_pu,
        feasible: violations.is_empty(),
        controls,
    })
}

fn named(names: &[String], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().cloned().zip(values.iter().copied()).collect()
}

fn build_report(run: &Run<'_>) -> Result<RunReport> {
    let (cfg, net, layout) = (run.cfg, &run.net, &run.layout);
    let base = LoadScenario::base(net);
    let pf = solve_power_flow(net, &base, &ControlVector::zeros(net))?;
    let ga = GaParams {
        seed: seed::for_stage(cfg.seed, "rpo"),
        ..cfg.ga.clone()
    };
    let rpo = solve_rpo_ga(net, &base, cfg.weights, &ga)?;
    let model = TrainedRegressor::load(layout.model())?;
    let decoded = model.predict_decoded(net, &features(&base), Some(&base.dg_p_kw))?;

    let split = DatasetSplit::load(layout.split_dir())?;
    let dropped: Vec<DroppedScenario> = read_json(&layout.dropped())?;
    let outputs = output_names(net);
    let eval_set = if split.test.is_empty() {
        &split.train
    } else {
        &split.test
    };
    let eval = evaluate(&model, net, eval_set)?;
    let names = feature_names(net);
    let p18_q18_correlation = match (
        names.iter().position(|n| n == "P18"),
        names.iter().position(|n| n == "Q18"),
    ) {
        (Some(a), Some(b)) => {
            let all: Vec<&LabeledSample> = split
                .train
                .iter()
                .chain(&split.val)
                .chain(&split.test)
                .collect();
            let va: Vec<f64> = all.iter().map(|s| s.x[a]).collect();
            let vb: Vec<f64> = all.iter().map(|s| s.x[b]).collect();
            Some(crate::shapley::pearson(&va, &vb))
        }
        _ => None,
    };

    let attrs: Vec<ShapleyAttribution> = read_jsonl(layout.attributions())?;
    let importance: GlobalImportance = read_json(&layout.importance())?;
    let trust: TrustCheckResult = read_json(&layout.trust())?;
    let labeled = split.train.len() + split.val.len() + split.test.len();

    Ok(RunReport {
        config_hash: run.hash.clone(),
        profile: cfg.profile,
        seed: cfg.seed,
        network: net.name.clone(),
        base_case: FlowMetrics {
            loss_kw: pf.loss_kw,
            du_pu: pf.du_pu,
            v_min_pu: pf.v_min(),
        },
        rpo_base_case: SettingMetrics {
            controls: rpo.controls.clone(),
            loss_kw: rpo.loss_after_kw,
            du_pu: rpo.du_after_pu,
            objective_f: rpo.objective_f,
            feasible: rpo.feasible,
        },
        surrogate_base_case: setting_metrics(net, &base, decoded, cfg.weights)?,
        dataset: DatasetSummary {
            scenarios: labeled + dropped.len(),
            labeled,
            dropped: dropped.len(),
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
            p18_q18_correlation,
        },
        model: ModelSummary {
            architecture: model.architecture.clone(),
            epochs_run: model.train_metrics.epochs_run,
            l2: model.train_metrics.l2,
            val_mae: named(&outputs, &model.train_metrics.val_mae),
            test_mae: named(&outputs, &eval.mae),
            test_feasibility_rate: eval.feasibility_rate,
        },
        explanation: ExplanationSummary {
            output: cfg.explain.output.clone(),
            method: cfg.explain.method,
            instances: attrs.len(),
            top_features: importance
                .ranking
                .iter()
                .take(5)
                .map(|f| (f.feature.clone(), f.mean_abs_phi))
                .collect(),
            mean_reconstruction_residual: attrs
                .iter()
                .map(|a| a.reconstruction_residual)
                .sum::<f64>()
                / attrs.len().max(1) as f64,
            degenerate_kernels: attrs.iter().filter(|a| a.degenerate_kernel).count(),
        },
        trust: TrustSummary {
            agreement_fraction: trust.agreement_fraction,
            threshold_mode: trust.threshold_mode,
            cells: trust.signs.iter().map(Vec::len).sum(),
        },
    })
}

/// Runs every stage in order under `cfg.out_dir`, then writes `report.json`.
/// Stage failures are wrapped with the stage name; earlier outputs stay on
/// disk.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    let stage_err = |stage: &'static str| {
        move |e: Error| Error::Stage {
            stage,
            source: Box::new(e),
        }
    };
    cfg.validate().map_err(stage_err("config"))?;
    let net = cfg.network().map_err(stage_err("config"))?;
    let layout = RunLayout::new(&cfg.out_dir);
    std::fs::create_dir_all(&layout.root)
        .map_err(|e| Error::io(&layout.root, e))
        .map_err(stage_err("config"))?;
    let hash = cfg.hash(&net);
    #[derive(Serialize)]
    struct Snapshot<'a> {
        config_hash: &'a str,
        config: &'a RunConfig,
    }
    write_json(
        &layout.config_snapshot(),
        &Snapshot {
            config_hash: &hash,
            config: cfg,
        },
    )
    .map_err(stage_err("config"))?;

    let run = Run {
        cfg,
        net,
        layout,
        hash,
    };
    let stages = vec![
        run.stage("gen", Run::gen)?,
        run.stage("label", Run::label)?,
        run.stage("split", Run::split)?,
        run.stage("train", Run::train)?,
        run.stage("explain", Run::explain)?,
        run.stage("trust", Run::trust)?,
    ];
    let report = build_report(&run).map_err(stage_err("report"))?;
    let report_path = run.layout.report();
    write_json(&report_path, &report).map_err(stage_err("report"))?;
    Ok(PipelineOutcome {
        report,
        stages,
        report_path,
    })
}
