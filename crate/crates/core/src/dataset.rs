//! Scenario sampling, GA labelling and train/validation/test splits.
//!
//! Features follow the load-bus order of the network: all active loads, then
//! all reactive loads. Targets follow the control order: taps, bank steps,
//! DG reactive outputs.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Weibull};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::network::{DgKind, NetworkModel};
use crate::powerflow::LoadScenario;
use crate::rpo::{solve_rpo_ga, GaParams, ObjectiveWeights};
use crate::seed;

/// Gaussian restricted to `[lo, hi]` by rejection.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    normal: Normal<f64>,
    lo: f64,
    hi: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !(sd > 0.0) {
            return Err(Error::InvalidInput {
                what: "truncated normal",
                reason: format!("need sd > 0 and lo < hi, got sd = {sd}, [{lo}, {hi}]"),
            });
        }
        Ok(Self {
            normal: Normal::new(mean, sd).map_err(|e| Error::InvalidInput {
                what: "truncated normal",
                reason: e.to_string(),
            })?,
            lo,
            hi,
        })
    }
}

impl Distribution<f64> for TruncatedNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let v = self.normal.sample(rng);
            if (self.lo..=self.hi).contains(&v) {
                return v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub multiplier_mean: f64,
    pub multiplier_sd: f64,
    pub multiplier_min: f64,
    pub multiplier_max: f64,
    /// Use one draw for both P and Q of a bus instead of two independent draws.
    pub coupled_pq: bool,
    pub wind_weibull_shape: f64,
    /// Weibull scale as a fraction of unit capacity.
    pub wind_scale_frac: f64,
    pub pv_beta_alpha: f64,
    pub pv_beta_beta: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            multiplier_mean: 1.1,
            multiplier_sd: 0.9,
            multiplier_min: 0.2,
            multiplier_max: 2.0,
            coupled_pq: false,
            wind_weibull_shape: 2.0,
            wind_scale_frac: 0.4,
            pv_beta_alpha: 2.0,
            pv_beta_beta: 2.0,
        }
    }
}

impl ScenarioConfig {
    pub fn multiplier(&self) -> Result<TruncatedNormal> {
        TruncatedNormal::new(
            self.multiplier_mean,
            self.multiplier_sd,
            self.multiplier_min,
            self.multiplier_max,
        )
    }

    /// Mean active output per DG unit under the sampling distributions
    /// (Weibull truncation at capacity ignored).
    pub fn expected_dg_p_kw(&self, net: &NetworkModel) -> Vec<f64> {
        net.dg_units
            .iter()
            .map(|dg| match dg.kind {
                DgKind::Wind => {
                    let k = self.wind_weibull_shape;
                    let mean = self.wind_scale_frac * gamma(1.0 + 1.0 / k);
                    (mean * dg.s_kva).min(dg.s_kva)
                }
                DgKind::Pv => {
                    dg.s_kva * self.pv_beta_alpha / (self.pv_beta_alpha + self.pv_beta_beta)
                }
            })
            .collect()
    }
}

/// One load multiplier from the default truncated Gaussian.
pub fn sample_multiplier<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ScenarioConfig::default()
        .multiplier()
        .expect("default multiplier parameters are valid")
        .sample(rng)
}

fn sample_scenario(net: &NetworkModel, cfg: &ScenarioConfig, seed: u64) -> Result<LoadScenario> {
    let mult = cfg.multiplier()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = net.load_bus_indices();
    let mut p_kw = Vec::with_capacity(idx.len());
    let mut q_kvar = Vec::with_capacity(idx.len());
    for &i in &idx {
        let bus = &net.buses[i];
        let mp = mult.sample(&mut rng);
        let mq = if cfg.coupled_pq {
            mp
        } else {
            mult.sample(&mut rng)
        };
        p_kw.push(bus.p_load_kw * mp);
        q_kvar.push(bus.q_load_kvar * mq);
    }
    let mut dg_p_kw = Vec::with_capacity(net.dg_units.len());
    for dg in &net.dg_units {
        let p = match dg.kind {
            DgKind::Wind => {
                let w = Weibull::new(cfg.wind_scale_frac * dg.s_kva, cfg.wind_weibull_shape)
                    .map_err(|e| Error::InvalidInput {
                        what: "wind Weibull",
                        reason: e.to_string(),
                    })?;
                loop {
                    let v: f64 = w.sample(&mut rng);
                    if v <= dg.s_kva {
                        break v;
                    }
                }
            }
            DgKind::Pv => {
                let b = Beta::new(cfg.pv_beta_alpha, cfg.pv_beta_beta).map_err(|e| {
                    Error::InvalidInput {
                        what: "PV Beta",
                        reason: e.to_string(),
                    }
                })?;
                b.sample(&mut rng) * dg.s_kva
            }
        };
        dg_p_kw.push(p);
    }
    Ok(LoadScenario {
        p_kw,
        q_kvar,
        dg_p_kw,
        seed,
    })
}

/// `count` scenarios; scenario `k` draws from its own stream seeded by
/// `seed::derive(seed, k)`, so the output is independent of thread count.
pub fn generate_scenarios(
    net: &NetworkModel,
    count: usize,
    seed: u64,
    cfg: &ScenarioConfig,
) -> Result<Vec<LoadScenario>> {
    if count == 0 {
        return Err(Error::InvalidInput {
            what: "scenario count",
            reason: "must be at least 1".into(),
        });
    }
    (0..count as u64)
        .into_par_iter()
        .map(|k| sample_scenario(net, cfg, seed::derive(seed, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub scenario: LoadScenario,
    pub objective_f: f64,
}

/// Regressor input of a scenario: active loads then reactive loads.
pub fn features(scenario: &LoadScenario) -> Vec<f64> {
    scenario
        .p_kw
        .iter()
        .chain(&scenario.q_kvar)
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedScenario {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub samples: Vec<LabeledSample>,
    pub dropped: Vec<DroppedScenario>,
}

/// GA-labels every scenario. Scenario `k` uses GA seed
/// `seed::derive(ga.seed, k)`. Scenarios whose baseline fails (degenerate or
/// non-converging) or whose best setting is infeasible are dropped and listed.
pub fn label_scenarios(
    net: &NetworkModel,
    scenarios: &[LoadScenario],
    weights: ObjectiveWeights,
    ga: &GaParams,
) -> Result<LabelOutcome> {
    ga.validate()?;
    weights.validate()?;
    let results: Vec<std::result::Result<LabeledSample, String>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(k, scen)| {
            let params = GaParams {
                seed: seed::derive(ga.seed, k as u64),
                ..ga.clone()
            };
            let sol = solve_rpo_ga(net, scen, weights, &params).map_err(|e| e.to_string())?;
            if !sol.feasible {
                return Err(format!(
                    "no feasible setting ({} violations)",
                    sol.violations.len()
                ));
            }
            Ok(LabeledSample {
                x: features(scen),
                y: sol.controls.to_vec(net),
                scenario: scen.clone(),
                objective_f: sol.objective_f,
            })
        })
        .collect();
    let mut out = LabelOutcome {
        samples: Vec::new(),
        dropped: Vec::new(),
    };
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => out.samples.push(s),
            Err(reason) => out.dropped.push(DroppedScenario { index, reason }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Seeded shuffle then contiguous train/val/test slices.
pub fn split_dataset(
    samples: Vec<LabeledSample>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    if samples.is_empty() {
        return Err(Error::Empty("sample collection"));
    }
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput {
            what: "split fractions",
            reason: format!("({a}, {b}, {c}) must be in [0, 1] and sum to 1"),
        });
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = (((n as f64) * b).round() as usize).min(n - n_train);
    let mut slots: Vec<Option<LabeledSample>> = samples.into_iter().map(Some).collect();
    let mut take = |range: &[usize]| -> Vec<LabeledSample> {
        range
            .iter()
            .map(|&i| slots[i].take().expect("each index once"))
            .collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(DatasetSplit {
        train,
        val,
        test,
        fractions,
        seed,
    })
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line =
            serde_json::to_string(item).map_err(|e| Error::parse(path.display().to_string(), e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

impl DatasetSplit {
    pub const FILES: [&'static str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, part) in Self::FILES.iter().zip([&self.train, &self.val, &self.test]) {
            write_jsonl(dir.join(name), part)?;
        }
        Ok(())
    }

    /// Reads the three split files; `fractions`/`seed` are not persisted and
    /// come back as the defaults.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train: read_jsonl(dir.join(Self::FILES[0]))?,
            val: read_jsonl(dir.join(Self::FILES[1]))?,
            test: read_jsonl(dir.join(Self::FILES[2]))?,
            fractions: DEFAULT_FRACTIONS,
            seed: 0,
        })
    }
}
