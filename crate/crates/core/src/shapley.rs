//! Feature attributions for one output of a [`Predictor`].
//!
//! Coalition values use marginal expectation over a background set: features
//! outside the coalition take each background row's value in turn and the
//! predictions are averaged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regressor::Predictor;

/// Largest feature count the exact enumerator accepts.
pub const EXACT_FEATURE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    rows: Vec<Vec<f64>>,
}

impl Background {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty("background set"));
        };
        let d = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension {
                what: "background row",
                expected: d,
                found: bad.len(),
            });
        }
        Ok(Self { rows })
    }

    /// `m` rows drawn without replacement from `pool` with a seeded stream;
    /// the whole pool when it has at most `m` rows.
    pub fn sample(pool: &[Vec<f64>], m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Empty("background set"));
        }
        if pool.len() <= m {
            return Self::new(pool.to_vec());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, pool.len(), m);
        Self::new(picks.iter().map(|i| pool[i].clone()).collect())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    /// Median of all pairwise Euclidean distances.
    pub fn median_distance(&self) -> f64 {
        let n = self.rows.len();
        let mut d: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| sq_dist(&self.rows[i], &self.rows[j]).sqrt())
            .collect();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        let mid = d.len() / 2;
        if d.len() % 2 == 1 {
            d[mid]
        } else {
            0.5 * (d[mid - 1] + d[mid])
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sigma {
    #[default]
    Median,
    Fixed(f64),
}

impl std::str::FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(Sigma::Median);
        }
        s.parse::<f64>()
            .map(Sigma::Fixed)
            .map_err(|_| Error::InvalidInput {
                what: "sigma",
                reason: format!("expected `median` or a number, got `{s}`"),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Kernel,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "kernel" => Ok(Method::Kernel),
            _ => Err(Error::InvalidInput {
                what: "attribution method",
                reason: format!("expected `exact` or `kernel`, got `{s}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub phi: Vec<f64>,
    /// Mean prediction over the background.
    pub phi0: f64,
    pub output_dim: usize,
    pub instance: Vec<f64>,
    pub prediction: f64,
    pub method: Method,
    /// `|phi0 + Σphi − prediction|`.
    pub reconstruction_residual: f64,
    /// Kernel bandwidth actually used.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// The kernel weights underflowed and uniform weights were used instead.
    #[serde(default)]
    pub degenerate_kernel: bool,
}

fn check_inputs(
    predictor: &dyn Predictor,
    instance: &[f64],
    output: usize,
    bg: &Background,
) -> Result<()> {
    if instance.len() != predictor.input_dim() {
        return Err(Error::Dimension {
            what: "instance",
            expected: predictor.input_dim(),
            found: instance.len(),
        });
    }
    if bg.dim() != predictor.input_dim() {
        return Err(Error::Dimension {
            what: "background row",
            expected: predictor.input_dim(),
            found: bg.dim(),
        });
    }
    if output >= predictor.output_dim() {
        return Err(Error::Dimension {
            what: "output index",
            expected: predictor.output_dim(),
            found: output,
        });
    }
    if instance.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput {
            what: "instance",
            reason: "non-finite feature".into(),
        });
    }
    Ok(())
}

/// Mean background prediction (the attribution baseline).
pub fn baseline(predictor: &dyn Predictor, output: usize, bg: &Background) -> f64 {
    let values: Vec<f64> = bg
        .rows
        .iter()
        .map(|r| predictor.predict_output(r, output))
        .collect();
    shifted_mean(&values)
}

/// Coalition value with `present[i]` marking features held at the instance.
/// The full coalition returns the instance prediction itself.
pub fn value_function(
    predictor: &dyn Predictor,
    instance: &[f64],
    output: usize,
    present: &[bool],
    bg: &Background,
) -> Result<f64> {
    check_inputs(predictor, instance, output, bg)?;
    if present.len() != instance.len() {
        return Err(Error::Dimension {
            what: "coalition mask",
            expected: instance.len(),
            found: present.len(),
        });
    }
    Ok(coalition_value(predictor, instance, output, present, bg))
}

fn coalition_value(
    predictor: &dyn Predictor,
    instance: &[f64],
    output: usize,
    present: &[bool],
    bg: &Background,
) -> f64 {
    if present.iter().all(|&p| p) {
        return predictor.predict_output(instance, output);
    }
    let mut z = vec![0.0; instance.len()];
    let values: Vec<f64> = bg
        .rows
        .iter()
        .map(|row| {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = if present[k] { instance[k] } else { row[k] };
            }
            predictor.predict_output(&z, output)
        })
        .collect();
    shifted_mean(&values)
}

/// Mean computed relative to the first value, so equal inputs average to
/// exactly that value.
fn shifted_mean(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

/// Shapley values by enumerating all 2^p coalitions.
pub fn exact_shapley(
    predictor: &dyn Predictor,
    instance: &[f64],
    output: usize,
    bg: &Background,
) -> Result<ShapleyAttribution> {
    check_inputs(predictor, instance, output, bg)?;
    let p = instance.len();
    if p > EXACT_FEATURE_LIMIT {
        return Err(Error::TooManyFeatures {
            features: p,
            limit: EXACT_FEATURE_LIMIT,
        });
    }
    let n_masks = 1usize << p;
    let values: Vec<f64> = (0..n_masks)
        .into_par_iter()
        .map(|mask| {
            let present: Vec<bool> = (0..p).map(|k| mask >> k & 1 == 1).collect();
            coalition_value(predictor, instance, output, &present, bg)
        })
        .collect();

    // weight[s] = s! (p - s - 1)! / p!
    let mut weight = vec![0.0; p.max(1)];
    if p > 0 {
        weight[0] = 1.0 / p as f64;
        for s in 1..p {
            weight[s] = weight[s - 1] * s as f64 / (p - s) as f64;
        }
    }
    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        *phi_j = (0..n_masks)
            .filter(|m| m & bit == 0)
            .map(|m| weight[m.count_ones() as usize] * (values[m | bit] - values[m]))
            .sum();
    }
    let phi0 = values[0];
    let prediction = values[n_masks - 1];
    Ok(finish(
        phi,
        phi0,
        output,
        instance,
        prediction,
        Method::Exact,
        None,
        false,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    phi: Vec<f64>,
    phi0: f64,
    output: usize,
    instance: &[f64],
    prediction: f64,
    method: Method,
    sigma: Option<f64>,
    degenerate_kernel: bool,
) -> ShapleyAttribution {
    let reconstruction_residual = (phi0 + phi.iter().sum::<f64>() - prediction).abs();
    ShapleyAttribution {
        phi,
        phi0,
        output_dim: output,
        instance: instance.to_vec(),
        prediction,
        method,
        reconstruction_residual,
        sigma,
        degenerate_kernel,
    }
}

/// Gaussian-kernel estimate. For feature `i`, variant `j` is the instance
/// with feature `i` taken from background row `j`; it is weighted by
/// `exp(-‖variant − row‖² / 2σ²)` normalized over the rows, and
/// `φ_i = Σ_j w_j (f(x) − f(variant_j))`, the prediction change caused by
/// the feature holding its instance value instead of the background value.
pub fn kernel_shapley(
    predictor: &dyn Predictor,
    instance: &[f64],
    output: usize,
    bg: &Background,
    sigma: Sigma,
) -> Result<ShapleyAttribution> {
    check_inputs(predictor, instance, output, bg)?;
    let bandwidth = match sigma {
        Sigma::Fixed(s) if !(s > 0.0) || !s.is_finite() => {
            return Err(Error::InvalidInput {
                what: "sigma",
                reason: format!("bandwidth must be positive, got {s}"),
            })
        }
        Sigma::Fixed(s) => s,
        Sigma::Median => bg.median_distance(),
    };
    let p = instance.len();
    let fx = predictor.predict_output(instance, output);
    let base_sq: Vec<f64> = bg.rows.iter().map(|r| sq_dist(instance, r)).collect();

    let per_feature: Vec<(f64, bool)> = (0..p)
        .into_par_iter()
        .map(|i| {
            let mut z = instance.to_vec();
            let mut weights = Vec::with_capacity(bg.len());
            let mut deltas = Vec::with_capacity(bg.len());
            for (row, d0) in bg.rows.iter().zip(&base_sq) {
                // variant and row agree on feature i
                let d = (d0 - (instance[i] - row[i]).powi(2)).max(0.0);
                weights.push(if bandwidth > 0.0 {
                    (-d / (2.0 * bandwidth * bandwidth)).exp()
                } else {
                    0.0
                });
                z[i] = row[i];
                deltas.push(if row[i] == instance[i] {
                    0.0
                } else {
                    fx - predictor.predict_output(&z, output)
                });
            }
            let total: f64 = weights.iter().sum();
            let degenerate = !(total > 0.0) || !total.is_finite();
            let phi = if degenerate {
                deltas.iter().sum::<f64>() / deltas.len() as f64
            } else {
                weights
                    .iter()
                    .zip(&deltas)
                    .map(|(w, d)| w / total * d)
                    .sum()
            };
            (phi, degenerate)
        })
        .collect();
    let degenerate = per_feature.iter().any(|&(_, d)| d);
    let phi = per_feature.into_iter().map(|(v, _)| v).collect();
    let phi0 = baseline(predictor, output, bg);
    Ok(finish(
        phi,
        phi0,
        output,
        instance,
        fx,
        Method::Kernel,
        Some(bandwidth),
        degenerate,
    ))
}

/// Attributions for every instance, in input order. An instance failure is
/// reported with its index.
pub fn explain_batch(
    predictor: &dyn Predictor,
    instances: &[Vec<f64>],
    output: usize,
    method: Method,
    bg: &Background,
    sigma: Sigma,
) -> Result<Vec<ShapleyAttribution>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            match method {
                Method::Exact => exact_shapley(predictor, x, output, bg),
                Method::Kernel => kernel_shapley(predictor, x, output, bg, sigma),
            }
            .map_err(|e| Error::Instance {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Average ranks (1-based); ties share the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k + 1;
        while end < idx.len() && v[idx[end]] == v[idx[k]] {
            end += 1;
        }
        let avg = (k + end + 1) as f64 / 2.0;
        for &i in &idx[k..end] {
            r[i] = avg;
        }
        k = end;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
