//! Reference implementations used only to check the production code paths.
//! Compiled for tests and behind the `oracles` feature.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::powerflow::{ControlVector, LoadScenario};

pub struct NewtonSolution {
    pub v_pu: Vec<f64>,
    pub theta_rad: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
}

impl NewtonSolution {
    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.v_pu[i], self.theta_rad[i])
    }
}

/// Bus admittance matrix with the off-nominal ratio `a` applied on the
/// from-side of the transformer branch: `Yff = a²y, Yft = Ytf = -a·y, Ytt = y`.
pub fn admittance_matrix(net: &NetworkModel, controls: &ControlVector) -> DMatrix<Complex64> {
    let m = net.buses.len();
    let z_base = net.base_kv * net.base_kv / net.base_mva;
    let index = net.bus_index_map();
    let mut y = DMatrix::from_element(m, m, Complex64::new(0.0, 0.0));
    for br in &net.branches {
        let z = Complex64::new(br.r_ohm / z_base, br.x_ohm / z_base);
        let ys = z.inv();
        let a = match &net.transformer {
            Some(tx) if tx.at_branch == br.id => tx.ratio(controls.tap),
            _ => 1.0,
        };
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        y[(f, f)] += ys * a * a;
        y[(t, t)] += ys;
        y[(f, t)] -= ys * a;
        y[(t, f)] -= ys * a;
    }
    y
}

/// Scheduled net injection (generation minus load) per bus, p.u.
pub fn scheduled_injection(
    net: &NetworkModel,
    scenario: &LoadScenario,
    controls: &ControlVector,
) -> Vec<Complex64> {
    let s_base = net.base_mva * 1000.0;
    let index = net.bus_index_map();
    let mut s = vec![Complex64::new(0.0, 0.0); net.buses.len()];
    for (k, id) in net.load_bus_ids().iter().enumerate() {
        s[index[id]] -= Complex64::new(scenario.p_kw[k], scenario.q_kvar[k]) / s_base;
    }
    for (cb, &step) in net.capacitor_banks.iter().zip(&controls.cb_steps) {
        s[index[&cb.at_bus]].im += f64::from(step) * cb.kvar_per_step / s_base;
    }
    for ((dg, &p), &q) in net
        .dg_units
        .iter()
        .zip(&scenario.dg_p_kw)
        .zip(&controls.dg_q_kvar)
    {
        s[index[&dg.at_bus]] += Complex64::new(p, q) / s_base;
    }
    s
}

/// Polar Newton-Raphson on the full admittance system. Bus index 0 of the
/// slack (id 1) is held at 1.0∠0.
pub fn newton_raphson(
    net: &NetworkModel,
    scenario: &LoadScenario,
    controls: &ControlVector,
) -> Result<NewtonSolution> {
    let y = admittance_matrix(net, controls);
    let s_sched = scheduled_injection(net, scenario, controls);
    let m = net.buses.len();
    let slack = net.bus_index(1).ok_or(Error::MissingSlack)?;
    let pq: Vec<usize> = (0..m).filter(|&i| i != slack).collect();
    let n = pq.len();
    let mut vm = vec![1.0; m];
    let mut va = vec![0.0; m];

    let mismatch = |vm: &[f64], va: &[f64]| -> (Vec<Complex64>, DVector<f64>) {
        let v: Vec<Complex64> = (0..m)
            .map(|i| Complex64::from_polar(vm[i], va[i]))
            .collect();
        let vv = DVector::from_vec(v.clone());
        let ibus = &y * &vv;
        let f = DVector::from_iterator(
            2 * n,
            pq.iter()
                .map(|&i| (v[i] * ibus[i].conj() - s_sched[i]).re)
                .chain(pq.iter().map(|&i| (v[i] * ibus[i].conj() - s_sched[i]).im)),
        );
        (v, f)
    };

    for iter in 0..50 {
        let (v, f) = mismatch(&vm, &va);
        let norm = f.amax();
        if norm < 1e-12 {
            return Ok(NewtonSolution {
                v_pu: vm,
                theta_rad: va,
                iterations: iter,
                max_mismatch_pu: norm,
            });
        }
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let vv = DVector::from_vec(v.clone());
        let ibus = &y * &vv;
        let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let diag_i = if i == k {
                    ibus[i]
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let ds_dva = Complex64::i() * v[i] * (diag_i - y[(i, k)] * v[k]).conj();
                let vk_unit = v[k] / v[k].norm();
                let mut ds_dvm = v[i] * (y[(i, k)] * vk_unit).conj();
                if i == k {
                    ds_dvm += ibus[i].conj() * vk_unit;
                }
                jac[(r, c)] = ds_dva.re;
                jac[(r, n + c)] = ds_dvm.re;
                jac[(n + r, c)] = ds_dva.im;
                jac[(n + r, n + c)] = ds_dvm.im;
            }
        }
        let dx = jac.lu().solve(&(-f)).ok_or(Error::InvalidInput {
            what: "newton jacobian",
            reason: "singular".into(),
        })?;
        for (c, &k) in pq.iter().enumerate() {
            va[k] += dx[c];
            vm[k] += dx[n + c];
        }
    }
    Err(Error::BaselineDiverged { iterations: 50 })
}

/// Largest nodal power mismatch (p.u.) of a voltage solution against the
/// scheduled injections, over non-slack buses.
pub fn nodal_mismatch(
    net: &NetworkModel,
    scenario: &LoadScenario,
    controls: &ControlVector,
    v_pu: &[f64],
    theta_rad: &[f64],
) -> f64 {
    let y = admittance_matrix(net, controls);
    let s_sched = scheduled_injection(net, scenario, controls);
    let v = DVector::from_iterator(
        v_pu.len(),
        v_pu.iter()
            .zip(theta_rad)
            .map(|(&m, &a)| Complex64::from_polar(m, a)),
    );
    let ibus = &y * &v;
    let slack = net.bus_index(1).unwrap();
    (0..v.len())
        .filter(|&i| i != slack)
        .map(|i| (v[i] * ibus[i].conj() - s_sched[i]).norm())
        .fold(0.0, f64::max)
}

/// Shapley values by averaging marginal contributions over all p! orderings,
/// with the coalition value taken as the mean prediction over `background`
/// where absent features come from the background row.
pub fn permutation_shapley(
    f: &dyn Fn(&[f64]) -> f64,
    instance: &[f64],
    background: &[Vec<f64>],
) -> Vec<f64> {
    let p = instance.len();
    let value = |present: &[bool]| -> f64 {
        let total: f64 = background
            .iter()
            .map(|row| {
                let z: Vec<f64> = (0..p)
                    .map(|i| if present[i] { instance[i] } else { row[i] })
                    .collect();
                f(&z)
            })
            .sum();
        total / background.len() as f64
    };
    let mut phi = vec![0.0; p];
    let mut perm: Vec<usize> = (0..p).collect();
    let mut count = 0usize;
    permute(&mut perm, 0, &mut |order| {
        let mut present = vec![false; p];
        let mut prev = value(&present);
        for &j in order {
            present[j] = true;
            let next = value(&present);
            phi[j] += next - prev;
            prev = next;
        }
        count += 1;
    });
    phi.iter().map(|v| v / count as f64).collect()
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Mean of N(mu, sd) truncated to [lo, hi] by composite Simpson quadrature.
pub fn truncated_normal_mean(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let n = 20_000; // even
    let h = (hi - lo) / n as f64;
    let pdf = |x: f64| (-(x - mu).powi(2) / (2.0 * sd * sd)).exp();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=n {
        let x = lo + k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        num += w * x * pdf(x);
        den += w * pdf(x);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_oracle_on_linear_game() {
        let f = |x: &[f64]| 2.0 * x[0] + 3.0 * x[1];
        let phi = permutation_shapley(&f, &[1.0, 1.0], &[vec![0.0, 0.0]]);
        assert!((phi[0] - 2.0).abs() < 1e-15 && (phi[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn quadrature_on_symmetric_window() {
        // symmetric truncation leaves the mean at mu
        assert!((truncated_normal_mean(1.1, 0.9, 0.2, 2.0) - 1.1).abs() < 1e-12);
        // asymmetric case against the closed form mu + sd (φ(a) - φ(b)) / (Φ(b) - Φ(a)), a = 0, b = ∞
        let m = truncated_normal_mean(0.0, 1.0, 0.0, 12.0);
        assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }
}

/// Random radial feeder with `n_buses` buses: every bus attaches to a random
/// earlier bus, the first branch leaves the slack. Devices are added when
/// `with_devices` is set: a tap changer on branch 1, one bank and one DG unit.
pub fn random_radial_network<R: rand::Rng + ?Sized>(
    rng: &mut R,
    n_buses: usize,
    with_devices: bool,
) -> NetworkModel {
    use crate::network::{Branch, Bus, BusKind, CapacitorBank, DgKind, DgUnit, TransformerDevice};
    assert!(n_buses >= 2, "need a slack and one load bus");
    let buses = (1..=n_buses as u32)
        .map(|id| Bus {
            id,
            kind: if id == 1 {
                BusKind::Slack
            } else {
                BusKind::Load
            },
            p_load_kw: if id == 1 {
                0.0
            } else {
                rng.random_range(0.0..400.0)
            },
            q_load_kvar: if id == 1 {
                0.0
            } else {
                rng.random_range(0.0..250.0)
            },
        })
        .collect();
    let branches = (2..=n_buses as u32)
        .map(|to| Branch {
            id: to - 1,
            from_bus: if to == 2 { 1 } else { rng.random_range(1..to) },
            to_bus: to,
            r_ohm: rng.random_range(0.05..1.0),
            x_ohm: rng.random_range(0.02..0.8),
            i_max_a: crate::network::DEFAULT_AMPACITY_A,
        })
        .collect();
    let mut net = NetworkModel {
        name: format!("random-{n_buses}"),
        base_kv: 12.66,
        base_mva: 10.0,
        v_min_pu: 0.9,
        v_max_pu: 1.1,
        buses,
        branches,
        transformer: None,
        capacitor_banks: Vec::new(),
        dg_units: Vec::new(),
    };
    if with_devices {
        net.transformer = Some(TransformerDevice {
            at_branch: 1,
            tap_min: -8,
            tap_max: 8,
            tap_step_frac: 0.0125,
        });
        net.capacitor_banks.push(CapacitorBank {
            at_bus: rng.random_range(2..=n_buses as u32),
            n_steps: 5,
            kvar_per_step: 50.0,
        });
        net.dg_units.push(DgUnit {
            at_bus: rng.random_range(2..=n_buses as u32),
            kind: DgKind::Pv,
            s_kva: 300.0,
            p_kw: 150.0,
        });
    }
    net
}

/// A random in-bounds control setting and DG active output for `net`.
pub fn random_operating_point<R: rand::Rng + ?Sized>(
    rng: &mut R,
    net: &NetworkModel,
) -> (ControlVector, Vec<f64>) {
    let dg_p: Vec<f64> = net
        .dg_units
        .iter()
        .map(|dg| rng.random_range(0.0..dg.s_kva * 0.8))
        .collect();
    let controls = ControlVector {
        tap: net
            .transformer
            .as_ref()
            .map_or(0, |t| rng.random_range(t.tap_min..=t.tap_max)),
        cb_steps: net
            .capacitor_banks
            .iter()
            .map(|cb| rng.random_range(0..=cb.n_steps as i32))
            .collect(),
        dg_q_kvar: net
            .dg_units
            .iter()
            .zip(&dg_p)
            .map(|(dg, &p)| {
                let cap = dg.q_capability_kvar(p);
                rng.random_range(-cap..=cap)
            })
            .collect(),
    };
    (controls, dg_p)
}

/// One-hidden-layer tanh network with random weights, a stand-in for a
/// trained nonlinear predictor.
#[derive(Debug, Clone)]
pub struct RandomMlp {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl RandomMlp {
    pub fn new<R: rand::Rng + ?Sized>(rng: &mut R, inputs: usize, hidden: usize) -> Self {
        let mut u = || rng.random_range(-1.0..1.0);
        Self {
            w1: (0..hidden)
                .map(|_| (0..inputs).map(|_| u()).collect())
                .collect(),
            b1: (0..hidden).map(|_| u()).collect(),
            w2: (0..hidden).map(|_| u()).collect(),
            b2: u(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.w1
            .iter()
            .zip(&self.b1)
            .zip(&self.w2)
            .map(|((row, b), w)| {
                w * (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b).tanh()
            })
            .sum::<f64>()
            + self.b2
    }
}
