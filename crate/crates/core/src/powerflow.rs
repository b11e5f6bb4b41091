//! Backward-forward sweep power flow for radial feeders.
//!
//! Loads, capacitor and DG injections are constant-PQ. The feeder-head
//! transformer is an ideal ratio on the sending end of its branch and is
//! lossless; the series impedance of that branch sits on the secondary side.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{BusId, NetworkModel, Topology};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100;

/// One operating point. Per-bus vectors follow [`NetworkModel::load_bus_ids`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadScenario {
    pub p_kw: Vec<f64>,
    pub q_kvar: Vec<f64>,
    pub dg_p_kw: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl LoadScenario {
    /// The network's own base loads and DG outputs.
    pub fn base(net: &NetworkModel) -> Self {
        Self::scaled(net, 1.0)
    }

    pub fn scaled(net: &NetworkModel, factor: f64) -> Self {
        let idx = net.load_bus_indices();
        Self {
            p_kw: idx
                .iter()
                .map(|&i| net.buses[i].p_load_kw * factor)
                .collect(),
            q_kvar: idx
                .iter()
                .map(|&i| net.buses[i].q_load_kvar * factor)
                .collect(),
            dg_p_kw: net.dg_p_kw(),
            seed: 0,
        }
    }

    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        let n = net.buses.len() - 1;
        for (what, len) in [
            ("scenario p_kw", self.p_kw.len()),
            ("scenario q_kvar", self.q_kvar.len()),
        ] {
            if len != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if self.dg_p_kw.len() != net.dg_units.len() {
            return Err(Error::Dimension {
                what: "scenario dg_p_kw",
                expected: net.dg_units.len(),
                found: self.dg_p_kw.len(),
            });
        }
        if self
            .p_kw
            .iter()
            .chain(&self.q_kvar)
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidInput {
                what: "scenario loads",
                reason: "loads must be finite and non-negative".into(),
            });
        }
        for (dg, &p) in net.dg_units.iter().zip(&self.dg_p_kw) {
            if !(0.0..=dg.s_kva).contains(&p) {
                return Err(Error::InvalidInput {
                    what: "scenario dg_p_kw",
                    reason: format!("{p} kW outside [0, {}] at bus {}", dg.s_kva, dg.at_bus),
                });
            }
        }
        Ok(())
    }

    pub fn total_load_kw(&self) -> f64 {
        self.p_kw.iter().sum()
    }
}

/// One setting of every control: tap position, capacitor steps, DG reactive
/// outputs (kvar, positive = injection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub tap: i32,
    pub cb_steps: Vec<i32>,
    pub dg_q_kvar: Vec<f64>,
}

impl ControlVector {
    pub fn zeros(net: &NetworkModel) -> Self {
        Self {
            tap: 0,
            cb_steps: vec![0; net.capacitor_banks.len()],
            dg_q_kvar: vec![0.0; net.dg_units.len()],
        }
    }

    /// Flattened in target order: taps, bank steps, DG kvar. A network
    /// without a transformer contributes no tap entry.
    pub fn to_vec(&self, net: &NetworkModel) -> Vec<f64> {
        let mut v = Vec::with_capacity(net.n_controls());
        if net.transformer.is_some() {
            v.push(f64::from(self.tap));
        }
        v.extend(self.cb_steps.iter().map(|&s| f64::from(s)));
        v.extend_from_slice(&self.dg_q_kvar);
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec) for values that are already integral
    /// where required. Non-integral discrete entries are rounded.
    pub fn from_slice(net: &NetworkModel, y: &[f64]) -> Result<Self> {
        if y.len() != net.n_controls() {
            return Err(Error::Dimension {
                what: "control vector",
                expected: net.n_controls(),
                found: y.len(),
            });
        }
        let nt = net.n_transformers();
        let nc = net.capacitor_banks.len();
        Ok(Self {
            tap: if nt == 1 { y[0].round() as i32 } else { 0 },
            cb_steps: y[nt..nt + nc].iter().map(|v| v.round() as i32).collect(),
            dg_q_kvar: y[nt + nc..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowResult {
    pub bus_ids: Vec<BusId>,
    pub branch_ids: Vec<u32>,
    pub v_pu: Vec<f64>,
    pub theta_rad: Vec<f64>,
    /// Branch current magnitude on the branch impedance (secondary side for
    /// the transformer branch).
    pub i_a: Vec<f64>,
    pub branch_loss_kw: Vec<f64>,
    pub loss_kw: f64,
    pub du_pu: f64,
    pub slack_p_kw: f64,
    pub slack_q_kvar: f64,
    /// Voltage ratio applied at the sending end of each branch (1 except at the transformer).
    pub sending_ratio: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl PowerFlowResult {
    pub fn v_min(&self) -> f64 {
        self.v_pu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn v_max(&self) -> f64 {
        self.v_pu.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Precomputed sweep data for repeated solves on one network.
#[derive(Debug, Clone)]
pub struct SweepSolver<'a> {
    net: &'a NetworkModel,
    topo: Topology,
    z_pu: Vec<Complex64>,
    load_bus: Vec<usize>,
    cb_bus: Vec<usize>,
    dg_bus: Vec<usize>,
    tx_branch: Option<usize>,
    s_base_kva: f64,
    i_base_a: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl<'a> SweepSolver<'a> {
    pub fn new(net: &'a NetworkModel) -> Result<Self> {
        let topo = net.validate()?;
        let z_base = net.base_kv * net.base_kv / net.base_mva;
        let z_pu = net
            .branches
            .iter()
            .map(|b| Complex64::new(b.r_ohm / z_base, b.x_ohm / z_base))
            .collect();
        let index = net.bus_index_map();
        let tx_branch = net
            .transformer
            .as_ref()
            .and_then(|tx| net.branches.iter().position(|b| b.id == tx.at_branch));
        Ok(Self {
            net,
            topo,
            z_pu,
            load_bus: net.load_bus_indices(),
            cb_bus: net
                .capacitor_banks
                .iter()
                .map(|c| index[&c.at_bus])
                .collect(),
            dg_bus: net.dg_units.iter().map(|d| index[&d.at_bus]).collect(),
            tx_branch,
            s_base_kva: net.base_mva * 1000.0,
            i_base_a: net.base_mva * 1e6 / (3f64.sqrt() * net.base_kv * 1e3),
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        })
    }

    pub fn network(&self) -> &NetworkModel {
        self.net
    }

    /// Net complex power drawn at every bus, in p.u.
    fn bus_demand(&self, scenario: &LoadScenario, controls: &ControlVector) -> Vec<Complex64> {
        let mut s = vec![Complex64::new(0.0, 0.0); self.net.buses.len()];
        for (k, &b) in self.load_bus.iter().enumerate() {
            s[b] += Complex64::new(scenario.p_kw[k], scenario.q_kvar[k]);
        }
        for ((cb, &b), &step) in self
            .net
            .capacitor_banks
            .iter()
            .zip(&self.cb_bus)
            .zip(&controls.cb_steps)
        {
            s[b].im -= f64::from(step) * cb.kvar_per_step;
        }
        for ((&b, &p), &q) in self
            .dg_bus
            .iter()
            .zip(&scenario.dg_p_kw)
            .zip(&controls.dg_q_kvar)
        {
            s[b] -= Complex64::new(p, q);
        }
        for v in &mut s {
            *v /= self.s_base_kva;
        }
        s
    }

    fn sending_ratio(&self, controls: &ControlVector) -> Vec<f64> {
        let mut ratio = vec![1.0; self.net.branches.len()];
        if let (Some(k), Some(tx)) = (self.tx_branch, &self.net.transformer) {
            ratio[k] = tx.ratio(controls.tap);
        }
        ratio
    }

    pub fn solve(
        &self,
        scenario: &LoadScenario,
        controls: &ControlVector,
    ) -> Result<PowerFlowResult> {
        scenario.validate(self.net)?;
        self.net.check_control_dims(controls)?;
        Ok(self.solve_unchecked(scenario, controls))
    }

    /// Solve without dimension checks; callers guarantee shapes.
    pub(crate) fn solve_unchecked(
        &self,
        scenario: &LoadScenario,
        controls: &ControlVector,
    ) -> PowerFlowResult {
        let m = self.net.buses.len();
        let nb = self.net.branches.len();
        let demand = self.bus_demand(scenario, controls);
        let ratio = self.sending_ratio(controls);
        let order = &self.topo.order;
        let parent = &self.topo.parent;

        let one = Complex64::new(1.0, 0.0);
        let mut v = vec![one; m];
        // Flat start scaled by the source-side ratio along each path.
        for &i in &order[1..] {
            let (p, k) = parent[i].expect("non-root bus has a parent");
            v[i] = v[p] * ratio[k];
        }
        let mut j_bus = vec![Complex64::new(0.0, 0.0); m];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.max_iter {
            iterations += 1;
            // backward: injected load currents accumulated towards the root
            for &i in order.iter() {
                j_bus[i] = (demand[i] / v[i]).conj();
            }
            for &i in order[1..].iter().rev() {
                let (p, _) = parent[i].unwrap();
                let ji = j_bus[i];
                j_bus[p] += ji;
            }
            // forward: voltage drops from the root outwards
            let mut max_dv: f64 = 0.0;
            for &i in &order[1..] {
                let (p, k) = parent[i].unwrap();
                let new = v[p] * ratio[k] - self.z_pu[k] * j_bus[i];
                max_dv = max_dv.max((new - v[i]).norm());
                v[i] = new;
            }
            if !max_dv.is_finite() {
                break;
            }
            if max_dv < self.tolerance {
                converged = true;
                break;
            }
        }

        // Final currents consistent with the last voltages.
        for &i in order.iter() {
            j_bus[i] = (demand[i] / v[i]).conj();
        }
        for &i in order[1..].iter().rev() {
            let (p, _) = parent[i].unwrap();
            let ji = j_bus[i];
            j_bus[p] += ji;
        }

        let mut i_a = vec![0.0; nb];
        let mut branch_loss_kw = vec![0.0; nb];
        let mut slack = Complex64::new(0.0, 0.0);
        let root = order[0];
        for &i in &order[1..] {
            let (p, k) = parent[i].unwrap();
            let cur = j_bus[i];
            i_a[k] = cur.norm() * self.i_base_a;
            branch_loss_kw[k] = self.z_pu[k].re * cur.norm_sqr() * self.s_base_kva;
            if p == root {
                slack += v[p] * ratio[k] * cur.conj();
            }
        }
        slack += demand[root];
        let loss_kw = branch_loss_kw.iter().sum();
        let v_pu: Vec<f64> = v.iter().map(|c| c.norm()).collect();
        let du_pu = deviation(&v_pu);
        PowerFlowResult {
            bus_ids: self.net.buses.iter().map(|b| b.id).collect(),
            branch_ids: self.net.branches.iter().map(|b| b.id).collect(),
            theta_rad: v.iter().map(|c| c.arg()).collect(),
            v_pu,
            i_a,
            branch_loss_kw,
            loss_kw,
            du_pu,
            slack_p_kw: slack.re * self.s_base_kva,
            slack_q_kvar: slack.im * self.s_base_kva,
            sending_ratio: ratio,
            converged,
            iterations,
        }
    }
}

fn deviation(v_pu: &[f64]) -> f64 {
    v_pu.iter().map(|v| (1.0 - v).abs()).sum::<f64>() / v_pu.len() as f64
}

pub fn solve_power_flow(
    network: &NetworkModel,
    scenario: &LoadScenario,
    controls: &ControlVector,
) -> Result<PowerFlowResult> {
    SweepSolver::new(network)?.solve(scenario, controls)
}

/// Mean absolute deviation of bus voltages from the 1.0 p.u. base, over all buses.
pub fn voltage_deviation(result: &PowerFlowResult, _network: &NetworkModel) -> f64 {
    deviation(&result.v_pu)
}

/// Feeder losses from the node-pair conductance form
/// `G (Ui^2 + Uj^2 - 2 Ui Uj cos(θi - θj))`, in kW.
pub fn power_loss(result: &PowerFlowResult, network: &NetworkModel) -> f64 {
    let z_base = network.base_kv * network.base_kv / network.base_mva;
    let index = network.bus_index_map();
    network
        .branches
        .iter()
        .zip(&result.sending_ratio)
        .map(|(br, &a)| {
            let (r, x) = (br.r_ohm / z_base, br.x_ohm / z_base);
            let g = r / (r * r + x * x);
            let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
            let ui = result.v_pu[f] * a;
            let uj = result.v_pu[t];
            let dtheta = result.theta_rad[f] - result.theta_rad[t];
            g * (ui * ui + uj * uj - 2.0 * ui * uj * dtheta.cos())
        })
        .sum::<f64>()
        * network.base_mva
        * 1000.0
}
