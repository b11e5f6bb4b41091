//! Radial feeder model: buses, branches and the controllable devices
//! (feeder-head transformer, switched capacitor banks, inverter-based DG).
//!
//! A [`NetworkModel`] is plain data that round-trips through JSON. Every
//! constructor runs [`NetworkModel::validate`], which also derives the
//! [`Topology`] used by the power-flow solver.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::powerflow::ControlVector;

pub type BusId = u32;

/// Ampacity used when a branch record does not carry one.
pub const DEFAULT_AMPACITY_A: f64 = 400.0;

const IEEE33_JSON: &str = include_str!("../data/ieee33.json");
const IEEE33_CSV: &str = include_str!("../data/ieee33_branches.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub p_load_kw: f64,
    pub q_load_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// 1-based; assigned from file order when absent.
    #[serde(default)]
    pub id: u32,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r_ohm: f64,
    pub x_ohm: f64,
    #[serde(default = "default_ampacity")]
    pub i_max_a: f64,
}

fn default_ampacity() -> f64 {
    DEFAULT_AMPACITY_A
}

/// On-load tap changer at the feeder head, modelled as an ideal ratio on the
/// sending end of `at_branch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerDevice {
    pub at_branch: u32,
    pub tap_min: i32,
    pub tap_max: i32,
    pub tap_step_frac: f64,
}

impl TransformerDevice {
    pub fn ratio(&self, tap: i32) -> f64 {
        1.0 + f64::from(tap) * self.tap_step_frac
    }

    pub fn tap_count(&self) -> usize {
        (self.tap_max - self.tap_min + 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorBank {
    pub at_bus: BusId,
    pub n_steps: u32,
    pub kvar_per_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgKind {
    Wind,
    Pv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgUnit {
    pub at_bus: BusId,
    pub kind: DgKind,
    pub s_kva: f64,
    /// Active output of the operating point the file describes.
    #[serde(default)]
    pub p_kw: f64,
}

impl DgUnit {
    /// Reactive capability `sqrt(S^2 - P^2)` at active output `p_kw`.
    pub fn q_capability_kvar(&self, p_kw: f64) -> f64 {
        (self.s_kva * self.s_kva - p_kw * p_kw).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(default)]
    pub name: String,
    pub base_kv: f64,
    pub base_mva: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformer: Option<TransformerDevice>,
    #[serde(default)]
    pub capacitor_banks: Vec<CapacitorBank>,
    #[serde(default)]
    pub dg_units: Vec<DgUnit>,
}

/// Breadth-first spanning structure of a validated radial network.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Bus indices in BFS order from the slack; `order[0]` is the slack.
    pub order: Vec<usize>,
    /// For every bus index, `(parent bus index, branch index)`; `None` at the slack.
    pub parent: Vec<Option<(usize, usize)>>,
    /// Whether branch `k` points from parent to child as stored.
    pub branch_forward: Vec<bool>,
}

/// A breached operating or device bound, with the size of the breach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnderVoltage {
        bus: BusId,
        v_pu: f64,
        limit_pu: f64,
    },
    OverVoltage {
        bus: BusId,
        v_pu: f64,
        limit_pu: f64,
    },
    Overcurrent {
        branch: u32,
        i_a: f64,
        limit_a: f64,
    },
    Tap {
        tap: i32,
        min: i32,
        max: i32,
    },
    CapacitorStep {
        bank: usize,
        at_bus: BusId,
        step: i32,
        max: u32,
    },
    DgCapability {
        unit: usize,
        at_bus: BusId,
        q_kvar: f64,
        limit_kvar: f64,
    },
    NotConverged {
        iterations: usize,
    },
}

impl Violation {
    /// How far past the bound, in the bound's own unit.
    pub fn magnitude(&self) -> f64 {
        match *self {
            Violation::UnderVoltage { v_pu, limit_pu, .. } => limit_pu - v_pu,
            Violation::OverVoltage { v_pu, limit_pu, .. } => v_pu - limit_pu,
            Violation::Overcurrent { i_a, limit_a, .. } => i_a - limit_a,
            Violation::Tap { tap, min, max } => f64::from((min - tap).max(tap - max)),
            Violation::CapacitorStep { step, max, .. } => f64::from((-step).max(step - max as i32)),
            Violation::DgCapability {
                q_kvar, limit_kvar, ..
            } => q_kvar.abs() - limit_kvar,
            Violation::NotConverged { .. } => f64::INFINITY,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnderVoltage { bus, v_pu, limit_pu } => {
                write!(f, "bus {bus}: voltage {v_pu:.4} p.u. below {limit_pu}")
            }
            Violation::OverVoltage { bus, v_pu, limit_pu } => {
                write!(f, "bus {bus}: voltage {v_pu:.4} p.u. above {limit_pu}")
            }
            Violation::Overcurrent { branch, i_a, limit_a } => {
                write!(f, "branch {branch}: current {i_a:.1} A above {limit_a} A")
            }
            Violation::Tap { tap, min, max } => write!(f, "tap {tap} outside [{min}, {max}]"),
            Violation::CapacitorStep {
                bank,
                at_bus,
                step,
                max,
            } => write!(f, "capacitor bank {bank} (bus {at_bus}): step {step} outside [0, {max}]"),
            Violation::DgCapability {
                unit,
                at_bus,
                q_kvar,
                limit_kvar,
            } => write!(
                f,
                "DG {unit} (bus {at_bus}): |Q| = {:.2} kvar exceeds capability {limit_kvar:.2} kvar",
                q_kvar.abs()
            ),
            Violation::NotConverged { iterations } => {
                write!(f, "power flow did not converge in {iterations} iterations")
            }
        }
    }
}

impl NetworkModel {
    /// The bundled 33-bus Baran-Wu feeder with its device layout.
    pub fn ieee33() -> Self {
        Self::from_json_str(IEEE33_JSON).expect("bundled ieee33.json is valid")
    }

    /// The bundled Baran-Wu branch table in CSV form.
    pub fn ieee33_branch_csv() -> &'static str {
        IEEE33_CSV
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let mut net: NetworkModel =
            serde_json::from_str(json).map_err(|e| Error::parse("network json", e))?;
        net.assign_branch_ids();
        net.validate()?;
        Ok(net)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    /// Builds a device-free network from a Baran-Wu style branch table
    /// (`from,to,r_ohm,x_ohm,p_kw,q_kvar`), attaching the load columns to the
    /// `to` bus. Bus 1 becomes the slack.
    pub fn from_branch_csv<R: Read>(
        reader: R,
        base_kv: f64,
        base_mva: f64,
        v_band: (f64, f64),
    ) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            from: BusId,
            to: BusId,
            r_ohm: f64,
            x_ohm: f64,
            p_kw: f64,
            q_kvar: f64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut branches = Vec::new();
        let mut loads: HashMap<BusId, (f64, f64)> = HashMap::new();
        let mut ids: Vec<BusId> = vec![1];
        for (k, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::parse("branch csv", e))?;
            branches.push(Branch {
                id: k as u32 + 1,
                from_bus: row.from,
                to_bus: row.to,
                r_ohm: row.r_ohm,
                x_ohm: row.x_ohm,
                i_max_a: DEFAULT_AMPACITY_A,
            });
            let entry = loads.entry(row.to).or_insert((0.0, 0.0));
            entry.0 += row.p_kw;
            entry.1 += row.q_kvar;
            ids.extend([row.from, row.to]);
        }
        ids.sort_unstable();
        ids.dedup();
        let buses = ids
            .into_iter()
            .map(|id| {
                let (p, q) = loads.get(&id).copied().unwrap_or((0.0, 0.0));
                Bus {
                    id,
                    kind: if id == 1 {
                        BusKind::Slack
                    } else {
                        BusKind::Load
                    },
                    p_load_kw: p,
                    q_load_kvar: q,
                }
            })
            .collect();
        let net = NetworkModel {
            name: String::new(),
            base_kv,
            base_mva,
            v_min_pu: v_band.0,
            v_max_pu: v_band.1,
            buses,
            branches,
            transformer: None,
            capacitor_banks: Vec::new(),
            dg_units: Vec::new(),
        };
        net.validate()?;
        Ok(net)
    }

    fn assign_branch_ids(&mut self) {
        for (k, br) in self.branches.iter_mut().enumerate() {
            if br.id == 0 {
                br.id = k as u32 + 1;
            }
        }
    }

    /// Checks every structural invariant and returns the derived topology.
    pub fn validate(&self) -> Result<Topology> {
        if !(self.v_min_pu < self.v_max_pu) || self.v_min_pu <= 0.0 {
            return Err(Error::VoltageBand {
                min: self.v_min_pu,
                max: self.v_max_pu,
            });
        }
        if !(self.base_kv > 0.0 && self.base_mva > 0.0) {
            return Err(Error::InvalidInput {
                what: "base values",
                reason: format!("base_kv = {}, base_mva = {}", self.base_kv, self.base_mva),
            });
        }
        let mut seen = HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(Error::DuplicateBus(bus.id));
            }
            if !(bus.p_load_kw >= 0.0 && bus.q_load_kvar >= 0.0) {
                return Err(Error::InvalidBus {
                    id: bus.id,
                    reason: "base loads must be non-negative".into(),
                });
            }
        }
        let slacks: Vec<BusId> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.as_slice() {
            [] => return Err(Error::MissingSlack),
            [1] => {}
            _ => return Err(Error::BadSlack(slacks)),
        }

        let index = self.bus_index_map();
        let mut branch_ids = HashSet::new();
        for br in &self.branches {
            if !branch_ids.insert(br.id) {
                return Err(Error::InvalidBranch {
                    id: br.id,
                    reason: "duplicate branch id".into(),
                });
            }
            for bus in [br.from_bus, br.to_bus] {
                if !index.contains_key(&bus) {
                    return Err(Error::UnknownBus { branch: br.id, bus });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(Error::Cycle {
                    branch: br.id,
                    buses: vec![br.from_bus],
                });
            }
            if !(br.r_ohm >= 0.0 && br.x_ohm >= 0.0) || (br.r_ohm == 0.0 && br.x_ohm == 0.0) {
                return Err(Error::InvalidBranch {
                    id: br.id,
                    reason: format!("impedance r = {}, x = {} is invalid", br.r_ohm, br.x_ohm),
                });
            }
            if !(br.i_max_a > 0.0) {
                return Err(Error::InvalidBranch {
                    id: br.id,
                    reason: "ampacity must be positive".into(),
                });
            }
        }

        let topo = self.spanning_tree(&index)?;
        self.validate_devices(&index)?;
        Ok(topo)
    }

    fn spanning_tree(&self, index: &HashMap<BusId, usize>) -> Result<Topology> {
        let m = self.buses.len();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        for (k, br) in self.branches.iter().enumerate() {
            let (a, b) = (index[&br.from_bus], index[&br.to_bus]);
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
        let root = index[&1];
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; m];
        let mut visited = vec![false; m];
        let mut tree_edge = vec![false; self.branches.len()];
        let mut order = Vec::with_capacity(m);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, k) in &adj[u] {
                if tree_edge[k] {
                    continue;
                }
                if visited[v] {
                    return Err(Error::Cycle {
                        branch: self.branches[k].id,
                        buses: self.cycle_through(&parent, u, v),
                    });
                }
                visited[v] = true;
                tree_edge[k] = true;
                parent[v] = Some((u, k));
                queue.push_back(v);
            }
        }
        if order.len() < m {
            let mut unreachable: Vec<BusId> = (0..m)
                .filter(|&i| !visited[i])
                .map(|i| self.buses[i].id)
                .collect();
            unreachable.sort_unstable();
            return Err(Error::Disconnected(unreachable));
        }
        let branch_forward = self
            .branches
            .iter()
            .map(|br| {
                let child = index[&br.to_bus];
                parent[child].map(|(p, _)| p) == Some(index[&br.from_bus])
            })
            .collect();
        Ok(Topology {
            order,
            parent,
            branch_forward,
        })
    }

    /// Buses on the cycle formed by the tree paths to `u` and `v` plus the edge `u`–`v`.
    fn cycle_through(&self, parent: &[Option<(usize, usize)>], u: usize, v: usize) -> Vec<BusId> {
        let path_to_root = |mut x: usize| {
            let mut path = vec![x];
            while let Some((p, _)) = parent[x] {
                path.push(p);
                x = p;
            }
            path
        };
        let pu = path_to_root(u);
        let pv = path_to_root(v);
        let on_pv: HashSet<usize> = pv.iter().copied().collect();
        let lca_pos = pu
            .iter()
            .position(|x| on_pv.contains(x))
            .unwrap_or(pu.len() - 1);
        let lca = pu[lca_pos];
        let mut cycle: Vec<usize> = pu[..=lca_pos].to_vec();
        let lca_in_v = pv.iter().position(|&x| x == lca).unwrap_or(pv.len() - 1);
        cycle.extend(pv[..lca_in_v].iter().rev());
        cycle.into_iter().map(|i| self.buses[i].id).collect()
    }

    fn validate_devices(&self, index: &HashMap<BusId, usize>) -> Result<()> {
        if let Some(tx) = &self.transformer {
            if !self.branches.iter().any(|b| b.id == tx.at_branch) {
                return Err(Error::DanglingDevice {
                    device: "transformer".into(),
                    reference: tx.at_branch,
                });
            }
            if !(tx.tap_min <= 0 && 0 <= tx.tap_max) || !(tx.tap_step_frac > 0.0) {
                return Err(Error::InvalidDevice {
                    device: "transformer".into(),
                    reason: format!(
                        "taps [{}, {}] must bracket 0 with a positive step",
                        tx.tap_min, tx.tap_max
                    ),
                });
            }
            if tx.ratio(tx.tap_min) <= 0.0 {
                return Err(Error::InvalidDevice {
                    device: "transformer".into(),
                    reason: "lowest tap gives a non-positive ratio".into(),
                });
            }
        }
        for (k, cb) in self.capacitor_banks.iter().enumerate() {
            let device = format!("capacitor bank {k}");
            if !index.contains_key(&cb.at_bus) || cb.at_bus == 1 {
                return Err(Error::DanglingDevice {
                    device,
                    reference: cb.at_bus,
                });
            }
            if cb.n_steps < 1 || !(cb.kvar_per_step > 0.0) {
                return Err(Error::InvalidDevice {
                    device,
                    reason: "needs at least one step of positive size".into(),
                });
            }
        }
        for (k, dg) in self.dg_units.iter().enumerate() {
            let device = format!("DG unit {k}");
            if !index.contains_key(&dg.at_bus) || dg.at_bus == 1 {
                return Err(Error::DanglingDevice {
                    device,
                    reference: dg.at_bus,
                });
            }
            if !(dg.s_kva > 0.0) || !(0.0..=dg.s_kva).contains(&dg.p_kw) {
                return Err(Error::InvalidDevice {
                    device,
                    reason: format!("p_kw = {} must lie in [0, s_kva = {}]", dg.p_kw, dg.s_kva),
                });
            }
        }
        Ok(())
    }

    pub fn bus_index_map(&self) -> HashMap<BusId, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Non-slack bus indices ordered by bus id; this is the ordering of every
    /// per-bus scenario vector and of the regressor features.
    pub fn load_bus_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.buses.len())
            .filter(|&i| self.buses[i].kind == BusKind::Load)
            .collect();
        idx.sort_by_key(|&i| self.buses[i].id);
        idx
    }

    pub fn load_bus_ids(&self) -> Vec<BusId> {
        self.load_bus_indices()
            .into_iter()
            .map(|i| self.buses[i].id)
            .collect()
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load_kw, q + b.q_load_kvar))
    }

    pub fn n_transformers(&self) -> usize {
        usize::from(self.transformer.is_some())
    }

    /// Number of control variables: transformers + capacitor banks + DG units.
    pub fn n_controls(&self) -> usize {
        self.n_transformers() + self.capacitor_banks.len() + self.dg_units.len()
    }

    pub fn dg_p_kw(&self) -> Vec<f64> {
        self.dg_units.iter().map(|d| d.p_kw).collect()
    }

    /// Device-bound check of a control setting; `dg_p_kw` is the active output
    /// of each DG unit at the operating point.
    pub fn validate_controls(
        &self,
        controls: &ControlVector,
        dg_p_kw: &[f64],
    ) -> Result<Vec<Violation>> {
        self.check_control_dims(controls)?;
        if dg_p_kw.len() != self.dg_units.len() {
            return Err(Error::Dimension {
                what: "DG active outputs",
                expected: self.dg_units.len(),
                found: dg_p_kw.len(),
            });
        }
        let mut out = Vec::new();
        match &self.transformer {
            Some(tx) => {
                if controls.tap < tx.tap_min || controls.tap > tx.tap_max {
                    out.push(Violation::Tap {
                        tap: controls.tap,
                        min: tx.tap_min,
                        max: tx.tap_max,
                    });
                }
            }
            None if controls.tap != 0 => out.push(Violation::Tap {
                tap: controls.tap,
                min: 0,
                max: 0,
            }),
            None => {}
        }
        for (k, (cb, &step)) in self
            .capacitor_banks
            .iter()
            .zip(&controls.cb_steps)
            .enumerate()
        {
            if step < 0 || step > cb.n_steps as i32 {
                out.push(Violation::CapacitorStep {
                    bank: k,
                    at_bus: cb.at_bus,
                    step,
                    max: cb.n_steps,
                });
            }
        }
        for (k, ((dg, &q), &p)) in self
            .dg_units
            .iter()
            .zip(&controls.dg_q_kvar)
            .zip(dg_p_kw)
            .enumerate()
        {
            let limit = dg.q_capability_kvar(p);
            if !q.is_finite() || q.abs() > limit {
                out.push(Violation::DgCapability {
                    unit: k,
                    at_bus: dg.at_bus,
                    q_kvar: q,
                    limit_kvar: limit,
                });
            }
        }
        Ok(out)
    }

    pub(crate) fn check_control_dims(&self, controls: &ControlVector) -> Result<()> {
        if controls.cb_steps.len() != self.capacitor_banks.len() {
            return Err(Error::Dimension {
                what: "capacitor steps",
                expected: self.capacitor_banks.len(),
                found: controls.cb_steps.len(),
            });
        }
        if controls.dg_q_kvar.len() != self.dg_units.len() {
            return Err(Error::Dimension {
                what: "DG reactive outputs",
                expected: self.dg_units.len(),
                found: controls.dg_q_kvar.len(),
            });
        }
        Ok(())
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        NetworkModel::from_branch_csv(text.as_bytes(), 12.66, 10.0, (0.9, 1.1))
    } else {
        NetworkModel::from_json_str(&text)
    }
}

pub fn save_network(net: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_json_string()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> NetworkModel {
        NetworkModel::from_json_str(
            r#"{
              "base_kv": 12.66, "base_mva": 10.0, "v_min_pu": 0.9, "v_max_pu": 1.1,
              "buses": [
                {"id": 1, "kind": "slack", "p_load_kw": 0, "q_load_kvar": 0},
                {"id": 2, "kind": "load", "p_load_kw": 1000, "q_load_kvar": 500}
              ],
              "branches": [{"from_bus": 1, "to_bus": 2, "r_ohm": 0.1, "x_ohm": 0.1}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn ieee33_matches_baran_wu_totals() {
        let net = NetworkModel::ieee33();
        assert_eq!(net.buses.len(), 33);
        assert_eq!(net.branches.len(), 32);
        let (p, q) = net.total_load();
        assert!((p - 3715.0).abs() < 1e-9);
        assert!((q - 2300.0).abs() < 1e-9);
        assert_eq!(net.n_controls(), 6);
        assert_eq!(net.transformer.as_ref().unwrap().tap_count(), 17);
    }

    #[test]
    fn minimal_two_bus_is_valid() {
        let net = two_bus();
        assert_eq!(net.branches[0].id, 1);
        assert_eq!(net.branches[0].i_max_a, DEFAULT_AMPACITY_A);
        assert_eq!(net.n_controls(), 0);
    }

    #[test]
    fn cycle_is_named() {
        let mut net = NetworkModel::ieee33();
        net.branches.push(Branch {
            id: 33,
            from_bus: 18,
            to_bus: 33,
            r_ohm: 0.5,
            x_ohm: 0.5,
            i_max_a: 400.0,
        });
        let text = serde_json::to_string(&net).unwrap();
        match NetworkModel::from_json_str(&text) {
            Err(Error::Cycle { buses, .. }) => {
                assert!(buses.contains(&18) && buses.contains(&33), "{buses:?}");
                assert!(buses.contains(&6) && !buses.contains(&2), "{buses:?}");
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn structural_errors_are_distinct() {
        let base = NetworkModel::ieee33();

        let mut net = base.clone();
        net.buses[0].kind = BusKind::Load;
        assert!(matches!(net.validate(), Err(Error::MissingSlack)));

        let mut net = base.clone();
        net.branches.retain(|b| b.id != 17);
        assert!(matches!(net.validate(), Err(Error::Disconnected(ids)) if ids == vec![18]));

        let mut net = base.clone();
        net.capacitor_banks[0].at_bus = 99;
        assert!(matches!(
            net.validate(),
            Err(Error::DanglingDevice { reference: 99, .. })
        ));

        let mut net = base.clone();
        net.transformer.as_mut().unwrap().at_branch = 77;
        assert!(matches!(
            net.validate(),
            Err(Error::DanglingDevice { reference: 77, .. })
        ));

        let mut net = base;
        net.branches[3].to_bus = 40;
        assert!(matches!(
            net.validate(),
            Err(Error::UnknownBus { bus: 40, .. })
        ));
    }

    #[test]
    fn csv_import_matches_bundled_json() {
        let from_csv = NetworkModel::from_branch_csv(
            NetworkModel::ieee33_branch_csv().as_bytes(),
            12.66,
            10.0,
            (0.9, 1.1),
        )
        .unwrap();
        let bundled = NetworkModel::ieee33();
        assert_eq!(from_csv.buses, bundled.buses);
        assert_eq!(from_csv.branches, bundled.branches);
    }

    #[test]
    fn zero_controls_are_interior() {
        let net = NetworkModel::ieee33();
        let v = net
            .validate_controls(&ControlVector::zeros(&net), &net.dg_p_kw())
            .unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn tap_nine_is_one_violation() {
        let net = NetworkModel::ieee33();
        let mut c = ControlVector::zeros(&net);
        c.tap = 9;
        let v = net.validate_controls(&c, &net.dg_p_kw()).unwrap();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Tap { tap: 9, max: 8, .. }));
        assert_eq!(v[0].magnitude(), 1.0);
    }

    #[test]
    fn dg_at_full_active_output_has_no_reactive_room() {
        let net = NetworkModel::ieee33();
        let mut c = ControlVector::zeros(&net);
        c.dg_q_kvar[0] = 100.0;
        let v = net.validate_controls(&c, &[500.0, 0.0, 0.0]).unwrap();
        assert_eq!(v.len(), 1);
        assert!(
            matches!(v[0], Violation::DgCapability { unit: 0, limit_kvar, .. } if limit_kvar == 0.0)
        );
    }

    #[test]
    fn control_dimension_mismatch() {
        let net = NetworkModel::ieee33();
        let mut c = ControlVector::zeros(&net);
        c.cb_steps.push(1);
        assert!(matches!(
            net.validate_controls(&c, &net.dg_p_kw()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tap_ratio_is_affine() {
        let tx = NetworkModel::ieee33().transformer.unwrap();
        for t1 in tx.tap_min..=tx.tap_max {
            for t2 in tx.tap_min..=tx.tap_max {
                let lhs = tx.ratio(t2) - tx.ratio(t1);
                let rhs = f64::from(t2 - t1) * tx.tap_step_frac;
                assert!((lhs - rhs).abs() < 1e-12);
                if t2 > t1 {
                    assert!(tx.ratio(t2) > tx.ratio(t1));
                }
            }
        }
    }

    #[test]
    fn round_trip_is_identical() {
        let net = NetworkModel::ieee33();
        let again = NetworkModel::from_json_str(&net.to_json_string()).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn radial_traversal_visits_every_bus_once() {
        let net = NetworkModel::ieee33();
        let topo = net.validate().unwrap();
        assert_eq!(net.branches.len(), net.buses.len() - 1);
        let mut seen = topo.order.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), net.buses.len());
        assert!(topo.branch_forward.iter().all(|&f| f));
    }
}
