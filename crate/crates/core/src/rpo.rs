//! Reactive power optimization: objective, operating constraints, and a
//! genetic-algorithm solver with independent seeded restarts.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkModel, Violation};
use crate::powerflow::{ControlVector, LoadScenario, PowerFlowResult, SweepSolver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w_loss: f64,
    pub w_u: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_loss: 0.5,
            w_u: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn new(w_loss: f64, w_u: f64) -> Result<Self> {
        let w = Self { w_loss, w_u };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_loss >= 0.0 && self.w_u >= 0.0) || (self.w_loss + self.w_u - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput {
                what: "objective weights",
                reason: format!(
                    "({}, {}) must be non-negative and sum to 1",
                    self.w_loss, self.w_u
                ),
            });
        }
        Ok(())
    }
}

/// Loss and voltage deviation of one operating state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss_kw: f64,
    pub du_pu: f64,
}

impl From<&PowerFlowResult> for Metrics {
    fn from(r: &PowerFlowResult) -> Self {
        Self {
            loss_kw: r.loss_kw,
            du_pu: r.du_pu,
        }
    }
}

/// Weighted relative improvement in loss and voltage deviation.
pub fn objective(before: Metrics, after: Metrics, weights: ObjectiveWeights) -> Result<f64> {
    if !(before.loss_kw > 0.0) {
        return Err(Error::DegenerateBaseline("baseline loss"));
    }
    if !(before.du_pu > 0.0) {
        return Err(Error::DegenerateBaseline("baseline voltage deviation"));
    }
    Ok(
        weights.w_loss * (before.loss_kw - after.loss_kw) / before.loss_kw
            + weights.w_u * (before.du_pu - after.du_pu) / before.du_pu,
    )
}

/// Voltage band, ampacity and device-bound violations of a solved state.
pub fn check_feasibility(
    network: &NetworkModel,
    result: &PowerFlowResult,
    controls: &ControlVector,
    scenario: &LoadScenario,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if !result.converged {
        out.push(Violation::NotConverged {
            iterations: result.iterations,
        });
    }
    for (&bus, &v) in result.bus_ids.iter().zip(&result.v_pu) {
        if v < network.v_min_pu {
            out.push(Violation::UnderVoltage {
                bus,
                v_pu: v,
                limit_pu: network.v_min_pu,
            });
        } else if v > network.v_max_pu {
            out.push(Violation::OverVoltage {
                bus,
                v_pu: v,
                limit_pu: network.v_max_pu,
            });
        }
    }
    for (br, &i) in network.branches.iter().zip(&result.i_a) {
        if i > br.i_max_a {
            out.push(Violation::Overcurrent {
                branch: br.id,
                i_a: i,
                limit_a: br.i_max_a,
            });
        }
    }
    match network.validate_controls(controls, &scenario.dg_p_kw) {
        Ok(v) => out.extend(v),
        Err(_) => out.push(Violation::Tap {
            tap: controls.tap,
            min: 0,
            max: 0,
        }),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_k: usize,
    pub penalty_per_violation: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 100,
            crossover_rate: 0.8,
            mutation_rate: 0.05,
            tournament_k: 3,
            penalty_per_violation: 10.0,
            restarts: 5,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidInput {
                what: "GA parameters",
                reason,
            })
        };
        if self.population < 2 {
            return bad(format!("population {} < 2", self.population));
        }
        if self.restarts < 1 {
            return bad("restarts must be at least 1".into());
        }
        if self.tournament_k < 1 {
            return bad("tournament size must be at least 1".into());
        }
        for (name, r) in [
            ("crossover", self.crossover_rate),
            ("mutation", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} rate {r} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpoSolution {
    pub controls: ControlVector,
    pub objective_f: f64,
    pub loss_before_kw: f64,
    pub loss_after_kw: f64,
    pub du_before_pu: f64,
    pub du_after_pu: f64,
    pub feasible: bool,
    pub violations: Vec<Violation>,
    /// Best objective of each restart, in restart order.
    #[serde(default)]
    pub restart_objectives: Vec<f64>,
}

impl RpoSolution {
    pub fn before(&self) -> Metrics {
        Metrics {
            loss_kw: self.loss_before_kw,
            du_pu: self.du_before_pu,
        }
    }

    pub fn after(&self) -> Metrics {
        Metrics {
            loss_kw: self.loss_after_kw,
            du_pu: self.du_after_pu,
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    controls: ControlVector,
    after: Metrics,
    objective: f64,
    fitness: f64,
    violations: Vec<Violation>,
}

impl Candidate {
    fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Feasible beats infeasible, then higher fitness, then lower tap, then the
/// lexicographically smaller control vector.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    a.feasible()
        .cmp(&b.feasible())
        .then(a.fitness.total_cmp(&b.fitness))
        .then_with(|| b.controls.tap.cmp(&a.controls.tap))
        .then_with(|| lexicographic(&b.controls, &a.controls))
}

fn lexicographic(a: &ControlVector, b: &ControlVector) -> Ordering {
    a.tap
        .cmp(&b.tap)
        .then_with(|| a.cb_steps.cmp(&b.cb_steps))
        .then_with(|| {
            a.dg_q_kvar
                .iter()
                .zip(&b.dg_q_kvar)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Shared state for scoring control settings of one scenario.
struct Evaluator<'a> {
    solver: SweepSolver<'a>,
    scenario: &'a LoadScenario,
    weights: ObjectiveWeights,
    before: Metrics,
    penalty: f64,
}

impl<'a> Evaluator<'a> {
    fn new(
        network: &'a NetworkModel,
        scenario: &'a LoadScenario,
        weights: ObjectiveWeights,
        penalty: f64,
    ) -> Result<Self> {
        weights.validate()?;
        let solver = SweepSolver::new(network)?;
        let base = solver.solve(scenario, &ControlVector::zeros(network))?;
        if !base.converged {
            return Err(Error::BaselineDiverged {
                iterations: base.iterations,
            });
        }
        let before = Metrics::from(&base);
        // surfaces the degenerate-baseline error before any search
        objective(before, before, weights)?;
        Ok(Self {
            solver,
            scenario,
            weights,
            before,
            penalty,
        })
    }

    fn evaluate(&self, controls: ControlVector) -> Candidate {
        let net = self.solver.network();
        let r = self.solver.solve_unchecked(self.scenario, &controls);
        let violations = check_feasibility(net, &r, &controls, self.scenario);
        let after = Metrics::from(&r);
        let objective = match objective(self.before, after, self.weights) {
            Ok(f) if f.is_finite() => f,
            _ => -1e6,
        };
        let fitness = if violations.is_empty() {
            objective
        } else {
            objective - self.penalty * violations.len() as f64
        };
        Candidate {
            controls,
            after,
            objective,
            fitness,
            violations,
        }
    }

    fn to_solution(&self, best: Candidate, restart_objectives: Vec<f64>) -> RpoSolution {
        RpoSolution {
            objective_f: best.objective,
            loss_before_kw: self.before.loss_kw,
            loss_after_kw: best.after.loss_kw,
            du_before_pu: self.before.du_pu,
            du_after_pu: best.after.du_pu,
            feasible: best.feasible(),
            violations: best.violations,
            controls: best.controls,
            restart_objectives,
        }
    }
}

/// Gene bounds of one scenario.
struct Bounds {
    tap: (i32, i32),
    steps: Vec<i32>,
    q_max: Vec<f64>,
}

impl Bounds {
    fn new(net: &NetworkModel, scenario: &LoadScenario) -> Self {
        Self {
            tap: net
                .transformer
                .as_ref()
                .map_or((0, 0), |t| (t.tap_min, t.tap_max)),
            steps: net
                .capacitor_banks
                .iter()
                .map(|c| c.n_steps as i32)
                .collect(),
            q_max: net
                .dg_units
                .iter()
                .zip(&scenario.dg_p_kw)
                .map(|(d, &p)| d.q_capability_kvar(p))
                .collect(),
        }
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> ControlVector {
        ControlVector {
            tap: rng.random_range(self.tap.0..=self.tap.1),
            cb_steps: self
                .steps
                .iter()
                .map(|&n| rng.random_range(0..=n))
                .collect(),
            dg_q_kvar: self
                .q_max
                .iter()
                .map(|&q| {
                    if q > 0.0 {
                        rng.random_range(-q..=q)
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    fn mutate(&self, c: &mut ControlVector, rate: f64, rng: &mut ChaCha8Rng) {
        let step = |v: i32, lo: i32, hi: i32, rng: &mut ChaCha8Rng| {
            let d = if rng.random_bool(0.5) { 1 } else { -1 };
            (v + d).clamp(lo, hi)
        };
        if rng.random_bool(rate) {
            c.tap = step(c.tap, self.tap.0, self.tap.1, rng);
        }
        for (s, &n) in c.cb_steps.iter_mut().zip(&self.steps) {
            if rng.random_bool(rate) {
                *s = step(*s, 0, n, rng);
            }
        }
        for (q, &qm) in c.dg_q_kvar.iter_mut().zip(&self.q_max) {
            if qm > 0.0 && rng.random_bool(rate) {
                let sigma = 0.1 * 2.0 * qm;
                let noise = Normal::new(0.0, sigma).expect("positive sigma").sample(rng);
                *q = (*q + noise).clamp(-qm, qm);
            }
        }
    }
}

fn uniform_crossover(a: &ControlVector, b: &ControlVector, rng: &mut ChaCha8Rng) -> ControlVector {
    ControlVector {
        tap: if rng.random_bool(0.5) { a.tap } else { b.tap },
        cb_steps: a
            .cb_steps
            .iter()
            .zip(&b.cb_steps)
            .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
            .collect(),
        dg_q_kvar: a
            .dg_q_kvar
            .iter()
            .zip(&b.dg_q_kvar)
            .map(|(&x, &y)| if rng.random_bool(0.5) { x } else { y })
            .collect(),
    }
}

fn tournament<'c>(pop: &'c [Candidate], k: usize, rng: &mut ChaCha8Rng) -> &'c Candidate {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..k {
        let c = &pop[rng.random_range(0..pop.len())];
        if c.fitness > best.fitness {
            best = c;
        }
    }
    best
}

fn run_restart(eval: &Evaluator<'_>, bounds: &Bounds, ga: &GaParams, seed: u64) -> Candidate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = eval.solver.network();
    let mut pop: Vec<Candidate> = Vec::with_capacity(ga.population);
    // The do-nothing setting seeds every population, so elitism keeps F >= 0
    // whenever it is feasible.
    pop.push(eval.evaluate(ControlVector::zeros(net)));
    while pop.len() < ga.population {
        let c = bounds.random(&mut rng);
        pop.push(eval.evaluate(c));
    }
    let mut best = pop.iter().max_by(|a, b| rank(a, b)).cloned().unwrap();
    for _ in 0..ga.generations {
        let mut next = Vec::with_capacity(ga.population);
        next.push(best.clone());
        while next.len() < ga.population {
            let a = tournament(&pop, ga.tournament_k, &mut rng);
            let b = tournament(&pop, ga.tournament_k, &mut rng);
            let mut child = if rng.random_bool(ga.crossover_rate) {
                uniform_crossover(&a.controls, &b.controls, &mut rng)
            } else {
                a.controls.clone()
            };
            bounds.mutate(&mut child, ga.mutation_rate, &mut rng);
            next.push(eval.evaluate(child));
        }
        pop = next;
        if let Some(gen_best) = pop.iter().max_by(|a, b| rank(a, b)) {
            if rank(gen_best, &best).is_gt() {
                best = gen_best.clone();
            }
        }
    }
    best
}

/// Best setting over `ga.restarts` independent GA runs; restart `r` is seeded
/// with `ga.seed + r`.
pub fn solve_rpo_ga(
    network: &NetworkModel,
    scenario: &LoadScenario,
    weights: ObjectiveWeights,
    ga: &GaParams,
) -> Result<RpoSolution> {
    ga.validate()?;
    let eval = Evaluator::new(network, scenario, weights, ga.penalty_per_violation)?;
    let bounds = Bounds::new(network, scenario);
    let runs: Vec<Candidate> = (0..ga.restarts as u64)
        .into_par_iter()
        .map(|r| run_restart(&eval, &bounds, ga, ga.seed.wrapping_add(r)))
        .collect();
    let restart_objectives = runs.iter().map(|c| c.objective).collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if rank(&b, &a).is_gt() { b } else { a })
        .expect("at least one restart");
    Ok(eval.to_solution(best, restart_objectives))
}

/// Exhaustive search over the discrete control lattice (taps × bank steps).
/// Only defined for networks without continuous DG controls.
pub fn solve_rpo_exhaustive(
    network: &NetworkModel,
    scenario: &LoadScenario,
    weights: ObjectiveWeights,
    penalty_per_violation: f64,
) -> Result<RpoSolution> {
    if !network.dg_units.is_empty() {
        return Err(Error::InvalidInput {
            what: "exhaustive search",
            reason: "DG reactive outputs are continuous".into(),
        });
    }
    let eval = Evaluator::new(network, scenario, weights, penalty_per_violation)?;
    let bounds = Bounds::new(network, scenario);
    let mut best: Option<Candidate> = None;
    let mut steps = vec![0i32; bounds.steps.len()];
    for tap in bounds.tap.0..=bounds.tap.1 {
        steps.iter_mut().for_each(|s| *s = 0);
        loop {
            let c = eval.evaluate(ControlVector {
                tap,
                cb_steps: steps.clone(),
                dg_q_kvar: Vec::new(),
            });
            if best.as_ref().is_none_or(|b| rank(&c, b).is_gt()) {
                best = Some(c);
            }
            // odometer increment
            let mut k = 0;
            while k < steps.len() {
                if steps[k] < bounds.steps[k] {
                    steps[k] += 1;
                    break;
                }
                steps[k] = 0;
                k += 1;
            }
            if k == steps.len() {
                break;
            }
        }
    }
    let best = best.expect("lattice is non-empty");
    let obj = best.objective;
    Ok(eval.to_solution(best, vec![obj]))
}

pub fn lattice_size(network: &NetworkModel) -> usize {
    let taps = network.transformer.as_ref().map_or(1, |t| t.tap_count());
    network
        .capacitor_banks
        .iter()
        .fold(taps, |n, c| n * (c.n_steps as usize + 1))
}
