//! Planning problems over the scenario tree.
//!
//! Three variants share one multiple-shooting transcription (ego states at
//! every node as variables, dynamics as equality constraints, human states
//! precomputed constants):
//!
//! - **Distributionally robust**: nested KL-ball risk for both the
//!   objective and the chance constraint, nominal probabilities from a
//!   learned model evaluated at the (state-dependent) tree features.
//! - **Ground-truth stochastic**: the same structure with the true
//!   parameters and radius zero, which reduces every risk to a nominal
//!   expectation.
//! - **Robust**: worst-case objective via per-child epigraphs and hard
//!   collision constraints at every non-root node; no probabilities at all.
//!
//! Per non-leaf node the stochastic variants carry a risk-to-go variable,
//! its dual multiplier, a chance-to-go variable and its multiplier; the
//! robust variant carries only the risk-to-go. The chance recursion bounds
//! the sigmoid relaxation of the union of collision events over all
//! non-root nodes by `delta_0 <= epsilon`.

use crate::decision::{features, log_conditional, true_conditional, FEATURE_DIM};
use crate::dynamics::{
    collision_margin, collision_margin_smooth, rollout_human, step_agent, AgentState, WorldParams,
};
use crate::error::{Error, Result};
use crate::learn::LearnedModel;
use crate::risk::{
    dual_epigraph_residual, sigmoid_upper, SigmoidParams, LAMBDA_MIN,
};
use crate::scalar::Scalar;
use crate::solve::{solve, NlpProblem, SolveResult, SolverConfig};
use crate::tree::ScenarioTree;
use serde::{Deserialize, Serialize};

/// Velocity deviation weight in the stage and terminal costs (Q, P).
pub const Q_VEL: f64 = 0.1;
/// Control effort weight (R).
pub const R_CTRL: f64 = 10.0;
/// Extra margin, m, on the robust hard collision constraints. Keeps the
/// strict inequality `g < 0` satisfied at active constraints despite the
/// solver's finite feasibility tolerance.
pub const ROBUST_G_MARGIN: f64 = 1e-3;

/// Which planning problem to assemble.
#[derive(Debug, Clone)]
pub enum PlannerMode {
    /// Learned nominal distribution inside a KL ball of the model's radius.
    DistributionallyRobust(LearnedModel),
    /// True parameters, radius zero.
    GroundTruthStochastic { theta_true: [f64; FEATURE_DIM] },
    /// Worst-case planning with hard collision constraints.
    Robust { objective: RobustObjective },
}

/// Aggregation used by the robust objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobustObjective {
    /// Nested maximum over branches (default).
    WorstCase,
    /// Plain average over branches, uniform at every node.
    UniformAverage,
}

#[derive(Debug, Clone)]
enum ModeData {
    Stochastic {
        theta: [f64; FEATURE_DIM],
        radius: f64,
        /// Feature-norm bound for the out-of-ball diagnostic, when known.
        feature_bound: Option<f64>,
    },
    Robust { objective: RobustObjective },
}

/// Quadratic stage cost `Q_VEL (v - v_ref)^2 + R_CTRL a^2`.
pub fn stage_cost<T: Scalar>(state: AgentState<T>, accel: T, v_ref: f64) -> T {
    let dv = state.velocity - T::from_f64(v_ref);
    T::from_f64(Q_VEL) * dv * dv + T::from_f64(R_CTRL) * accel * accel
}

/// Terminal cost `Q_VEL (v - v_ref)^2`.
pub fn terminal_cost<T: Scalar>(state: AgentState<T>, v_ref: f64) -> T {
    let dv = state.velocity - T::from_f64(v_ref);
    T::from_f64(Q_VEL) * dv * dv
}

/// Assembled planning problem; implements [`NlpProblem`].
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub tree: ScenarioTree,
    pub params: WorldParams,
    pub sigmoid: SigmoidParams,
    pub epsilon: f64,
    /// Human state at every node, fixed during the solve.
    pub human: Vec<AgentState<f64>>,
    initial_ego: AgentState<f64>,
    initial_human: AgentState<f64>,
    mode: ModeData,
    mode_label: String,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_nodes: usize,
    n_nonleaf: usize,
}

impl OcpProblem {
    // Variable layout: states (2 per node), controls, gamma, then for the
    // stochastic variants lambda, delta, mu (one each per non-leaf).
    fn idx_p(&self, node: usize) -> usize {
        2 * node
    }
    fn idx_v(&self, node: usize) -> usize {
        2 * node + 1
    }
    fn idx_u(&self, node: usize) -> usize {
        2 * self.n_nodes + node
    }
    fn idx_gamma(&self, node: usize) -> usize {
        2 * self.n_nodes + self.n_nonleaf + node
    }
    fn idx_lambda(&self, node: usize) -> usize {
        2 * self.n_nodes + 2 * self.n_nonleaf + node
    }
    fn idx_delta(&self, node: usize) -> usize {
        2 * self.n_nodes + 3 * self.n_nonleaf + node
    }
    fn idx_mu(&self, node: usize) -> usize {
        2 * self.n_nodes + 4 * self.n_nonleaf + node
    }

    fn is_stochastic(&self) -> bool {
        matches!(self.mode, ModeData::Stochastic { .. })
    }

    pub fn mode_label(&self) -> &str {
        &self.mode_label
    }

    /// Nominal parameters and radius for the stochastic variants.
    pub fn nominal(&self) -> Option<([f64; FEATURE_DIM], f64)> {
        match &self.mode {
            ModeData::Stochastic { theta, radius, .. } => Some((*theta, *radius)),
            ModeData::Robust { .. } => None,
        }
    }

    fn ego_state<T: Scalar>(&self, z: &[T], node: usize) -> AgentState<T> {
        AgentState {
            position: z[self.idx_p(node)],
            velocity: z[self.idx_v(node)],
        }
    }

    /// Payload of a child in the objective recursion: stage cost plus
    /// risk-to-go for non-leaves, terminal cost for leaves.
    fn objective_payload<T: Scalar>(&self, z: &[T], child: usize) -> T {
        let state = self.ego_state(z, child);
        if self.tree.is_leaf(child) {
            terminal_cost(state, self.params.v_ref)
        } else {
            stage_cost(state, z[self.idx_u(child)], self.params.v_ref) + z[self.idx_gamma(child)]
        }
    }

    /// Payload of a child in the chance recursion: sigmoid bound on the
    /// collision indicator plus chance-to-go for non-leaves.
    fn chance_payload<T: Scalar>(&self, z: &[T], child: usize) -> T {
        let g = collision_margin_smooth(
            self.ego_state(z, child),
            self.human[child].lift::<T>(),
            self.params.d_safe(),
        );
        let sig = sigmoid_upper(g, self.sigmoid);
        if self.tree.is_leaf(child) {
            sig
        } else {
            sig + z[self.idx_delta(child)]
        }
    }

    fn node_log_probs<T: Scalar>(&self, z: &[T], node: usize, theta: [f64; FEATURE_DIM]) -> [T; 2] {
        let x = features(
            self.ego_state(z, node),
            self.human[node].lift::<T>(),
            self.params.v_floor,
        );
        log_conditional(x, theta)
    }

    /// Exact (unsmoothed) collision margins at a given iterate.
    pub fn margins(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n_nodes)
            .map(|node| {
                collision_margin(self.ego_state::<f64>(z, node), self.human[node], self.params.d_safe())
            })
            .collect()
    }

    /// Initial iterate: ego controls from the mode's fallback policy
    /// (zero acceleration for the stochastic variants, a braking profile
    /// for the robust one), states by rollout, risk/chance-to-go variables
    /// from the recursion evaluated at unit multipliers, multipliers at 1.
    pub fn initial_iterate(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut z = vec![0.0; dim];

        let braking = matches!(self.mode, ModeData::Robust { .. });
        z[self.idx_p(0)] = self.initial_ego.position;
        z[self.idx_v(0)] = self.initial_ego.velocity;
        for node in 0..self.n_nonleaf {
            let state = self.ego_state::<f64>(&z, node);
            let u = if braking {
                // Comfort stop short of the conflict zone.
                let stop_margin = self.params.d_safe() + 1.0;
                if state.position < -stop_margin {
                    let dist = (-state.position - stop_margin).max(0.25);
                    (-state.velocity * state.velocity / (2.0 * dist)).clamp(self.params.a_min, 0.0)
                } else {
                    (-state.velocity / self.params.dt).max(self.params.a_min)
                }
            } else {
                0.0
            };
            z[self.idx_u(node)] = u;
            let next = step_agent(state, u, self.params.dt);
            for &child in self.tree.children_of(node) {
                z[self.idx_p(child)] = next.position;
                z[self.idx_v(child)] = next.velocity.clamp(self.params.v_min, self.params.v_max);
            }
        }

        // Risk-to-go and chance-to-go by the recursion at unit multipliers.
        match &self.mode {
            ModeData::Stochastic { theta, radius, .. } => {
                for node in (0..self.n_nonleaf).rev() {
                    let lp = self.node_log_probs::<f64>(&z, node, *theta);
                    let children = self.tree.children_of(node);
                    let zc = [
                        self.objective_payload::<f64>(&z, children[0]),
                        self.objective_payload::<f64>(&z, children[1]),
                    ];
                    z[self.idx_gamma(node)] = dual_epigraph_residual(&zc, 0.0, 1.0, &lp, *radius);
                    let wc = [
                        self.chance_payload::<f64>(&z, children[0]),
                        self.chance_payload::<f64>(&z, children[1]),
                    ];
                    z[self.idx_delta(node)] = dual_epigraph_residual(&wc, 0.0, 1.0, &lp, *radius);
                    z[self.idx_lambda(node)] = 1.0;
                    z[self.idx_mu(node)] = 1.0;
                }
            }
            ModeData::Robust { objective } => {
                for node in (0..self.n_nonleaf).rev() {
                    let children = self.tree.children_of(node);
                    let payloads: Vec<f64> = children
                        .iter()
                        .map(|&c| self.objective_payload::<f64>(&z, c))
                        .collect();
                    z[self.idx_gamma(node)] = match objective {
                        RobustObjective::WorstCase => {
                            payloads.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        }
                        RobustObjective::UniformAverage => {
                            payloads.iter().sum::<f64>() / payloads.len() as f64
                        }
                    };
                }
            }
        }
        z
    }
}

impl NlpProblem for OcpProblem {
    fn dim(&self) -> usize {
        let per_nonleaf = if self.is_stochastic() { 5 } else { 2 };
        2 * self.n_nodes + per_nonleaf * self.n_nonleaf
    }

    fn num_eq(&self) -> usize {
        2 * self.n_nodes
    }

    fn num_ineq(&self) -> usize {
        match &self.mode {
            ModeData::Stochastic { .. } => 2 * self.n_nonleaf + 1,
            ModeData::Robust { objective } => {
                let recursion_rows = match objective {
                    RobustObjective::WorstCase => self.tree.branching() * self.n_nonleaf,
                    RobustObjective::UniformAverage => self.n_nonleaf,
                };
                recursion_rows + self.n_nodes - 1
            }
        }
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn objective<T: Scalar>(&self, z: &[T]) -> T {
        stage_cost(self.ego_state(z, 0), z[self.idx_u(0)], self.params.v_ref)
            + z[self.idx_gamma(0)]
    }

    fn eq_constraints<T: Scalar>(&self, z: &[T], out: &mut [T]) {
        let dt = T::from_f64(self.params.dt);
        out[0] = z[self.idx_p(0)] - T::from_f64(self.initial_ego.position);
        out[1] = z[self.idx_v(0)] - T::from_f64(self.initial_ego.velocity);
        for node in 1..self.n_nodes {
            let parent = self.tree.parent_of(node).expect("non-root");
            let pred = step_agent(self.ego_state(z, parent), z[self.idx_u(parent)], dt);
            out[2 * node] = z[self.idx_p(node)] - pred.position;
            out[2 * node + 1] = z[self.idx_v(node)] - pred.velocity;
        }
    }

    fn ineq_constraints<T: Scalar>(&self, z: &[T], out: &mut [T]) {
        match &self.mode {
            ModeData::Stochastic { theta, radius, .. } => {
                for node in 0..self.n_nonleaf {
                    let lp = self.node_log_probs(z, node, *theta);
                    let children = self.tree.children_of(node);
                    let zc = [
                        self.objective_payload(z, children[0]),
                        self.objective_payload(z, children[1]),
                    ];
                    out[node] = dual_epigraph_residual(
                        &zc,
                        z[self.idx_gamma(node)],
                        z[self.idx_lambda(node)],
                        &lp,
                        *radius,
                    );
                    let wc = [
                        self.chance_payload(z, children[0]),
                        self.chance_payload(z, children[1]),
                    ];
                    out[self.n_nonleaf + node] = dual_epigraph_residual(
                        &wc,
                        z[self.idx_delta(node)],
                        z[self.idx_mu(node)],
                        &lp,
                        *radius,
                    );
                }
                out[2 * self.n_nonleaf] = z[self.idx_delta(0)] - T::from_f64(self.epsilon);
            }
            ModeData::Robust { objective } => {
                let d = self.tree.branching();
                let mut row = 0;
                for node in 0..self.n_nonleaf {
                    let gamma = z[self.idx_gamma(node)];
                    match objective {
                        RobustObjective::WorstCase => {
                            for &child in self.tree.children_of(node) {
                                out[row] = self.objective_payload(z, child) - gamma;
                                row += 1;
                            }
                        }
                        RobustObjective::UniformAverage => {
                            let mut acc = T::zero();
                            for &child in self.tree.children_of(node) {
                                acc = acc + self.objective_payload(z, child);
                            }
                            out[row] = acc / T::from_f64(d as f64) - gamma;
                            row += 1;
                        }
                    }
                }
                for node in 1..self.n_nodes {
                    let g = collision_margin_smooth(
                        self.ego_state(z, node),
                        self.human[node].lift::<T>(),
                        self.params.d_safe(),
                    );
                    out[row] = g + T::from_f64(ROBUST_G_MARGIN);
                    row += 1;
                }
            }
        }
    }
}

/// Assemble a planning problem for one mode from the joint initial state.
pub fn assemble(
    mode: PlannerMode,
    initial_ego: AgentState<f64>,
    initial_human: AgentState<f64>,
    tree: ScenarioTree,
    params: WorldParams,
    sigmoid: SigmoidParams,
    epsilon: f64,
) -> Result<OcpProblem> {
    params.validate()?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Config(format!(
            "violation probability level must be in (0, 1], got {epsilon}"
        )));
    }
    if tree.branching() != 2 {
        return Err(Error::Config(
            "the crossing scenario uses two decisions (brake, track)".into(),
        ));
    }

    let (mode_data, mode_label) = match mode {
        PlannerMode::DistributionallyRobust(model) => {
            let label = format!("dr(n={})", model.n);
            (
                ModeData::Stochastic {
                    theta: model.theta,
                    radius: model.ambiguity_radius,
                    feature_bound: Some(model.feature_bound),
                },
                label,
            )
        }
        PlannerMode::GroundTruthStochastic { theta_true } => (
            ModeData::Stochastic {
                theta: theta_true,
                radius: 0.0,
                feature_bound: None,
            },
            "gt".to_string(),
        ),
        PlannerMode::Robust { objective } => {
            (ModeData::Robust { objective }, "robust".to_string())
        }
    };

    let human = rollout_human(initial_human, &tree, &params);
    let n_nodes = tree.node_count();
    let n_nonleaf = tree.non_leaf_count();

    let mut problem = OcpProblem {
        tree,
        params,
        sigmoid,
        epsilon,
        human,
        initial_ego,
        initial_human,
        mode: mode_data,
        mode_label,
        lower: Vec::new(),
        upper: Vec::new(),
        n_nodes,
        n_nonleaf,
    };

    let dim = problem.dim();
    let mut lower = vec![f64::NEG_INFINITY; dim];
    let mut upper = vec![f64::INFINITY; dim];
    for node in 0..n_nodes {
        lower[problem.idx_v(node)] = problem.params.v_min;
        upper[problem.idx_v(node)] = problem.params.v_max;
    }
    for node in 0..n_nonleaf {
        lower[problem.idx_u(node)] = problem.params.a_min;
        upper[problem.idx_u(node)] = problem.params.a_max;
        if problem.is_stochastic() {
            lower[problem.idx_lambda(node)] = LAMBDA_MIN;
            lower[problem.idx_mu(node)] = LAMBDA_MIN;
        }
    }
    problem.lower = lower;
    problem.upper = upper;
    Ok(problem)
}

/// Open-loop plan: states, controls and diagnostics at the solved iterate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanSolution {
    pub mode: String,
    pub horizon: usize,
    pub branching: usize,
    pub params: WorldParams,
    pub sigmoid: SigmoidParams,
    pub epsilon: f64,
    /// Nominal parameters of the stochastic variants.
    pub theta: Option<[f64; FEATURE_DIM]>,
    /// KL radius of the ambiguity sets (0 for ground truth).
    pub radius: Option<f64>,
    pub initial_ego: AgentState<f64>,
    pub initial_human: AgentState<f64>,
    /// Ego state per tree node.
    pub ego: Vec<AgentState<f64>>,
    /// Human state per tree node.
    pub human: Vec<AgentState<f64>>,
    /// Ego control per non-leaf node.
    pub controls: Vec<f64>,
    pub objective: f64,
    pub gamma0: f64,
    pub delta0: Option<f64>,
    /// Exact collision margin per node; negative is safe.
    pub margins: Vec<f64>,
    /// Nominal decision probabilities `[brake, track]` per non-leaf node.
    pub nominal_probs: Option<Vec<[f64; 2]>>,
    /// Fraction of non-leaf nodes whose feature norm exceeds the training
    /// bound (distributionally robust mode only).
    pub feature_norm_violation_rate: Option<f64>,
    pub converged: bool,
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

impl PlanSolution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Solve an assembled problem from its documented initialization.
pub fn plan(problem: &OcpProblem, config: &SolverConfig) -> Result<PlanSolution> {
    let z0 = problem.initial_iterate();
    let result = solve(problem, &z0, config)?;
    Ok(extract_solution(problem, &result))
}

fn extract_solution(problem: &OcpProblem, result: &SolveResult) -> PlanSolution {
    let z = &result.z;
    let ego: Vec<AgentState<f64>> = (0..problem.n_nodes)
        .map(|n| problem.ego_state::<f64>(z, n))
        .collect();
    let controls: Vec<f64> = (0..problem.n_nonleaf)
        .map(|n| z[problem.idx_u(n)])
        .collect();
    let margins = problem.margins(z);

    let (theta, radius) = match problem.nominal() {
        Some((t, r)) => (Some(t), Some(r)),
        None => (None, None),
    };
    let nominal_probs = theta.map(|t| {
        (0..problem.n_nonleaf)
            .map(|node| {
                let x = features(ego[node], problem.human[node], problem.params.v_floor);
                true_conditional(x, t).p
            })
            .collect::<Vec<_>>()
    });
    let feature_norm_violation_rate = match &problem.mode {
        ModeData::Stochastic {
            feature_bound: Some(bound),
            ..
        } => {
            let violations = (0..problem.n_nonleaf)
                .filter(|&node| {
                    let x = features(ego[node], problem.human[node], problem.params.v_floor);
                    (x[0] * x[0] + x[1] * x[1]).sqrt() > *bound
                })
                .count();
            Some(violations as f64 / problem.n_nonleaf as f64)
        }
        _ => None,
    };

    PlanSolution {
        mode: problem.mode_label.clone(),
        horizon: problem.tree.horizon(),
        branching: problem.tree.branching(),
        params: problem.params.clone(),
        sigmoid: problem.sigmoid,
        epsilon: problem.epsilon,
        theta,
        radius,
        initial_ego: problem.initial_ego,
        initial_human: problem.initial_human,
        ego,
        human: problem.human.clone(),
        controls,
        objective: result.objective,
        gamma0: z[problem.idx_gamma(0)],
        delta0: problem
            .is_stochastic()
            .then(|| z[problem.idx_delta(0)]),
        margins,
        nominal_probs,
        feature_norm_violation_rate,
        converged: result.converged(),
        stationarity: result.stationarity,
        feasibility: result.feasibility,
        complementarity: result.complementarity,
        iterations: result.iterations,
        wall_time_s: result.wall_time_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::FitStatus;
    use crate::risk::{nested_recursion_values, AmbiguitySet};
    use crate::solve::check_gradients;
    use approx::assert_relative_eq;

    const V20: f64 = 20.0 / 3.6;

    fn nominal_start() -> (AgentState<f64>, AgentState<f64>) {
        (AgentState::new(-15.0, V20), AgentState::new(-15.0, V20))
    }

    fn model_with_radius(radius: f64) -> LearnedModel {
        LearnedModel {
            theta: [3.0, 3.0],
            norm_bound: 18.0f64.sqrt(),
            feature_bound: 18.0f64.sqrt(),
            n: 1_000_000,
            alpha: 0.05,
            excess_risk: radius * radius,
            ambiguity_radius: radius,
            coverage_guarantee: 0.5,
            radius_clipped: false,
            fit: FitStatus {
                converged: true,
                residual: 0.0,
                iterations: 0,
            },
        }
    }

    fn assemble_mode(mode: PlannerMode, horizon: usize) -> OcpProblem {
        let (ego, human) = nominal_start();
        assemble(
            mode,
            ego,
            human,
            ScenarioTree::build(horizon, 2).unwrap(),
            WorldParams::default(),
            SigmoidParams::default(),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn stage_cost_examples() {
        let at_ref = AgentState::new(0.0, V20);
        assert_eq!(stage_cost(at_ref, 0.0, V20), 0.0);
        assert_relative_eq!(stage_cost(at_ref, 1.0, V20), 10.0, max_relative = 1e-12);
        let stopped = AgentState::new(0.0, 0.0);
        assert_relative_eq!(
            stage_cost(stopped, 0.0, V20),
            0.1 * V20 * V20,
            max_relative = 1e-12
        );
        assert!((stage_cost(stopped, 0.0, V20) - 3.0864).abs() < 1e-4);
        assert_relative_eq!(terminal_cost(stopped, V20), 0.1 * V20 * V20, max_relative = 1e-12);
    }

    #[test]
    fn variable_counts_per_mode() {
        let dr = assemble_mode(
            PlannerMode::DistributionallyRobust(model_with_radius(0.29)),
            6,
        );
        assert_eq!(dr.dim(), 2 * 127 + 5 * 63);
        assert_eq!(dr.dim(), 569);
        assert_eq!(dr.num_eq(), 254);
        assert_eq!(dr.num_ineq(), 127);

        let robust = assemble_mode(
            PlannerMode::Robust {
                objective: RobustObjective::WorstCase,
            },
            6,
        );
        assert_eq!(robust.dim(), 2 * 127 + 2 * 63);
        assert_eq!(robust.dim(), 380);
        assert_eq!(robust.num_ineq(), 2 * 63 + 126);
    }

    #[test]
    fn assemble_rejects_bad_epsilon() {
        let (ego, human) = nominal_start();
        for eps in [0.0, -0.5, 1.5] {
            let r = assemble(
                PlannerMode::GroundTruthStochastic { theta_true: [3.0, 3.0] },
                ego,
                human,
                ScenarioTree::build(2, 2).unwrap(),
                WorldParams::default(),
                SigmoidParams::default(),
                eps,
            );
            assert!(r.is_err(), "epsilon {eps} accepted");
        }
    }

    #[test]
    fn initial_iterate_is_dynamics_feasible_and_recursion_tight() {
        let p = assemble_mode(
            PlannerMode::GroundTruthStochastic { theta_true: [3.0, 3.0] },
            4,
        );
        let z0 = p.initial_iterate();
        let mut eq = vec![0.0; p.num_eq()];
        p.eq_constraints::<f64>(&z0, &mut eq);
        assert!(eq.iter().all(|v| v.abs() < 1e-12), "dynamics hold at init");

        let mut ineq = vec![0.0; p.num_ineq()];
        p.ineq_constraints::<f64>(&z0, &mut ineq);
        // Objective- and chance-recursion rows are exactly tight at the
        // unit-multiplier initialization (radius 0 ignores multipliers).
        for node in 0..p.n_nonleaf {
            assert!(ineq[node].abs() < 1e-9, "obj row {node}: {}", ineq[node]);
            assert!(
                ineq[p.n_nonleaf + node].abs() < 1e-9,
                "chance row {node}: {}",
                ineq[p.n_nonleaf + node]
            );
        }
    }

    #[test]
    fn ground_truth_recursion_matches_path_expectation_at_init() {
        // With radius 0 the gamma recursion at the initial trajectory must
        // equal the brute-force expected cost over root-to-leaf paths under
        // the nominal conditional probabilities at the same states.
        let theta = [3.0, 3.0];
        let p = assemble_mode(PlannerMode::GroundTruthStochastic { theta_true: theta }, 4);
        let z0 = p.initial_iterate();
        let gamma0 = z0[p.idx_gamma(0)];

        let tree = &p.tree;
        let mut expected = 0.0;
        for path in tree.paths() {
            let mut prob = 1.0;
            let mut cost = 0.0;
            for win in path.windows(2) {
                let (parent, child) = (win[0], win[1]);
                let x = features(
                    p.ego_state::<f64>(&z0, parent),
                    p.human[parent],
                    p.params.v_floor,
                );
                let dist = true_conditional(x, theta);
                let idx = tree.decision_of(child).unwrap();
                prob *= dist.p[idx];
                cost += if tree.is_leaf(child) {
                    terminal_cost(p.ego_state::<f64>(&z0, child), p.params.v_ref)
                } else {
                    stage_cost(
                        p.ego_state::<f64>(&z0, child),
                        z0[p.idx_u(child)],
                        p.params.v_ref,
                    )
                };
            }
            expected += prob * cost;
        }
        assert_relative_eq!(gamma0, expected, epsilon = 1e-8);

        // Same check through the reference risk evaluator.
        let mut payoff = vec![0.0; tree.node_count()];
        for node in tree.non_root() {
            payoff[node] = if tree.is_leaf(node) {
                terminal_cost(p.ego_state::<f64>(&z0, node), p.params.v_ref)
            } else {
                stage_cost(p.ego_state::<f64>(&z0, node), z0[p.idx_u(node)], p.params.v_ref)
            };
        }
        let sets: Vec<AmbiguitySet> = (0..tree.non_leaf_count())
            .map(|node| {
                let x = features(p.ego_state::<f64>(&z0, node), p.human[node], p.params.v_floor);
                AmbiguitySet::new(true_conditional(x, theta).p.to_vec(), 0.0).unwrap()
            })
            .collect();
        let gamma = nested_recursion_values(tree, &payoff, &sets);
        assert_relative_eq!(gamma0, gamma[0], epsilon = 1e-9);
    }

    #[test]
    fn gradients_are_consistent_on_small_dr_problem() {
        let p = assemble_mode(
            PlannerMode::DistributionallyRobust(model_with_radius(0.29)),
            2,
        );
        let z0 = p.initial_iterate();
        let err = check_gradients(&p, &z0, 1e-6);
        assert!(err <= 1e-5, "gradient error {err}");

        let robust = assemble_mode(
            PlannerMode::Robust {
                objective: RobustObjective::WorstCase,
            },
            2,
        );
        let z0 = robust.initial_iterate();
        let err = check_gradients(&robust, &z0, 1e-6);
        assert!(err <= 1e-5, "robust gradient error {err}");
    }

    #[test]
    fn unconstrained_tracking_plan_is_trivial() {
        // Human absurdly far away: the ego just tracks the reference and
        // the objective is ~0.
        let tree = ScenarioTree::build(6, 2).unwrap();
        let p = assemble(
            PlannerMode::GroundTruthStochastic { theta_true: [3.0, 3.0] },
            AgentState::new(0.0, V20),
            AgentState::new(-1e4, V20),
            tree,
            WorldParams::default(),
            SigmoidParams::default(),
            0.1,
        )
        .unwrap();
        let config = SolverConfig {
            max_iter: 4000,
            ..SolverConfig::default()
        };
        let sol = plan(&p, &config).unwrap();
        assert!(sol.converged, "status: {sol:?}");
        assert!(sol.objective.abs() < 1e-6, "objective {}", sol.objective);
        assert!(sol.controls.iter().all(|u| u.abs() < 1e-3));
        assert!(sol.delta0.unwrap() <= 0.1 + 1e-9);
    }

    #[test]
    fn plan_solution_serializes() {
        let p = assemble_mode(
            PlannerMode::Robust {
                objective: RobustObjective::WorstCase,
            },
            2,
        );
        let config = SolverConfig {
            max_iter: 3000,
            ..SolverConfig::default()
        };
        let sol = plan(&p, &config).unwrap();
        let json = sol.to_json().unwrap();
        let back = PlanSolution::from_json(&json).unwrap();
        assert_eq!(back.mode, sol.mode);
        assert_eq!(back.ego.len(), sol.ego.len());
    }
}
