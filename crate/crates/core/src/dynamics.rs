//! Agent models for the road-crossing case.
//!
//! Both agents are one-dimensional double integrators moving along their own
//! road, with the crossing at the origin of each arc-length coordinate. The
//! human applies one of two decision-conditioned control laws derived from
//! the Intelligent Driver Model: an aggressive brake that stops short of the
//! crossing, or smooth tracking of the reference speed. Human motion does
//! not depend on the ego state, so rollouts over a scenario tree are
//! precomputed once per planning problem and enter the NLP as constants.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::ScenarioTree;
use serde::{Deserialize, Serialize};

/// Free-flow gain of the tracking law (IDM `a_n`), m/s^2.
const TRACK_GAIN: f64 = 2.0;
/// The brake law targets a stop this far before the crossing, m.
const BRAKE_STOP_MARGIN: f64 = 2.0;
/// Floor on the assumed stopping distance inside the brake law, m.
const BRAKE_MIN_DISTANCE: f64 = 0.5;

/// Discrete human decision. Children of a tree node are ordered by
/// [`Decision::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Aggressive braking maneuver, stopping before the crossing.
    Brake,
    /// Smooth tracking of the reference speed through the crossing.
    Track,
}

impl Decision {
    pub const COUNT: usize = 2;

    /// Decision index used for tree child ordering.
    pub fn index(self) -> usize {
        match self {
            Decision::Brake => 0,
            Decision::Track => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        match index {
            0 => Decision::Brake,
            1 => Decision::Track,
            other => panic!("decision index {other} out of range"),
        }
    }
}

/// Position (signed arc length, crossing at 0) and velocity of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState<T> {
    pub position: T,
    pub velocity: T,
}

impl<T: Scalar> AgentState<T> {
    pub fn new(position: T, velocity: T) -> Self {
        Self { position, velocity }
    }
}

impl AgentState<f64> {
    /// Lift into another scalar type as constants.
    pub fn lift<T: Scalar>(self) -> AgentState<T> {
        AgentState {
            position: T::from_f64(self.position),
            velocity: T::from_f64(self.velocity),
        }
    }
}

/// Ego control action (longitudinal acceleration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoControl<T> {
    pub acceleration: T,
}

/// Shared world and controller parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldParams {
    /// Discretization step, s.
    pub dt: f64,
    /// Agent radius, m. The safety margin is `2 * agent_radius + 1`.
    pub agent_radius: f64,
    /// Reference speed for both agents, m/s (20 km/h).
    pub v_ref: f64,
    /// Velocity floor used when forming time-to-crossing features, m/s.
    pub v_floor: f64,
    /// Ego velocity bounds, m/s (0 to 23 km/h).
    pub v_min: f64,
    pub v_max: f64,
    /// Ego acceleration bounds, m/s^2.
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            dt: 1.0,
            agent_radius: 1.0,
            v_ref: 20.0 / 3.6,
            v_floor: 0.1,
            v_min: 0.0,
            v_max: 23.0 / 3.6,
            a_min: -5.0,
            a_max: 5.0,
        }
    }
}

impl WorldParams {
    /// Safety margin `d_safe = 2 * agent_radius + 1`, m.
    pub fn d_safe(&self) -> f64 {
        2.0 * self.agent_radius + 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.agent_radius > 0.0) {
            return Err(Error::Config("agent_radius must be positive".into()));
        }
        if self.v_floor <= 0.0 {
            return Err(Error::Config("v_floor must be positive".into()));
        }
        if self.v_min >= self.v_max || self.a_min >= self.a_max {
            return Err(Error::Config("state/control bounds are empty".into()));
        }
        Ok(())
    }
}

/// One exact Euler step of the double integrator:
/// `p' = p + v dt`, `v' = v + a dt`. No clamping here.
pub fn step_agent<T: Scalar>(state: AgentState<T>, accel: T, dt: T) -> AgentState<T> {
    AgentState {
        position: state.position + state.velocity * dt,
        velocity: state.velocity + accel * dt,
    }
}

/// Decision-conditioned human control law, m/s^2, always within
/// `[a_min, a_max]`.
///
/// Track is the IDM free-flow term `a_n (1 - (v / v_ref)^4)`. Brake holds a
/// constant-deceleration profile toward a stop `BRAKE_STOP_MARGIN` before
/// the crossing and switches to stop-as-fast-as-possible once past that
/// point; combined with the Euler step this parks the human just short of
/// the crossing.
pub fn kappa(state: AgentState<f64>, decision: Decision, params: &WorldParams) -> f64 {
    let v = state.velocity;
    let p = state.position;
    let a = match decision {
        Decision::Track => TRACK_GAIN * (1.0 - (v / params.v_ref).powi(4)),
        Decision::Brake => {
            if p < -BRAKE_STOP_MARGIN {
                let stop_dist = (-p - BRAKE_STOP_MARGIN).max(BRAKE_MIN_DISTANCE);
                (-v * v / (2.0 * stop_dist)).clamp(params.a_min, 0.0)
            } else {
                // Past the target point: brake out in one step if possible.
                (-v / params.dt).max(params.a_min)
            }
        }
    };
    a.clamp(params.a_min, params.a_max)
}

/// Human states at every tree node: the root maps to `initial`, each child
/// follows one `kappa` + Euler step from its parent, and velocity is clamped
/// to be non-negative after each step. Independent of ego states.
pub fn rollout_human(
    initial: AgentState<f64>,
    tree: &ScenarioTree,
    params: &WorldParams,
) -> Vec<AgentState<f64>> {
    let mut states = vec![initial; tree.node_count()];
    for node in tree.non_root() {
        let parent = tree.parent_of(node).expect("non-root node has a parent");
        let decision = Decision::from_index(tree.decision_of(node).expect("non-root"));
        let accel = kappa(states[parent], decision, params);
        let mut next = step_agent(states[parent], accel, params.dt);
        next.velocity = next.velocity.max(0.0);
        states[node] = next;
    }
    states
}

/// Euclidean distance between the agents for perpendicular roads meeting at
/// the origin.
pub fn distance<T: Scalar>(ego: AgentState<T>, human: AgentState<T>) -> T {
    (ego.position * ego.position + human.position * human.position).sqrt()
}

/// Collision margin `g = d_safe - dist`; `g < 0` means safe.
pub fn collision_margin<T: Scalar>(ego: AgentState<T>, human: AgentState<T>, d_safe: f64) -> T {
    T::from_f64(d_safe) - distance(ego, human)
}

/// Regularization added under the square root of the smoothed distance.
pub const DIST_SMOOTHING: f64 = 1e-6;

/// Collision margin with the distance smoothed as
/// `sqrt(p_e^2 + p_h^2 + DIST_SMOOTHING)`, differentiable everywhere. Used
/// inside planning problems; the absolute error versus [`collision_margin`]
/// is below 5e-4 m.
pub fn collision_margin_smooth<T: Scalar>(
    ego: AgentState<T>,
    human: AgentState<T>,
    d_safe: f64,
) -> T {
    let d2 = ego.position * ego.position
        + human.position * human.position
        + T::from_f64(DIST_SMOOTHING);
    T::from_f64(d_safe) - d2.sqrt()
}
