//! Ground-truth human decision distribution and dataset generation.
//!
//! The human's discrete decision is conditionally Bernoulli over labels
//! `{-1, +1}` given a two-dimensional feature `x`:
//!
//! ```text
//! P(y = +1 | x) = sigma(<x, theta>),   sigma(z) = 1 / (1 + exp(z))
//! ```
//!
//! Note that `sigma` here is decreasing. The feature is the negated signed
//! time for each agent to reach the crossing, smoothed with a velocity
//! floor: `x = -[p_e / ve, p_h / vh]` with `vi = sqrt(v_i^2 + v_floor^2)`,
//! so both components are positive while the agents approach and shrink to
//! zero at the crossing.
//!
//! Label convention: `+1` is the braking decision, `-1` the tracking
//! decision. Under this convention the braking probability grows as either
//! agent's time to the crossing shrinks (imminent conflict), and a far-away
//! human tracks through with near certainty, which is what makes the
//! crossing genuinely interactive.

use crate::dynamics::{AgentState, Decision};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Feature dimension (one time-to-crossing component per agent).
pub const FEATURE_DIM: usize = 2;

/// State-dependent classification feature.
pub type FeatureVector<T> = [T; FEATURE_DIM];

/// Negated signed time-to-crossing features, smooth in both states.
pub fn features<T: Scalar>(
    ego: AgentState<T>,
    human: AgentState<T>,
    v_floor: f64,
) -> FeatureVector<T> {
    let floor2 = T::from_f64(v_floor * v_floor);
    let smooth = |s: AgentState<T>| -s.position / (s.velocity * s.velocity + floor2).sqrt();
    [smooth(ego), smooth(human)]
}

/// Map a decision to its Bernoulli label.
pub fn label_of(decision: Decision) -> i8 {
    match decision {
        Decision::Brake => 1,
        Decision::Track => -1,
    }
}

/// Map a Bernoulli label to its decision.
pub fn decision_of(label: i8) -> Decision {
    if label > 0 {
        Decision::Brake
    } else {
        Decision::Track
    }
}

/// Probability simplex over the two decisions, indexed by
/// [`Decision::index`] (`[P(brake), P(track)]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionDistribution<T> {
    pub p: [T; 2],
}

impl<T: Scalar> DecisionDistribution<T> {
    pub fn prob(&self, decision: Decision) -> T {
        self.p[decision.index()]
    }

    pub fn prob_of_label(&self, label: i8) -> T {
        self.prob(decision_of(label))
    }
}

/// Conditional decision distribution `P(y | x)` for parameters `theta`.
///
/// Computed in log-space (`log P(+1) = -softplus(z)`) so extreme logits
/// stay finite.
pub fn true_conditional<T: Scalar>(
    x: FeatureVector<T>,
    theta: [f64; FEATURE_DIM],
) -> DecisionDistribution<T> {
    let lp = log_conditional(x, theta);
    DecisionDistribution {
        p: [lp[0].exp(), lp[1].exp()],
    }
}

/// Log-probabilities `[ln P(brake), ln P(track)]`, stable for any logit.
pub fn log_conditional<T: Scalar>(x: FeatureVector<T>, theta: [f64; FEATURE_DIM]) -> [T; 2] {
    let z = x[0] * T::from_f64(theta[0]) + x[1] * T::from_f64(theta[1]);
    // ln sigma(z) = -softplus(z); brake carries label +1.
    [-z.softplus(), -(-z).softplus()]
}

/// One labeled training example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: [f64; FEATURE_DIM],
    pub y: i8,
}

/// I.i.d. feature/label pairs with the seed that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Write as CSV with columns `x1, x2, y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x1", "x2", "y"])?;
        for s in &self.samples {
            w.write_record(&[s.x[0].to_string(), s.x[1].to_string(), s.y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut samples = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() != 3 {
                return Err(Error::Data(format!(
                    "expected 3 columns (x1, x2, y), got {}",
                    record.len()
                )));
            }
            let parse = |i: usize| -> Result<f64> {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("bad numeric field {:?}: {e}", &record[i])))
            };
            let y = parse(2)?;
            samples.push(Sample {
                x: [parse(0)?, parse(1)?],
                y: if y > 0.0 { 1 } else { -1 },
            });
        }
        if samples.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        Ok(Self { samples, seed: 0 })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Draw one label from the conditional distribution at `x`.
pub fn sample_label<R: Rng>(rng: &mut R, x: FeatureVector<f64>, theta: [f64; FEATURE_DIM]) -> i8 {
    let p_plus = true_conditional(x, theta).prob_of_label(1);
    if rng.gen::<f64>() < p_plus {
        1
    } else {
        -1
    }
}

/// Generate `n` i.i.d. samples: features uniform on the radius-`bound`
/// Euclidean ball, labels from the conditional distribution. Reproducible
/// for a fixed seed.
pub fn sample_dataset(
    n: usize,
    theta: [f64; FEATURE_DIM],
    bound: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Data("dataset size must be at least 1".into()));
    }
    if !(bound > 0.0) {
        return Err(Error::Data(format!(
            "feature bound must be positive, got {bound}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        // Uniform on the disk: radius ~ bound * sqrt(u), angle uniform.
        let r = bound * rng.gen::<f64>().sqrt();
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        let x = [r * phi.cos(), r * phi.sin()];
        let y = sample_label(&mut rng, x, theta);
        samples.push(Sample { x, y });
    }
    Ok(Dataset { samples, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const V20: f64 = 20.0 / 3.6;

    #[test]
    fn features_vanish_at_the_crossing() {
        let zero = AgentState::new(0.0, 0.0);
        assert_eq!(features(zero, zero, 0.1), [0.0, 0.0]);
    }

    #[test]
    fn features_match_smoothed_time_to_crossing() {
        let ego = AgentState::new(-15.0, V20);
        let human = AgentState::new(0.0, 0.0);
        let x = features(ego, human, 0.1);
        let expected = 15.0 / (V20 * V20 + 0.01).sqrt();
        assert_relative_eq!(x[0], expected, max_relative = 1e-12);
        assert!((x[0] - 2.6996).abs() < 1e-3);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn velocity_floor_prevents_blowup() {
        let stopped = AgentState::new(-1.0, 0.0);
        let x = features(stopped, stopped, 0.1);
        assert_relative_eq!(x[0], 10.0, max_relative = 1e-12);
    }

    #[test]
    fn conditional_examples() {
        let u = true_conditional([0.0, 0.0], [3.0, 3.0]);
        assert_relative_eq!(u.prob_of_label(1), 0.5, epsilon = 1e-15);
        assert_relative_eq!(u.prob_of_label(-1), 0.5, epsilon = 1e-15);

        // <x, theta> = 6 makes the +1 label rare.
        let d = true_conditional([1.0, 1.0], [3.0, 3.0]);
        let expected = 1.0 / (1.0 + 6.0f64.exp());
        assert_relative_eq!(d.prob_of_label(1), expected, max_relative = 1e-12);
        assert!((d.prob_of_label(1) - 0.00247).abs() < 1e-5);

        let d = true_conditional([-1.0, -1.0], [3.0, 3.0]);
        assert_relative_eq!(d.prob_of_label(1), 1.0 - expected, max_relative = 1e-12);
    }

    #[test]
    fn conditional_is_a_simplex_point_and_sigma_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let x = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
            let d = true_conditional(x, [3.0, 3.0]);
            let sum = d.p[0] + d.p[1];
            assert!((sum - 1.0).abs() < 1e-12, "sum = {sum}");
            assert!(d.p[0] >= 0.0 && d.p[1] >= 0.0);
            // sigma(z) + sigma(-z) = 1.
            let flipped = true_conditional([-x[0], -x[1]], [3.0, 3.0]);
            assert_relative_eq!(
                d.prob_of_label(1),
                flipped.prob_of_label(-1),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn conditional_is_stable_for_extreme_logits() {
        let d = true_conditional([300.0, 300.0], [3.0, 3.0]);
        assert_eq!(d.prob_of_label(1), 0.0);
        assert_eq!(d.prob_of_label(-1), 1.0);
        let lp = log_conditional([300.0, 300.0], [3.0, 3.0]);
        assert!(lp[0].is_finite() && lp[0] < -1000.0);
        assert_eq!(lp[1], 0.0);
    }

    #[test]
    fn braking_probability_grows_as_conflict_nears() {
        let theta = [3.0, 3.0];
        let far = features(AgentState::new(-15.0, V20), AgentState::new(-15.0, V20), 0.1);
        let near = features(AgentState::new(-2.0, V20), AgentState::new(-2.0, V20), 0.1);
        let p_far = true_conditional(far, theta).prob(Decision::Brake);
        let p_near = true_conditional(near, theta).prob(Decision::Brake);
        assert!(p_far < 1e-6, "far-away human tracks: {p_far}");
        assert!(p_near > 0.1, "imminent conflict brakes more: {p_near}");
        assert!(p_near < 0.5);
    }

    #[test]
    fn dataset_respects_norm_bound_and_seed() {
        let bound = 18.0f64.sqrt();
        let a = sample_dataset(1000, [3.0, 3.0], bound, 42).unwrap();
        let b = sample_dataset(1000, [3.0, 3.0], bound, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!(a
            .samples
            .iter()
            .all(|s| (s.x[0] * s.x[0] + s.x[1] * s.x[1]).sqrt() <= bound + 1e-12));

        let c = sample_dataset(1000, [3.0, 3.0], bound, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn zero_theta_gives_balanced_labels() {
        let n = 100_000;
        let data = sample_dataset(n, [0.0, 0.0], 18.0f64.sqrt(), 5).unwrap();
        let mean: f64 = data.samples.iter().map(|s| f64::from(s.y)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 3.0 / (n as f64).sqrt() + 1e-3, "mean = {mean}");
    }

    #[test]
    fn label_frequency_converges_to_conditional() {
        let theta = [3.0, 3.0];
        let x = [0.3, -0.1];
        let p_plus = true_conditional(x, theta).prob_of_label(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_label(&mut rng, x, theta) == 1)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - p_plus).abs() <= 0.01, "freq {freq} vs p {p_plus}");
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(sample_dataset(0, [3.0, 3.0], 1.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let data = sample_dataset(50, [3.0, 3.0], 2.0, 9).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.samples, data.samples);
    }
}
