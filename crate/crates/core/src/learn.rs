//! Norm-constrained logistic regression with generalization accounting.
//!
//! Fits the conditional decision model by empirical risk minimization over
//! the hypothesis class `{ sigma(y <x, theta>) : ||theta|| <= R }`, bounds
//! the excess cross-entropy risk via a Rademacher-complexity bound
//!
//! ```text
//! r(alpha, n) = (B R / sqrt(n)) (2 + sqrt(2 ln(2 / alpha)))
//! ```
//!
//! and converts the bound into a KL ambiguity radius `eta = sqrt(r)` for
//! the conditional distribution, with coverage guarantee
//! `(1 - r / eta)(1 - alpha)`. All risks are in nats.
//!
//! The ERM objective is smooth and convex in two dimensions, so a projected
//! gradient descent with backtracking line search is used; no external
//! solver is involved.

use crate::decision::{log_conditional, true_conditional, Dataset, FEATURE_DIM};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameter vector of the logistic model.
pub type Theta = [f64; FEATURE_DIM];

/// Mean negative log-likelihood of `data` under `theta`, in nats.
///
/// With `sigma(z) = 1 / (1 + exp(z))`, each term is
/// `-ln sigma(y <x, theta>) = softplus(y <x, theta>)`.
pub fn empirical_risk(theta: Theta, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("empirical risk of an empty dataset".into()));
    }
    let mut acc = 0.0;
    for s in &data.samples {
        let z = f64::from(s.y) * (s.x[0] * theta[0] + s.x[1] * theta[1]);
        acc += softplus(z);
    }
    Ok(acc / data.len() as f64)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// d softplus(z) / dz = 1 / (1 + exp(-z)).
fn softplus_grad(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn grad_empirical_risk(theta: Theta, data: &Dataset) -> Theta {
    let mut g = [0.0; FEATURE_DIM];
    for s in &data.samples {
        let y = f64::from(s.y);
        let z = y * (s.x[0] * theta[0] + s.x[1] * theta[1]);
        let w = y * softplus_grad(z);
        g[0] += w * s.x[0];
        g[1] += w * s.x[1];
    }
    let n = data.len() as f64;
    [g[0] / n, g[1] / n]
}

fn project_ball(theta: Theta, radius: f64) -> Theta {
    let norm = (theta[0] * theta[0] + theta[1] * theta[1]).sqrt();
    if norm <= radius {
        theta
    } else {
        let s = radius / norm;
        [theta[0] * s, theta[1] * s]
    }
}

/// Outcome of a projected-gradient fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitStatus {
    pub converged: bool,
    /// Norm of the unit-step projected-gradient residual at the iterate.
    pub residual: f64,
    pub iterations: usize,
}

/// Projected gradient descent on the empirical risk over the `R`-ball,
/// started from the origin. Convergence is declared when the fixed-point
/// residual `|| theta - proj(theta - grad) ||` drops below `tol`;
/// non-convergence is reported in the returned status, never hidden.
pub fn erm_fit(data: &Dataset, norm_bound: f64, tol: f64, max_iter: usize) -> Result<(Theta, FitStatus)> {
    erm_fit_from([0.0; FEATURE_DIM], data, norm_bound, tol, max_iter)
}

/// Same as [`erm_fit`] but from a caller-provided initial point (projected
/// onto the ball if outside).
pub fn erm_fit_from(
    init: Theta,
    data: &Dataset,
    norm_bound: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Theta, FitStatus)> {
    if data.is_empty() {
        return Err(Error::Data("cannot fit an empty dataset".into()));
    }
    if !(norm_bound > 0.0) {
        return Err(Error::Data(format!("norm bound must be positive, got {norm_bound}")));
    }

    let mut theta = project_ball(init, norm_bound);
    let mut risk = empirical_risk(theta, data)?;
    let mut step = 1.0;
    let mut status = FitStatus {
        converged: false,
        residual: f64::INFINITY,
        iterations: 0,
    };

    for iter in 0..max_iter {
        let g = grad_empirical_risk(theta, data);
        let fixed_point = project_ball([theta[0] - g[0], theta[1] - g[1]], norm_bound);
        let residual =
            ((theta[0] - fixed_point[0]).powi(2) + (theta[1] - fixed_point[1]).powi(2)).sqrt();
        status.residual = residual;
        status.iterations = iter;
        if residual <= tol {
            status.converged = true;
            break;
        }

        // Backtracking on the proximal sufficient-decrease condition.
        let mut accepted = false;
        for _ in 0..60 {
            let cand = project_ball([theta[0] - step * g[0], theta[1] - step * g[1]], norm_bound);
            let dx = [cand[0] - theta[0], cand[1] - theta[1]];
            let cand_risk = empirical_risk(cand, data)?;
            let quad = risk + g[0] * dx[0] + g[1] * dx[1]
                + (dx[0] * dx[0] + dx[1] * dx[1]) / (2.0 * step);
            if cand_risk <= quad + 1e-15 {
                theta = cand;
                risk = cand_risk;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Step collapsed to numerical noise; residual already recorded.
            break;
        }
    }
    Ok((theta, status))
}

/// Rademacher excess-risk bound `r(alpha, n)`, in nats.
pub fn excess_risk_bound(n: usize, alpha: f64, feature_bound: f64, norm_bound: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Data("sample count must be at least 1".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Data(format!("confidence level must be in (0,1), got {alpha}")));
    }
    Ok(feature_bound * norm_bound / (n as f64).sqrt()
        * (2.0 + (2.0 * (2.0 / alpha).ln()).sqrt()))
}

/// KL ambiguity radius derived from an excess-risk value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AmbiguityRadius {
    /// KL radius `eta = sqrt(min(excess, 1))`, nats.
    pub eta: f64,
    /// Probability that the true conditional lies in the KL ball,
    /// `(1 - excess / eta)(1 - alpha)`, floored at zero.
    pub coverage_guarantee: f64,
    /// Set when the excess risk exceeded 1 and was clipped; the coverage
    /// guarantee is vacuous in that case.
    pub clipped: bool,
}

/// Convert an excess-risk bound into the conditional KL ambiguity radius
/// `eta(r) = sqrt(r)`, defined for `r` in `[0, 1]`. Larger excess risks are
/// clipped to 1 and flagged; the guarantee then degenerates to zero.
pub fn ambiguity_radius(excess: f64, alpha: f64) -> Result<AmbiguityRadius> {
    if !(excess >= 0.0) {
        return Err(Error::Data(format!("excess risk must be non-negative, got {excess}")));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Data(format!("confidence level must be in (0,1), got {alpha}")));
    }
    let clipped = excess > 1.0;
    let r = excess.min(1.0);
    let eta = r.sqrt();
    // (1 - excess / eta)(1 - alpha); for unclipped r this is (1 - sqrt(r))(1 - alpha).
    let guarantee = if excess == 0.0 {
        1.0 - alpha
    } else {
        ((1.0 - excess / eta) * (1.0 - alpha)).max(0.0)
    };
    Ok(AmbiguityRadius {
        eta,
        coverage_guarantee: guarantee,
        clipped,
    })
}

/// Fitted model together with its generalization accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedModel {
    pub theta: Theta,
    pub norm_bound: f64,
    pub feature_bound: f64,
    /// Sample count used in the excess-risk bound.
    pub n: usize,
    pub alpha: f64,
    pub excess_risk: f64,
    pub ambiguity_radius: f64,
    pub coverage_guarantee: f64,
    pub radius_clipped: bool,
    pub fit: FitStatus,
}

/// Options for [`train_model`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub norm_bound: f64,
    pub feature_bound: f64,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Sample count to use in the excess-risk bound when it differs from
    /// the fitted dataset size (e.g. the dataset is a capped subsample of a
    /// nominally larger collection).
    pub bound_n: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            norm_bound: 18.0f64.sqrt(),
            feature_bound: 18.0f64.sqrt(),
            alpha: 0.05,
            tol: 1e-8,
            max_iter: 2000,
            bound_n: None,
        }
    }
}

/// Fit the model and derive its ambiguity radius in one step.
pub fn train_model(data: &Dataset, opts: &TrainOptions) -> Result<LearnedModel> {
    let (theta, fit) = erm_fit(data, opts.norm_bound, opts.tol, opts.max_iter)?;
    let n = opts.bound_n.unwrap_or(data.len());
    let excess = excess_risk_bound(n, opts.alpha, opts.feature_bound, opts.norm_bound)?;
    let radius = ambiguity_radius(excess, opts.alpha)?;
    Ok(LearnedModel {
        theta,
        norm_bound: opts.norm_bound,
        feature_bound: opts.feature_bound,
        n,
        alpha: opts.alpha,
        excess_risk: excess,
        ambiguity_radius: radius.eta,
        coverage_guarantee: radius.coverage_guarantee,
        radius_clipped: radius.clipped,
        fit,
    })
}

impl LearnedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Uniform distribution on a centered Euclidean ball, the feature law used
/// for Monte-Carlo risk estimates.
#[derive(Debug, Clone, Copy)]
pub struct UniformBall {
    pub radius: f64,
}

impl UniformBall {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> [f64; FEATURE_DIM] {
        let r = self.radius * rng.gen::<f64>().sqrt();
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        [r * phi.cos(), r * phi.sin()]
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
}

fn monte_carlo<F: FnMut(&mut ChaCha8Rng) -> f64>(
    n_samples: usize,
    seed: u64,
    mut term: F,
) -> RiskEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let v = term(&mut rng);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    RiskEstimate {
        mean,
        std_error: (var / n).sqrt(),
    }
}

/// Monte-Carlo cross-entropy risk `E_x[ H(p_true(.|x), p_model(.|x)) ]`
/// over the feature law, in nats.
pub fn true_risk(
    theta_model: Theta,
    theta_true: Theta,
    law: UniformBall,
    n_samples: usize,
    seed: u64,
) -> RiskEstimate {
    monte_carlo(n_samples, seed, |rng| {
        let x = law.sample(rng);
        let p = true_conditional(x, theta_true);
        let lq = log_conditional(x, theta_model);
        -(p.p[0] * lq[0] + p.p[1] * lq[1])
    })
}

/// Monte-Carlo excess risk `E_x[ KL(p_true(.|x) || p_model(.|x)) ]`, the
/// quantity bounded by [`excess_risk_bound`]. Pointwise non-negative, so it
/// has a much smaller Monte-Carlo variance than differencing two
/// [`true_risk`] estimates.
pub fn excess_risk_mc(
    theta_model: Theta,
    theta_true: Theta,
    law: UniformBall,
    n_samples: usize,
    seed: u64,
) -> RiskEstimate {
    monte_carlo(n_samples, seed, |rng| {
        let x = law.sample(rng);
        let p = true_conditional(x, theta_true);
        let lp = log_conditional(x, theta_true);
        let lq = log_conditional(x, theta_model);
        p.p[0] * (lp[0] - lq[0]) + p.p[1] * (lp[1] - lq[1])
    })
}
