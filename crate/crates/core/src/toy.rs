//! One-dimensional coupled self-play.
//!
//! A solver with scalar ability φ answers a question of scalar difficulty τ
//! with probability σ(φ − τ). The questioner emits difficulties from a policy
//! and is rewarded by ψ(u) = −|u − ½| on that probability, so its objective
//! moves whenever the solver does. [`theorem_check`] measures what one
//! questioner ascent step does to the *next* round's objective.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, out_of_range, LabError, Result};
use crate::model::{sigmoid, sigmoid_prime};
use crate::quadrature::{erf, SplitNormalRule};
use crate::rng::{stream, Domain};

/// Gauss–Legendre nodes per side of the kink for gaussian policies.
pub const QUADRATURE_NODES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DifficultyPolicy1D {
    PointMass { location: f64 },
    Gaussian { location: f64, log_scale: f64 },
}

impl DifficultyPolicy1D {
    pub fn location(&self) -> f64 {
        match *self {
            DifficultyPolicy1D::PointMass { location } | DifficultyPolicy1D::Gaussian { location, .. } => location,
        }
    }

    /// Standard deviation; zero for a point mass.
    pub fn scale(&self) -> f64 {
        match *self {
            DifficultyPolicy1D::PointMass { .. } => 0.0,
            DifficultyPolicy1D::Gaussian { log_scale, .. } => log_scale.exp(),
        }
    }

    pub fn with_location(&self, location: f64) -> Self {
        match *self {
            DifficultyPolicy1D::PointMass { .. } => DifficultyPolicy1D::PointMass { location },
            DifficultyPolicy1D::Gaussian { log_scale, .. } => DifficultyPolicy1D::Gaussian { location, log_scale },
        }
    }

    /// Probability mass within `eps` of the location.
    pub fn mass_within(&self, eps: f64) -> f64 {
        match *self {
            DifficultyPolicy1D::PointMass { .. } => 1.0,
            DifficultyPolicy1D::Gaussian { .. } => erf(eps / (self.scale() * std::f64::consts::SQRT_2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub solver_ability: f64,
    pub policy: DifficultyPolicy1D,
    pub iteration: u64,
}

/// ψ(u) = −|u − ½| on [0, 1].
pub fn shaped_utility(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(out_of_range("u", format!("{u} not in [0,1]")));
    }
    Ok(psi(u))
}

#[inline]
fn psi(u: f64) -> f64 {
    -(u - 0.5).abs()
}

/// ψ(σ(z)) computed without cancellation near z = 0.
#[inline]
fn utility_at(z: f64) -> f64 {
    // |σ(z) − ½| = ½·tanh(|z|/2)
    -0.5 * (0.5 * z.abs()).tanh()
}

/// d/dτ of ψ(σ(φ − τ)) at offset z = φ − τ. Zero at the kink.
#[inline]
fn utility_slope(z: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        z.signum() * sigmoid_prime(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    pub value: f64,
    /// Monte Carlo standard error; zero for closed-form and quadrature values.
    pub std_error: f64,
}

/// J(θ) = E_{τ∼π_θ}[ψ(σ(φ − τ))], by Monte Carlo for a gaussian policy.
pub fn coupled_objective<R: Rng + ?Sized>(
    policy: &DifficultyPolicy1D,
    phi: f64,
    mc_samples: usize,
    rng: &mut R,
) -> ObjectiveEstimate {
    match *policy {
        DifficultyPolicy1D::PointMass { location } => ObjectiveEstimate {
            value: utility_at(phi - location),
            std_error: 0.0,
        },
        DifficultyPolicy1D::Gaussian { location, .. } => {
            let n = mc_samples.max(1);
            let scale = policy.scale();
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                let v = utility_at(phi - location - scale * z);
                sum += v;
                sum_sq += v * v;
            }
            let mean = sum / n as f64;
            let var = if n > 1 {
                ((sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0)
            } else {
                0.0
            };
            ObjectiveEstimate {
                value: mean,
                std_error: (var / n as f64).sqrt(),
            }
        }
    }
}

/// Deterministic objective: closed form for a point mass, quadrature split at the kink for a gaussian.
pub fn coupled_objective_exact(policy: &DifficultyPolicy1D, phi: f64) -> f64 {
    match *policy {
        DifficultyPolicy1D::PointMass { location } => utility_at(phi - location),
        DifficultyPolicy1D::Gaussian { location, .. } => {
            let scale = policy.scale();
            SplitNormalRule::new(QUADRATURE_NODES).expect(|z| utility_at(phi - location - scale * z), (phi - location) / scale)
        }
    }
}

/// dJ/d(location). At the point-mass kink the subgradient 0 is returned.
pub fn coupled_objective_grad(policy: &DifficultyPolicy1D, phi: f64) -> f64 {
    match *policy {
        DifficultyPolicy1D::PointMass { location } => utility_slope(phi - location),
        DifficultyPolicy1D::Gaussian { location, .. } => {
            let scale = policy.scale();
            SplitNormalRule::new(QUADRATURE_NODES).expect(|z| utility_slope(phi - location - scale * z), (phi - location) / scale)
        }
    }
}

/// φ ← φ + η. The iteration counter is left to the caller.
pub fn solver_step(state: &CoupledState, eta: f64) -> CoupledState {
    CoupledState {
        solver_ability: state.solver_ability + eta,
        ..*state
    }
}

/// location ← location + α·∂J/∂location, on the objective of the current φ.
pub fn questioner_ascent_step(state: &CoupledState, alpha: f64) -> CoupledState {
    let g = coupled_objective_grad(&state.policy, state.solver_ability);
    CoupledState {
        policy: state.policy.with_location(state.policy.location() + alpha * g),
        ..*state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremCheckConfig {
    pub eta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub concentration_eps: f64,
    pub fd_step: f64,
    pub phi: f64,
    pub max_halvings: u32,
}

impl Default for TheoremCheckConfig {
    fn default() -> Self {
        TheoremCheckConfig {
            eta: 1.0,
            delta: 0.5,
            alpha: 1e-3,
            concentration_eps: 0.05,
            fd_step: 1e-5,
            phi: 0.0,
            max_halvings: 20,
        }
    }
}

impl TheoremCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta == 0.0 || !self.eta.is_finite() {
            return Err(LabError::HypothesesViolated("eta must be finite and non-zero".into()));
        }
        let inside = if self.eta > 0.0 {
            self.delta > 0.0 && self.delta < self.eta
        } else {
            self.delta < 0.0 && self.delta > self.eta
        };
        if !inside {
            return Err(LabError::HypothesesViolated(format!(
                "delta={} must lie strictly between 0 and eta={}",
                self.delta, self.eta
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("concentration_eps", self.concentration_eps),
            ("fd_step", self.fd_step),
        ] {
            if !(v > 0.0) {
                return Err(LabError::HypothesesViolated(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub eta: f64,
    pub delta: f64,
    pub alpha_requested: f64,
    pub alpha_used: f64,
    pub halvings: u32,
    /// g_t, the ascent direction of the current objective.
    pub ascent_direction: f64,
    /// σ(−δ): success probability at the emitted difficulty before the solver step.
    pub success_before: f64,
    /// σ(η − δ): the same probability after the solver step.
    pub success_after: f64,
    pub sign_flip: bool,
    pub j_next_before: f64,
    pub j_next_after: f64,
    pub delta_j: f64,
    pub directional_derivative: f64,
    /// Same quantity by central differences on J_{t+1}.
    pub directional_derivative_fd: f64,
    /// ΔJ/α; the measured stand-in for the constant c(η, δ).
    pub delta_j_per_alpha: f64,
    pub first_order_dominates: bool,
    /// ΔJ for a gaussian of scale ε/3 centred on the same point, by quadrature.
    pub gaussian_delta_j: f64,
    pub gaussian_mass_within_eps: f64,
    pub reversal_confirmed: bool,
}

pub fn theorem_check(config: &TheoremCheckConfig) -> Result<TheoremReport> {
    config.validate()?;
    let phi_t = config.phi;
    let phi_next = phi_t + config.eta;
    let theta_t = phi_t + config.delta;
    let policy = DifficultyPolicy1D::PointMass { location: theta_t };

    let g_t = coupled_objective_grad(&policy, phi_t);
    let grad_next = coupled_objective_grad(&policy, phi_next);
    let directional_derivative = grad_next * g_t;
    let h = config.fd_step;
    let fd = (utility_at(phi_next - theta_t - h) - utility_at(phi_next - theta_t + h)) / (2.0 * h);
    let directional_derivative_fd = fd * g_t;

    let j_next_before = utility_at(phi_next - theta_t);
    let mut alpha = config.alpha;
    let mut halvings = 0;
    let (mut j_next_after, mut delta_j, mut dominates);
    loop {
        j_next_after = utility_at(phi_next - (theta_t + alpha * g_t));
        delta_j = j_next_after - j_next_before;
        let first_order = alpha * directional_derivative;
        dominates = delta_j < 0.0 && (delta_j - first_order).abs() <= 0.5 * first_order.abs();
        if dominates || halvings >= config.max_halvings {
            break;
        }
        alpha *= 0.5;
        halvings += 1;
    }

    let gaussian = DifficultyPolicy1D::Gaussian {
        location: theta_t,
        log_scale: (config.concentration_eps / 3.0).ln(),
    };
    let g_gauss = coupled_objective_grad(&gaussian, phi_t);
    let gaussian_delta_j = coupled_objective_exact(&gaussian.with_location(theta_t + alpha * g_gauss), phi_next)
        - coupled_objective_exact(&gaussian, phi_next);

    let success_before = sigmoid(-config.delta);
    let success_after = sigmoid(config.eta - config.delta);
    let sign_flip = (success_before - 0.5) * (success_after - 0.5) < 0.0;

    Ok(TheoremReport {
        eta: config.eta,
        delta: config.delta,
        alpha_requested: config.alpha,
        alpha_used: alpha,
        halvings,
        ascent_direction: g_t,
        success_before,
        success_after,
        sign_flip,
        j_next_before,
        j_next_after,
        delta_j,
        directional_derivative,
        directional_derivative_fd,
        delta_j_per_alpha: delta_j / alpha,
        first_order_dominates: dominates,
        gaussian_delta_j,
        gaussian_mass_within_eps: gaussian.mass_within(config.concentration_eps),
        reversal_confirmed: delta_j < 0.0 && directional_derivative < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub phi: f64,
    pub location: f64,
    pub scale: f64,
    pub j_before: f64,
    pub j_after: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `iterations + 1` states, the first being the initial one.
    pub states: Vec<CoupledState>,
    pub records: Vec<IterationRecord>,
}

impl Trajectory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,phi,location,scale,J_before,J_after,grad\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.iteration, r.phi, r.location, r.scale, r.j_before, r.j_after, r.grad
            ));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| io_error(path, e))
    }
}

/// Alternates a questioner ascent step (against the current φ) with a solver
/// step. `J_before`/`J_after` bracket the questioner half-step on the current
/// objective. With `mc_samples > 0` and a gaussian policy the objective values
/// are Monte Carlo estimates on a per-iteration stream shared by both
/// brackets; otherwise they are exact.
pub fn run_coupled_selfplay(
    initial: CoupledState,
    eta: f64,
    alpha: f64,
    iterations: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Trajectory> {
    if iterations == 0 {
        return Err(out_of_range("iterations", "must be >= 1"));
    }
    if !(alpha > 0.0) {
        return Err(out_of_range("alpha", "must be > 0"));
    }
    let objective = |policy: &DifficultyPolicy1D, phi: f64, it: u64| -> f64 {
        match policy {
            DifficultyPolicy1D::Gaussian { .. } if mc_samples > 0 => {
                let mut rng = stream(seed, Domain::Objective, &[it]);
                coupled_objective(policy, phi, mc_samples, &mut rng).value
            }
            _ => coupled_objective_exact(policy, phi),
        }
    };
    let mut states = Vec::with_capacity(iterations + 1);
    let mut records = Vec::with_capacity(iterations);
    let mut state = initial;
    states.push(state);
    for _ in 0..iterations {
        let phi = state.solver_ability;
        let grad = coupled_objective_grad(&state.policy, phi);
        let j_before = objective(&state.policy, phi, state.iteration);
        let stepped = questioner_ascent_step(&state, alpha);
        let j_after = objective(&stepped.policy, phi, state.iteration);
        records.push(IterationRecord {
            iteration: state.iteration,
            phi,
            location: state.policy.location(),
            scale: state.policy.scale(),
            j_before,
            j_after,
            grad,
        });
        state = solver_step(&stepped, eta);
        state.iteration += 1;
        states.push(state);
    }
    Ok(Trajectory { states, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(location: f64) -> DifficultyPolicy1D {
        DifficultyPolicy1D::PointMass { location }
    }

    #[test]
    fn psi_examples() {
        assert_eq!(shaped_utility(0.5).unwrap(), 0.0);
        assert_eq!(shaped_utility(0.0).unwrap(), -0.5);
        assert_eq!(shaped_utility(1.0).unwrap(), -0.5);
        assert!((shaped_utility(sigmoid(-0.5)).unwrap() + 0.122459).abs() < 1e-6);
        assert!(shaped_utility(1.01).is_err());
        assert!(shaped_utility(-0.01).is_err());
    }

    #[test]
    fn psi_symmetric_on_grid() {
        for i in 0..=1000 {
            let u = i as f64 / 1000.0;
            assert!((shaped_utility(u).unwrap() - shaped_utility(1.0 - u).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn tanh_form_matches_definition() {
        for i in -400..=400 {
            let z = i as f64 * 0.05;
            assert!((utility_at(z) - psi(sigmoid(z))).abs() < 1e-15);
        }
    }

    #[test]
    fn point_mass_objective() {
        let mut rng = stream(0, Domain::Objective, &[]);
        assert_eq!(coupled_objective(&pm(1.3), 1.3, 1, &mut rng).value, 0.0);
        let v = coupled_objective(&pm(0.5), 0.0, 1, &mut rng).value;
        assert!((v + 0.122459).abs() < 1e-6);
    }

    #[test]
    fn gradient_signs_and_kink() {
        assert!(coupled_objective_grad(&pm(0.5), 0.0) < 0.0);
        assert!(coupled_objective_grad(&pm(-0.5), 0.0) > 0.0);
        assert_eq!(coupled_objective_grad(&pm(0.0), 0.0), 0.0);
        let g = coupled_objective_grad(&pm(0.7), 0.2);
        assert!((g + sigmoid_prime(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        for &(loc, phi) in &[(0.3, 0.0), (-0.3, 0.0), (1.7, 0.4), (-2.0, 1.0)] {
            let g = coupled_objective_grad(&pm(loc), phi);
            let fd = (coupled_objective_exact(&pm(loc + h), phi) - coupled_objective_exact(&pm(loc - h), phi)) / (2.0 * h);
            assert!((g - fd).abs() / g.abs().max(1.0) < 1e-6, "loc={loc}: {g} vs {fd}");
        }
        let gauss = DifficultyPolicy1D::Gaussian { location: 0.8, log_scale: 0.3f64.ln() };
        let g = coupled_objective_grad(&gauss, 0.0);
        let fd = (coupled_objective_exact(&gauss.with_location(0.8 + h), 0.0)
            - coupled_objective_exact(&gauss.with_location(0.8 - h), 0.0))
            / (2.0 * h);
        assert!((g - fd).abs() / g.abs().max(1.0) < 1e-6);
    }

    /// Composite Simpson on the two smooth pieces either side of the kink.
    fn gaussian_objective_oracle(location: f64, scale: f64, phi: f64) -> f64 {
        let f = |z: f64| {
            let tau = location + scale * z;
            psi(sigmoid(phi - tau)) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let simpson = |a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let kink = (phi - location) / scale;
        let (lo, hi) = (-12.0, 12.0);
        let k = kink.clamp(lo, hi);
        simpson(lo, k, 20_000) + simpson(k, hi, 20_000)
    }

    #[test]
    fn gaussian_objective_against_quadrature_oracle() {
        let phi = 0.4;
        let policy = DifficultyPolicy1D::Gaussian { location: phi, log_scale: 0.1f64.ln() };
        let oracle = gaussian_objective_oracle(phi, 0.1, phi);
        let mut rng = stream(11, Domain::Objective, &[]);
        let est = coupled_objective(&policy, phi, 100_000, &mut rng);
        assert!(est.value <= 0.0 && est.value >= -0.05);
        assert!(est.std_error < 1e-3);
        assert!((est.value - oracle).abs() < 4.0 * est.std_error, "{} vs {oracle}", est.value);

        // off-centre, deterministic quadrature against the Simpson oracle
        let off = DifficultyPolicy1D::Gaussian { location: 1.0, log_scale: 0.5f64.ln() };
        let q = coupled_objective_exact(&off, 0.0);
        assert!((q - gaussian_objective_oracle(1.0, 0.5, 0.0)).abs() < 1e-8);
    }

    #[test]
    fn objective_is_never_positive() {
        for i in -20..=20 {
            let loc = i as f64 * 0.25;
            assert!(coupled_objective_exact(&pm(loc), 0.0) <= 0.0);
            let g = DifficultyPolicy1D::Gaussian { location: loc, log_scale: -1.0 };
            assert!(coupled_objective_exact(&g, 0.0) < 0.0);
        }
        assert_eq!(coupled_objective_exact(&pm(0.0), 0.0), 0.0);
    }

    #[test]
    fn solver_step_examples() {
        let s = CoupledState { solver_ability: 0.0, policy: pm(0.5), iteration: 3 };
        assert_eq!(solver_step(&s, 1.0).solver_ability, 1.0);
        assert_eq!(solver_step(&s, 0.0), s);
        assert_eq!(solver_step(&solver_step(&s, 0.5), 0.5), solver_step(&s, 1.0));
        assert_eq!(solver_step(&s, 1.0).iteration, 3);
    }

    #[test]
    fn ascent_step_examples() {
        let at_kink = CoupledState { solver_ability: 0.2, policy: pm(0.2), iteration: 0 };
        assert_eq!(questioner_ascent_step(&at_kink, 0.1), at_kink);
        let s = CoupledState { solver_ability: 0.0, policy: pm(0.5), iteration: 0 };
        let a = questioner_ascent_step(&s, 1e-3).policy.location() - 0.5;
        let b = questioner_ascent_step(&s, 2e-3).policy.location() - 0.5;
        assert!(a < 0.0);
        assert!((b - 2.0 * a).abs() < 1e-15);
    }

    #[test]
    fn theorem_holds_both_signs() {
        let report = theorem_check(&TheoremCheckConfig::default()).unwrap();
        assert!(report.reversal_confirmed && report.delta_j < 0.0 && report.directional_derivative < 0.0);
        assert!(report.success_before < 0.5 && report.success_after > 0.5 && report.sign_flip);
        assert!(report.first_order_dominates);
        assert!((report.directional_derivative - report.directional_derivative_fd).abs() < 1e-8);
        assert!(report.gaussian_delta_j < 0.0);

        let mirror = theorem_check(&TheoremCheckConfig { eta: -1.0, delta: -0.5, ..Default::default() }).unwrap();
        assert!(mirror.reversal_confirmed);
        assert!(mirror.success_before > 0.5 && mirror.success_after < 0.5);
    }

    #[test]
    fn theorem_rejects_bad_hypotheses() {
        for (eta, delta) in [(1.0, -0.5), (1.0, 1.5), (-1.0, 0.5), (1.0, 0.0), (0.0, 0.0)] {
            let r = theorem_check(&TheoremCheckConfig { eta, delta, ..Default::default() });
            assert!(matches!(r, Err(LabError::HypothesesViolated(_))), "eta={eta} delta={delta}");
        }
        assert!(theorem_check(&TheoremCheckConfig { alpha: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn stationary_solver_gives_monotone_ascent() {
        let init = CoupledState {
            solver_ability: 0.0,
            policy: DifficultyPolicy1D::Gaussian { location: 1.5, log_scale: 0.2f64.ln() },
            iteration: 0,
        };
        let traj = run_coupled_selfplay(init, 0.0, 0.5, 50, 0, 0).unwrap();
        assert_eq!(traj.states.len(), 51);
        for w in traj.states.windows(2) {
            assert!(w[1].policy.location().abs() <= w[0].policy.location().abs() + 1e-12);
        }
        for r in &traj.records {
            assert!(r.j_after >= r.j_before - 1e-15);
        }
        assert!(traj.states[50].policy.location().abs() < 0.05);
    }

    #[test]
    fn moving_solver_flips_gradient_sign() {
        let init = CoupledState {
            solver_ability: 0.0,
            policy: DifficultyPolicy1D::Gaussian { location: 0.5, log_scale: 0.2f64.ln() },
            iteration: 0,
        };
        let traj = run_coupled_selfplay(init, 1.0, 1e-2, 20, 1000, 0).unwrap();
        let flips = traj
            .records
            .windows(2)
            .filter(|w| w[0].grad.signum() != w[1].grad.signum())
            .count();
        assert!(flips >= 1);
        let again = run_coupled_selfplay(init, 1.0, 1e-2, 20, 1000, 0).unwrap();
        assert_eq!(traj, again);
    }
}
