//! Divisible sandpiles on the torus and their stabilization by parallel toppling.
//!
//! Every site with mass above 1 keeps 1 and sends its excess through the
//! kernel (itself included). The odometer `u` accumulates the emitted mass, so
//! that `s_t = s_0 + L u_t` with `L f = (p * f) − f`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::Generator;
use crate::montecarlo::seed_stream;
use crate::numerics::KahanSum;
use crate::torus::LatticeSpec;

pub const DEFAULT_EPS: f64 = 1e-12;
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;
const MASS_TOL: f64 = 1e-9;

/// Distribution of the i.i.d. weights `σ(x)` (mean 0, variance 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    Gaussian,
    /// Uniform on `[−√3, √3]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandpileState {
    spec: LatticeSpec,
    s: Vec<f64>,
    u: Vec<f64>,
    t: u64,
}

/// Draws `σ(x)` for every site from the generator, in flat-index order.
pub fn sample_weights<R: Rng>(spec: LatticeSpec, weights: Weights, rng: &mut R) -> Vec<f64> {
    let count = spec.site_count();
    match weights {
        Weights::Gaussian => (0..count).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        Weights::Uniform => {
            let a = 3f64.sqrt();
            (0..count).map(|_| rng.random_range(-a..a)).collect()
        }
    }
}

/// `s = 1 + σ − mean σ`, so that `Σ s = n^d` up to rounding.
pub fn centered_masses(sigma: &[f64]) -> Vec<f64> {
    let mean = sigma.iter().copied().collect::<KahanSum>().value() / sigma.len() as f64;
    sigma.iter().map(|v| 1.0 + v - mean).collect()
}

/// Gaussian initial condition from stream 0 of `seed`.
pub fn init_gaussian(spec: LatticeSpec, seed: u64) -> SandpileState {
    init_random(spec, Weights::Gaussian, seed)
}

pub fn init_random(spec: LatticeSpec, weights: Weights, seed: u64) -> SandpileState {
    init_with_rng(spec, weights, &mut seed_stream(seed, 0))
}

pub fn init_with_rng<R: Rng>(spec: LatticeSpec, weights: Weights, rng: &mut R) -> SandpileState {
    let sigma = sample_weights(spec, weights, rng);
    SandpileState { spec, s: centered_masses(&sigma), u: vec![0.0; spec.site_count()], t: 0 }
}

/// Checks `Σ s = n^d` within `1e−9·n^d`.
pub fn check_mass(spec: LatticeSpec, s: &[f64]) -> Result<()> {
    spec.check_field(s.len())?;
    let expected = spec.site_count() as f64;
    let got = s.iter().copied().collect::<KahanSum>().value();
    if !got.is_finite() || (got - expected).abs() > MASS_TOL * expected {
        return Err(Error::MassViolation { expected, got });
    }
    Ok(())
}

pub fn init_deterministic(spec: LatticeSpec, s_values: &[f64]) -> Result<SandpileState> {
    check_mass(spec, s_values)?;
    Ok(SandpileState { spec, s: s_values.to_vec(), u: vec![0.0; spec.site_count()], t: 0 })
}

impl SandpileState {
    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn masses(&self) -> &[f64] {
        &self.s
    }

    /// Raw accumulated odometer.
    pub fn odometer(&self) -> &[f64] {
        &self.u
    }

    /// Odometer shifted so that its minimum is 0.
    pub fn odometer_min_normalized(&self) -> Vec<f64> {
        let m = self.u.iter().copied().fold(f64::INFINITY, f64::min);
        self.u.iter().map(|v| v - m).collect()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn total_mass(&self) -> f64 {
        self.s.iter().copied().collect::<KahanSum>().value()
    }

    /// `max_x (s(x) − 1)`.
    pub fn max_excess(&self) -> f64 {
        self.s.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v - 1.0))
    }

    /// `‖s − 1‖_∞`.
    pub fn sup_deviation(&self) -> f64 {
        self.s.iter().fold(0.0, |m, v| m.max((v - 1.0).abs()))
    }

    /// One toppling step releasing `fraction` of every positive excess.
    /// Returns the largest released amount.
    pub fn topple(&mut self, generator: &Generator, fraction: f64) -> Result<f64> {
        self.spec.check_same(&generator.spec())?;
        let e: Vec<f64> = self.s.iter().map(|v| fraction * (v - 1.0).max(0.0)).collect();
        let released = e.iter().copied().fold(0.0, f64::max);
        if released == 0.0 {
            return Ok(0.0);
        }
        let flow = generator.apply(&e)?;
        for ((s, u), (f, ex)) in self.s.iter_mut().zip(self.u.iter_mut()).zip(flow.iter().zip(&e)) {
            *s += f;
            *u += ex;
        }
        self.t += 1;
        Ok(released)
    }
}

/// Parallel toppling step `e = (s−1)^+`, `u ← u + e`, `s ← s + L e`.
pub fn topple_step(state: &SandpileState, generator: &Generator) -> Result<SandpileState> {
    let mut next = state.clone();
    next.topple(generator, 1.0)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilizeOptions {
    /// Stop once `‖s − 1‖_∞ ≤ eps`.
    pub eps: f64,
    pub max_steps: u64,
    /// Fraction of the excess released per step; 1 is parallel toppling.
    pub fraction: f64,
    /// Progress is logged every this many steps.
    pub log_every: u64,
}

impl Default for StabilizeOptions {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, max_steps: DEFAULT_MAX_STEPS, fraction: 1.0, log_every: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizationResult {
    pub state: SandpileState,
    pub iterations: u64,
    /// `max_x (s(x) − 1)` at exit.
    pub max_residual_excess: f64,
    /// `‖s − 1‖_∞` at exit.
    pub sup_deviation: f64,
    pub converged: bool,
    /// Per-step contraction of the released excess over the last steps.
    pub decay_ratio: Option<f64>,
}

pub fn stabilize(state: SandpileState, generator: &Generator, eps: f64, max_steps: u64) -> Result<StabilizationResult> {
    stabilize_with(state, generator, &StabilizeOptions { eps, max_steps, ..StabilizeOptions::default() })
}

/// Topples until `‖s − 1‖_∞ ≤ eps` or `max_steps` is reached.
///
/// Stopping on `max (s − 1) ≤ eps` alone would leave deficits of up to
/// `n^d·eps` below 1; requiring both tails pins the all-1 limit.
pub fn stabilize_with(
    mut state: SandpileState,
    generator: &Generator,
    opts: &StabilizeOptions,
) -> Result<StabilizationResult> {
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {}", opts.eps)));
    }
    if !(opts.fraction > 0.0 && opts.fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1], got {}", opts.fraction)));
    }
    check_mass(state.spec, &state.s)?;
    let start = state.t;
    let window = 64usize;
    let mut history: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(window + 1);
    let mut converged = state.sup_deviation() <= opts.eps;
    while !converged && state.t - start < opts.max_steps {
        let released = state.topple(generator, opts.fraction)?;
        history.push_back(released);
        if history.len() > window {
            history.pop_front();
        }
        let steps = state.t - start;
        if opts.log_every > 0 && steps.is_multiple_of(opts.log_every) {
            log::info!("step {steps}: max excess {:e}, sup deviation {:e}", state.max_excess(), state.sup_deviation());
        }
        converged = state.sup_deviation() <= opts.eps;
        if released == 0.0 && !converged {
            // nothing left to topple yet not flat: mass was not conserved
            return Err(Error::MassViolation { expected: state.spec.site_count() as f64, got: state.total_mass() });
        }
    }
    let decay_ratio = match (history.front(), history.back()) {
        (Some(&first), Some(&last)) if history.len() > 1 && first > 0.0 && last > 0.0 => {
            Some((last / first).powf(1.0 / (history.len() - 1) as f64))
        }
        _ => None,
    };
    if !converged {
        log::warn!(
            "no convergence after {} steps: sup deviation {:e}, decay ratio {:?}",
            opts.max_steps,
            state.sup_deviation(),
            decay_ratio
        );
    }
    Ok(StabilizationResult {
        iterations: state.t - start,
        max_residual_excess: state.max_excess(),
        sup_deviation: state.sup_deviation(),
        converged,
        decay_ratio,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel;

    #[test]
    fn deterministic_init_checks_mass() {
        let spec = LatticeSpec::new(1, 2).unwrap();
        assert!(init_deterministic(spec, &[1.0, 1.0]).is_ok());
        assert!(init_deterministic(spec, &[0.0, 2.0]).is_ok());
        assert!(matches!(init_deterministic(spec, &[1.0, 2.0]), Err(Error::MassViolation { .. })));
        assert!(init_deterministic(spec, &[2.0]).is_err());
    }

    #[test]
    fn two_site_single_step() {
        let spec = LatticeSpec::new(1, 2).unwrap();
        let g = Generator::new(&build_kernel(spec, 1.0, 1e-12).unwrap());
        // flat order is x = -1, 0; s(0) = 0, s(1) = s(-1) = 2
        let st = init_deterministic(spec, &[2.0, 0.0]).unwrap();
        let next = topple_step(&st, &g).unwrap();
        assert!((next.masses()[1] - 0.75).abs() < 1e-14);
        assert!((next.masses()[0] - 1.25).abs() < 1e-14);
        assert_eq!(next.odometer(), &[1.0, 0.0]);
    }

    #[test]
    fn stable_state_is_fixed() {
        let spec = LatticeSpec::new(2, 4).unwrap();
        let g = Generator::new(&build_kernel(spec, 1.0, 1e-12).unwrap());
        let st = init_deterministic(spec, &[1.0; 16]).unwrap();
        let res = stabilize(st.clone(), &g, 1e-12, 10).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert!(res.state.odometer().iter().all(|&v| v == 0.0));
        assert_eq!(topple_step(&st, &g).unwrap(), st);
    }

    #[test]
    fn uniform_weights_have_unit_variance() {
        let spec = LatticeSpec::new(1, 1 << 16).unwrap();
        let mut rng = seed_stream(3, 0);
        let w = sample_weights(spec, Weights::Uniform, &mut rng);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 1.0).abs() < 0.02);
        assert!(w.iter().all(|v| v.abs() <= 3f64.sqrt()));
    }
}
