//! The Feller branching diffusion `dξ = sqrt(β ξ) dB`: transition Laplace
//! transform, extinction probability, exact and Euler samplers, and the random
//! time change used when the branching density varies in space.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};

/// Sampled masses below this are treated as absorbed.
pub const ABSORPTION_FLOOR: f64 = 1e-300;

const SMALL_SHAPE: u64 = 16;

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and positive, got {v}")))
    }
}

/// Parameters of a constant-rate Feller diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerParams {
    pub beta: f64,
}

impl FellerParams {
    pub fn new(beta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        Ok(Self { beta })
    }
}

/// `E_x exp(-z ξ_t) = exp(-x z / (1 + β t z / 2))`.
pub fn feller_laplace(x: f64, t: f64, beta: f64, z: f64) -> Result<f64> {
    check_nonneg("x", x)?;
    check_nonneg("t", t)?;
    check_positive("beta", beta)?;
    check_nonneg("z", z)?;
    Ok((-x * z / (1.0 + 0.5 * beta * t * z)).exp())
}

/// `P_x(ξ_t = 0) = exp(-2x / (β t))`.
pub fn feller_extinction_prob(x: f64, t: f64, beta: f64) -> Result<f64> {
    check_nonneg("x", x)?;
    check_nonneg("t", t)?;
    check_positive("beta", beta)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok((-2.0 * x / (beta * t)).exp())
}

/// Draws `ξ_t` given `ξ_0 = x` from the exact transition law.
///
/// The law is a Poisson mixture of Gammas: `N ~ Poisson(2x / βt)`, and given
/// `N ≥ 1` the value is `Gamma(N, βt/2)`. Expanding the Laplace transform
/// `exp(-x z / (1 + βtz/2))` in powers of `1 / (1 + βtz/2)` gives exactly this.
pub fn feller_exact_step<R: Rng + ?Sized>(x: f64, t: f64, beta: f64, rng: &mut R) -> Result<f64> {
    check_nonneg("x", x)?;
    check_nonneg("t", t)?;
    check_positive("beta", beta)?;
    Ok(exact_step(x, t, beta, rng))
}

/// Unchecked form of [`feller_exact_step`] for the inner loops.
pub(crate) fn exact_step<R: Rng + ?Sized>(x: f64, t: f64, beta: f64, rng: &mut R) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if t == 0.0 {
        return x;
    }
    let scale = 0.5 * beta * t;
    let n = poisson(x / scale, rng);
    if n == 0 {
        return 0.0;
    }
    let y = scale * gamma_integer_shape(n, rng);
    if y < ABSORPTION_FLOOR {
        0.0
    } else {
        y
    }
}

pub(crate) fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    let v: f64 = d.sample(rng);
    v as u64
}

fn gamma_integer_shape<R: Rng + ?Sized>(n: u64, rng: &mut R) -> f64 {
    if n <= SMALL_SHAPE {
        (0..n).map(|_| -> f64 { Exp1.sample(rng) }).sum::<f64>()
    } else {
        Gamma::new(n as f64, 1.0)
            .expect("positive integer shape")
            .sample(rng)
    }
}

/// Euler–Maruyama path of a Feller diffusion with time-varying branching rate.
///
/// `sigma_path[i]` is the rate on `[i dt, (i+1) dt)`; the path has
/// `sigma_path.len() + 1` entries and is absorbed at the first nonpositive value.
pub fn feller_euler_path<R: Rng + ?Sized>(
    x0: f64,
    sigma_path: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_nonneg("x0", x0)?;
    check_positive("dt", dt)?;
    let mut path = Vec::with_capacity(sigma_path.len() + 1);
    let mut x = x0;
    path.push(x);
    for &s in sigma_path {
        if x > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            x += (x * s * dt).sqrt() * z;
            if x <= 0.0 {
                x = 0.0;
            }
        }
        path.push(x);
    }
    Ok(path)
}

/// The clock `ψ(t) = β⁻¹ ∫₀ᵗ σ(x(s)) ds` of a particle moving through a
/// region where the branching density is `σ(·) ≥ ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    beta: f64,
    epsilon: f64,
    accumulated: Vec<(f64, f64)>,
}

impl TimeChange {
    pub fn new(beta: f64, epsilon: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        check_positive("epsilon", epsilon)?;
        Ok(Self {
            beta,
            epsilon,
            accumulated: vec![(0.0, 0.0)],
        })
    }

    pub fn time(&self) -> f64 {
        self.accumulated.last().map_or(0.0, |p| p.0)
    }

    pub fn psi(&self) -> f64 {
        self.accumulated.last().map_or(0.0, |p| p.1)
    }

    pub fn history(&self) -> &[(f64, f64)] {
        &self.accumulated
    }

    /// Left-endpoint step: `ψ(t + dt) = ψ(t) + σ dt / β` where `σ` is the
    /// branching density at the particle's position at time `t`. Returns the
    /// increment.
    pub fn advance(&mut self, sigma_at_position: f64, dt: f64) -> Result<f64> {
        if !(sigma_at_position >= self.epsilon) {
            return Err(Error::config(
                "sigma_profile",
                format!(
                    "branching density {sigma_at_position} fell below its lower bound {}",
                    self.epsilon
                ),
            ));
        }
        let inc = sigma_at_position * dt / self.beta;
        let (t, psi) = *self.accumulated.last().expect("history starts at 0");
        self.accumulated.push((t + dt, psi + inc));
        Ok(inc)
    }
}

/// Advances `tc` along a sampled path of branching densities at the particle's
/// successive positions.
pub fn advance_time_change(mut tc: TimeChange, sigma_along_path: &[f64], dt: f64) -> Result<TimeChange> {
    for &s in sigma_along_path {
        tc.advance(s, dt)?;
    }
    Ok(tc)
}
