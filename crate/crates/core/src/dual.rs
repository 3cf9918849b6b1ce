//! Moment oracles for the process with deterministic immigration: the dual
//! jump chain for the constant test function, the closed triangular moment
//! system of the total mass, and the first-moment field.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::measures::{BaseMeasure, TestFunction};
use crate::quad::adaptive_simpson;

/// Highest moment order solved by [`moment_ode`].
pub const MAX_MOMENT: usize = 8;

/// State of the dual chain for `f ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualState {
    /// Number of particles.
    pub m: u32,
    /// Current value of the constant function.
    pub c: f64,
    pub clock: f64,
    /// `∫₀^clock ½ M_s (M_s + 1) ds`.
    pub accumulated_exponent: f64,
}

impl DualState {
    pub fn new(n: u32) -> Self {
        Self {
            m: n,
            c: 1.0,
            clock: 0.0,
            accumulated_exponent: 0.0,
        }
    }

    /// Total jump rate `M(M-1)/2 + M`.
    pub fn jump_rate(&self) -> f64 {
        let m = self.m as f64;
        0.5 * m * (m + 1.0)
    }
}

/// One unbiased draw of `E⟨1, Y_t⟩ⁿ` from the dual chain.
///
/// From `M` particles the chain jumps at rate `M(M+1)/2`: a pair merges
/// (`c ← σc`) with weight `M(M-1)/2`, or a particle is absorbed by immigration
/// (`c ← ⟨1,m⟩c`) with weight `M`. The draw is
/// `c_t · ⟨1,μ⟩^{M_t} · exp(∫₀ᵗ ½M_s(M_s+1) ds)`.
pub fn dual_chain_sample<R: Rng + ?Sized>(
    n: u32,
    t: f64,
    sigma: f64,
    m_mass: f64,
    mu_mass: f64,
    rng: &mut R,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain("dual chain needs n ≥ 1"));
    }
    if !(t >= 0.0 && sigma >= 0.0 && m_mass >= 0.0 && mu_mass >= 0.0) {
        return Err(Error::domain("dual chain parameters must be nonnegative"));
    }
    let mut s = DualState::new(n);
    while s.m > 0 {
        let rate = s.jump_rate();
        let wait = Exp::new(rate).expect("positive rate").sample(rng);
        if s.clock + wait >= t {
            s.accumulated_exponent += rate * (t - s.clock);
            s.clock = t;
            break;
        }
        s.accumulated_exponent += rate * wait;
        s.clock += wait;
        let m = s.m as f64;
        let merge = 0.5 * m * (m - 1.0);
        if rng.random::<f64>() * rate < merge {
            s.c *= sigma;
        } else {
            s.c *= m_mass;
        }
        s.m -= 1;
    }
    Ok(s.c * mu_mass.powi(s.m as i32) * s.accumulated_exponent.exp())
}

/// `E⟨1,Y_t⟩^k` for `k = 1..=n`, from
/// `m_k' = [½σk(k-1) + k⟨1,m⟩] m_{k-1}`, `m_k(0) = ⟨1,μ⟩^k`.
/// Each `m_k` is a polynomial in `t`, integrated exactly.
pub fn moment_ode(n: usize, t: f64, sigma: f64, m_mass: f64, mu_mass: f64) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::domain("moment order must be at least 1"));
    }
    if n > MAX_MOMENT {
        return Err(Error::Unsupported(format!(
            "moments above order {MAX_MOMENT} are not solved"
        )));
    }
    let mut prev = vec![1.0];
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let kf = k as f64;
        let a = 0.5 * sigma * kf * (kf - 1.0) + kf * m_mass;
        let mut poly = vec![mu_mass.powi(k as i32)];
        poly.extend(prev.iter().enumerate().map(|(i, c)| a * c / (i + 1) as f64));
        out.push(poly.iter().rev().fold(0.0, |acc, c| acc * t + c));
        prev = poly;
    }
    Ok(out)
}

/// `E⟨φ, Y_t⟩ = ⟨P_tφ, μ⟩ + q ∫₀ᵗ ⟨P_sφ, m⟩ ds`, where `P` is the heat
/// semigroup with diffusivity `rho0`. The time integral uses adaptive Simpson
/// to `1e-10`.
pub fn first_moment_field(
    phi: &TestFunction,
    t: f64,
    rho0: f64,
    mu: &BaseMeasure,
    m: &BaseMeasure,
    q_const: f64,
) -> Result<f64> {
    if !(t >= 0.0 && rho0 > 0.0) {
        return Err(Error::domain("first moment needs t ≥ 0 and rho0 > 0"));
    }
    phi.heat_semigroup(0.0, rho0, 0.0)?;
    let at = |s: f64, nu: &BaseMeasure| {
        nu.integrate_fn(|x| phi.heat_semigroup(s, rho0, x).expect("validated"), 1e-13)
    };
    let initial = at(t, mu);
    if q_const == 0.0 || m.total_mass() == 0.0 || t == 0.0 {
        return Ok(initial);
    }
    Ok(initial + q_const * adaptive_simpson(|s| at(s, m), 0.0, t, 1e-10))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::AtomicMeasure;
    use crate::rng::derive_rng;

    fn dirac(x: f64, mass: f64) -> BaseMeasure {
        BaseMeasure::Atomic(AtomicMeasure::from_pairs([(x, mass)]).unwrap())
    }

    #[test]
    fn moment_ode_examples() {
        let (s, mm, mu, t) = (1.3, 0.7, 1.1, 0.9);
        let m = moment_ode(3, t, s, mm, mu).unwrap();
        assert!((m[0] - (mu + mm * t)).abs() < 1e-14);
        let m2 = mu * mu + (s + 2.0 * mm) * (mu * t + mm * t * t / 2.0);
        assert!((m[1] - m2).abs() < 1e-13);
        let flat = moment_ode(8, 2.0, 0.0, 0.0, 1.5).unwrap();
        for (k, v) in flat.iter().enumerate() {
            assert!((v - 1.5f64.powi(k as i32 + 1)).abs() < 1e-12);
        }
        assert!(matches!(moment_ode(9, 1.0, 1.0, 1.0, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn moment_ode_matches_rk4() {
        let (s, mm, mu): (f64, f64, f64) = (0.8, 1.2, 0.5);
        let n = 5;
        let rhs = |y: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let k = (i + 1) as f64;
                    let prev = if i == 0 { 1.0 } else { y[i - 1] };
                    (0.5 * s * k * (k - 1.0) + k * mm) * prev
                })
                .collect()
        };
        let mut y: Vec<f64> = (1..=n).map(|k| mu.powi(k as i32)).collect();
        let h = 1e-3;
        for _ in 0..1500 {
            let k1 = rhs(&y);
            let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
            let k2 = rhs(&y2);
            let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
            let k3 = rhs(&y3);
            let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
            let k4 = rhs(&y4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let exact = moment_ode(n, 1.5, s, mm, mu).unwrap();
        for i in 0..n {
            assert!((exact[i] - y[i]).abs() < 1e-9 * exact[i].abs().max(1.0), "k={}", i + 1);
        }
    }

    #[test]
    fn moments_increase_with_time_and_sigma() {
        for (s, mm, mu) in [(0.5, 0.5, 1.0), (1.0, 1.0, 0.5), (2.0, 0.3, 2.0)] {
            for k in 0..4 {
                let a = moment_ode(4, 0.5, s, mm, mu).unwrap()[k];
                let b = moment_ode(4, 1.0, s, mm, mu).unwrap()[k];
                assert!(b >= a);
                if k >= 1 {
                    let c = moment_ode(4, 1.0, 2.0 * s, mm, mu).unwrap()[k];
                    assert!(c >= b);
                }
            }
        }
    }

    #[test]
    fn chain_degenerate_and_first_moment() {
        let mut rng = derive_rng(1, 0, 0, 0);
        assert!(dual_chain_sample(0, 1.0, 1.0, 1.0, 1.0, &mut rng).is_err());
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| dual_chain_sample(2, 0.7, 0.0, 0.0, 1.3, &mut rng).unwrap())
            .collect();
        let m = crate::stats::mean(&draws);
        assert!((m - 1.69).abs() <= 3.0 * crate::stats::stderr(&draws));
        let draws: Vec<f64> = (0..n)
            .map(|_| dual_chain_sample(1, 1.0, 1.0, 0.5, 1.0, &mut rng).unwrap())
            .collect();
        assert!((crate::stats::mean(&draws) - 1.5).abs() <= 3.0 * crate::stats::stderr(&draws));
    }

    #[test]
    fn first_moment_field_examples() {
        let empty = BaseMeasure::default();
        let mu = dirac(0.0, 1.0);
        let m = dirac(0.0, 1.0);
        let one = TestFunction::Constant(1.0);
        let v = first_moment_field(&one, 0.8, 2.0, &mu, &m, 1.5).unwrap();
        assert!((v - (1.0 + 1.5 * 0.8)).abs() < 1e-12);
        let (w, rho0, t) = (3.0, 1.7, 0.6);
        let cos = TestFunction::Cosine { freq: w, phase: 0.0 };
        let v = first_moment_field(&cos, t, rho0, &mu, &empty, 1.0).unwrap();
        assert!((v - (-rho0 * w * w * t / 2.0).exp()).abs() < 1e-14);
        let v = first_moment_field(&cos, t, rho0, &empty, &m, 1.0).unwrap();
        let closed = (1.0 - (-rho0 * w * w * t / 2.0).exp()) * 2.0 / (rho0 * w * w);
        assert!((v - closed).abs() < 1e-10);
    }
}
