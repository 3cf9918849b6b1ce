//! Purely atomic measures and the observables evaluated on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::CorrelationFunction;
use crate::quad::adaptive_simpson;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// A finite sum of weighted point masses. Zero-mass atoms are never stored;
/// co-located atoms are kept apart.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a measure from `(location, mass)` pairs, dropping zero masses.
    pub fn from_pairs<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Result<Self> {
        let mut mu = Self::new();
        for (x, m) in pairs {
            mu.push(x, m)?;
        }
        Ok(mu)
    }

    pub fn push(&mut self, location: f64, mass: f64) -> Result<()> {
        if !location.is_finite() || !mass.is_finite() || mass < 0.0 {
            return Err(Error::domain(format!(
                "atom ({location}, {mass}) needs a finite location and a finite nonnegative mass"
            )));
        }
        if mass > 0.0 {
            self.atoms.push(Atom { location, mass });
        }
        Ok(())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().fold(0.0, |s, a| s + a.mass)
    }

    /// `⟨φ, μ⟩`.
    pub fn integrate(&self, phi: &TestFunction) -> f64 {
        self.atoms.iter().map(|a| a.mass * phi.value(a.location)).sum()
    }

    pub fn integrate_fn<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.mass * f(a.location)).sum()
    }

    /// Co-located atoms combined, sorted by location.
    pub fn merged(&self) -> AtomicMeasure {
        AtomicMeasure {
            atoms: merge_atoms(self.atoms.iter().copied()),
        }
    }

    /// Draws a location from `μ / ⟨1, μ⟩`.
    pub fn sample_location<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = self.total_mass();
        let mut u = rng.random::<f64>() * total;
        for a in &self.atoms {
            if u < a.mass {
                return a.location;
            }
            u -= a.mass;
        }
        self.atoms.last().expect("nonempty measure").location
    }
}

pub(crate) fn merge_atoms<I: IntoIterator<Item = Atom>>(atoms: I) -> Vec<Atom> {
    let mut v: Vec<Atom> = atoms.into_iter().collect();
    v.sort_by(|a, b| a.location.total_cmp(&b.location));
    let mut out: Vec<Atom> = Vec::with_capacity(v.len());
    for a in v {
        match out.last_mut() {
            Some(last) if last.location == a.location => last.mass += a.mass,
            _ => out.push(a),
        }
    }
    out
}

/// Total variation norm of `μ - ν`, exact over the union of atom locations.
pub fn tv_distance(mu: &AtomicMeasure, nu: &AtomicMeasure) -> f64 {
    let a = merge_atoms(mu.atoms.iter().copied());
    let b = merge_atoms(nu.atoms.iter().copied());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0;
    while i < a.len() || j < b.len() {
        let next_a = a.get(i).map(|x| x.location);
        let next_b = b.get(j).map(|x| x.location);
        match (next_a, next_b) {
            (Some(x), Some(y)) if x == y => {
                d += (a[i].mass - b[j].mass).abs();
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                d += a[i].mass;
                i += 1;
            }
            (Some(_), None) => {
                d += a[i].mass;
                i += 1;
            }
            _ => {
                d += b[j].mass;
                j += 1;
            }
        }
    }
    d
}

/// `Σ_i Σ_j m_i m_j φ'(x_i) φ'(x_j) ρ(x_i - x_j)`, the density of the
/// spatial-interaction part of the quadratic variation of `⟨φ, Y⟩`.
pub fn quadratic_variation_density(
    mu: &AtomicMeasure,
    phi: &TestFunction,
    rho: &CorrelationFunction,
) -> f64 {
    qv_density_of(&mu.merged().atoms, phi, rho)
}

/// Double sum over atoms already merged by location.
pub(crate) fn qv_density_of(atoms: &[Atom], phi: &TestFunction, rho: &CorrelationFunction) -> f64 {
    if matches!(phi, TestFunction::Constant(_)) {
        return 0.0;
    }
    let w: Vec<f64> = atoms.iter().map(|a| a.mass * phi.d1(a.location)).collect();
    let mut acc = 0.0;
    for i in 0..atoms.len() {
        acc += w[i] * w[i] * rho.rho0();
        for j in 0..i {
            acc += 2.0 * w[i] * w[j] * rho.eval(atoms[i].location - atoms[j].location);
        }
    }
    acc
}

/// Test functions with derivatives through order two and, except for
/// polynomials, a closed-form heat semigroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Constant(f64),
    /// `Σ c_k x^k`. Unbounded; meant for exact-arithmetic checks, not for
    /// martingale tests.
    Polynomial(Vec<f64>),
    /// `cos(freq·x + phase)`.
    Cosine { freq: f64, phase: f64 },
    /// `exp(-(x - center)² / (2 width²))`.
    GaussianBump { center: f64, width: f64 },
}

impl TestFunction {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * x + ck),
            TestFunction::Cosine { freq, phase } => (freq * x + phase).cos(),
            TestFunction::GaussianBump { center, width } => {
                (-0.5 * ((x - center) / width).powi(2)).exp()
            }
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            TestFunction::Constant(_) => 0.0,
            TestFunction::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * x + k as f64 * ck),
            TestFunction::Cosine { freq, phase } => -freq * (freq * x + phase).sin(),
            TestFunction::GaussianBump { center, width } => {
                -(x - center) / (width * width) * self.value(x)
            }
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            TestFunction::Constant(_) => 0.0,
            TestFunction::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * x + (k * (k - 1)) as f64 * ck),
            TestFunction::Cosine { freq, phase } => -freq * freq * (freq * x + phase).cos(),
            TestFunction::GaussianBump { center, width } => {
                let w2 = width * width;
                ((x - center).powi(2) / (w2 * w2) - 1.0 / w2) * self.value(x)
            }
        }
    }

    /// True when `φ ≥ 0` everywhere.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            TestFunction::Constant(c) => *c >= 0.0,
            TestFunction::GaussianBump { .. } => true,
            TestFunction::Polynomial(_) | TestFunction::Cosine { .. } => false,
        }
    }

    /// `sup |φ|`, infinite for nonconstant polynomials.
    pub fn sup_norm(&self) -> f64 {
        match self {
            TestFunction::Constant(c) => c.abs(),
            TestFunction::Polynomial(c) if c.iter().skip(1).all(|&ck| ck == 0.0) => {
                c.first().map_or(0.0, |c0| c0.abs())
            }
            TestFunction::Polynomial(_) => f64::INFINITY,
            TestFunction::Cosine { .. } | TestFunction::GaussianBump { .. } => 1.0,
        }
    }

    /// `(P_t φ)(x) = E φ(x + sqrt(D t) Z)`: the heat semigroup of a Brownian
    /// motion with quadratic variation `D t`.
    pub fn heat_semigroup(&self, t: f64, diffusivity: f64, x: f64) -> Result<f64> {
        if !(t >= 0.0 && diffusivity >= 0.0) {
            return Err(Error::domain("heat semigroup needs t ≥ 0 and diffusivity ≥ 0"));
        }
        let v = diffusivity * t;
        Ok(match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Cosine { freq, .. } => (-0.5 * v * freq * freq).exp() * self.value(x),
            TestFunction::GaussianBump { center, width } => {
                let s2 = width * width + v;
                width / s2.sqrt() * (-0.5 * (x - center).powi(2) / s2).exp()
            }
            TestFunction::Polynomial(c) => {
                // E (x + s Z)^k = Σ_j C(k, j) x^(k-j) s^j E Z^j, with E Z^(2i) = (2i-1)!!.
                let s = v.sqrt();
                let mut acc = 0.0;
                for (k, ck) in c.iter().enumerate() {
                    let mut term = 0.0;
                    let mut binom = 1.0;
                    let mut gauss_moment = 1.0;
                    for j in 0..=k {
                        if j > 0 {
                            binom = binom * (k - j + 1) as f64 / j as f64;
                        }
                        if j % 2 == 0 {
                            if j >= 2 {
                                gauss_moment *= (j - 1) as f64;
                            }
                            term += binom * x.powi((k - j) as i32) * s.powi(j as i32) * gauss_moment;
                        }
                    }
                    acc += ck * term;
                }
                acc
            }
        })
    }
}

/// A finite measure used as an initial state or as the immigration base
/// measure: atomic, or uniform on an interval.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseMeasure {
    Atomic(AtomicMeasure),
    Uniform { lo: f64, hi: f64, mass: f64 },
}

impl Default for BaseMeasure {
    fn default() -> Self {
        BaseMeasure::Atomic(AtomicMeasure::new())
    }
}

impl BaseMeasure {
    pub fn total_mass(&self) -> f64 {
        match self {
            BaseMeasure::Atomic(mu) => mu.total_mass(),
            BaseMeasure::Uniform { mass, .. } => *mass,
        }
    }

    pub fn sample_location<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BaseMeasure::Atomic(mu) => mu.sample_location(rng),
            BaseMeasure::Uniform { lo, hi, .. } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// `∫ f dμ`; adaptive Simpson to `tol` for the uniform form.
    pub fn integrate_fn<F: Fn(f64) -> f64>(&self, f: F, tol: f64) -> f64 {
        match self {
            BaseMeasure::Atomic(mu) => mu.integrate_fn(f),
            BaseMeasure::Uniform { lo, hi, mass } => {
                if hi == lo {
                    mass * f(*lo)
                } else {
                    mass / (hi - lo) * adaptive_simpson(f, *lo, *hi, tol * (hi - lo) / mass.max(1e-300))
                }
            }
        }
    }

    pub fn as_atomic(&self) -> Option<&AtomicMeasure> {
        match self {
            BaseMeasure::Atomic(mu) => Some(mu),
            BaseMeasure::Uniform { .. } => None,
        }
    }
}
