//! Excursions of the Feller diffusion away from zero: entrance laws, Poisson
//! sampling of the excursions that outlive a chop time, and their evolution.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::feller::{exact_step, poisson, ABSORPTION_FLOOR};
use crate::measures::BaseMeasure;

/// The entrance law `κ_t(dy) = 4(βt)⁻² exp(-2y/βt) dy` of the excursion law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntranceLaw {
    pub beta: f64,
    pub t: f64,
}

impl EntranceLaw {
    pub fn new(beta: f64, t: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0 && t.is_finite() && t > 0.0) {
            return Err(Error::domain(format!(
                "entrance law needs beta > 0 and t > 0, got beta={beta}, t={t}"
            )));
        }
        Ok(Self { beta, t })
    }

    /// `κ_t(0, ∞) = 2 / (βt)`, the excursion-law mass of lifetimes beyond `t`.
    pub fn total_mass(&self) -> f64 {
        2.0 / (self.beta * self.t)
    }

    pub fn density(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let bt = self.beta * self.t;
        4.0 / (bt * bt) * (-2.0 * y / bt).exp()
    }

    /// Mean of the normalized law, `βt / 2`.
    pub fn mean(&self) -> f64 {
        0.5 * self.beta * self.t
    }

    /// `∫ (1 - e^{-zy}) κ_t(dy) = z / (1 + βtz/2)`.
    pub fn canonical_laplace(&self, z: f64) -> f64 {
        z / (1.0 + 0.5 * self.beta * self.t * z)
    }

    /// Draws from `κ_t / κ_t(0, ∞)`, an exponential with mean `βt/2`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        (self.mean() * e).max(ABSORPTION_FLOOR)
    }
}

/// `entrance_law_sample` in free-function form.
pub fn entrance_law_sample<R: Rng + ?Sized>(law: &EntranceLaw, rng: &mut R) -> f64 {
    law.sample(rng)
}

/// Number of excursions with lifetime beyond `delta` carried by a Poisson
/// random measure of intensity `total_weight × Q_κ`: Poisson with mean
/// `total_weight · 2/(βδ)`.
pub fn sample_excursion_count<R: Rng + ?Sized>(
    total_weight: f64,
    delta: f64,
    beta: f64,
    rng: &mut R,
) -> Result<u64> {
    if !(total_weight.is_finite() && total_weight >= 0.0) {
        return Err(Error::domain(format!("weight must be nonnegative, got {total_weight}")));
    }
    let law = EntranceLaw::new(beta, delta)?;
    Ok(poisson(total_weight * law.total_mass(), rng))
}

/// One excursion, represented from its chop time onward.
///
/// `masses[k]` is the excursion's mass at excursion age `chop + k·dt`. Once an
/// entry is zero no further entries are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionRecord {
    pub id: u64,
    pub birth_time: f64,
    pub birth_location: f64,
    pub chop: f64,
    pub dt: f64,
    pub masses: Vec<f64>,
    pub absorbed: bool,
}

impl ExcursionRecord {
    /// Starts an excursion that has survived to age `chop`, with mass drawn
    /// from the normalized entrance law at `chop`.
    pub fn spawn<R: Rng + ?Sized>(
        id: u64,
        birth_time: f64,
        birth_location: f64,
        chop: f64,
        dt: f64,
        beta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let law = EntranceLaw::new(beta, chop)?;
        Ok(Self {
            id,
            birth_time,
            birth_location,
            chop,
            dt,
            masses: vec![law.sample(rng)],
            absorbed: false,
        })
    }

    pub fn current_mass(&self) -> f64 {
        *self.masses.last().expect("records are never empty")
    }

    /// Appends the mass one step `dt` later. Absorbed records are unchanged.
    pub fn evolve<R: Rng + ?Sized>(&mut self, beta: f64, rng: &mut R) {
        self.evolve_by(self.dt, beta, rng);
    }

    /// Appends the mass after an excursion-clock duration `dpsi`; used when the
    /// clock runs at a position-dependent speed.
    pub fn evolve_by<R: Rng + ?Sized>(&mut self, dpsi: f64, beta: f64, rng: &mut R) {
        if self.absorbed {
            return;
        }
        let next = exact_step(self.current_mass(), dpsi, beta, rng);
        self.masses.push(next);
        if next == 0.0 {
            self.absorbed = true;
        }
    }

    /// Evolves until absorbed or until `len` entries are stored.
    pub fn evolve_to_len<R: Rng + ?Sized>(&mut self, len: usize, beta: f64, rng: &mut R) {
        while !self.absorbed && self.masses.len() < len {
            self.evolve(beta, rng);
        }
    }

    /// Mass at excursion age `chop + k·dt`; `None` if not simulated that far.
    pub fn mass_at(&self, k: usize) -> Option<f64> {
        match self.masses.get(k) {
            Some(&m) => Some(m),
            None if self.absorbed => Some(0.0),
            None => None,
        }
    }

    /// Whether the excursion is still positive at age `r ≥ chop`, with `r`
    /// rounded to the grid. `None` if not simulated that far.
    pub fn alive_at_age(&self, r: f64) -> Option<bool> {
        let k = ((r - self.chop) / self.dt).round();
        if k < 0.0 {
            return Some(true);
        }
        self.mass_at(k as usize).map(|m| m > 0.0)
    }
}

/// The excursions of a Poisson random measure with intensity `μ(da) Q_κ(dw)`
/// whose lifetimes exceed `delta`, each evolved to `len` grid entries.
pub fn sample_initial_excursions<R: Rng + ?Sized>(
    mu: &BaseMeasure,
    delta: f64,
    dt: f64,
    beta: f64,
    len: usize,
    rng: &mut R,
) -> Result<Vec<ExcursionRecord>> {
    let n = sample_excursion_count(mu.total_mass(), delta, beta, rng)?;
    let mut out = Vec::with_capacity(n as usize);
    for id in 0..n {
        let a = mu.sample_location(rng);
        let mut rec = ExcursionRecord::spawn(id, 0.0, a, delta, dt, beta, rng)?;
        rec.evolve_to_len(len, beta, rng);
        out.push(rec);
    }
    Ok(out)
}
