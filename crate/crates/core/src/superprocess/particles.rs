//! Generation of the atoms of one replicate: the initial cohort, immigration
//! births, and thinning candidates, each with its full mass path.
//!
//! Every excursion's mass path is generated once, at the finest chop of the
//! views being run, from a stream keyed by the excursion's id. Coarser chops
//! and the shift/drop variants are read off the same path, so all views share
//! their randomness exactly.

use rand::Rng;

use crate::config::{ChopMode, InitialMode, Scenario};
use crate::error::{Error, Result};
use crate::excursions::{sample_excursion_count, ExcursionRecord};
use crate::feller::exact_step;
use crate::measures::BaseMeasure;
use crate::rng::{Stream, StreamKey, INITIAL_COHORT_INDEX};

/// One way of reading mass off the shared excursion paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct View {
    pub chop_steps: usize,
    pub mode: ChopMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    /// A deterministic initial atom with its own Feller mass path.
    InitialAtom,
    /// An excursion of the initial Poisson random measure.
    InitialExcursion,
    /// An immigrant excursion.
    Immigrant,
}

const K_BITS: u32 = 24;
const WINDOW_BITS: u32 = 32;
const BAND_BITS: u32 = 6;

/// Highest thinning layer that can be addressed.
pub const MAX_BAND: u32 = (1 << BAND_BITS) - 1;

/// Packs `(origin, band, window, k)` into a particle id.
pub fn particle_id(origin: Origin, band: u32, window: usize, k: u64) -> Result<u64> {
    if k >= 1 << K_BITS || window as u64 >= 1 << WINDOW_BITS || band > MAX_BAND {
        return Err(Error::Unsupported(format!(
            "particle index out of range (band {band}, window {window}, k {k})"
        )));
    }
    let o = match origin {
        Origin::InitialAtom => 0u64,
        Origin::InitialExcursion => 1,
        Origin::Immigrant => 2,
    };
    Ok(o << 62 | (band as u64) << 56 | (window as u64) << K_BITS | k)
}

/// Inverse of [`particle_id`].
pub fn decode_particle_id(id: u64) -> (Origin, u32, usize, u64) {
    let origin = match id >> 62 {
        0 => Origin::InitialAtom,
        1 => Origin::InitialExcursion,
        _ => Origin::Immigrant,
    };
    let band = ((id >> 56) & ((1 << BAND_BITS) - 1)) as u32;
    let window = ((id >> K_BITS) & ((1 << WINDOW_BITS) - 1)) as usize;
    (origin, band, window, id & ((1 << K_BITS) - 1))
}

/// An atom of the construction together with its mass path.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub id: u64,
    pub origin: Origin,
    pub birth_step: usize,
    /// Birth time before snapping to the grid.
    pub raw_birth_time: f64,
    pub location: f64,
    /// For excursions, `masses[k]` is the mass at excursion age
    /// `δ_min + k·dt`; for initial atoms it is the mass at time `k·dt`.
    /// Entries past the end are zero when `absorbed`.
    pub masses: Vec<f64>,
    pub absorbed: bool,
}

impl Particle {
    fn stored(&self, k: usize) -> f64 {
        match self.masses.get(k) {
            Some(&m) => m,
            None => {
                debug_assert!(self.absorbed, "mass path read past its generated length");
                0.0
            }
        }
    }

    /// Mass at grid step `step` as seen through `view`, where the stored path
    /// starts at chop `c_min`.
    pub fn mass_in(&self, view: View, c_min: usize, step: usize) -> f64 {
        if step < self.birth_step {
            return 0.0;
        }
        let age = step - self.birth_step;
        match (self.origin, view.mode) {
            (Origin::InitialAtom, _) => self.stored(age),
            (Origin::InitialExcursion, _) | (Origin::Immigrant, ChopMode::Shift) => {
                self.stored(view.chop_steps - c_min + age)
            }
            (Origin::Immigrant, ChopMode::Drop) => {
                if age < view.chop_steps {
                    0.0
                } else {
                    self.stored(age - c_min)
                }
            }
        }
    }

    /// Steps `[start, end)` during which the particle has positive mass in
    /// `view`, clipped to `[0, steps]`.
    pub fn alive_in(&self, view: View, c_min: usize, steps: usize) -> Option<(usize, usize)> {
        let b = self.birth_step;
        let z = if self.absorbed {
            self.masses.len() - 1
        } else {
            usize::MAX / 4
        };
        let (start, end) = match (self.origin, view.mode) {
            (Origin::InitialAtom, _) => (0, z),
            (Origin::InitialExcursion, _) | (Origin::Immigrant, ChopMode::Shift) => {
                let off = view.chop_steps - c_min;
                if z <= off {
                    return None;
                }
                (b, b + z - off)
            }
            (Origin::Immigrant, ChopMode::Drop) => (b + view.chop_steps, b + c_min + z),
        };
        let end = end.min(steps + 1);
        (start < end).then_some((start, end))
    }
}

/// The views of one run and the finest chop among them.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub views: Vec<View>,
    pub c_min: usize,
    pub c_max: usize,
}

impl ViewSet {
    pub fn new(views: Vec<View>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::domain("at least one view is required"));
        }
        if views.iter().any(|v| v.chop_steps == 0) {
            return Err(Error::domain("chop must be at least one grid step"));
        }
        let c_min = views.iter().map(|v| v.chop_steps).min().unwrap_or(1);
        let c_max = views.iter().map(|v| v.chop_steps).max().unwrap_or(1);
        Ok(Self { views, c_min, c_max })
    }

    pub fn single(view: View) -> Self {
        Self {
            views: vec![view],
            c_min: view.chop_steps,
            c_max: view.chop_steps,
        }
    }

    /// Path length needed so that every view can read the particle up to the horizon.
    pub fn needed_len(&self, birth_step: usize, steps: usize) -> usize {
        steps - birth_step + (self.c_max - self.c_min) + 1
    }

    /// Last step (exclusive) at which the particle is alive in any view.
    pub fn alive_until(&self, p: &Particle, steps: usize) -> Option<usize> {
        self.views
            .iter()
            .filter_map(|&v| p.alive_in(v, self.c_min, steps))
            .map(|(_, e)| e)
            .max()
    }
}

fn excursion_path(
    key: &StreamKey,
    id: u64,
    birth_time: f64,
    location: f64,
    scenario: &Scenario,
    chop_steps: usize,
    len: usize,
) -> Result<(Vec<f64>, bool)> {
    let mut rng = key.rng(Stream::Mass, id);
    let chop = chop_steps as f64 * scenario.dt;
    let mut rec = ExcursionRecord::spawn(id, birth_time, location, chop, scenario.dt, scenario.beta, &mut rng)?;
    rec.evolve_to_len(len, scenario.beta, &mut rng);
    Ok((rec.masses, rec.absorbed))
}

fn atom_path(key: &StreamKey, id: u64, x0: f64, scenario: &Scenario, len: usize) -> (Vec<f64>, bool) {
    let mut rng = key.rng(Stream::Mass, id);
    let mut path = Vec::with_capacity(len.min(1024));
    let mut x = x0;
    path.push(x);
    while x > 0.0 && path.len() < len {
        x = exact_step(x, scenario.dt, scenario.beta, &mut rng);
        path.push(x);
    }
    (path, x == 0.0)
}

/// The initial cohort of a replicate.
pub fn initial_particles(scenario: &Scenario, key: &StreamKey, views: &ViewSet) -> Result<Vec<Particle>> {
    let len = views.needed_len(0, scenario.steps);
    let mut out = Vec::new();
    match scenario.initial {
        InitialMode::Atoms => {
            let mu = scenario
                .mu
                .as_atomic()
                .ok_or_else(|| Error::config("initial", "atom initial mode needs an atomic mu"))?;
            for (i, a) in mu.atoms().iter().enumerate() {
                let id = particle_id(Origin::InitialAtom, 0, 0, i as u64)?;
                let (masses, absorbed) = atom_path(key, id, a.mass, scenario, scenario.steps + 1);
                out.push(Particle {
                    id,
                    origin: Origin::InitialAtom,
                    birth_step: 0,
                    raw_birth_time: 0.0,
                    location: a.location,
                    masses,
                    absorbed,
                });
            }
        }
        InitialMode::Excursions => {
            let mut rng = key.rng(Stream::Immigration, INITIAL_COHORT_INDEX);
            let chop = views.c_min as f64 * scenario.dt;
            let n = sample_excursion_count(scenario.mu.total_mass(), chop, scenario.beta, &mut rng)?;
            for k in 0..n {
                let id = particle_id(Origin::InitialExcursion, 0, 0, k)?;
                let location = scenario.mu.sample_location(&mut rng);
                let (masses, absorbed) = excursion_path(key, id, 0.0, location, scenario, views.c_min, len)?;
                out.push(Particle {
                    id,
                    origin: Origin::InitialExcursion,
                    birth_step: 0,
                    raw_birth_time: 0.0,
                    location,
                    masses,
                    absorbed,
                });
            }
        }
    }
    Ok(out)
}

/// An immigration candidate before its mass path is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub band: u32,
    pub window: usize,
    pub raw_birth_time: f64,
    pub location: f64,
    /// Thinning mark, uniform on the band's rate interval.
    pub mark: f64,
}

/// Rate interval `[lo, hi)` covered by thinning layer `band`.
///
/// Layer 0 is `[0, c0)`, always accepted. Layer 1 is `[c0, c0 + cap)`, and each
/// further layer doubles the covered range above `c0`.
pub fn band_bounds(base_rate: f64, cap: f64, band: u32) -> (f64, f64) {
    match band {
        0 => (0.0, base_rate),
        1 => (base_rate, base_rate + cap),
        b => {
            let lo = cap * 2f64.powi(b as i32 - 2);
            (base_rate + lo, base_rate + 2.0 * lo)
        }
    }
}

/// Candidates of thinning layer `band` born in window `(t_j, t_{j+1}]`.
pub fn window_candidates(
    scenario: &Scenario,
    key: &StreamKey,
    base: &BaseMeasure,
    cap: f64,
    chop_steps: usize,
    band: u32,
    window: usize,
) -> Result<Vec<Candidate>> {
    let (lo, hi) = band_bounds(scenario.q.base_rate(), cap, band);
    let width = hi - lo;
    if width <= 0.0 || base.total_mass() == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = if band == 0 {
        key.rng(Stream::Immigration, window as u64)
    } else {
        key.rng(Stream::Thinning, (band as u64) << 40 | window as u64)
    };
    let chop = chop_steps as f64 * scenario.dt;
    let n = sample_excursion_count(width * base.total_mass() * scenario.dt, chop, scenario.beta, &mut rng)?;
    let t0 = scenario.time(window);
    let mut out = Vec::with_capacity(n as usize);
    for k in 0..n {
        let raw_birth_time = t0 + scenario.dt * (1.0 - rng.random::<f64>());
        let location = base.sample_location(&mut rng);
        let mark = lo + width * rng.random::<f64>();
        out.push(Candidate {
            id: particle_id(Origin::Immigrant, band, window, k)?,
            band,
            window,
            raw_birth_time,
            location,
            mark,
        });
    }
    Ok(out)
}

/// Turns an accepted candidate into a particle born at the end of its window.
pub fn realize(
    scenario: &Scenario,
    key: &StreamKey,
    views: &ViewSet,
    c: &Candidate,
) -> Result<Particle> {
    let birth_step = c.window + 1;
    let len = views.needed_len(birth_step, scenario.steps);
    let (masses, absorbed) = excursion_path(key, c.id, c.raw_birth_time, c.location, scenario, views.c_min, len)?;
    Ok(Particle {
        id: c.id,
        origin: Origin::Immigrant,
        birth_step,
        raw_birth_time: c.raw_birth_time,
        location: c.location,
        masses,
        absorbed,
    })
}

/// Immigrants at the state-independent base rate: every layer-0 candidate.
pub fn base_rate_immigrants(scenario: &Scenario, key: &StreamKey, views: &ViewSet) -> Result<Vec<Particle>> {
    let mut out = Vec::new();
    if !scenario.has_immigration() || scenario.q.base_rate() == 0.0 {
        return Ok(out);
    }
    for j in 0..scenario.steps {
        for c in window_candidates(scenario, key, &scenario.m, 0.0, views.c_min, 0, j)? {
            out.push(realize(scenario, key, views, &c)?);
        }
    }
    Ok(out)
}
