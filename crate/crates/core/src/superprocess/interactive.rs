//! Interactive immigration: the accepted immigrants solve a fixed-point
//! equation, since whether a candidate is accepted depends on the state it
//! helps build. Picard iteration with all randomness frozen finds the solution.
//!
//! The rate depends on the state only through its total mass, and total mass
//! does not depend on positions, so the iteration runs on labeled total-mass
//! paths. The flow is run once afterwards over the accepted set.

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

use super::particles::{band_bounds, realize, window_candidates, Candidate, Particle, ViewSet, MAX_BAND};

/// Initial guess for the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PicardStart {
    /// `Y⁽⁰⁾ ≡ 0`.
    Zero,
    /// A guess whose total mass is the mean-field solution `ṁ = ⟨1,m⟩ q(m)`.
    MeanField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub start: PicardStart,
    /// `d_k = sup_t ‖Y⁽ᵏ⁺¹⁾_t - Y⁽ᵏ⁾_t‖` for each pass.
    pub distances: Vec<f64>,
    /// Number of applications of the thinning map.
    pub passes: usize,
    /// Ids of the accepted immigrants, in window order.
    pub accepted: Vec<u64>,
    /// Total mass of the fixed point at every grid step.
    pub total_mass: Vec<f64>,
    /// Candidates drawn across all thinning layers.
    pub candidates: usize,
}

struct Entry {
    candidate: Candidate,
    particle: Option<Particle>,
    alive: Option<(usize, usize)>,
}

struct Pool<'a> {
    scenario: &'a Scenario,
    key: &'a StreamKey,
    views: &'a ViewSet,
    cap: f64,
    // windows[j][band] is drawn on first use and then frozen.
    windows: Vec<Vec<Option<Vec<Entry>>>>,
    drawn: usize,
}

impl<'a> Pool<'a> {
    fn layer(&mut self, window: usize, band: u32) -> Result<&mut Vec<Entry>> {
        let slots = &mut self.windows[window];
        while slots.len() <= band as usize {
            slots.push(None);
        }
        if slots[band as usize].is_none() {
            let cands = window_candidates(
                self.scenario,
                self.key,
                &self.scenario.m,
                self.cap,
                self.views.c_min,
                band,
                window,
            )?;
            self.drawn += cands.len();
            slots[band as usize] = Some(
                cands
                    .into_iter()
                    .map(|candidate| Entry {
                        candidate,
                        particle: None,
                        alive: None,
                    })
                    .collect(),
            );
        }
        Ok(slots[band as usize].as_mut().expect("just filled"))
    }

    fn entry(&mut self, (j, b, i): (usize, u32, usize)) -> Result<&Entry> {
        let (scenario, key, views) = (self.scenario, self.key, self.views);
        let e = &mut self.windows[j][b as usize].as_mut().expect("layer drawn")[i];
        if e.particle.is_none() {
            let p = realize(scenario, key, views, &e.candidate)?;
            e.alive = p.alive_in(views.views[0], views.c_min, scenario.steps);
            e.particle = Some(p);
        }
        Ok(e)
    }
}

type Label = (usize, u32, usize);

/// Applies the thinning map to a total-mass path: returns the labels of the
/// candidates accepted when the rate in window `(t_j, t_{j+1}]` is
/// `q(guess[j])`.
fn thin(pool: &mut Pool, guess: &[f64]) -> Result<Vec<Label>> {
    let q = pool.scenario.q;
    let base = q.base_rate();
    let mut accepted = Vec::new();
    for (j, &mass) in guess.iter().enumerate().take(pool.scenario.steps) {
        let rate = q.rate(mass);
        for band in 0..=MAX_BAND {
            let (lo, hi) = band_bounds(base, pool.cap, band);
            if band > 0 && lo >= rate {
                break;
            }
            if band == MAX_BAND && rate > hi {
                return Err(Error::Unsupported(format!(
                    "immigration rate {rate} exceeds the largest thinning layer"
                )));
            }
            if hi <= lo {
                continue;
            }
            for (i, e) in pool.layer(j, band)?.iter().enumerate() {
                if band == 0 || e.candidate.mark <= rate {
                    accepted.push((j, band, i));
                }
            }
        }
    }
    Ok(accepted)
}

fn add_masses(pool: &mut Pool, labels: &[Label], into: &mut [f64]) -> Result<()> {
    let view = pool.views.views[0];
    let c_min = pool.views.c_min;
    for &l in labels {
        let e = pool.entry(l)?;
        if let (Some(p), Some((s, t))) = (&e.particle, e.alive) {
            for (i, slot) in into.iter_mut().enumerate().take(t).skip(s) {
                *slot += p.mass_in(view, c_min, i);
            }
        }
    }
    Ok(())
}

/// Solves for the accepted immigrants under frozen randomness.
pub(crate) fn solve(
    scenario: &Scenario,
    key: &StreamKey,
    views: &ViewSet,
    initial: &[Particle],
    start: PicardStart,
) -> Result<(PicardOutcome, Vec<Particle>)> {
    if views.views.len() != 1 {
        return Err(Error::Unsupported(
            "interactive immigration runs a single view".into(),
        ));
    }
    let view = views.views[0];
    let n = scenario.steps;
    let mut base = vec![0.0; n + 1];
    for p in initial {
        for (i, slot) in base.iter_mut().enumerate() {
            *slot += p.mass_in(view, views.c_min, i);
        }
    }
    let (c0, c1) = match scenario.q {
        crate::config::RateSpec::AffineTotalMass { c0, c1 } => (c0, c1),
        other => (other.base_rate(), 0.0),
    };
    let m_mass = scenario.m.total_mass();
    let mu_mass = scenario.mu.total_mass();
    let k = c0.max(c1) * m_mass.max(1.0);
    let cap = (2.0 * k * (1.0 + mu_mass)).max(f64::MIN_POSITIVE);
    let mut pool = Pool {
        scenario,
        key,
        views,
        cap,
        windows: (0..n).map(|_| Vec::new()).collect(),
        drawn: 0,
    };
    let mut guess: Vec<f64> = match start {
        PicardStart::Zero => vec![0.0; n + 1],
        PicardStart::MeanField => (0..=n)
            .map(|i| scenario.q.mean_total_mass(mu_mass, m_mass, scenario.time(i)))
            .collect(),
    };
    let mut distances = Vec::new();
    let mut previous: Option<Vec<Label>> = None;
    for pass in 0..scenario.picard_max {
        let accepted = thin(&mut pool, &guess)?;
        let mut total = base.clone();
        add_masses(&mut pool, &accepted, &mut total)?;
        let d = match &previous {
            None => total
                .iter()
                .zip(&guess)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            Some(prev) => {
                let diff = symmetric_difference(prev, &accepted);
                let mut gap = vec![0.0; n + 1];
                add_masses(&mut pool, &diff, &mut gap)?;
                gap.into_iter().fold(0.0, f64::max)
            }
        };
        distances.push(d);
        if d <= scenario.picard_tol || !scenario.q.depends_on_state() {
            let mut particles = Vec::with_capacity(accepted.len());
            let mut ids = Vec::with_capacity(accepted.len());
            for &l in &accepted {
                let p = pool.entry(l)?.particle.clone().expect("realized");
                ids.push(p.id);
                particles.push(p);
            }
            return Ok((
                PicardOutcome {
                    start,
                    distances,
                    passes: pass + 1,
                    accepted: ids,
                    total_mass: total,
                    candidates: pool.drawn,
                },
                particles,
            ));
        }
        guess = total;
        previous = Some(accepted);
    }
    Err(Error::PicardDiverged { distances })
}

fn symmetric_difference(a: &[Label], b: &[Label]) -> Vec<Label> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                out.push(*x);
                i += 1;
            }
            (Some(x), None) => {
                out.push(*x);
                i += 1;
            }
            (_, Some(y)) => {
                out.push(*y);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}
