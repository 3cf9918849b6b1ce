//! Pathwise constructions of the measure-valued process: without immigration,
//! with immigration at a deterministic rate, and with an immigration rate that
//! depends on the current state.

mod engine;
mod interactive;
mod martingale;
mod particles;

pub use crate::config::{ChopMode, InitialMode, RateSpec};
pub use engine::{LiveAtom, Observer};
pub use interactive::{PicardOutcome, PicardStart};
pub use martingale::{MartingaleAccumulator, MartingalePoint};
pub use particles::{
    band_bounds, decode_particle_id, particle_id, Candidate, Origin, Particle, View, ViewSet,
};

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::measures::{AtomicMeasure, TestFunction};
use crate::rng::StreamKey;

/// Options for a single replicate beyond the scenario itself.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Views read off the shared excursion paths; the first is the primary one.
    pub views: Vec<View>,
    /// Replaces the thinning layers with an independent set.
    pub thinning_salt: u64,
    pub picard_start: PicardStart,
}

impl RunOptions {
    /// The scenario's own chop and mode.
    pub fn primary(scenario: &Scenario) -> Self {
        Self {
            views: vec![View {
                chop_steps: scenario.chop_steps,
                mode: scenario.chop_mode,
            }],
            thinning_salt: 0,
            picard_start: PicardStart::Zero,
        }
    }
}

/// What a replicate produced besides the observed states.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// Every atom of the run with its mass path, initial cohort first.
    pub particles: Vec<Particle>,
    pub picard: Option<PicardOutcome>,
}

/// Simulates replicate `replicate` of `scenario`, feeding every grid-time
/// state of every view to `observer`.
pub fn run_replicate(
    scenario: &Scenario,
    replicate: u64,
    opts: &RunOptions,
    observer: &mut dyn Observer,
) -> Result<RunReport> {
    let key = StreamKey::new(scenario.seed, replicate).with_thinning_salt(opts.thinning_salt);
    let views = ViewSet::new(opts.views.clone())?;
    if scenario.sigma_profile.is_some() {
        let particles = engine::run_time_changed(scenario, &key, &views, observer)?;
        return Ok(RunReport {
            particles,
            picard: None,
        });
    }
    let mut particles = particles::initial_particles(scenario, &key, &views)?;
    let mut picard = None;
    if scenario.has_immigration() {
        if scenario.q.depends_on_state() {
            let (outcome, immigrants) =
                interactive::solve(scenario, &key, &views, &particles, opts.picard_start)?;
            particles.extend(immigrants);
            picard = Some(outcome);
        } else {
            particles.extend(particles::base_rate_immigrants(scenario, &key, &views)?);
        }
    }
    engine::run_particles(scenario, &key, &views, &particles, observer)?;
    Ok(RunReport { particles, picard })
}

/// The state at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub atoms: Vec<LiveAtom>,
}

impl Snapshot {
    pub fn measure(&self) -> AtomicMeasure {
        AtomicMeasure::from_pairs(self.atoms.iter().map(|a| (a.location, a.mass)))
            .expect("simulated atoms are finite")
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().fold(0.0, |s, a| s + a.mass)
    }
}

/// Observer keeping full snapshots of one view, at every step or at a
/// chosen set of steps.
#[derive(Debug, Clone, Default)]
pub struct PathRecorder {
    pub view: usize,
    /// Sorted steps to keep; `None` keeps every step.
    pub steps: Option<Vec<usize>>,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
}

impl PathRecorder {
    pub fn every_step(scenario: &Scenario) -> Self {
        Self {
            view: 0,
            steps: None,
            dt: scenario.dt,
            snapshots: Vec::new(),
        }
    }

    pub fn at_steps(scenario: &Scenario, steps: Vec<usize>) -> Self {
        Self {
            view: 0,
            steps: Some(steps),
            dt: scenario.dt,
            snapshots: Vec::new(),
        }
    }
}

impl Observer for PathRecorder {
    fn observe(&mut self, view: usize, step: usize, atoms: &[LiveAtom]) {
        if view != self.view {
            return;
        }
        if let Some(s) = &self.steps {
            if s.binary_search(&step).is_err() {
                return;
            }
        }
        self.snapshots.push(Snapshot {
            step,
            time: step as f64 * self.dt,
            atoms: atoms.to_vec(),
        });
    }
}

fn record(scenario: &Scenario, replicate: u64, opts: &RunOptions) -> Result<(Vec<Snapshot>, RunReport)> {
    let mut rec = PathRecorder::every_step(scenario);
    let report = run_replicate(scenario, replicate, opts, &mut rec)?;
    Ok((rec.snapshots, report))
}

/// The process without immigration, at every grid time.
pub fn simulate_sdsm(scenario: &Scenario, replicate: u64) -> Result<Vec<Snapshot>> {
    if scenario.has_immigration() {
        return Err(Error::config("m", "simulate_sdsm needs zero immigration"));
    }
    Ok(record(scenario, replicate, &RunOptions::primary(scenario))?.0)
}

/// The process with immigration at a state-independent rate.
pub fn simulate_immigration_deterministic(scenario: &Scenario, replicate: u64) -> Result<Vec<Snapshot>> {
    if scenario.q.depends_on_state() {
        return Err(Error::config("q", "the immigration rate depends on the state"));
    }
    if scenario.sigma_profile.is_some() {
        return Err(Error::config("sigma_profile", "immigration needs a constant branching density"));
    }
    Ok(record(scenario, replicate, &RunOptions::primary(scenario))?.0)
}

/// The process with state-dependent immigration, solved by Picard iteration
/// from `start`.
pub fn simulate_immigration_interactive(
    scenario: &Scenario,
    replicate: u64,
    start: PicardStart,
) -> Result<(Vec<Snapshot>, PicardOutcome)> {
    if scenario.sigma_profile.is_some() {
        return Err(Error::config("sigma_profile", "immigration needs a constant branching density"));
    }
    let opts = RunOptions {
        picard_start: start,
        ..RunOptions::primary(scenario)
    };
    let mut rec = PathRecorder::every_step(scenario);
    let key = StreamKey::new(scenario.seed, replicate);
    let views = ViewSet::new(opts.views.clone())?;
    let mut particles = particles::initial_particles(scenario, &key, &views)?;
    let (outcome, immigrants) = interactive::solve(scenario, &key, &views, &particles, start)?;
    particles.extend(immigrants);
    engine::run_particles(scenario, &key, &views, &particles, &mut rec)?;
    Ok((rec.snapshots, outcome))
}

/// `M_t(φ)` and its predicted quadratic variation along a recorded path
/// that starts at step 0 and includes every grid step.
pub fn run_martingale_functionals(
    path: &[Snapshot],
    phi: &TestFunction,
    scenario: &Scenario,
) -> Vec<MartingalePoint> {
    let steps: Vec<usize> = path.iter().map(|s| s.step).collect();
    let mut acc = MartingaleAccumulator::new(scenario, vec![phi.clone()], steps, 0);
    for s in path {
        acc.push(s.step, &s.atoms);
    }
    acc.points.pop().unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    fn scenario(text: &str) -> Scenario {
        ScenarioConfig::from_json(text).unwrap().validate().unwrap()
    }

    #[test]
    fn empty_initial_state_stays_empty() {
        let s = scenario(r#"{"horizon": 0.1, "dt": 0.01, "delta": 0.02}"#);
        let path = simulate_sdsm(&s, 0).unwrap();
        assert_eq!(path.len(), 11);
        assert!(path.iter().all(|p| p.atoms.is_empty()));
        let m = run_martingale_functionals(&path, &TestFunction::Constant(1.0), &s);
        assert!(m.iter().all(|p| p.martingale == 0.0 && p.qv_integral == 0.0));
    }

    #[test]
    fn zero_base_measure_matches_no_immigration() {
        let a = scenario(r#"{"mu": {"atoms": [[0.0, 1.0]]}, "q": "zero", "horizon": 0.2, "seed": 3}"#);
        let b = scenario(r#"{"mu": {"atoms": [[0.0, 1.0]]}, "q": "one", "horizon": 0.2, "seed": 3}"#);
        assert_eq!(simulate_sdsm(&a, 1).unwrap(), simulate_immigration_deterministic(&b, 1).unwrap());
    }

    #[test]
    fn constant_rate_matches_deterministic_bit_for_bit() {
        let base = r#""mu": {"atoms": [[0.0, 1.0]]}, "m": {"atoms": [[0.5, 1.0]]}, "initial": "atoms", "horizon": 0.2, "seed": 9"#;
        let det = scenario(&format!(r#"{{{base}, "q": "one"}}"#));
        let cst = scenario(&format!(r#"{{{base}, "q": {{"constant": 1.0}}}}"#));
        let aff = scenario(&format!(r#"{{{base}, "q": {{"affine_total_mass": {{"c0": 1.0, "c1": 0.0}}}}}}"#));
        let reference = simulate_immigration_deterministic(&det, 4).unwrap();
        assert!(reference.iter().any(|s| s.atoms.len() > 1));
        assert_eq!(simulate_immigration_deterministic(&cst, 4).unwrap(), reference);
        let (path, outcome) = simulate_immigration_interactive(&aff, 4, PicardStart::Zero).unwrap();
        assert_eq!(path, reference);
        assert_eq!(outcome.passes, 1);
    }

    #[test]
    fn picard_starts_agree() {
        let s = scenario(
            r#"{"mu": {"atoms": [[0.0, 1.0]]}, "m": {"atoms": [[0.0, 1.0]]}, "initial": "atoms",
                "q": {"affine_total_mass": {"c0": 1.0, "c1": 0.5}}, "horizon": 0.5, "seed": 5}"#,
        );
        let (a, oa) = simulate_immigration_interactive(&s, 0, PicardStart::Zero).unwrap();
        let (b, ob) = simulate_immigration_interactive(&s, 0, PicardStart::MeanField).unwrap();
        assert_eq!(oa.accepted, ob.accepted);
        assert_eq!(a, b);
        assert!(oa.passes > 1);
        assert!(oa.accepted.len() > 0);
    }

    #[test]
    fn same_seed_same_path() {
        let s = scenario(r#"{"mu": {"atoms": [[0.0, 0.5], [1.0, 0.5]]}, "m": {"uniform": {"lo": -1, "hi": 1, "mass": 1}}, "horizon": 0.1}"#);
        assert_eq!(
            simulate_immigration_deterministic(&s, 2).unwrap(),
            simulate_immigration_deterministic(&s, 2).unwrap()
        );
        assert_ne!(
            simulate_immigration_deterministic(&s, 2).unwrap(),
            simulate_immigration_deterministic(&s, 3).unwrap()
        );
    }

    #[test]
    fn varying_density_runs() {
        let s = scenario(
            r#"{"mu": {"atoms": [[0.0, 1.0]]}, "sigma_profile": {"amplitude": 0.5, "frequency": 2.0},
                "q": "zero", "horizon": 0.2}"#,
        );
        let path = simulate_sdsm(&s, 0).unwrap();
        assert_eq!(path.len(), s.steps + 1);
        assert!(path[0].total_mass() > 0.0);
    }
}
