//! Scenario configuration: the JSON schema and its validated form.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CorrelationFunction, SmoothingKernel};
use crate::measures::{AtomicMeasure, BaseMeasure};

/// How chopped excursions contribute mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChopMode {
    /// Mass `w(age + δ)` from birth on: the head of length δ is cut out and
    /// the rest is moved forward to the birth time.
    #[default]
    Shift,
    /// Mass `w(age)` for ages past δ and nothing before.
    Drop,
}

/// How the initial state enters the construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    /// Excursions from a Poisson random measure with intensity `μ × Q_κ`.
    #[default]
    Excursions,
    /// One Feller mass path per atom of `μ`, started from the atom's mass.
    Atoms,
}

/// Immigration rate `q(ν)` multiplying the base measure `m`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Zero,
    #[default]
    One,
    Constant(f64),
    /// `q(ν) = c0 + c1 ⟨1, ν⟩`.
    AffineTotalMass { c0: f64, c1: f64 },
}

impl RateSpec {
    pub fn rate(&self, total_mass: f64) -> f64 {
        match *self {
            RateSpec::Zero => 0.0,
            RateSpec::One => 1.0,
            RateSpec::Constant(c) => c,
            RateSpec::AffineTotalMass { c0, c1 } => c0 + c1 * total_mass,
        }
    }

    /// The state-independent part of the rate; immigration below this level
    /// is always accepted.
    pub fn base_rate(&self) -> f64 {
        match *self {
            RateSpec::Zero => 0.0,
            RateSpec::One => 1.0,
            RateSpec::Constant(c) => c,
            RateSpec::AffineTotalMass { c0, .. } => c0,
        }
    }

    pub fn depends_on_state(&self) -> bool {
        matches!(self, RateSpec::AffineTotalMass { c1, .. } if *c1 != 0.0)
    }

    /// Solution of `ṁ = ⟨1,m⟩ q(m)`, `m(0) = m0`: the mean total mass.
    pub fn mean_total_mass(&self, m0: f64, m_mass: f64, t: f64) -> f64 {
        match *self {
            RateSpec::AffineTotalMass { c0, c1 } if c1 != 0.0 => {
                (m0 + c0 / c1) * (c1 * m_mass * t).exp() - c0 / c1
            }
            _ => m0 + self.base_rate() * m_mass * t,
        }
    }
}

/// A measure as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// `[[location, mass], ...]`.
    Atoms(Vec<[f64; 2]>),
    Uniform { lo: f64, hi: f64, mass: f64 },
}

impl Default for MeasureSpec {
    fn default() -> Self {
        MeasureSpec::Atoms(Vec::new())
    }
}

impl MeasureSpec {
    fn resolve(&self, field: &str) -> Result<BaseMeasure> {
        match self {
            MeasureSpec::Atoms(pairs) => {
                let mu = AtomicMeasure::from_pairs(pairs.iter().map(|p| (p[0], p[1])))
                    .map_err(|e| Error::config(field, e.to_string()))?;
                Ok(BaseMeasure::Atomic(mu))
            }
            &MeasureSpec::Uniform { lo, hi, mass } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::config(field, "uniform needs finite lo <= hi"));
                }
                if !(mass.is_finite() && mass >= 0.0) {
                    return Err(Error::config(field, "uniform mass must be nonnegative"));
                }
                Ok(BaseMeasure::Uniform { lo, hi, mass })
            }
        }
    }
}

/// Spatially varying branching density `σ(x) = sigma + amplitude·cos(frequency·x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaProfile {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSettings {
    /// Defaults to `1e-12·(1 + ⟨1, μ⟩)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_picard_max")]
    pub max_iter: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: default_picard_max(),
        }
    }
}

fn default_picard_max() -> usize {
    50
}
fn default_kernel() -> SmoothingKernel {
    SmoothingKernel::Gaussian { width: 1.0 }
}
fn one() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_delta() -> f64 {
    1e-2
}
fn default_replicates() -> u64 {
    1
}
fn yes() -> bool {
    true
}

/// A scenario exactly as read from or written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_kernel")]
    pub kernel: SmoothingKernel,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_profile: Option<SigmaProfile>,
    /// Excursion-law parameter; defaults to `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub mu: MeasureSpec,
    #[serde(default)]
    pub m: MeasureSpec,
    #[serde(default)]
    pub initial: InitialMode,
    #[serde(default)]
    pub q: RateSpec,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub chop_mode: ChopMode,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    /// Snapshot times; defaults to `T/4, T/2, 3T/4, T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<f64>>,
    /// When false, atoms stay at their birth locations and no flow is run.
    #[serde(default = "yes")]
    pub spatial: bool,
    #[serde(default)]
    pub picard: PicardSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ScenarioConfig {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<Scenario> {
        Scenario::from_config(self.clone())
    }
}

/// A validated scenario with everything resolved onto the time grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub rho: Arc<CorrelationFunction>,
    pub sigma: f64,
    pub sigma_profile: Option<SigmaProfile>,
    pub beta: f64,
    pub mu: BaseMeasure,
    pub m: BaseMeasure,
    pub initial: InitialMode,
    pub q: RateSpec,
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
    pub delta: f64,
    pub chop_steps: usize,
    pub chop_mode: ChopMode,
    pub replicates: u64,
    pub seed: u64,
    pub checkpoints: Vec<usize>,
    pub spatial: bool,
    pub picard_tol: f64,
    pub picard_max: usize,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

fn grid_multiple(field: &str, v: f64, dt: f64) -> Result<usize> {
    let k = (v / dt).round();
    if k < 1.0 || (k * dt - v).abs() > 1e-9 * v.max(dt) {
        return Err(Error::config(
            field,
            format!("{v} is not a positive integer multiple of dt = {dt}"),
        ));
    }
    Ok(k as usize)
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        let c = &config;
        let rho = CorrelationFunction::new(c.kernel.clone())
            .map_err(|e| Error::config("kernel", e.to_string()))?;
        positive("sigma", c.sigma)?;
        let beta = match (c.beta, c.sigma_profile) {
            (None, _) => c.sigma,
            (Some(b), Some(_)) => {
                positive("beta", b)?;
                b
            }
            (Some(b), None) => {
                if b != c.sigma {
                    return Err(Error::config(
                        "beta",
                        "with a constant branching density beta must equal sigma",
                    ));
                }
                b
            }
        };
        let mu = c.mu.resolve("mu")?;
        let m = c.m.resolve("m")?;
        if c.initial == InitialMode::Atoms && mu.as_atomic().is_none() {
            return Err(Error::config("initial", "atom initial mode needs an atomic mu"));
        }
        match c.q {
            RateSpec::Constant(v) if !(v.is_finite() && v >= 0.0) => {
                return Err(Error::config("q", "constant rate must be nonnegative"))
            }
            RateSpec::AffineTotalMass { c0, c1 }
                if !(c0.is_finite() && c0 >= 0.0 && c1.is_finite() && c1 >= 0.0) =>
            {
                return Err(Error::config("q", "affine coefficients must be nonnegative"))
            }
            _ => {}
        }
        if let Some(p) = c.sigma_profile {
            if !(p.amplitude.is_finite() && p.frequency.is_finite() && p.amplitude.abs() < c.sigma) {
                return Err(Error::config(
                    "sigma_profile",
                    "need finite parameters with |amplitude| < sigma",
                ));
            }
            if m.total_mass() > 0.0 && c.q != RateSpec::Zero {
                return Err(Error::config(
                    "sigma_profile",
                    "a varying branching density cannot be combined with immigration",
                ));
            }
            if c.chop_mode != ChopMode::Shift {
                return Err(Error::config("chop_mode", "a varying branching density needs shift mode"));
            }
        }
        positive("horizon", c.horizon)?;
        positive("dt", c.dt)?;
        positive("delta", c.delta)?;
        let steps = grid_multiple("horizon", c.horizon, c.dt)?;
        let chop_steps = grid_multiple("delta", c.delta, c.dt)?;
        if c.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        let times = c.checkpoints.clone().unwrap_or_else(|| {
            [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * c.horizon).collect()
        });
        let mut checkpoints = Vec::with_capacity(times.len());
        for (i, &t) in times.iter().enumerate() {
            if !(t.is_finite() && t >= 0.0 && t <= c.horizon * (1.0 + 1e-12)) {
                return Err(Error::config(
                    format!("checkpoints[{i}]"),
                    format!("{t} lies outside [0, horizon]"),
                ));
            }
            checkpoints.push(((t / c.dt).round() as usize).min(steps));
        }
        checkpoints.sort_unstable();
        checkpoints.dedup();
        let picard_tol = c.picard.tol.unwrap_or(1e-12 * (1.0 + mu.total_mass()));
        positive("picard.tol", picard_tol)?;
        if c.picard.max_iter == 0 {
            return Err(Error::config("picard.max_iter", "must be at least 1"));
        }
        Ok(Scenario {
            rho: Arc::new(rho),
            sigma: c.sigma,
            sigma_profile: c.sigma_profile,
            beta,
            mu,
            m,
            initial: c.initial,
            q: c.q,
            horizon: c.horizon,
            dt: c.dt,
            steps,
            delta: c.delta,
            chop_steps,
            chop_mode: c.chop_mode,
            replicates: c.replicates,
            seed: c.seed,
            checkpoints,
            spatial: c.spatial,
            picard_tol,
            picard_max: c.picard.max_iter,
            config,
        })
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Branching density at `x`.
    pub fn sigma_at(&self, x: f64) -> f64 {
        match self.sigma_profile {
            None => self.sigma,
            Some(p) => self.sigma + p.amplitude * (p.frequency * x).cos(),
        }
    }

    /// Lower bound of the branching density.
    pub fn sigma_floor(&self) -> f64 {
        self.sigma - self.sigma_profile.map_or(0.0, |p| p.amplitude.abs())
    }

    /// Immigration is present when both the base measure and the rate can be
    /// nonzero.
    pub fn has_immigration(&self) -> bool {
        self.m.total_mass() > 0.0
            && match self.q {
                RateSpec::Zero => false,
                RateSpec::Constant(c) => c > 0.0,
                RateSpec::AffineTotalMass { c0, c1 } => c0 > 0.0 || c1 > 0.0,
                RateSpec::One => true,
            }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"{
        "kernel": {"table": {"grid": [-1.0, 0.0, 1.0], "values": [0.0, 1.0, 0.0]}},
        "sigma": 2.0,
        "mu": {"atoms": [[0.0, 1.0], [1.5, 0.25]]},
        "m": {"uniform": {"lo": -1.0, "hi": 1.0, "mass": 0.5}},
        "initial": "atoms",
        "q": {"affine_total_mass": {"c0": 1.0, "c1": 0.5}},
        "horizon": 0.5,
        "dt": 0.001,
        "delta": 0.01,
        "chop_mode": "drop",
        "replicates": 10,
        "seed": 42,
        "checkpoints": [0.1, 0.5],
        "spatial": false,
        "picard": {"tol": 1e-10, "max_iter": 20}
    }"#;

    #[test]
    fn empty_config_uses_defaults() {
        let s = ScenarioConfig::from_json("{}").unwrap().validate().unwrap();
        assert_eq!(s.steps, 1000);
        assert_eq!(s.chop_steps, 10);
        assert_eq!(s.checkpoints, vec![250, 500, 750, 1000]);
        assert_eq!(s.beta, 1.0);
        assert_eq!(s.q, RateSpec::One);
        assert!(!s.has_immigration());
    }

    #[test]
    fn round_trip_is_identity() {
        for text in [FULL, "{}", r#"{"q": "zero", "kernel": {"gaussian": {"width": 0.3}}}"#] {
            let a = ScenarioConfig::from_json(text).unwrap();
            let b = ScenarioConfig::from_json(&a.to_json()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.to_json(), b.to_json());
        }
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = ScenarioConfig::from_json(r#"{"kernel": {"gaussian": {"width": "wide"}}}"#).unwrap_err();
        match e {
            Error::Config { field, .. } => assert_eq!(field, "kernel.gaussian.width"),
            other => panic!("unexpected {other:?}"),
        }
        let e = ScenarioConfig::from_json(r#"{"mu": {"atoms": [[0.0, 1.0], [1.0]]}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field.starts_with("mu.atoms[1]")), "{e}");
        let e = ScenarioConfig::from_json(r#"{"sigmaa": 1}"#).unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
    }

    #[test]
    fn validation_rejects_bad_grids_and_rates() {
        let bad = |text: &str, want: &str| {
            let e = ScenarioConfig::from_json(text).unwrap().validate().unwrap_err();
            match e {
                Error::Config { field, .. } => assert_eq!(field, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        };
        bad(r#"{"delta": 0.0105}"#, "delta");
        bad(r#"{"horizon": 1.0005, "dt": 0.001}"#, "horizon");
        bad(r#"{"q": {"constant": -1.0}}"#, "q");
        bad(r#"{"beta": 2.0}"#, "beta");
        bad(r#"{"kernel": {"gaussian": {"width": -1.0}}}"#, "kernel");
        bad(r#"{"checkpoints": [2.0]}"#, "checkpoints[0]");
        bad(r#"{"mu": {"uniform": {"lo": 0, "hi": 1, "mass": 1}}, "initial": "atoms"}"#, "initial");
        bad(
            r#"{"sigma_profile": {"amplitude": 0.5, "frequency": 1.0}, "m": {"atoms": [[0, 1]]}}"#,
            "sigma_profile",
        );
        bad(r#"{"replicates": 0}"#, "replicates");
    }

    #[test]
    fn mean_total_mass_solves_its_ode() {
        let q = RateSpec::AffineTotalMass { c0: 1.0, c1: 0.5 };
        let (m0, mm) = (1.0, 1.0);
        // RK4 reference.
        let f = |m: f64| mm * q.rate(m);
        let mut y = m0;
        let h = 1e-3;
        for _ in 0..1000 {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((q.mean_total_mass(m0, mm, 1.0) - y).abs() < 1e-10);
        assert!((q.mean_total_mass(m0, mm, 1.0) - (3.0 * 0.5f64.exp() - 2.0)).abs() < 1e-12);
        assert_eq!(RateSpec::One.mean_total_mass(1.0, 2.0, 0.5), 2.0);
    }
}
