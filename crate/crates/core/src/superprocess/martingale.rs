//! The martingale functionals of the construction:
//!
//! `M_t(φ) = ⟨φ,Y_t⟩ - ⟨φ,Y_0⟩ - ∫₀ᵗ [½ρ(0)⟨φ'',Y_s⟩ + q(Y_s)⟨φ,m⟩] ds`
//!
//! with predicted quadratic-variation density
//! `⟨σφ², Y_s⟩ + Σ_ij m_i m_j φ'(x_i) φ'(x_j) ρ(x_i - x_j)`.
//! Time integrals use the trapezoid rule on the simulation grid.

use std::sync::Arc;

use crate::config::{RateSpec, Scenario, SigmaProfile};
use crate::kernels::CorrelationFunction;
use crate::measures::{merge_atoms, qv_density_of, Atom, TestFunction};

use super::engine::{LiveAtom, Observer};

/// `M_t(φ)` and the accumulated predicted quadratic variation at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingalePoint {
    pub step: usize,
    pub value: f64,
    pub martingale: f64,
    pub qv_integral: f64,
    pub qv_density: f64,
}

#[derive(Debug, Clone, Default)]
struct Running {
    initial: f64,
    drift_integral: f64,
    qv_integral: f64,
    last_drift: f64,
    last_qv: f64,
}

/// Observer accumulating `M_t(φ)` for a suite of test functions on one view.
#[derive(Debug, Clone)]
pub struct MartingaleAccumulator {
    phis: Vec<TestFunction>,
    phi_m: Vec<f64>,
    rho: Arc<CorrelationFunction>,
    sigma: f64,
    profile: Option<SigmaProfile>,
    q: RateSpec,
    dt: f64,
    view: usize,
    record_at: Vec<usize>,
    running: Vec<Running>,
    merged: Vec<Atom>,
    /// `points[f][c]` is the value for `phis[f]` at the `c`-th recorded step.
    pub points: Vec<Vec<MartingalePoint>>,
}

impl MartingaleAccumulator {
    /// Records at `record_at` (sorted grid steps) for view `view`.
    pub fn new(scenario: &Scenario, phis: Vec<TestFunction>, record_at: Vec<usize>, view: usize) -> Self {
        let phi_m = phis
            .iter()
            .map(|p| scenario.m.integrate_fn(|x| p.value(x), 1e-12))
            .collect();
        let k = phis.len();
        Self {
            phis,
            phi_m,
            rho: scenario.rho.clone(),
            sigma: scenario.sigma,
            profile: scenario.sigma_profile,
            q: scenario.q,
            dt: scenario.dt,
            view,
            record_at,
            running: vec![Running::default(); k],
            merged: Vec::new(),
            points: vec![Vec::new(); k],
        }
    }

    fn sigma_at(&self, x: f64) -> f64 {
        match self.profile {
            None => self.sigma,
            Some(p) => self.sigma + p.amplitude * (p.frequency * x).cos(),
        }
    }

    /// Feeds the state at `step`; steps must arrive in order starting at 0.
    pub fn push(&mut self, step: usize, atoms: &[LiveAtom]) {
        self.merged = merge_atoms(atoms.iter().map(|a| Atom {
            location: a.location,
            mass: a.mass,
        }));
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        let rate = self.q.rate(total);
        let rho0 = self.rho.rho0();
        let record = self.record_at.binary_search(&step).is_ok();
        for f in 0..self.phis.len() {
            let phi = &self.phis[f];
            let (mut value, mut d2, mut branching) = (0.0, 0.0, 0.0);
            for a in &self.merged {
                let v = phi.value(a.location);
                value += a.mass * v;
                d2 += a.mass * phi.d2(a.location);
                branching += self.sigma_at(a.location) * v * v * a.mass;
            }
            let drift = 0.5 * rho0 * d2 + rate * self.phi_m[f];
            let qv = branching + qv_density_of(&self.merged, phi, &self.rho);
            let r = &mut self.running[f];
            if step == 0 {
                r.initial = value;
            } else {
                r.drift_integral += 0.5 * self.dt * (r.last_drift + drift);
                r.qv_integral += 0.5 * self.dt * (r.last_qv + qv);
            }
            r.last_drift = drift;
            r.last_qv = qv;
            if record {
                self.points[f].push(MartingalePoint {
                    step,
                    value,
                    martingale: value - r.initial - r.drift_integral,
                    qv_integral: r.qv_integral,
                    qv_density: qv,
                });
            }
        }
    }
}

impl Observer for MartingaleAccumulator {
    fn observe(&mut self, view: usize, step: usize, atoms: &[LiveAtom]) {
        if view == self.view {
            self.push(step, atoms);
        }
    }
}
