//! Scenario-level checks: martingale problem, chop convergence, pathwise
//! uniqueness and the atom census.

use crate::config::{ChopMode, InitialMode, RateSpec, Scenario};
use crate::error::{Error, Result};
use crate::measures::{tv_distance, TestFunction};
use crate::stats::{mean, stderr, variance, variance_stderr};
use crate::superprocess::{
    run_replicate, simulate_immigration_interactive, LiveAtom, MartingaleAccumulator, Origin,
    PathRecorder, PicardStart, RunOptions, View,
};

use super::{label, par_replicates, TestReport};

/// `M_t(φ)`, its predicted quadratic variation and `⟨φ,Y_t⟩` at the scenario's
/// checkpoints, for every replicate.
#[derive(Debug, Clone)]
pub struct MartingaleSamples {
    pub phis: Vec<TestFunction>,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// `martingale[f][c][r]`.
    pub martingale: Vec<Vec<Vec<f64>>>,
    pub qv: Vec<Vec<Vec<f64>>>,
    pub value: Vec<Vec<Vec<f64>>>,
}

impl MartingaleSamples {
    pub fn collect(scenario: &Scenario, phis: &[TestFunction], replicates: usize) -> Result<Self> {
        let steps = scenario.checkpoints.clone();
        let per_rep = par_replicates(replicates, |rep| {
            let mut acc = MartingaleAccumulator::new(scenario, phis.to_vec(), steps.clone(), 0);
            run_replicate(scenario, rep, &RunOptions::primary(scenario), &mut acc)?;
            Ok(acc.points)
        })?;
        let shape = || vec![vec![Vec::with_capacity(replicates); steps.len()]; phis.len()];
        let (mut martingale, mut qv, mut value) = (shape(), shape(), shape());
        for points in &per_rep {
            for (f, row) in points.iter().enumerate() {
                for (c, p) in row.iter().enumerate() {
                    martingale[f][c].push(p.martingale);
                    qv[f][c].push(p.qv_integral);
                    value[f][c].push(p.value);
                }
            }
        }
        Ok(Self {
            phis: phis.to_vec(),
            times: steps.iter().map(|&s| scenario.time(s)).collect(),
            steps,
            martingale,
            qv,
            value,
        })
    }

    fn name(&self, what: &str, f: usize, c: usize) -> String {
        format!("{what}[{}][t={}]", label(&self.phis[f]), self.times[c])
    }

    /// `E M_t(φ) = 0`.
    pub fn mean_reports(&self) -> Vec<TestReport> {
        let mut out = Vec::new();
        for f in 0..self.phis.len() {
            for c in 0..self.steps.len() {
                let xs = &self.martingale[f][c];
                out.push(TestReport::z_test(self.name("martingale_mean", f, c), mean(xs), 0.0, stderr(xs), xs.len()));
            }
        }
        out
    }

    /// `E M_t(φ)² = E ∫₀ᵗ qv ds`, tested through the per-replicate difference.
    pub fn qv_reports(&self) -> Vec<TestReport> {
        let mut out = Vec::new();
        for f in 0..self.phis.len() {
            for c in 0..self.steps.len() {
                let d: Vec<f64> = self.martingale[f][c]
                    .iter()
                    .zip(&self.qv[f][c])
                    .map(|(m, q)| m * m - q)
                    .collect();
                out.push(
                    TestReport::z_test(self.name("quadratic_variation", f, c), mean(&d), 0.0, stderr(&d), d.len())
                        .with_note(format!("mean predicted QV {:.6}", mean(&self.qv[f][c]))),
                );
            }
        }
        out
    }
}

/// z-scores of the mean of `M_t(φ)` against 0 for each test function and checkpoint.
pub fn test_martingale_mean(scenario: &Scenario, phis: &[TestFunction], replicates: usize) -> Result<Vec<TestReport>> {
    Ok(MartingaleSamples::collect(scenario, phis, replicates)?.mean_reports())
}

/// z-scores of `M_t(φ)² - ∫₀ᵗ qv ds` against 0 for each test function and checkpoint.
pub fn test_quadratic_variation(scenario: &Scenario, phis: &[TestFunction], replicates: usize) -> Result<Vec<TestReport>> {
    Ok(MartingaleSamples::collect(scenario, phis, replicates)?.qv_reports())
}

struct ChopOutcome {
    monotone: Vec<bool>,
    // sup_dist[k][f] for the shifted views at δ, δ/2, δ/4.
    sup_dist: [Vec<f64>; 3],
}

/// Nested-coupling checks at chops `δ, δ/2, δ/4` with a one-step reference.
///
/// With the dropped-head construction `⟨φ, Y^{(δ)}_t⟩` must be nondecreasing as
/// `δ` halves, bit for bit. With the shifted construction the sup-distance to
/// the reference should shrink as `δ` halves on at least 95% of replicates.
pub fn test_chop_convergence(scenario: &Scenario, phis: &[TestFunction], replicates: usize) -> Result<Vec<TestReport>> {
    let c = scenario.chop_steps;
    if c % 4 != 0 {
        return Err(Error::config("delta", "chop convergence needs delta to be a multiple of 4·dt"));
    }
    if phis.iter().any(|p| !p.is_nonnegative()) {
        return Err(Error::domain("chop monotonicity needs nonnegative test functions"));
    }
    if scenario.initial == InitialMode::Excursions && scenario.mu.total_mass() > 0.0 {
        return Err(Error::config("initial", "chop monotonicity needs the initial state as atoms"));
    }
    if scenario.q.depends_on_state() || scenario.sigma_profile.is_some() {
        return Err(Error::Unsupported(
            "chop convergence runs with state-independent immigration and constant sigma".into(),
        ));
    }
    let chops = [c, c / 2, c / 4];
    let mut views: Vec<View> = chops.iter().map(|&k| View { chop_steps: k, mode: ChopMode::Drop }).collect();
    views.extend(chops.iter().map(|&k| View { chop_steps: k, mode: ChopMode::Shift }));
    views.push(View { chop_steps: 1, mode: ChopMode::Drop });
    let reference = views.len() - 1;
    let opts = RunOptions {
        views,
        ..RunOptions::primary(scenario)
    };
    let nf = phis.len();
    let outcomes = par_replicates(replicates, |rep| {
        let mut vals = vec![vec![0.0; nf]; reference + 1];
        let mut out = ChopOutcome {
            monotone: vec![true; nf],
            sup_dist: [vec![0.0; nf], vec![0.0; nf], vec![0.0; nf]],
        };
        let mut observer = |view: usize, _step: usize, atoms: &[LiveAtom]| {
            for (f, phi) in phis.iter().enumerate() {
                vals[view][f] = atoms.iter().map(|a| a.mass * phi.value(a.location)).sum();
            }
            if view == reference {
                for f in 0..nf {
                    let v = |k: usize| vals[k][f];
                    if !(v(0) <= v(1) && v(1) <= v(2) && v(2) <= v(reference)) {
                        out.monotone[f] = false;
                    }
                    for k in 0..3 {
                        let d = (v(3 + k) - v(reference)).abs();
                        out.sup_dist[k][f] = out.sup_dist[k][f].max(d);
                    }
                }
            }
        };
        run_replicate(scenario, rep, &opts, &mut observer)?;
        Ok(out)
    })?;
    let n = outcomes.len();
    let frac = |pred: &dyn Fn(&ChopOutcome) -> bool| outcomes.iter().filter(|o| pred(o)).count() as f64 / n as f64;
    let shrinks = |a: f64, b: f64| b < a || (a == 0.0 && b == 0.0);
    let mut reports = Vec::new();
    for (f, phi) in phis.iter().enumerate() {
        let l = label(phi);
        reports.push(
            TestReport::within(format!("chop_monotone[{l}]"), frac(&|o| o.monotone[f]), 1.0, 0.0, n)
                .with_note("fraction of replicates with drop-view values nondecreasing as delta halves at every step"),
        );
        for (k, step) in ["delta->delta/2", "delta/2->delta/4"].iter().enumerate() {
            reports.push(
                TestReport::at_least(
                    format!("chop_shift_sup_distance_decreases[{l}][{step}]"),
                    frac(&|o| shrinks(o.sup_dist[k][f], o.sup_dist[k + 1][f])),
                    0.95,
                    n,
                )
                .with_note("fraction of replicates where the shifted view's sup-distance to the one-step reference shrinks"),
            );
        }
        for (k, d) in chops.iter().enumerate() {
            let ds: Vec<f64> = outcomes.iter().map(|o| o.sup_dist[k][f]).collect();
            reports.push(TestReport::info(
                format!("chop_shift_mean_sup_distance[{l}][chop_steps={d}]"),
                mean(&ds),
                0.0,
                n,
            ));
        }
    }
    Ok(reports)
}

/// Picard fixed points from the zero and mean-field starts, compared in total
/// variation at every grid time, plus a negative control with an independent
/// set of thinning layers.
pub fn test_pathwise_uniqueness(scenario: &Scenario, replicates: usize) -> Result<Vec<TestReport>> {
    struct Outcome {
        sup_tv: f64,
        passes: usize,
        final_distance: f64,
        control_differs: bool,
    }
    let outcomes = par_replicates(replicates, |rep| {
        let (a, oa) = simulate_immigration_interactive(scenario, rep, PicardStart::Zero)?;
        let (b, ob) = simulate_immigration_interactive(scenario, rep, PicardStart::MeanField)?;
        let sup_tv = a
            .iter()
            .zip(&b)
            .map(|(x, y)| tv_distance(&x.measure(), &y.measure()))
            .fold(0.0, f64::max);
        let opts = RunOptions {
            thinning_salt: 1,
            ..RunOptions::primary(scenario)
        };
        let mut control = PathRecorder::every_step(scenario);
        run_replicate(scenario, rep, &opts, &mut control)?;
        let control_differs = control.snapshots != a;
        let last = |d: &[f64]| d.last().copied().unwrap_or(0.0);
        Ok(Outcome {
            sup_tv: if a.len() == b.len() { sup_tv } else { f64::INFINITY },
            passes: oa.passes.max(ob.passes),
            final_distance: last(&oa.distances).max(last(&ob.distances)),
            control_differs,
        })
    })?;
    let n = outcomes.len();
    let sup_tv = outcomes.iter().map(|o| o.sup_tv).fold(0.0, f64::max);
    let passes = outcomes.iter().map(|o| o.passes).max().unwrap_or(0);
    let final_distance = outcomes.iter().map(|o| o.final_distance).fold(0.0, f64::max);
    let differs = outcomes.iter().filter(|o| o.control_differs).count() as f64 / n as f64;
    Ok(vec![
        TestReport::within("pathwise_uniqueness_sup_tv", sup_tv, 0.0, 0.0, n)
            .with_note("largest total-variation distance between the two Picard fixed points over all grid times and replicates"),
        TestReport::at_most("picard_final_distance", final_distance, scenario.picard_tol, n),
        TestReport::info("picard_passes_max", passes as f64, scenario.picard_max as f64, n),
        TestReport::at_least("negative_control_differs", differs, 0.5, n)
            .with_note("fraction of replicates whose fixed point changes when the thinning layers are redrawn"),
    ])
}

/// Counts of old atoms against the excursion-law tail `2/(βr)`.
///
/// For each age `r`: the number of initial excursions living longer than `r`
/// is Poisson with mean `2⟨1,μ⟩/(βr)`, so doubling `r` halves it; and the
/// mean number of atoms older than `r` alive at the horizon is at most
/// `(⟨1,μ⟩ + q̄⟨1,m⟩T)·2/(βr)`.
pub fn test_atom_census(scenario: &Scenario, ages: &[f64], replicates: usize) -> Result<Vec<TestReport>> {
    if scenario.sigma_profile.is_some() {
        return Err(Error::Unsupported("the census runs with constant sigma".into()));
    }
    let c = scenario.chop_steps;
    let steps = scenario.steps;
    let age_steps: Vec<usize> = ages
        .iter()
        .map(|&r| {
            let k = (r / scenario.dt).round() as usize;
            if k < c || k > c + steps || ((k as f64) * scenario.dt - r).abs() > 1e-9 {
                Err(Error::domain(format!("census age {r} must be a grid age in [delta, T + delta]")))
            } else {
                Ok(k)
            }
        })
        .collect::<Result<_>>()?;
    let view = View {
        chop_steps: c,
        mode: scenario.chop_mode,
    };
    struct Census {
        initial: f64,
        lifetime: Vec<f64>,
        old_at_horizon: Vec<f64>,
        immigrants_as_old_as_cohort: f64,
    }
    let rows = par_replicates(replicates, |rep| {
        let mut noop = |_: usize, _: usize, _: &[LiveAtom]| {};
        let report = run_replicate(scenario, rep, &RunOptions::primary(scenario), &mut noop)?;
        let mut out = Census {
            initial: 0.0,
            lifetime: vec![0.0; ages.len()],
            old_at_horizon: vec![0.0; ages.len()],
            immigrants_as_old_as_cohort: 0.0,
        };
        for p in &report.particles {
            if p.origin == Origin::InitialExcursion {
                out.initial += 1.0;
                for (i, &k) in age_steps.iter().enumerate() {
                    if p.masses.get(k - c).is_some_and(|&m| m > 0.0) {
                        out.lifetime[i] += 1.0;
                    }
                }
            }
            if p.mass_in(view, c, steps) <= 0.0 {
                continue;
            }
            let age = match (p.origin, view.mode) {
                (Origin::InitialAtom, _) => steps,
                (Origin::InitialExcursion, _) | (Origin::Immigrant, ChopMode::Shift) => c + steps - p.birth_step,
                (Origin::Immigrant, ChopMode::Drop) => steps - p.birth_step,
            };
            for (i, &k) in age_steps.iter().enumerate() {
                if age > k {
                    out.old_at_horizon[i] += 1.0;
                }
            }
            // Time since birth, as opposed to excursion age.
            if p.origin == Origin::Immigrant && steps - p.birth_step >= steps {
                out.immigrants_as_old_as_cohort += 1.0;
            }
        }
        Ok(out)
    })?;
    let n = rows.len();
    let beta = scenario.beta;
    let mu_mass = scenario.mu.total_mass();
    let mut reports = Vec::new();
    if scenario.initial == InitialMode::Excursions && mu_mass > 0.0 {
        let counts: Vec<f64> = rows.iter().map(|r| r.initial).collect();
        let expected = mu_mass * 2.0 / (beta * scenario.delta);
        reports.push(TestReport::z_test("census_initial_count_mean", mean(&counts), expected, stderr(&counts), n));
        reports.push(TestReport::z_test(
            "census_initial_count_variance",
            variance(&counts),
            expected,
            variance_stderr(&counts),
            n,
        ));
        for (i, &r) in ages.iter().enumerate() {
            let xs: Vec<f64> = rows.iter().map(|row| row.lifetime[i]).collect();
            reports.push(TestReport::z_test(
                format!("census_lifetime_exceeds[r={r}]"),
                mean(&xs),
                2.0 * mu_mass / (beta * r),
                stderr(&xs),
                n,
            ));
        }
        for (i, &r) in ages.iter().enumerate() {
            let Some(j) = age_steps.iter().position(|&k| k == 2 * age_steps[i]) else {
                continue;
            };
            let d: Vec<f64> = rows.iter().map(|row| row.lifetime[i] - 2.0 * row.lifetime[j]).collect();
            reports.push(
                TestReport::z_test(format!("census_doubling_halves[r={r}]"), mean(&d), 0.0, stderr(&d), n)
                    .with_note("mean of N(r) - 2 N(2r)"),
            );
        }
    }
    let sup_rate = match scenario.q {
        RateSpec::AffineTotalMass { c1, .. } if c1 != 0.0 => None,
        q => Some(q.base_rate()),
    };
    let m_mass = if scenario.has_immigration() { scenario.m.total_mass() } else { 0.0 };
    for (i, &r) in ages.iter().enumerate() {
        let xs: Vec<f64> = rows.iter().map(|row| row.old_at_horizon[i]).collect();
        let (m, se) = (mean(&xs), stderr(&xs));
        let name = format!("census_old_atoms_bound[r={r}]");
        reports.push(match sup_rate {
            Some(q) => {
                let bound = (mu_mass + q * m_mass * scenario.horizon) * 2.0 / (beta * r);
                TestReport::at_most(name, m - 3.0 * se, bound, n)
                    .with_note(format!("mean count {m:.4} (stderr {se:.4}) of atoms alive at T older than r"))
            }
            None => TestReport::info(name, m, 0.0, n).with_note("state-dependent rate has no a priori bound"),
        });
    }
    let worst = rows.iter().map(|r| r.immigrants_as_old_as_cohort).fold(0.0, f64::max);
    reports.push(
        TestReport::within("census_no_immigrant_as_old_as_initial_cohort", worst, 0.0, 0.0, n)
            .with_note("immigrants alive at T that have been alive for the whole horizon"),
    );
    Ok(reports)
}
