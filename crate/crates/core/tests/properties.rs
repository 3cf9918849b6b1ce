//! Structural invariants checked over random instances.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use excursim::config::{ChopMode, InitialMode};
use excursim::dual::moment_ode;
use excursim::excursions::ExcursionRecord;
use excursim::feller::{feller_exact_step, feller_extinction_prob, feller_laplace};
use excursim::flow::FlowEnsemble;
use excursim::kernels::CorrelationFunction;
use excursim::measures::{tv_distance, AtomicMeasure, TestFunction};
use excursim::superprocess::{run_replicate, LiveAtom, Observer, PathRecorder, RunOptions, View};
use excursim::{Scenario, ScenarioConfig};

fn measure(pairs: &[(f64, f64)]) -> AtomicMeasure {
    AtomicMeasure::from_pairs(pairs.iter().copied()).unwrap()
}

fn atoms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-3.0..3.0f64, 0.0..2.0f64), 0..6)
}

fn small_scenario(mu: &[(f64, f64)], m: &[(f64, f64)], seed: u64, chop_steps: usize) -> Scenario {
    let mut c = ScenarioConfig::default();
    c.mu = serde_json::from_value(serde_json::json!({ "atoms": mu })).unwrap();
    c.m = serde_json::from_value(serde_json::json!({ "atoms": m })).unwrap();
    c.initial = InitialMode::Atoms;
    c.horizon = 0.2;
    c.dt = 0.005;
    c.delta = 0.005 * chop_steps as f64;
    c.seed = seed;
    c.validate().unwrap()
}

/// Total ⟨φ, ·⟩ per view and step.
struct Integrals {
    phi: TestFunction,
    values: Vec<Vec<f64>>,
}

impl Observer for Integrals {
    fn observe(&mut self, view: usize, _step: usize, atoms: &[LiveAtom]) {
        if self.values.len() <= view {
            self.values.resize(view + 1, Vec::new());
        }
        self.values[view].push(atoms.iter().map(|a| a.mass * self.phi.value(a.location)).sum());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn feller_step_is_nonnegative_and_traps_zero(x in 0.0..5.0f64, t in 0.01..3.0f64, beta in 0.2..3.0f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(feller_exact_step(x, t, beta, &mut rng).unwrap() >= 0.0);
        prop_assert_eq!(feller_exact_step(0.0, t, beta, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn laplace_transform_is_monotone_and_dominates_extinction(
        x in 0.0..5.0f64, t in 0.01..3.0f64, beta in 0.2..3.0f64, z in 0.0..10.0f64, dz in 0.0..10.0f64,
    ) {
        let a = feller_laplace(x, t, beta, z).unwrap();
        let b = feller_laplace(x, t, beta, z + dz).unwrap();
        let p0 = feller_extinction_prob(x, t, beta).unwrap();
        prop_assert!(a <= 1.0 && b <= a + 1e-15 && p0 <= b + 1e-15);
        prop_assert!((feller_laplace(x, t, beta, 1e12).unwrap() - p0).abs() < 1e-9);
    }

    #[test]
    fn excursion_records_stay_positive_until_absorbed(
        chop in 0.001..0.1f64, beta in 0.2..3.0f64, len in 1usize..400, seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rec = ExcursionRecord::spawn(0, 0.0, 0.0, chop, 1e-3, beta, &mut rng).unwrap();
        rec.evolve_to_len(len, beta, &mut rng);
        let (last, head) = rec.masses.split_last().unwrap();
        prop_assert!(head.iter().all(|&m| m > 0.0));
        if rec.absorbed {
            prop_assert_eq!(*last, 0.0);
            prop_assert_eq!(rec.mass_at(rec.masses.len() + 10), Some(0.0));
        } else {
            prop_assert!(*last > 0.0);
            prop_assert_eq!(rec.masses.len(), len);
        }
    }

    #[test]
    fn coalesced_atoms_never_separate(x in -2.0..2.0f64, y in -2.0..2.0f64, width in 0.2..2.0f64, steps in 1usize..40, seed: u64) {
        let mut flow = FlowEnsemble::new(Arc::new(CorrelationFunction::gaussian(width).unwrap()));
        flow.insert_atom(1, x).unwrap();
        flow.insert_atom(2, x).unwrap();
        flow.insert_atom(3, y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            flow.step(0.01, &mut rng).unwrap();
            prop_assert!(flow.coalesced(1, 2).unwrap());
            prop_assert_eq!(flow.position(1).unwrap().to_bits(), flow.position(2).unwrap().to_bits());
        }
    }

    #[test]
    fn integration_is_linear_in_the_measure(mu in atoms(), nu in atoms(), a in 0.0..3.0f64, freq in 0.1..4.0f64) {
        let phi = TestFunction::Cosine { freq, phase: 0.3 };
        let both: Vec<(f64, f64)> = mu.iter().copied().chain(nu.iter().map(|&(x, w)| (x, a * w))).collect();
        let lhs = measure(&both).integrate(&phi);
        let scaled: Vec<(f64, f64)> = nu.iter().map(|&(x, w)| (x, a * w)).collect();
        let rhs = measure(&mu).integrate(&phi) + measure(&scaled).integrate(&phi);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn tv_distance_satisfies_the_triangle_inequality(a in atoms(), b in atoms(), c in atoms()) {
        let (a, b, c) = (measure(&a), measure(&b), measure(&c));
        prop_assert!(tv_distance(&a, &c) <= tv_distance(&a, &b) + tv_distance(&b, &c) + 1e-12);
        prop_assert_eq!(tv_distance(&a, &a), 0.0);
        prop_assert!((tv_distance(&a, &b) - tv_distance(&b, &a)).abs() <= 1e-12);
    }

    #[test]
    fn higher_moments_grow_in_time(n in 1usize..4, sigma in 0.2..2.0f64, m in 0.05..2.0f64, mu in 0.0..2.0f64, t in 0.0..1.5f64) {
        let early = moment_ode(n, t, sigma, m, mu).unwrap();
        let late = moment_ode(n, t + 0.1, sigma, m, mu).unwrap();
        for (e, l) in early.iter().zip(&late) {
            prop_assert!(*l >= *e - 1e-12 * e.abs());
        }
    }

    #[test]
    fn config_round_trips(dt_steps in 1usize..8, chop in 1usize..6, reps in 1u64..50, seed: u64, width in 0.1..3.0f64, mu in atoms()) {
        let mut c = ScenarioConfig::default();
        c.kernel = serde_json::from_value(serde_json::json!({ "gaussian": { "width": width } })).unwrap();
        c.mu = serde_json::from_value(serde_json::json!({ "atoms": mu })).unwrap();
        c.dt = 1e-3 * dt_steps as f64;
        c.delta = c.dt * chop as f64;
        c.chop_mode = ChopMode::Drop;
        c.replicates = reps;
        c.seed = seed;
        prop_assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_key_same_path(mu in atoms(), m in atoms(), seed: u64, replicate in 0u64..4) {
        let s = small_scenario(&mu, &m, seed, 4);
        let run = || {
            let mut rec = PathRecorder::every_step(&s);
            run_replicate(&s, replicate, &RunOptions::primary(&s), &mut rec).unwrap();
            rec.snapshots
        };
        let first = run();
        prop_assert!(first.iter().flat_map(|s| &s.atoms).all(|a| a.mass >= 0.0 && a.location.is_finite()));
        prop_assert_eq!(first, run());
    }

    /// Halving the chop under the nested coupling only adds atoms, so a
    /// nonnegative test function integrates to a larger value.
    #[test]
    fn finer_chops_add_mass(mu in atoms(), m in atoms(), seed: u64, center in -2.0..2.0f64) {
        let s = small_scenario(&mu, &m, seed, 4);
        let opts = RunOptions {
            views: [4, 2, 1].iter().map(|&c| View { chop_steps: c, mode: ChopMode::Drop }).collect(),
            ..RunOptions::primary(&s)
        };
        let mut obs = Integrals { phi: TestFunction::GaussianBump { center, width: 1.0 }, values: Vec::new() };
        run_replicate(&s, 0, &opts, &mut obs).unwrap();
        for pair in obs.values.windows(2) {
            for (coarse, fine) in pair[0].iter().zip(&pair[1]) {
                prop_assert!(*fine >= coarse - 1e-12 * (1.0 + coarse.abs()));
            }
        }
    }
}
