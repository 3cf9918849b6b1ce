//! The stepping loop: moves atoms with the flow, reads their masses through
//! each view, and hands every grid-time state to an observer.

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::excursions::ExcursionRecord;
use crate::feller::{exact_step, TimeChange};
use crate::flow::FlowEnsemble;
use crate::rng::{Stream, StreamKey, INITIAL_COHORT_INDEX};
use crate::config::{ChopMode, InitialMode};
use crate::excursions::sample_excursion_count;

use super::particles::{particle_id, Origin, Particle, ViewSet};

/// An atom of the state at one grid time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveAtom {
    pub id: u64,
    pub location: f64,
    pub mass: f64,
}

/// Receives the state of every view at every grid step, in step order.
pub trait Observer {
    fn observe(&mut self, view: usize, step: usize, atoms: &[LiveAtom]);
}

impl<F: FnMut(usize, usize, &[LiveAtom])> Observer for F {
    fn observe(&mut self, view: usize, step: usize, atoms: &[LiveAtom]) {
        self(view, step, atoms)
    }
}

/// Runs a fixed particle set forward. `particles` must be sorted by birth step.
pub(crate) fn run_particles(
    scenario: &Scenario,
    key: &StreamKey,
    views: &ViewSet,
    particles: &[Particle],
    observer: &mut dyn Observer,
) -> Result<()> {
    debug_assert!(particles.windows(2).all(|w| w[0].birth_step <= w[1].birth_step));
    let steps = scenario.steps;
    let ends: Vec<Option<usize>> = particles.iter().map(|p| views.alive_until(p, steps)).collect();
    let mut flow = scenario.spatial.then(|| FlowEnsemble::new(scenario.rho.clone()));
    let mut flow_rng = key.rng(Stream::Flow, 0);
    let mut active: Vec<usize> = Vec::new();
    let mut positions: Vec<f64> = Vec::new();
    let mut atoms: Vec<LiveAtom> = Vec::new();
    let mut next = 0;
    for step in 0..=steps {
        if step > 0 {
            if let Some(f) = flow.as_mut() {
                f.step(scenario.dt, &mut flow_rng)?;
            }
        }
        while next < particles.len() && particles[next].birth_step == step {
            if ends[next].is_some() {
                if let Some(f) = flow.as_mut() {
                    f.insert_atom(particles[next].id, particles[next].location)?;
                }
                active.push(next);
            }
            next += 1;
        }
        positions.clear();
        for &i in &active {
            positions.push(match &flow {
                Some(f) => f.position(particles[i].id)?,
                None => particles[i].location,
            });
        }
        for (v, &view) in views.views.iter().enumerate() {
            atoms.clear();
            for (&i, &x) in active.iter().zip(&positions) {
                let mass = particles[i].mass_in(view, views.c_min, step);
                if mass > 0.0 {
                    atoms.push(LiveAtom {
                        id: particles[i].id,
                        location: x,
                        mass,
                    });
                }
            }
            observer.observe(v, step, &atoms);
        }
        let mut removal = Ok(());
        active.retain(|&i| {
            if ends[i] == Some(step + 1) {
                if let Some(f) = flow.as_mut() {
                    if let Err(e) = f.remove_atom(particles[i].id) {
                        removal = Err(e);
                    }
                }
                false
            } else {
                true
            }
        });
        removal?;
    }
    Ok(())
}

struct Online {
    id: u64,
    location: f64,
    mass: f64,
    clock: TimeChange,
    rng: crate::rng::SimRng,
}

/// Runs the construction without immigration when the branching density
/// varies in space: each atom's mass is a `β`-Feller diffusion read on its own
/// clock `ψ`, which advances at rate `σ(x)/β` along the atom's path.
pub(crate) fn run_time_changed(
    scenario: &Scenario,
    key: &StreamKey,
    views: &ViewSet,
    observer: &mut dyn Observer,
) -> Result<Vec<Particle>> {
    if views.views.len() != 1 || views.views[0].mode != ChopMode::Shift {
        return Err(Error::Unsupported(
            "a varying branching density runs a single shift view".into(),
        ));
    }
    let chop = views.c_min as f64 * scenario.dt;
    let (beta, dt) = (scenario.beta, scenario.dt);
    let floor = scenario.sigma_floor();
    let mut live: Vec<Online> = Vec::new();
    match scenario.initial {
        InitialMode::Atoms => {
            let mu = scenario
                .mu
                .as_atomic()
                .ok_or_else(|| Error::config("initial", "atom initial mode needs an atomic mu"))?;
            for (i, a) in mu.atoms().iter().enumerate() {
                let id = particle_id(Origin::InitialAtom, 0, 0, i as u64)?;
                live.push(Online {
                    id,
                    location: a.location,
                    mass: a.mass,
                    clock: TimeChange::new(beta, floor)?,
                    rng: key.rng(Stream::Mass, id),
                });
            }
        }
        InitialMode::Excursions => {
            let mut rng = key.rng(Stream::Immigration, INITIAL_COHORT_INDEX);
            let n = sample_excursion_count(scenario.mu.total_mass(), chop, beta, &mut rng)?;
            for k in 0..n {
                let id = particle_id(Origin::InitialExcursion, 0, 0, k)?;
                let location = scenario.mu.sample_location(&mut rng);
                let mut mass_rng = key.rng(Stream::Mass, id);
                let rec = ExcursionRecord::spawn(id, 0.0, location, chop, dt, beta, &mut mass_rng)?;
                live.push(Online {
                    id,
                    location,
                    mass: rec.masses[0],
                    clock: TimeChange::new(beta, floor)?,
                    rng: mass_rng,
                });
            }
        }
    }
    let mut record: Vec<Particle> = live
        .iter()
        .map(|o| Particle {
            id: o.id,
            origin: if scenario.initial == InitialMode::Atoms {
                Origin::InitialAtom
            } else {
                Origin::InitialExcursion
            },
            birth_step: 0,
            raw_birth_time: 0.0,
            location: o.location,
            masses: vec![o.mass],
            absorbed: false,
        })
        .collect();
    let mut flow = scenario.spatial.then(|| FlowEnsemble::new(scenario.rho.clone()));
    if let Some(f) = flow.as_mut() {
        for o in &live {
            f.insert_atom(o.id, o.location)?;
        }
    }
    let mut flow_rng = key.rng(Stream::Flow, 0);
    let mut alive: Vec<usize> = (0..live.len()).collect();
    let mut atoms = Vec::new();
    for step in 0..=scenario.steps {
        atoms.clear();
        for &i in &alive {
            let o = &live[i];
            let x = match &flow {
                Some(f) => f.position(o.id)?,
                None => o.location,
            };
            atoms.push(LiveAtom {
                id: o.id,
                location: x,
                mass: o.mass,
            });
        }
        observer.observe(0, step, &atoms);
        if step == scenario.steps {
            break;
        }
        for (&i, a) in alive.iter().zip(&atoms) {
            let o = &mut live[i];
            let dpsi = o.clock.advance(scenario.sigma_at(a.location), dt)?;
            o.mass = exact_step(o.mass, dpsi, beta, &mut o.rng);
            record[i].masses.push(o.mass);
            if o.mass == 0.0 {
                record[i].absorbed = true;
            }
        }
        let mut removal = Ok(());
        alive.retain(|&i| {
            if live[i].mass > 0.0 {
                return true;
            }
            if let Some(f) = flow.as_mut() {
                if let Err(e) = f.remove_atom(live[i].id) {
                    removal = Err(e);
                }
            }
            false
        });
        removal?;
        if let Some(f) = flow.as_mut() {
            f.step(dt, &mut flow_rng)?;
        }
    }
    Ok(record)
}
