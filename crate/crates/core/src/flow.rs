//! Positions of atoms carried by the correlated stochastic flow
//! `dx = ∫ h(y - x) W(ds, dy)`.
//!
//! Only the Gaussian projection of the noise onto the current distinct
//! positions is ever drawn: increments over one step have covariance
//! `rho(x_i - x_j)·dt`, evaluated at the positions at the start of the step.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{cholesky_with_jitter, correlation_matrix, CorrelationFunction};

#[derive(Debug, Clone)]
struct Slot {
    position: f64,
    members: usize,
}

/// A set of atoms moving under one flow. Atoms started at bit-identical
/// positions share a slot and therefore a path.
#[derive(Debug, Clone)]
pub struct FlowEnsemble {
    rho: Arc<CorrelationFunction>,
    time: f64,
    slots: Vec<Slot>,
    free: Vec<usize>,
    by_position: HashMap<u64, usize>,
    atoms: HashMap<u64, usize>,
}

fn key(x: f64) -> u64 {
    // -0.0 and 0.0 are the same point.
    if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}

impl FlowEnsemble {
    pub fn new(rho: Arc<CorrelationFunction>) -> Self {
        Self {
            rho,
            time: 0.0,
            slots: Vec::new(),
            free: Vec::new(),
            by_position: HashMap::new(),
            atoms: HashMap::new(),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn distinct_count(&self) -> usize {
        self.by_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn position(&self, id: u64) -> Result<f64> {
        self.atoms
            .get(&id)
            .map(|&s| self.slots[s].position)
            .ok_or(Error::UnknownAtom(id))
    }

    /// Whether two atoms currently share a slot.
    pub fn coalesced(&self, a: u64, b: u64) -> Result<bool> {
        let sa = self.atoms.get(&a).ok_or(Error::UnknownAtom(a))?;
        let sb = self.atoms.get(&b).ok_or(Error::UnknownAtom(b))?;
        Ok(sa == sb)
    }

    /// Tracks atom `id` from `location`, joining an existing slot when the
    /// location matches one bit for bit.
    pub fn insert_atom(&mut self, id: u64, location: f64) -> Result<()> {
        if !location.is_finite() {
            return Err(Error::domain(format!("atom location must be finite, got {location}")));
        }
        if self.atoms.contains_key(&id) {
            return Err(Error::domain(format!("atom id {id} is already tracked")));
        }
        let location = if location == 0.0 { 0.0 } else { location };
        let slot = match self.by_position.get(&key(location)) {
            Some(&s) => s,
            None => {
                let s = match self.free.pop() {
                    Some(s) => {
                        self.slots[s] = Slot {
                            position: location,
                            members: 0,
                        };
                        s
                    }
                    None => {
                        self.slots.push(Slot {
                            position: location,
                            members: 0,
                        });
                        self.slots.len() - 1
                    }
                };
                self.by_position.insert(key(location), s);
                s
            }
        };
        self.slots[slot].members += 1;
        self.atoms.insert(id, slot);
        Ok(())
    }

    pub fn remove_atom(&mut self, id: u64) -> Result<()> {
        let slot = self.atoms.remove(&id).ok_or(Error::UnknownAtom(id))?;
        let s = &mut self.slots[slot];
        s.members -= 1;
        if s.members == 0 {
            self.by_position.remove(&key(s.position));
            self.free.push(slot);
        }
        Ok(())
    }

    /// Advances every slot by one Euler step of length `dt`.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Result<()> {
        let mut active: Vec<(f64, usize)> = self
            .by_position
            .values()
            .map(|&s| (self.slots[s].position, s))
            .collect();
        // Factorize in a canonical order so results do not depend on insertion order.
        active.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k = active.len();
        let rho0 = self.rho.rho0();
        let increments: Vec<f64> = match k {
            0 => Vec::new(),
            1 => {
                let z: f64 = StandardNormal.sample(rng);
                vec![(rho0 * dt).sqrt() * z]
            }
            _ => {
                let positions: Vec<f64> = active.iter().map(|p| p.0).collect();
                let cov = correlation_matrix(&self.rho, &positions) * dt;
                let l = cholesky_with_jitter(cov, rho0 * dt, &positions)?;
                let z = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
                (l * z).iter().copied().collect()
            }
        };
        self.by_position.clear();
        let mut collided = Vec::new();
        for (&(pos, s), inc) in active.iter().zip(&increments) {
            let next = pos + inc;
            let next = if next == 0.0 { 0.0 } else { next };
            self.slots[s].position = next;
            match self.by_position.get(&key(next)) {
                Some(&other) => collided.push((s, other)),
                None => {
                    self.by_position.insert(key(next), s);
                }
            }
        }
        // Paths that meet exactly continue as one.
        for (from, into) in collided {
            for slot in self.atoms.values_mut() {
                if *slot == from {
                    *slot = into;
                }
            }
            self.slots[into].members += self.slots[from].members;
            self.slots[from].members = 0;
            self.free.push(from);
        }
        self.time += dt;
        Ok(())
    }
}

/// `flow_step` in free-function form.
pub fn flow_step<R: Rng + ?Sized>(ensemble: &mut FlowEnsemble, dt: f64, rng: &mut R) -> Result<()> {
    ensemble.step(dt, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::stats;

    fn unit() -> Arc<CorrelationFunction> {
        Arc::new(CorrelationFunction::gaussian(1.0).unwrap())
    }

    #[test]
    fn insert_and_remove_bookkeeping() {
        let mut f = FlowEnsemble::new(unit());
        f.insert_atom(1, 0.5).unwrap();
        assert_eq!(f.distinct_count(), 1);
        f.insert_atom(2, 0.5).unwrap();
        assert_eq!(f.distinct_count(), 1);
        f.insert_atom(3, -0.0).unwrap();
        f.insert_atom(4, 0.0).unwrap();
        assert_eq!(f.distinct_count(), 2);
        assert!(f.insert_atom(1, 3.0).is_err());
        f.remove_atom(1).unwrap();
        assert_eq!(f.position(2).unwrap(), 0.5);
        assert!(matches!(f.remove_atom(1), Err(Error::UnknownAtom(1))));
        f.remove_atom(2).unwrap();
        f.remove_atom(3).unwrap();
        f.remove_atom(4).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.distinct_count(), 0);
    }

    #[test]
    fn freed_slot_draws_nothing() {
        let mut a = FlowEnsemble::new(unit());
        let mut b = FlowEnsemble::new(unit());
        a.insert_atom(1, 0.0).unwrap();
        b.insert_atom(1, 0.0).unwrap();
        b.insert_atom(2, 3.0).unwrap();
        b.remove_atom(2).unwrap();
        let mut ra = derive_rng(1, 0, 0, 0);
        let mut rb = derive_rng(1, 0, 0, 0);
        a.step(0.01, &mut ra).unwrap();
        b.step(0.01, &mut rb).unwrap();
        assert_eq!(a.position(1).unwrap(), b.position(1).unwrap());
    }

    #[test]
    fn coalesced_atoms_move_together() {
        let mut f = FlowEnsemble::new(unit());
        f.insert_atom(1, 0.2).unwrap();
        f.insert_atom(2, 0.2).unwrap();
        f.insert_atom(3, 0.9).unwrap();
        let mut rng = derive_rng(2, 0, 0, 0);
        for i in 0..200 {
            f.step(0.01, &mut rng).unwrap();
            if i == 100 {
                f.remove_atom(1).unwrap();
                f.insert_atom(1, f.position(3).unwrap()).unwrap();
            }
        }
        assert!(f.coalesced(1, 3).unwrap());
        assert_eq!(f.position(1).unwrap().to_bits(), f.position(3).unwrap().to_bits());
        assert_ne!(f.position(2).unwrap(), f.position(3).unwrap());
    }

    #[test]
    fn single_and_pair_increment_moments() {
        let rho = unit();
        let dt = 0.01;
        let d = 1.3;
        let n = 50_000;
        let mut rng = derive_rng(3, 0, 0, 0);
        let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let mut f = FlowEnsemble::new(rho.clone());
            f.insert_atom(0, 0.0).unwrap();
            f.insert_atom(1, d).unwrap();
            f.step(dt, &mut rng).unwrap();
            xs.push(f.position(0).unwrap());
            ys.push(f.position(1).unwrap() - d);
        }
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!((stats::mean(&sq) - rho.rho0() * dt).abs() <= 3.0 * stats::stderr(&sq));
        let prod: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x * y).collect();
        assert!((stats::mean(&prod) - rho.eval(d) * dt).abs() <= 3.0 * stats::stderr(&prod));
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let positions = [0.4, -1.0, 2.2];
        let mut a = FlowEnsemble::new(unit());
        let mut b = FlowEnsemble::new(unit());
        for (i, &p) in positions.iter().enumerate() {
            a.insert_atom(i as u64, p).unwrap();
        }
        for (i, &p) in positions.iter().enumerate().rev() {
            b.insert_atom(i as u64, p).unwrap();
        }
        let mut ra = derive_rng(4, 0, 0, 0);
        let mut rb = derive_rng(4, 0, 0, 0);
        for _ in 0..20 {
            a.step(0.01, &mut ra).unwrap();
            b.step(0.01, &mut rb).unwrap();
        }
        for i in 0..3 {
            assert_eq!(a.position(i).unwrap(), b.position(i).unwrap());
        }
    }
}
