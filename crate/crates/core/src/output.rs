//! CSV output: per-atom trajectories, per-time summaries and excursion traces.
//! All files have a header row, UTF-8 and LF line endings.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::stats::{mean, variance};
use crate::superprocess::{Origin, Particle, Snapshot};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    replicate: u64,
    time: f64,
    atom_id: u64,
    location: f64,
    mass: f64,
}

/// `replicate,time,atom_id,location,mass`, one row per atom per snapshot.
pub fn write_trajectory<W: Write>(w: W, runs: &[(u64, Vec<Snapshot>)]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["replicate", "time", "atom_id", "location", "mass"])?;
    for (replicate, snapshots) in runs {
        for s in snapshots {
            for a in &s.atoms {
                out.serialize(TrajectoryRow {
                    replicate: *replicate,
                    time: s.time,
                    atom_id: a.id,
                    location: a.location,
                    mass: a.mass,
                })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Across-replicate statistics at one snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub time: f64,
    pub mean_mass: f64,
    /// Unbiased; 0 with a single replicate.
    pub var_mass: f64,
    pub atom_count_mean: f64,
}

/// Summarizes runs that share snapshot times.
pub fn summarize(runs: &[(u64, Vec<Snapshot>)]) -> Vec<SummaryRow> {
    let Some((_, first)) = runs.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| {
            let masses: Vec<f64> = runs.iter().map(|(_, s)| s[i].total_mass()).collect();
            let counts: Vec<f64> = runs.iter().map(|(_, s)| s[i].atoms.len() as f64).collect();
            SummaryRow {
                time: first[i].time,
                mean_mass: mean(&masses),
                var_mass: if masses.len() > 1 { variance(&masses) } else { 0.0 },
                atom_count_mean: mean(&counts),
            }
        })
        .collect()
}

/// `time,mean_mass,var_mass,atom_count_mean`.
pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(["time", "mean_mass", "var_mass", "atom_count_mean"])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExcursionRow {
    replicate: u64,
    atom_id: u64,
    origin: &'static str,
    birth_step: usize,
    raw_birth_time: f64,
    location: f64,
    path_len: usize,
    absorbed: bool,
}

/// One row per particle: identity, birth and the length of its stored mass path.
pub fn write_excursions<W: Write>(w: W, runs: &[(u64, Vec<Particle>)]) -> Result<()> {
    let mut out = writer(w);
    out.write_record([
        "replicate",
        "atom_id",
        "origin",
        "birth_step",
        "raw_birth_time",
        "location",
        "path_len",
        "absorbed",
    ])?;
    for (replicate, particles) in runs {
        for p in particles {
            out.serialize(ExcursionRow {
                replicate: *replicate,
                atom_id: p.id,
                origin: match p.origin {
                    Origin::InitialAtom => "initial_atom",
                    Origin::InitialExcursion => "initial_excursion",
                    Origin::Immigrant => "immigrant",
                },
                birth_step: p.birth_step,
                raw_birth_time: p.raw_birth_time,
                location: p.location,
                path_len: p.masses.len(),
                absorbed: p.absorbed,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}
