//! CSV writers for trajectories, densities and experiment summaries.
//!
//! Every file has a header row; floats are written with 17 significant digits
//! so values survive a write/read round trip bit for bit.

use std::path::Path;

use crate::error::{invalid, Result};
use crate::harness::{ConsistencyReport, McStudyResult, MfErrorCurve};
use crate::meanfield::KineticTrajectory;
use crate::measure::GridDensity;
use crate::metrics::DobrushinRow;
use crate::microsim::{EnergyReport, MicroTrajectory};

pub const MICRO_HEADER: [&str; 12] =
    ["t", "r", "s", "Qmean", "Qvar", "res_ind3", "res_ind2", "T_r", "T_q", "U_r", "U_q", "E_total"];
pub const KINETIC_HEADER: [&str; 11] = ["t", "r", "s", "m1", "m2", "T_r", "T_q", "U_r", "U_q", "E_total", "mass"];
pub const DENSITY_HEADER: [&str; 3] = ["t", "q", "u"];
pub const DOBRUSHIN_HEADER: [&str; 4] = ["t", "lhs", "rhs", "margin"];
pub const ENERGY_HEADER: [&str; 6] = ["t", "T_r", "T_q", "U_r", "U_q", "E_total"];
pub const MC_SUMMARY_HEADER: [&str; 4] = ["N", "max_var", "sup_mf_error", "slope_contrib"];
pub const CONSISTENCY_HEADER: [&str; 3] = ["seed", "N", "deviation"];
pub const MC_TRAJECTORIES_HEADER: [&str; 4] = ["N", "sample", "t", "r"];

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn floats(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|&x| fmt(x)).collect()
}

fn check_len(name: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(invalid(format!("{name}: {a} samples against {b}")));
    }
    Ok(())
}

/// One row per sample: macro state, ensemble mean and variance, constraint
/// residuals and energies.
pub fn write_micro(path: &Path, traj: &MicroTrajectory, energy: &EnergyReport) -> Result<()> {
    check_len("micro energies", traj.times.len(), energy.times.len())?;
    write_rows(
        path,
        &MICRO_HEADER,
        (0..traj.times.len()).map(|k| {
            let (m, sm, res) = (&traj.macro_states[k], &traj.summaries[k], &traj.residuals[k]);
            floats(&[
                traj.times[k],
                m.r[0],
                m.s[0],
                sm.mean[0],
                sm.variance,
                res.index3,
                res.index2,
                energy.t_r[k],
                energy.t_q[k],
                energy.u_r[k],
                energy.u_q[k],
                energy.e_total[k],
            ])
        }),
    )
}

/// Wide table `t, Q_1 .. Q_N` (first coordinate of each particle).
pub fn write_micro_ensembles(path: &Path, traj: &MicroTrajectory) -> Result<()> {
    let ens = traj.ensembles.as_ref().ok_or_else(|| invalid("trajectory has no stored ensembles"))?;
    let n = traj.initial_ensemble.len();
    let n_q = traj.initial_ensemble.n_q();
    let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=n).map(|j| format!("Q_{j}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header,
        traj.times.iter().zip(ens).map(|(t, e)| {
            std::iter::once(fmt(*t)).chain((0..n).map(|j| fmt(e.as_slice()[j * n_q]))).collect()
        }),
    )
}

pub fn write_kinetic(path: &Path, traj: &KineticTrajectory, energy: &EnergyReport) -> Result<()> {
    check_len("kinetic energies", traj.times.len(), energy.times.len())?;
    write_rows(
        path,
        &KINETIC_HEADER,
        (0..traj.times.len()).map(|k| {
            let m = &traj.macro_states[k];
            floats(&[
                traj.times[k],
                m.r[0],
                m.s[0],
                traj.first_moments[k][0],
                traj.second_moments[k],
                energy.t_r[k],
                energy.t_q[k],
                energy.u_r[k],
                energy.u_q[k],
                energy.e_total[k],
                traj.masses[k],
            ])
        }),
    )
}

/// Long format `t, q, u` of the stored snapshots, every `stride`-th sample.
pub fn write_density(path: &Path, traj: &KineticTrajectory, stride: usize) -> Result<()> {
    let snaps = traj.snapshots.as_ref().ok_or_else(|| invalid("trajectory has no density snapshots"))?;
    let stride = stride.max(1);
    let rows = traj
        .times
        .iter()
        .zip(snaps)
        .step_by(stride)
        .flat_map(|(t, g)| (0..g.n_pts()).map(move |i| floats(&[*t, g.node(i), g.values()[i]])));
    write_rows(path, &DENSITY_HEADER, rows)
}

pub fn write_density_snapshot(path: &Path, t: f64, g: &GridDensity) -> Result<()> {
    write_rows(path, &DENSITY_HEADER, (0..g.n_pts()).map(|i| floats(&[t, g.node(i), g.values()[i]])))
}

pub fn write_energy(path: &Path, e: &EnergyReport) -> Result<()> {
    write_rows(
        path,
        &ENERGY_HEADER,
        (0..e.times.len()).map(|k| floats(&[e.times[k], e.t_r[k], e.t_q[k], e.u_r[k], e.u_q[k], e.e_total[k]])),
    )
}

pub fn write_dobrushin(path: &Path, rows: &[DobrushinRow]) -> Result<()> {
    write_rows(path, &DOBRUSHIN_HEADER, rows.iter().map(|r| floats(&[r.t, r.lhs, r.rhs, r.margin()])))
}

/// `slope_contrib` holds each point's share of the log-log variance slope
/// (empty when the slope is undefined).
pub fn write_mc_summary(path: &Path, study: &McStudyResult, curve: &MfErrorCurve) -> Result<()> {
    let contrib = study.variance_slope().map(|s| s.1);
    write_rows(
        path,
        &MC_SUMMARY_HEADER,
        study.per_n.iter().zip(&curve.errors).enumerate().map(|(i, (r, e))| {
            vec![
                r.n.to_string(),
                fmt(r.max_variance),
                fmt(*e),
                contrib.as_ref().map(|c| fmt(c[i])).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_mc_trajectories(path: &Path, study: &McStudyResult) -> Result<()> {
    let rows = study.per_n.iter().flat_map(|r| {
        r.trajectories.iter().enumerate().flat_map(move |(k, traj)| {
            study
                .times
                .iter()
                .zip(traj)
                .map(move |(t, x)| vec![r.n.to_string(), k.to_string(), fmt(*t), fmt(*x)])
        })
    });
    write_rows(path, &MC_TRAJECTORIES_HEADER, rows)
}

pub fn write_consistency(path: &Path, rows: &[(u64, ConsistencyReport)]) -> Result<()> {
    write_rows(
        path,
        &CONSISTENCY_HEADER,
        rows.iter().map(|(seed, r)| vec![seed.to_string(), r.n.to_string(), fmt(r.deviation)]),
    )
}

/// Reads a CSV written by this module: the header and all fields as floats
/// (empty fields become NaN).
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Ok(f64::NAN)
                } else {
                    f.parse::<f64>().map_err(|e| invalid(format!("field `{f}`: {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
