//! Replica ensembles: parallel runs, moments, distances and export.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config_space::{Configuration, Domain};
use crate::error::{invalid, Error, Result};
use crate::stats::{batch_means, bootstrap_distances, ks_two_sample, wasserstein1, BatchEstimate, Interval};

use super::Trajectory;

/// Batches used for ensemble confidence intervals.
pub const ENSEMBLE_BATCHES: usize = 20;

/// Runs `n` replicas in parallel. Replica `i` draws from the ChaCha8 stream
/// `i` of `seed`, so results do not depend on scheduling.
pub fn run_ensemble<F>(n: usize, seed: u64, f: F) -> Result<Vec<Trajectory>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Trajectory> + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut tr = f(&mut rng)?;
            tr.seed = seed;
            tr.replica = i;
            Ok(tr)
        })
        .collect()
}

/// `|η_t|^k` averaged over the ensemble, with a batch-means interval.
pub fn estimate_moment(ens: &[Trajectory], t: f64, k: u32) -> Result<BatchEstimate> {
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let values = ens
        .iter()
        .map(|tr| {
            tr.at(t)
                .map(|c| (c.len() as f64).powi(k as i32))
                .ok_or_else(|| Error::RecordGrid(format!("time {t} not recorded for replica {}", tr.replica)))
        })
        .collect::<Result<Vec<f64>>>()?;
    batch_means(&values, ENSEMBLE_BATCHES)
}

/// Scalar summaries of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Count,
    /// Points in the corner box `[0, L/2)^d`.
    SubwindowCount,
    /// Mean nearest-neighbour distance; undefined below two points.
    NearestNeighbor,
}

impl Observable {
    pub const ALL: [Observable; 3] = [Observable::Count, Observable::SubwindowCount, Observable::NearestNeighbor];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Count => "count",
            Self::SubwindowCount => "subwindow",
            Self::NearestNeighbor => "nn_mean",
        }
    }

    pub fn eval(&self, c: &Configuration, dom: &Domain) -> Option<f64> {
        match self {
            Self::Count => Some(c.len() as f64),
            Self::SubwindowCount => {
                let half = 0.5 * dom.side;
                Some(c.iter().filter(|p| p.0.iter().all(|&x| x < half)).count() as f64)
            }
            Self::NearestNeighbor => {
                if c.len() < 2 {
                    return None;
                }
                let pts = c.points();
                let total: f64 = pts
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        pts.iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, y)| dom.dist(&x.0, &y.0))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .sum();
                Some(total / pts.len() as f64)
            }
        }
    }
}

fn check_grids(a: &[Trajectory], b: &[Trajectory]) -> Result<()> {
    let reference = a
        .first()
        .or(b.first())
        .ok_or(Error::EmptyEnsemble)?
        .record_times
        .clone();
    if let Some(tr) = a.iter().chain(b).find(|tr| tr.record_times != reference) {
        return Err(Error::RecordGrid(format!(
            "replica {} records at {:?}, expected {:?}",
            tr.replica, tr.record_times, reference
        )));
    }
    Ok(())
}

/// Values of `obs` at time `t` over the replicas that define it.
pub fn record_values(ens: &[Trajectory], t: f64, obs: Observable, dom: &Domain) -> Vec<f64> {
    ens.iter().filter_map(|tr| tr.at(t)).filter_map(|c| obs.eval(c, dom)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub observable: Observable,
    pub n_a: usize,
    pub n_b: usize,
    pub ks: f64,
    pub ks_p_value: f64,
    pub ks_ci: Interval,
    pub w1: f64,
    pub w1_ci: Interval,
}

/// KS and Wasserstein-1 distances between the laws of each observable at
/// time `t`, with percentile bootstrap intervals.
pub fn compare_ensembles<R: Rng + ?Sized>(
    a: &[Trajectory],
    b: &[Trajectory],
    t: f64,
    observables: &[Observable],
    dom: &Domain,
    n_boot: usize,
    rng: &mut R,
) -> Result<Vec<DistanceReport>> {
    check_grids(a, b)?;
    let grid = &a.first().or(b.first()).expect("checked nonempty").record_times;
    if !grid.contains(&t) {
        return Err(Error::RecordGrid(format!("time {t} is not a record time")));
    }
    observables
        .iter()
        .map(|&obs| {
            let va = record_values(a, t, obs, dom);
            let vb = record_values(b, t, obs, dom);
            let ks = ks_two_sample(&va, &vb)?;
            let (ks_ci, w1_ci) = bootstrap_distances(&va, &vb, n_boot, rng)?;
            Ok(DistanceReport {
                observable: obs,
                n_a: va.len(),
                n_b: vb.len(),
                ks: ks.statistic,
                ks_p_value: ks.p_value,
                ks_ci,
                w1: wasserstein1(&va, &vb)?,
                w1_ci,
            })
        })
        .collect()
}

/// One row per replica per record time:
/// `seed,replica,t,count,subwindow,nn_mean` (empty `nn_mean` below two points).
pub fn write_ensemble_csv<W: Write>(mut w: W, ens: &[Trajectory], dom: &Domain) -> std::io::Result<()> {
    writeln!(w, "seed,replica,t,count,subwindow,nn_mean")?;
    for tr in ens {
        for (t, c) in tr.record_times.iter().zip(&tr.states) {
            let nn = Observable::NearestNeighbor.eval(c, dom).map(|v| v.to_string()).unwrap_or_default();
            let sub = Observable::SubwindowCount.eval(c, dom).unwrap_or(0.0);
            writeln!(w, "{},{},{},{},{},{}", tr.seed, tr.replica, t, c.len(), sub, nn)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordSummary {
    pub t: f64,
    pub reached: usize,
    pub mean_count: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub replicas: usize,
    pub exploded: usize,
    pub records: Vec<RecordSummary>,
}

/// Mean population per record time among replicas that reached it.
pub fn ensemble_summary(ens: &[Trajectory]) -> Result<EnsembleSummary> {
    let first = ens.first().ok_or(Error::EmptyEnsemble)?;
    check_grids(ens, &[])?;
    let records = first
        .record_times
        .iter()
        .map(|&t| {
            let v: Vec<f64> = ens.iter().filter_map(|tr| tr.at(t)).map(|c| c.len() as f64).collect();
            if v.is_empty() {
                return Ok(RecordSummary {
                    t,
                    reached: 0,
                    mean_count: f64::NAN,
                    ci: f64::NAN,
                });
            }
            let e = batch_means(&v, ENSEMBLE_BATCHES)?;
            Ok(RecordSummary {
                t,
                reached: v.len(),
                mean_count: e.mean,
                ci: e.ci,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(invalid("record_times", "no record times"));
    }
    Ok(EnsembleSummary {
        replicas: ens.len(),
        exploded: ens.iter().filter(|tr| tr.exploded).count(),
        records,
    })
}
