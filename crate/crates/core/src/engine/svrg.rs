use super::{Counters, EngineError, FlatRun, Recorder, RunConfig};
use crate::estimators::EstimatorKind;
use crate::graph::Topology;
use crate::linalg;
use crate::metrics::{EpochRecord, ReferenceSolution, Trace};
use crate::problem::LocalProblem;
use crate::scalar::Scalar;

/// `m_1, min(2m_1, cap), …` for `count` epochs.
pub fn svrg_epoch_lengths(m1: usize, cap: usize, count: usize) -> Vec<usize> {
    std::iter::successors(Some(m1.min(cap)), |&m| Some((2 * m).min(cap)))
        .take(count)
        .collect()
}

/// Default first epoch length: a quarter of the largest local dataset.
fn default_m1<T: Scalar>(problems: &[LocalProblem<T>]) -> usize {
    let k = problems.iter().map(|p| p.num_components()).max().unwrap_or(1);
    k.div_ceil(4).max(1)
}

/// SVRG++ epochs: `m_s` inner rounds per epoch with a doubling, capped epoch
/// length; at each epoch end the snapshot moves to the average of the epoch's
/// iterates while `x` and the duals carry over.
///
/// With `early_stop_threshold = Some(δ)` an epoch also ends as soon as one
/// inner round lowers the network objective `Σ_i (f_i + h_i)(x_i)` by less
/// than `δ`.
pub fn run_svrg<T: Scalar>(
    problems: &[LocalProblem<T>],
    topology: &Topology,
    config: &RunConfig<T>,
    reference: Option<&ReferenceSolution<T>>,
) -> Result<Trace<T>, EngineError> {
    if config.algorithm != EstimatorKind::SvrgPlusPlus {
        return Err(EngineError::ConfigMismatch(format!(
            "epoch runner needs svrg, got {}",
            config.algorithm
        )));
    }
    let mut run = FlatRun::new(problems, topology, config)?;
    let mut rec = Recorder::new(problems, topology, reference, config.log_stride)?;
    rec.record(run.counters(), None, run.iterates(), true)?;
    let n = problems[0].dim();
    let cap = config.max_epoch_len;
    let mut m = config.m1.unwrap_or_else(|| default_m1(problems)).min(cap);
    let budget_left = |c: Counters| config.epochs.is_some() || (c.iter as usize) < config.iterations;
    let mut s = 1usize;
    loop {
        let mut sums = vec![linalg::zeros::<T>(n); problems.len()];
        let mut done = 0usize;
        let mut prev_obj = rec.objective(run.iterates());
        for _ in 0..m {
            if !budget_left(run.counters()) {
                break;
            }
            run.step()?;
            for (acc, x) in sums.iter_mut().zip(run.iterates()) {
                linalg::axpy(T::one(), x, acc);
            }
            done += 1;
            rec.record(run.counters(), Some(s as u64), run.iterates(), false)?;
            if let Some(th) = config.early_stop_threshold {
                let obj = rec.objective(run.iterates());
                if prev_obj - obj < th {
                    break;
                }
                prev_obj = obj;
            }
        }
        if done == 0 {
            break;
        }
        let inv = T::one() / T::of_usize(done);
        for acc in sums.iter_mut() {
            linalg::scale(inv, acc);
        }
        let more = match config.epochs {
            Some(total) => s < total,
            None => budget_left(run.counters()),
        };
        if more {
            run.refresh_snapshots(&sums);
        }
        let snap = sums.iter().map(|v| v.as_slice());
        rec.trace.epochs.push(EpochRecord {
            epoch: s as u64,
            iter: run.counters().iter,
            oracle_calls: run.counters().oracle_calls,
            bregman_gap: rec.gap(snap.clone())?,
            objective: rec.objective(snap),
        });
        if !more {
            break;
        }
        s += 1;
        m = (2 * m).min(cap);
    }
    rec.record(run.counters(), Some(s as u64), run.iterates(), true)?;
    Ok(rec.trace)
}
