//! Trajectory-PMBM posterior representation and hypothesis management:
//! prediction, L-scan truncation, pruning, multi-Bernoulli projection and
//! trajectory estimation.
//!
//! The posterior over the set of all sampled trajectories is the union of a
//! PPP (never-detected trajectories) and a multi-Bernoulli mixture. Each
//! received measurement opens one potential-trajectory slot; a slot holds a
//! list of Bernoulli local hypotheses, and a global hypothesis selects one
//! local hypothesis per slot.

use std::collections::BTreeMap;

use crate::continuous::{birth_fit, survival_probability, wiener_kernel, ContinuousModel};
use crate::error::{Result, TrackingError};
use crate::trajectory::{MixtureTerm, TrajectoryGaussian, TrajectoryMixture};

/// One Bernoulli local hypothesis of a potential trajectory.
#[derive(Debug, Clone)]
pub struct BernoulliLocalHypothesis {
    /// Probability of existence.
    pub existence: f64,
    /// Single-trajectory density, a mixture over end-time hypotheses.
    pub density: TrajectoryMixture,
    /// Cumulative log of the multiplicative global-weight contribution.
    pub weight_ln_factor: f64,
    /// Association bookkeeping: `(scan id, Some(measurement index))` for
    /// detections, `None` for misdetections.
    pub history: Vec<(u32, Option<u32>)>,
}

impl BernoulliLocalHypothesis {
    /// Placeholder local hypothesis for "this potential trajectory was never
    /// started in this global hypothesis".
    pub fn nonexistent() -> Self {
        Self {
            existence: 0.0,
            density: TrajectoryMixture::default(),
            weight_ln_factor: 0.0,
            history: Vec::new(),
        }
    }
}

/// One weighted Gaussian component of the (alive-trajectory) PPP intensity.
#[derive(Debug, Clone)]
pub struct PoissonComponent {
    pub weight: f64,
    pub gaussian: TrajectoryGaussian,
}

/// A global data-association hypothesis: one local-hypothesis index per slot.
#[derive(Debug, Clone)]
pub struct GlobalHypothesis {
    pub weight: f64,
    pub selections: Vec<usize>,
}

/// Anchors of an out-of-sequence time within the sampled timeline.
#[derive(Debug, Clone)]
pub struct OosContext {
    /// The OOS time stamp.
    pub tau: f64,
    /// Step index of the closest sample time before tau.
    pub k_before: usize,
    /// Step index of the closest sample time after tau.
    pub k_after: usize,
    /// tau - t_{k_before}.
    pub dt1: f64,
    /// t_{k_after} - tau.
    pub dt2: f64,
    /// Conditional survival probability over dt1 (trajectories that end at
    /// `k_before`).
    pub p1: f64,
    /// Conditional survival probability over dt2 (trajectories born at
    /// `k_after`).
    pub p2: f64,
}

/// Posterior over the set of all sampled trajectories.
///
/// While `tau` is `Some`, the posterior carries retrodicted structure:
/// mixture terms may be augmented with a state at the OOS time and the PPP
/// may hold an OOS-birth component (`start_step == -1`).
#[derive(Debug, Clone)]
pub struct PmbmPosterior {
    /// Current step index `k`; `step_times.len() == k + 1`.
    pub current_step: usize,
    /// Continuous times of steps `0..=k`, strictly increasing.
    pub step_times: Vec<f64>,
    pub ppp: Vec<PoissonComponent>,
    /// Potential-trajectory slots, each a list of local hypotheses.
    pub slots: Vec<Vec<BernoulliLocalHypothesis>>,
    pub globals: Vec<GlobalHypothesis>,
    /// OOS anchors while the posterior is in retrodicted form.
    pub tau: Option<OosContext>,
}

/// Which estimator extracts trajectories from the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// Report Bernoullis of the highest-weight global with `r >= threshold`.
    Tpmbm,
    /// Report merged Bernoullis with `r > threshold` (after projection).
    Tpmb,
}

/// One estimated trajectory: birth step plus the state mean sequence.
#[derive(Debug, Clone)]
pub struct EstimatedTrajectory {
    pub start_step: i64,
    pub states: Vec<nalgebra::DVector<f64>>,
}

impl PmbmPosterior {
    /// The empty posterior at initial time `t0`: no trajectories, one empty
    /// global hypothesis.
    pub fn empty(t0: f64) -> Self {
        Self {
            current_step: 0,
            step_times: vec![t0],
            ppp: Vec::new(),
            slots: Vec::new(),
            globals: vec![GlobalHypothesis {
                weight: 1.0,
                selections: Vec::new(),
            }],
            tau: None,
        }
    }

    pub fn current_time(&self) -> f64 {
        *self.step_times.last().expect("step_times nonempty")
    }

    fn require_plain(&self, op: &str) -> Result<()> {
        if self.tau.is_some() {
            return Err(TrackingError::InvalidState(format!(
                "{op} requires a posterior without retrodicted structure"
            )));
        }
        Ok(())
    }

    /// Renormalizes global hypothesis weights to sum to one.
    pub fn normalize_globals(&mut self) {
        let total: f64 = self.globals.iter().map(|g| g.weight).sum();
        if total > 0.0 {
            for g in &mut self.globals {
                g.weight /= total;
            }
        }
    }
}

/// TPMBM prediction to a new sample time.
///
/// Every alive end-time hypothesis of every Bernoulli splits into a dead
/// branch (weight scaled by `1 - p_S`) and a survived branch extended with
/// the exact Wiener kernel (weight scaled by `p_S`). PPP components are
/// extended and thinned by `p_S` (dead undetected trajectories are not
/// stored), and a new birth component is appended. Existences and global
/// weights are unchanged.
pub fn predict(
    posterior: &PmbmPosterior,
    new_time: f64,
    model: &ContinuousModel,
) -> Result<PmbmPosterior> {
    posterior.require_plain("predict")?;
    let t_k = posterior.current_time();
    if !(new_time > t_k) {
        return Err(TrackingError::invalid(format!(
            "new_time {new_time} must exceed current time {t_k}"
        )));
    }
    let dt = new_time - t_k;
    let p_s = survival_probability(model.mu, dt)?;
    let kernel = wiener_kernel(model.q, model.d, dt)?;
    let birth = birth_fit(model, dt)?;

    let k = posterior.current_step as i64;
    let mut out = posterior.clone();
    out.current_step += 1;
    out.step_times.push(new_time);

    for slot in &mut out.slots {
        for local in slot.iter_mut() {
            let mut terms = Vec::with_capacity(local.density.terms.len() + 1);
            for term in &local.density.terms {
                if !term.gaussian.augmented && term.gaussian.end_step == k {
                    if 1.0 - p_s > 0.0 {
                        terms.push(MixtureTerm {
                            weight: term.weight * (1.0 - p_s),
                            gaussian: term.gaussian.clone(),
                        });
                    }
                    terms.push(MixtureTerm {
                        weight: term.weight * p_s,
                        gaussian: term.gaussian.extend(&kernel.f, &kernel.q),
                    });
                } else {
                    terms.push(term.clone());
                }
            }
            local.density.terms = terms;
        }
    }

    for comp in &mut out.ppp {
        debug_assert_eq!(comp.gaussian.end_step, k, "PPP components are alive");
        comp.weight *= p_s;
        comp.gaussian = comp.gaussian.extend(&kernel.f, &kernel.q);
    }
    if birth.expected_count > 0.0 {
        out.ppp.push(PoissonComponent {
            weight: birth.expected_count,
            gaussian: TrajectoryGaussian::single(k + 1, birth.mean, birth.cov),
        });
    }

    Ok(out)
}

/// L-scan truncation: states older than `k - L + 1` are decoupled from the
/// window and kept as frozen marginals. Idempotent for fixed `(k, L)`.
pub fn lscan_truncate(posterior: &PmbmPosterior, l: usize) -> Result<PmbmPosterior> {
    posterior.require_plain("lscan_truncate")?;
    if l < 1 {
        return Err(TrackingError::invalid("L must be at least 1"));
    }
    let window_start = posterior.current_step as i64 + 1 - l as i64;
    if window_start <= 0 {
        return Ok(posterior.clone());
    }
    let mut out = posterior.clone();
    for slot in &mut out.slots {
        for local in slot.iter_mut() {
            for term in &mut local.density.terms {
                term.gaussian.freeze_until(window_start);
            }
        }
    }
    for comp in &mut out.ppp {
        comp.gaussian.freeze_until(window_start);
    }
    Ok(out)
}

/// Pruning and garbage collection.
///
/// Removes global hypotheses below `hyp_threshold` (then keeps at most
/// `max_globals`, renormalizing), PPP components below `ppp_threshold`, and
/// zeroes alive masses below `alive_threshold` (the trajectory is declared
/// dead and its mixture renormalized). Unreferenced local hypotheses and
/// dead slots are dropped, with selection vectors reindexed.
pub fn prune(
    posterior: &PmbmPosterior,
    hyp_threshold: f64,
    ppp_threshold: f64,
    max_globals: usize,
    alive_threshold: f64,
) -> Result<PmbmPosterior> {
    posterior.require_plain("prune")?;
    let mut out = posterior.clone();

    out.globals.retain(|g| g.weight >= hyp_threshold);
    out.globals.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then_with(|| a.selections.cmp(&b.selections))
    });
    out.globals.truncate(max_globals.max(1));
    if out.globals.is_empty() {
        // Keep the best original hypothesis rather than an empty mixture.
        let best = posterior
            .globals
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .cloned()
            .ok_or_else(|| TrackingError::InvalidState("posterior has no globals".into()))?;
        out.globals.push(best);
    }
    out.normalize_globals();

    out.ppp.retain(|c| c.weight >= ppp_threshold);

    let k = out.current_step as i64;
    for slot in &mut out.slots {
        for local in slot.iter_mut() {
            let alive = local.density.alive_mass(k);
            if alive > 0.0 && alive < alive_threshold && alive < local.density.total_weight() {
                for term in &mut local.density.terms {
                    if !term.gaussian.augmented && term.gaussian.end_step == k {
                        term.weight = 0.0;
                    }
                }
                local.density.normalize();
            }
        }
    }

    garbage_collect(&mut out);
    Ok(out)
}

/// Drops local hypotheses referenced by no global and slots that can never
/// produce a trajectory again (every referenced local has zero existence
/// and an empty density).
pub(crate) fn garbage_collect(posterior: &mut PmbmPosterior) {
    let n_slots = posterior.slots.len();
    let mut referenced: Vec<Vec<bool>> = posterior
        .slots
        .iter()
        .map(|s| vec![false; s.len()])
        .collect();
    for g in &posterior.globals {
        for (i, &j) in g.selections.iter().enumerate() {
            referenced[i][j] = true;
        }
    }

    // Reindex locals within each slot.
    let mut local_map: Vec<Vec<usize>> = Vec::with_capacity(n_slots);
    for (slot_idx, slot) in posterior.slots.iter_mut().enumerate() {
        let mut map = vec![usize::MAX; slot.len()];
        let mut kept = Vec::with_capacity(slot.len());
        for (j, local) in slot.iter().enumerate() {
            if referenced[slot_idx][j] {
                map[j] = kept.len();
                kept.push(local.clone());
            }
        }
        *slot = kept;
        local_map.push(map);
    }

    // A slot is dead when every kept local is the nonexistent placeholder.
    let slot_alive: Vec<bool> = posterior
        .slots
        .iter()
        .map(|slot| slot.iter().any(|l| l.existence > 0.0))
        .collect();
    let mut slot_map = vec![usize::MAX; n_slots];
    let mut kept_slots = Vec::new();
    for (i, slot) in posterior.slots.drain(..).enumerate() {
        if slot_alive[i] {
            slot_map[i] = kept_slots.len();
            kept_slots.push(slot);
        }
    }
    posterior.slots = kept_slots;

    for g in &mut posterior.globals {
        let mut selections = Vec::with_capacity(posterior.slots.len());
        for (i, &j) in g.selections.iter().enumerate() {
            if slot_map[i] != usize::MAX {
                selections.push(local_map[i][j]);
            }
        }
        g.selections = selections;
    }
}

/// Track-oriented projection of the PMBM onto a single multi-Bernoulli.
///
/// Marginal local weights are accumulated over global hypotheses, the
/// existence becomes their existence-weighted mean, and densities are merged
/// with per-(start, end) moment matching. The PPP is unchanged.
pub fn tpmb_project(posterior: &PmbmPosterior) -> Result<PmbmPosterior> {
    posterior.require_plain("tpmb_project")?;
    if posterior.globals.is_empty() {
        return Err(TrackingError::InvalidState(
            "projection needs at least one global hypothesis".into(),
        ));
    }
    let mut out = posterior.clone();
    let mut kept: Vec<Vec<BernoulliLocalHypothesis>> = Vec::with_capacity(out.slots.len());

    for (i, slot) in out.slots.iter().enumerate() {
        let mut marginal = vec![0.0f64; slot.len()];
        for g in &out.globals {
            marginal[g.selections[i]] += g.weight;
        }
        let r_bar: f64 = marginal
            .iter()
            .zip(slot.iter())
            .map(|(w, l)| w * l.existence)
            .sum();
        if !(r_bar > 0.0) {
            continue;
        }
        let mut mixture = TrajectoryMixture::default();
        for (j, local) in slot.iter().enumerate() {
            let scale = marginal[j] * local.existence / r_bar;
            if scale <= 0.0 {
                continue;
            }
            for term in &local.density.terms {
                mixture.terms.push(MixtureTerm {
                    weight: scale * term.weight,
                    gaussian: term.gaussian.clone(),
                });
            }
        }
        mixture.merge_by_shape()?;
        let best_local = (0..slot.len())
            .max_by(|&a, &b| {
                (marginal[a] * slot[a].existence).total_cmp(&(marginal[b] * slot[b].existence))
            })
            .expect("slot nonempty");
        kept.push(vec![BernoulliLocalHypothesis {
            existence: r_bar,
            density: mixture,
            weight_ln_factor: 0.0,
            history: slot[best_local].history.clone(),
        }]);
    }

    out.slots = kept;
    out.globals = vec![GlobalHypothesis {
        weight: 1.0,
        selections: vec![0; out.slots.len()],
    }];
    Ok(out)
}

/// Extracts trajectory estimates.
///
/// `Tpmbm` reads the highest-weight global hypothesis and reports Bernoullis
/// with `r >= threshold`; `Tpmb` reports merged Bernoullis with
/// `r > threshold`. The reported end step is the argmax of the end-time
/// weights (ties towards the larger step).
pub fn estimate(
    posterior: &PmbmPosterior,
    mode: EstimatorMode,
    threshold: f64,
) -> Vec<EstimatedTrajectory> {
    let global = match mode {
        EstimatorMode::Tpmbm => posterior
            .globals
            .iter()
            .max_by(|a, b| {
                a.weight
                    .total_cmp(&b.weight)
                    .then_with(|| b.selections.cmp(&a.selections))
            })
            .cloned(),
        EstimatorMode::Tpmb => posterior.globals.first().cloned(),
    };
    let Some(global) = global else {
        return Vec::new();
    };

    let mut out = Vec::new();
    for (i, &j) in global.selections.iter().enumerate() {
        let local = &posterior.slots[i][j];
        let include = match mode {
            EstimatorMode::Tpmbm => local.existence >= threshold,
            EstimatorMode::Tpmb => local.existence > threshold,
        };
        if !include || local.density.terms.is_empty() {
            continue;
        }
        // Total weight per end step, then the best Gaussian at the winner.
        let mut per_end: BTreeMap<i64, f64> = BTreeMap::new();
        for term in &local.density.terms {
            if term.gaussian.start_step < 0 {
                continue;
            }
            *per_end.entry(term.gaussian.end_step).or_insert(0.0) += term.weight;
        }
        let Some((&best_end, _)) = per_end
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.cmp(b.0)))
        else {
            continue;
        };
        let best_term = local
            .density
            .terms
            .iter()
            .filter(|t| t.gaussian.end_step == best_end && t.gaussian.start_step >= 0)
            .max_by(|a, b| {
                a.weight
                    .total_cmp(&b.weight)
                    .then_with(|| a.gaussian.start_step.cmp(&b.gaussian.start_step))
            })
            .expect("end step came from the terms");
        out.push(EstimatedTrajectory {
            start_step: best_term.gaussian.start_step,
            states: best_term.gaussian.mean_sequence(),
        });
    }
    out
}
