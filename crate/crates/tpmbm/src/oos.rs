//! Exact Bayesian processing of out-of-sequence measurement scans:
//! retrodiction, update at the OOS time, and marginalization back to the
//! in-sequence timeline, plus a snap-to-nearest baseline.
//!
//! Retrodiction classifies every trajectory Gaussian against the two sample
//! steps bracketing the OOS time `tau`:
//!
//! - born after or dead well before the bracket: does not exist at `tau`;
//! - present at both bracket steps: exists at `tau` with probability one,
//!   and the `tau` state is appended by conditioning the transition over
//!   `dt1` on the transition over the full interval;
//! - ends at the earlier bracket step: existed at `tau` iff it died late,
//!   with the truncated-exponential probability `p1`;
//! - born at the later bracket step: existed at `tau` iff it appeared
//!   early, with probability `p2`, using the appearance-mixture Gaussian
//!   fit over `dt1`.
//!
//! A new PPP component covers trajectories that lived entirely between the
//! bracket steps (`start_step == -1`). Bernoulli existences and global
//! hypothesis weights are unchanged by retrodiction.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::continuous::{oos_birth_fit, oos_survival_probability, wiener_kernel, ContinuousModel};
use crate::error::{Result, TrackingError};
use crate::linalg::{spd_solve, symmetrized};
use crate::posterior::{garbage_collect, OosContext, PmbmPosterior, PoissonComponent};
use crate::sensor::{Scan, SensorModel};
use crate::trajectory::{MixtureTerm, TrajectoryGaussian};
use crate::update::{pmbm_update_with_stats, DetectTarget, UpdateStats};

/// Where an OOS time stamp falls relative to the sampled timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauPlacement {
    /// Strictly between steps `k_before` and `k_after`.
    Between { k_before: usize, k_after: usize },
    /// Collides with an existing sample time; use the snap baseline.
    AtStep(usize),
    /// Before the first or after the last sample time.
    OutOfRange,
}

/// Locates `tau` within the step times.
pub fn place_tau(step_times: &[f64], tau: f64) -> TauPlacement {
    let eps = 1e-12 * tau.abs().max(1.0);
    for (j, &t) in step_times.iter().enumerate() {
        if (tau - t).abs() <= eps {
            return TauPlacement::AtStep(j);
        }
    }
    if tau <= step_times[0] || tau >= *step_times.last().unwrap() {
        return TauPlacement::OutOfRange;
    }
    let k_after = step_times.partition_point(|&t| t < tau);
    TauPlacement::Between {
        k_before: k_after - 1,
        k_after,
    }
}

/// Precomputed Gaussian machinery for one retrodiction.
struct RetroKernels {
    k_after: i64,
    p1: f64,
    p2: f64,
    /// Gain applied to the earlier bracket state in the present-present case.
    g1: DMatrix<f64>,
    /// Gain applied to the later bracket state in the present-present case.
    k_pp: DMatrix<f64>,
    q_pp: DMatrix<f64>,
    /// Transition over dt1 for trajectories that end at the earlier step.
    f1: DMatrix<f64>,
    q1: DMatrix<f64>,
    /// Gain and noise for trajectories born at the later step.
    k_np: DMatrix<f64>,
    q_np: DMatrix<f64>,
    np_offset: DVector<f64>,
}

impl RetroKernels {
    fn build(model: &ContinuousModel, ctx: &OosContext) -> Result<Self> {
        let k1 = wiener_kernel(model.q, model.d, ctx.dt1)?;
        let k2 = wiener_kernel(model.q, model.d, ctx.dt2)?;
        let (f1, q1) = (k1.f, k1.q);
        let (f2, q2) = (k2.f, k2.q);

        // K_pp = Q1 F2^T (F2 Q1 F2^T + Q2)^{-1}
        let s_pp = symmetrized(&f2 * &q1 * f2.transpose() + &q2);
        let k_pp = spd_solve(&s_pp, &(&f2 * &q1))?.transpose();
        let q_pp = symmetrized(&q1 - &k_pp * &f2 * &q1);
        let g1 = &f1 - &k_pp * &f2 * &f1;

        let fit = oos_birth_fit(model, ctx.dt1, ctx.dt2)?;
        let s_np = symmetrized(&f2 * &fit.cov * f2.transpose() + &q2);
        let k_np = spd_solve(&s_np, &(&f2 * &fit.cov))?.transpose();
        let q_np = symmetrized(&fit.cov - &k_np * &f2 * &fit.cov);
        let np_offset = &fit.mean - &k_np * (&f2 * &fit.mean);

        Ok(Self {
            k_after: ctx.k_after as i64,
            p1: ctx.p1,
            p2: ctx.p2,
            g1,
            k_pp,
            q_pp,
            f1,
            q1,
            k_np,
            q_np,
            np_offset,
        })
    }

    /// Applies the four-case retrodiction transition to one Gaussian,
    /// returning `(weight multiplier, transformed Gaussian)` terms.
    fn apply(&self, g: &TrajectoryGaussian) -> Result<Vec<(f64, TrajectoryGaussian)>> {
        debug_assert!(!g.augmented && !g.is_oos_birth());
        let ko = self.k_after;
        let beta = g.start_step;
        let kappa = g.end_step;

        if beta > ko || kappa < ko - 1 {
            return Ok(vec![(1.0, g.clone())]);
        }
        if beta <= ko - 1 && kappa >= ko {
            // Present at both bracket steps.
            let b1 = g.block_of_step(ko - 1).ok_or_else(|| {
                TrackingError::Window(format!(
                    "state at step {} left the L-scan window",
                    ko - 1
                ))
            })?;
            let b2 = g.block_of_step(ko).expect("later bracket state is windowed");
            let aug = g.append_block(
                &[(b1, &self.g1), (b2, &self.k_pp)],
                None,
                &self.q_pp,
                true,
            );
            return Ok(vec![(1.0, aug)]);
        }
        if kappa == ko - 1 {
            // Ends at the earlier bracket step.
            let last = g.block_of_step(kappa).ok_or_else(|| {
                TrackingError::Window(format!("state at step {kappa} left the L-scan window"))
            })?;
            let aug = g.append_block(&[(last, &self.f1)], None, &self.q1, true);
            return Ok(vec![(1.0 - self.p1, g.clone()), (self.p1, aug)]);
        }
        debug_assert_eq!(beta, ko);
        let first = g.block_of_step(ko).ok_or_else(|| {
            TrackingError::Window(format!("state at step {ko} left the L-scan window"))
        })?;
        let aug = g.append_block(
            &[(first, &self.k_np)],
            Some(&self.np_offset),
            &self.q_np,
            true,
        );
        Ok(vec![(1.0 - self.p2, g.clone()), (self.p2, aug)])
    }
}

/// Retrodiction: augments the posterior with trajectory information at the
/// OOS time `tau`, leaving existences and global weights unchanged, and adds
/// the PPP component of OOS-new trajectories.
pub fn retrodict(
    posterior: &PmbmPosterior,
    tau: f64,
    model: &ContinuousModel,
) -> Result<PmbmPosterior> {
    if posterior.tau.is_some() {
        return Err(TrackingError::InvalidState(
            "posterior already carries retrodicted structure".into(),
        ));
    }
    let (k_before, k_after) = match place_tau(&posterior.step_times, tau) {
        TauPlacement::Between { k_before, k_after } => (k_before, k_after),
        TauPlacement::AtStep(j) => {
            return Err(TrackingError::invalid(format!(
                "tau collides with sample time t_{j}; use the snap baseline"
            )))
        }
        TauPlacement::OutOfRange => {
            return Err(TrackingError::invalid(
                "tau must lie strictly inside the sampled timeline",
            ))
        }
    };
    let dt1 = tau - posterior.step_times[k_before];
    let dt2 = posterior.step_times[k_after] - tau;
    let interval = dt1 + dt2;
    let ctx = OosContext {
        tau,
        k_before,
        k_after,
        dt1,
        dt2,
        p1: oos_survival_probability(model.mu, dt1, interval)?,
        p2: oos_survival_probability(model.mu, dt2, interval)?,
    };
    let kernels = RetroKernels::build(model, &ctx)?;

    let mut out = posterior.clone();
    for slot in &mut out.slots {
        for local in slot.iter_mut() {
            let mut terms = Vec::with_capacity(local.density.terms.len() + 1);
            for term in &local.density.terms {
                for (mult, gaussian) in kernels.apply(&term.gaussian)? {
                    if term.weight * mult > 0.0 {
                        terms.push(MixtureTerm {
                            weight: term.weight * mult,
                            gaussian,
                        });
                    }
                }
            }
            local.density.terms = terms;
        }
    }

    let mut ppp = Vec::with_capacity(out.ppp.len() + 1);
    for comp in &out.ppp {
        for (mult, gaussian) in kernels.apply(&comp.gaussian)? {
            if comp.weight * mult > 0.0 {
                ppp.push(PoissonComponent {
                    weight: comp.weight * mult,
                    gaussian,
                });
            }
        }
    }
    let fit = oos_birth_fit(model, dt1, dt2)?;
    ppp.push(PoissonComponent {
        weight: fit.expected_count,
        gaussian: TrajectoryGaussian::single(-1, fit.mean, fit.cov),
    });
    out.ppp = ppp;
    out.tau = Some(ctx);
    Ok(out)
}

/// Measurement update at the OOS time. Detection applies only to mixture
/// terms that exist at `tau`, observed through the appended state.
pub fn oos_update(
    retro: &PmbmPosterior,
    scan: &Scan,
    sensor: &SensorModel,
    max_globals: usize,
) -> Result<PmbmPosterior> {
    oos_update_with_stats(retro, scan, sensor, max_globals).map(|(p, _)| p)
}

pub(crate) fn oos_update_with_stats(
    retro: &PmbmPosterior,
    scan: &Scan,
    sensor: &SensorModel,
    max_globals: usize,
) -> Result<(PmbmPosterior, UpdateStats)> {
    let ctx = retro.tau.as_ref().ok_or_else(|| {
        TrackingError::InvalidState("oos_update requires a retrodicted posterior".into())
    })?;
    if (scan.time - ctx.tau).abs() > 1e-9 * ctx.tau.abs().max(1.0) {
        return Err(TrackingError::invalid(format!(
            "scan time {} does not match the retrodiction time {}",
            scan.time, ctx.tau
        )));
    }
    pmbm_update_with_stats(retro, scan, sensor, max_globals, DetectTarget::TauState)
}

/// Marginalizes out the information at the OOS time, returning a posterior
/// on in-sequence sample times only.
///
/// OOS-new terms (`start_step == -1`) map to the empty trajectory: their
/// probability mass moves to non-existence for Bernoullis and their PPP
/// components are dropped. Augmented terms lose the appended state and merge
/// with same-shape terms by moment matching.
pub fn marginalize_oos(updated: &PmbmPosterior) -> Result<PmbmPosterior> {
    if updated.tau.is_none() {
        return Err(TrackingError::InvalidState(
            "marginalize_oos requires a retrodicted posterior".into(),
        ));
    }
    let mut out = updated.clone();

    for slot in &mut out.slots {
        for local in slot.iter_mut() {
            let birth_mass: f64 = local
                .density
                .terms
                .iter()
                .filter(|t| t.gaussian.is_oos_birth())
                .map(|t| t.weight)
                .sum();
            let mut terms = Vec::with_capacity(local.density.terms.len());
            for term in &local.density.terms {
                if term.gaussian.is_oos_birth() {
                    continue;
                }
                let gaussian = if term.gaussian.augmented {
                    term.gaussian.marginalize_augmented()
                } else {
                    term.gaussian.clone()
                };
                terms.push(MixtureTerm {
                    weight: term.weight,
                    gaussian,
                });
            }
            local.density.terms = terms;
            let keep = 1.0 - birth_mass;
            local.existence *= keep.max(0.0);
            if keep > 1e-300 && local.existence > 0.0 {
                for term in &mut local.density.terms {
                    term.weight /= keep;
                }
            } else {
                local.existence = 0.0;
                local.density.terms.clear();
            }
            local.density.merge_by_shape()?;
        }
    }

    // PPP: drop OOS-new components, strip appended states, and re-merge the
    // split components exactly.
    let mut groups: BTreeMap<(i64, i64, usize), (f64, Vec<(f64, TrajectoryGaussian)>)> =
        BTreeMap::new();
    for comp in &out.ppp {
        if comp.gaussian.is_oos_birth() {
            continue;
        }
        let gaussian = if comp.gaussian.augmented {
            comp.gaussian.marginalize_augmented()
        } else {
            comp.gaussian.clone()
        };
        let key = (
            gaussian.start_step,
            gaussian.end_step,
            gaussian.frozen.len(),
        );
        let entry = groups.entry(key).or_insert_with(|| (0.0, Vec::new()));
        entry.0 += comp.weight;
        entry.1.push((comp.weight, gaussian));
    }
    let mut ppp = Vec::with_capacity(groups.len());
    for (_, (weight, parts)) in groups {
        let refs: Vec<(f64, &TrajectoryGaussian)> = parts.iter().map(|(w, g)| (*w, g)).collect();
        let gaussian = TrajectoryGaussian::moment_match(&refs)?;
        ppp.push(PoissonComponent { weight, gaussian });
    }
    out.ppp = ppp;

    out.tau = None;
    garbage_collect(&mut out);
    Ok(out)
}

/// Snap-to-nearest baseline: associates the OOS scan with the closest
/// in-sequence sample time (ties towards the earlier one) and updates the
/// stored states at that step. No retrodiction, no OOS-birth component.
pub fn noos_update(
    posterior: &PmbmPosterior,
    scan: &Scan,
    tau: f64,
    sensor: &SensorModel,
    max_globals: usize,
) -> Result<PmbmPosterior> {
    noos_update_with_stats(posterior, scan, tau, sensor, max_globals).map(|(p, _)| p)
}

pub(crate) fn noos_update_with_stats(
    posterior: &PmbmPosterior,
    scan: &Scan,
    tau: f64,
    sensor: &SensorModel,
    max_globals: usize,
) -> Result<(PmbmPosterior, UpdateStats)> {
    if posterior.tau.is_some() {
        return Err(TrackingError::InvalidState(
            "noos_update requires a posterior without retrodicted structure".into(),
        ));
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (j, &t) in posterior.step_times.iter().enumerate() {
        let d = (tau - t).abs();
        if d < best_dist {
            best_dist = d;
            best = j;
        }
    }
    pmbm_update_with_stats(
        posterior,
        scan,
        sensor,
        max_globals,
        DetectTarget::AtStep(best as i64),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{BernoulliLocalHypothesis, GlobalHypothesis};
    use crate::sensor::ClutterRegion;
    use crate::trajectory::TrajectoryMixture;
    use approx::assert_relative_eq;

    fn model_1d() -> ContinuousModel {
        ContinuousModel::new(
            0.12,
            0.02,
            DVector::from_vec(vec![0.0, 1.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![25.0, 1.0])),
            0.2,
            1,
        )
        .unwrap()
    }

    fn gaussian_chain(start: i64, steps: usize, model: &ContinuousModel) -> TrajectoryGaussian {
        let mut g = TrajectoryGaussian::single(
            start,
            model.mean_appearance.clone(),
            model.cov_appearance.clone(),
        );
        let k = wiener_kernel(model.q, model.d, 1.0).unwrap();
        for _ in 0..steps {
            g = g.extend(&k.f, &k.q);
        }
        g
    }

    /// Posterior at step 3 (times 0..3) whose Bernoullis cover all four
    /// retrodiction cases around tau in (1, 2).
    fn four_case_posterior(model: &ContinuousModel) -> PmbmPosterior {
        let mk = |g: TrajectoryGaussian, w: f64| MixtureTerm {
            weight: w,
            gaussian: g,
        };
        // Case pp: born 0, alive through 3. Case pn: ends at 1.
        // Case np: born 2, alive through 3. Case none: born 3.
        let slot0 = BernoulliLocalHypothesis {
            existence: 0.9,
            density: TrajectoryMixture {
                terms: vec![
                    mk(gaussian_chain(0, 3, model), 0.5),
                    mk(gaussian_chain(0, 1, model), 0.3),
                    mk(gaussian_chain(0, 2, model), 0.2),
                ],
            },
            weight_ln_factor: 0.0,
            history: vec![(1, Some(0))],
        };
        let slot1 = BernoulliLocalHypothesis {
            existence: 0.7,
            density: TrajectoryMixture {
                terms: vec![
                    mk(gaussian_chain(2, 1, model), 0.6),
                    mk(gaussian_chain(3, 0, model), 0.4),
                ],
            },
            weight_ln_factor: 0.0,
            history: vec![(2, Some(1))],
        };
        PmbmPosterior {
            current_step: 3,
            step_times: vec![0.0, 1.0, 2.0, 3.0],
            ppp: vec![
                PoissonComponent {
                    weight: 0.4,
                    gaussian: gaussian_chain(0, 3, model),
                },
                PoissonComponent {
                    weight: 0.2,
                    gaussian: gaussian_chain(2, 1, model),
                },
            ],
            slots: vec![vec![slot0], vec![slot1]],
            globals: vec![GlobalHypothesis {
                weight: 1.0,
                selections: vec![0, 0],
            }],
            tau: None,
        }
    }

    #[test]
    fn place_tau_classifies() {
        let times = vec![0.0, 1.0, 2.0];
        assert_eq!(
            place_tau(&times, 1.5),
            TauPlacement::Between {
                k_before: 1,
                k_after: 2
            }
        );
        assert_eq!(place_tau(&times, 1.0), TauPlacement::AtStep(1));
        assert_eq!(place_tau(&times, 2.5), TauPlacement::OutOfRange);
        assert_eq!(place_tau(&times, -0.5), TauPlacement::OutOfRange);
    }

    #[test]
    fn retrodiction_preserves_invariants_and_splits() {
        let model = model_1d();
        let post = four_case_posterior(&model);
        let tau = 1.4;
        let retro = retrodict(&post, tau, &model).unwrap();
        let ctx = retro.tau.clone().unwrap();
        assert_relative_eq!(ctx.dt1, 0.4, epsilon = 1e-12);
        assert_relative_eq!(ctx.dt2, 0.6, epsilon = 1e-12);

        // Existences, weights and total masses unchanged.
        for (slot, orig) in retro.slots.iter().zip(post.slots.iter()) {
            for (local, parent) in slot.iter().zip(orig.iter()) {
                assert_relative_eq!(local.existence, parent.existence);
                assert_relative_eq!(local.density.total_weight(), 1.0, epsilon = 1e-12);
            }
        }
        assert_relative_eq!(retro.globals[0].weight, 1.0);

        // The pn term split by p1, the np term by p2.
        let p1 = ctx.p1;
        let slot0 = &retro.slots[0][0];
        let pn_dead: f64 = slot0
            .density
            .terms
            .iter()
            .filter(|t| t.gaussian.end_step == 1 && !t.gaussian.augmented)
            .map(|t| t.weight)
            .sum();
        let pn_alive: f64 = slot0
            .density
            .terms
            .iter()
            .filter(|t| t.gaussian.end_step == 1 && t.gaussian.augmented)
            .map(|t| t.weight)
            .sum();
        assert_relative_eq!(pn_dead, 0.3 * (1.0 - p1), epsilon = 1e-12);
        assert_relative_eq!(pn_alive, 0.3 * p1, epsilon = 1e-12);

        // Case 1 stays untouched: the born-at-3 term of slot 1.
        let slot1 = &retro.slots[1][0];
        let untouched = slot1
            .density
            .terms
            .iter()
            .find(|t| t.gaussian.start_step == 3)
            .unwrap();
        assert!(!untouched.gaussian.augmented);
        assert_relative_eq!(untouched.weight, 0.4, epsilon = 1e-12);

        // OOS-birth PPP component appended with the closed-form weight.
        let birth = retro.ppp.iter().find(|c| c.gaussian.is_oos_birth()).unwrap();
        let expect = crate::continuous::oos_birth_expected_count(0.12, 0.02, 0.4, 0.6);
        assert_relative_eq!(birth.weight, expect, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_is_exact() {
        let model = model_1d();
        let post = four_case_posterior(&model);
        let retro = retrodict(&post, 1.4, &model).unwrap();
        let back = marginalize_oos(&retro).unwrap();

        assert_eq!(back.globals.len(), post.globals.len());
        assert_relative_eq!(back.globals[0].weight, post.globals[0].weight);
        assert_eq!(back.ppp.len(), post.ppp.len());
        for (a, b) in back.ppp.iter().zip(post.ppp.iter()) {
            assert!((a.weight - b.weight).abs() < 1e-12);
            let diff = a.gaussian.max_moment_difference(&b.gaussian).unwrap();
            assert!(diff < 1e-10, "ppp moment drift {diff}");
        }
        for (sa, sb) in back.slots.iter().zip(post.slots.iter()) {
            for (la, lb) in sa.iter().zip(sb.iter()) {
                assert!((la.existence - lb.existence).abs() < 1e-12);
                assert_eq!(la.density.terms.len(), lb.density.terms.len());
                // Marginalization sorts terms by (start, end); compare by key.
                let key = |t: &MixtureTerm| (t.gaussian.start_step, t.gaussian.end_step);
                let mut a_sorted: Vec<&MixtureTerm> = la.density.terms.iter().collect();
                let mut b_sorted: Vec<&MixtureTerm> = lb.density.terms.iter().collect();
                a_sorted.sort_by_key(|t| key(t));
                b_sorted.sort_by_key(|t| key(t));
                for (ta, tb) in a_sorted.iter().zip(b_sorted.iter()) {
                    assert!((ta.weight - tb.weight).abs() < 1e-10);
                    let diff = ta.gaussian.max_moment_difference(&tb.gaussian).unwrap();
                    assert!(diff < 1e-10, "moment drift {diff}");
                }
            }
        }
    }

    #[test]
    fn pp_marginalization_recovers_prior_bit_for_bit() {
        let model = model_1d();
        let g = gaussian_chain(0, 3, &model);
        let ctx = OosContext {
            tau: 1.4,
            k_before: 1,
            k_after: 2,
            dt1: 0.4,
            dt2: 0.6,
            p1: oos_survival_probability(model.mu, 0.4, 1.0).unwrap(),
            p2: oos_survival_probability(model.mu, 0.6, 1.0).unwrap(),
        };
        let kernels = RetroKernels::build(&model, &ctx).unwrap();
        let out = kernels.apply(&g).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].1.augmented);
        let back = out[0].1.marginalize_augmented();
        assert_eq!(back.max_moment_difference(&g), Some(0.0));
    }

    #[test]
    fn pp_conditional_matches_grid_bayes_oracle() {
        // Density-ratio oracle for the present-present transition: on a grid
        // over the tau state y, g(dt2)(x2|y) g(dt1)(y|x1) / g(dt)(x2|x1)
        // must integrate to one and match the appended conditional moments.
        let model = model_1d();
        let ctx = OosContext {
            tau: 0.4,
            k_before: 0,
            k_after: 1,
            dt1: 0.4,
            dt2: 0.6,
            p1: oos_survival_probability(model.mu, 0.4, 1.0).unwrap(),
            p2: oos_survival_probability(model.mu, 0.6, 1.0).unwrap(),
        };
        let kernels = RetroKernels::build(&model, &ctx).unwrap();

        let x1 = DVector::from_vec(vec![0.3, 1.1]);
        let x2 = DVector::from_vec(vec![1.2, 0.9]);
        let k1 = wiener_kernel(model.q, model.d, 0.4).unwrap();
        let k2 = wiener_kernel(model.q, model.d, 0.6).unwrap();
        let kf = wiener_kernel(model.q, model.d, 1.0).unwrap();

        let cond_mean = &kernels.g1 * &x1 + &kernels.k_pp * &x2;
        let cond_cov = kernels.q_pp.clone();

        let denom = crate::linalg::gaussian_logpdf(&x2, &(&kf.f * &x1), &kf.q).unwrap();
        let half = 7.0;
        let n_grid = 160;
        let sd0 = cond_cov[(0, 0)].sqrt();
        let sd1 = cond_cov[(1, 1)].sqrt();
        let step0 = 2.0 * half * sd0 / n_grid as f64;
        let step1 = 2.0 * half * sd1 / n_grid as f64;
        let mut mass = 0.0;
        let mut mean = DVector::zeros(2);
        let mut second = DMatrix::zeros(2, 2);
        for i in 0..n_grid {
            for j in 0..n_grid {
                let y = DVector::from_vec(vec![
                    cond_mean[0] - half * sd0 + (i as f64 + 0.5) * step0,
                    cond_mean[1] - half * sd1 + (j as f64 + 0.5) * step1,
                ]);
                let ln_num = crate::linalg::gaussian_logpdf(&x2, &(&k2.f * &y), &k2.q).unwrap()
                    + crate::linalg::gaussian_logpdf(&y, &(&k1.f * &x1), &k1.q).unwrap();
                let w = (ln_num - denom).exp() * step0 * step1;
                mass += w;
                mean += &y * w;
                second += &y * y.transpose() * w;
            }
        }
        assert_relative_eq!(mass, 1.0, max_relative = 1e-6);
        mean /= mass;
        let cov = second / mass - &mean * mean.transpose();
        assert_relative_eq!((&mean - &cond_mean).abs().max(), 0.0, epsilon = 1e-5);
        assert_relative_eq!((&cov - &cond_cov).abs().max(), 0.0, epsilon = 1e-4);
    }

    #[test]
    fn lemma_denominator_identity() {
        // F2 F1 = F(dt) and F2 Q1 F2^T + Q2 = Q(dt).
        let model = model_1d();
        for (dt1, dt2) in [(0.4, 0.6), (0.05, 0.95), (1.3, 0.7)] {
            let k1 = wiener_kernel(model.q, model.d, dt1).unwrap();
            let k2 = wiener_kernel(model.q, model.d, dt2).unwrap();
            let kf = wiener_kernel(model.q, model.d, dt1 + dt2).unwrap();
            let f_err = (&k2.f * &k1.f - &kf.f).abs().max();
            let q_err = (&k2.f * &k1.q * k2.f.transpose() + &k2.q - &kf.q).abs().max();
            assert!(f_err <= 1e-12 * kf.f.abs().max());
            assert!(q_err <= 1e-12 * kf.q.abs().max());
        }
    }

    fn sensor_1d(p_d: f64, clutter_rate: f64) -> SensorModel {
        let region = ClutterRegion::new(vec![(-100.0, 100.0)]).unwrap();
        SensorModel::position_sensor(1, 1.0, p_d, clutter_rate, region, 0.999999).unwrap()
    }

    #[test]
    fn oos_update_misdetection_algebra() {
        let model = model_1d();
        let mut post = four_case_posterior(&model);
        // Make slot 0 purely present-present so the tau mass is one.
        post.slots[0][0].density.terms.truncate(1);
        post.slots[0][0].density.terms[0].weight = 1.0;
        let retro = retrodict(&post, 1.4, &model).unwrap();
        let sensor = sensor_1d(0.9, 1.0);
        let scan = Scan {
            time: 1.4,
            measurements: vec![],
            scan_id: 9,
        };
        let updated = oos_update(&retro, &scan, &sensor, 10).unwrap();
        let best = &updated.globals[0];
        let local = &updated.slots[0][best.selections[0]];
        let r = 0.9;
        let expect = r * (1.0 - 0.9) / (1.0 - r * 0.9);
        assert_relative_eq!(local.existence, expect, epsilon = 1e-12);
    }

    #[test]
    fn oos_update_with_zero_detection_probability_is_noop() {
        let model = model_1d();
        let post = four_case_posterior(&model);
        let retro = retrodict(&post, 1.4, &model).unwrap();
        let region = ClutterRegion::new(vec![(-100.0, 100.0)]).unwrap();
        let sensor =
            SensorModel::position_sensor(1, 1.0, 0.0, 1.0, region, 0.999999).unwrap();
        let scan = Scan {
            time: 1.4,
            measurements: vec![],
            scan_id: 9,
        };
        let updated = oos_update(&retro, &scan, &sensor, 10).unwrap();
        for (slot, orig) in updated.slots.iter().zip(retro.slots.iter()) {
            for (local, parent) in slot.iter().take(orig.len()).zip(orig.iter()) {
                assert_relative_eq!(local.existence, parent.existence);
            }
        }
        // PPP weights unchanged (thinning by 1 - pD = 1).
        for (a, b) in updated.ppp.iter().zip(retro.ppp.iter()) {
            assert_relative_eq!(a.weight, b.weight, epsilon = 1e-15);
        }
    }

    #[test]
    fn marginalize_drops_oos_birth_slots() {
        let model = model_1d();
        let post = four_case_posterior(&model);
        let retro = retrodict(&post, 1.4, &model).unwrap();
        let sensor = sensor_1d(0.9, 0.1);
        // Place a measurement on the OOS-birth component's predicted
        // position so a new slot is created mostly from it.
        let birth = retro.ppp.iter().find(|c| c.gaussian.is_oos_birth()).unwrap();
        let z = DVector::from_vec(vec![birth.gaussian.joint_mean[0]]);
        let scan = Scan {
            time: 1.4,
            measurements: vec![z],
            scan_id: 9,
        };
        let updated = oos_update(&retro, &scan, &sensor, 50).unwrap();
        let marg = marginalize_oos(&updated).unwrap();
        assert!(marg.tau.is_none());
        // Any remaining term anywhere must be plain and on-timeline.
        for slot in &marg.slots {
            for local in slot {
                for term in &local.density.terms {
                    assert!(!term.gaussian.augmented);
                    assert!(term.gaussian.start_step >= 0);
                }
            }
        }
        for comp in &marg.ppp {
            assert!(!comp.gaussian.augmented);
            assert!(comp.gaussian.start_step >= 0);
        }
    }

    #[test]
    fn noos_snaps_to_nearest_earlier_on_tie() {
        let model = model_1d();
        let post = four_case_posterior(&model);
        let sensor = sensor_1d(0.9, 1.0);
        let scan = Scan {
            time: 1.5,
            measurements: vec![],
            scan_id: 9,
        };
        // tau = 1.5 ties between t_1 = 1 and t_2 = 2; earlier wins. An empty
        // scan applies the misdetection algebra at step 1.
        let updated = noos_update(&post, &scan, 1.5, &sensor, 10).unwrap();
        let local = &updated.slots[0][updated.globals[0].selections[0]];
        // All three terms of slot 0 are alive at step 1.
        let mass = 1.0;
        let r = 0.9;
        let expect = r * (1.0 - 0.9 * mass) / (1.0 - r * 0.9 * mass);
        assert_relative_eq!(local.existence, expect, epsilon = 1e-12);
    }
}
