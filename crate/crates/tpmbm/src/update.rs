//! PMBM measurement update: gating, local-hypothesis generation and k-best
//! global hypothesis selection.
//!
//! One engine serves three update flavours that differ only in which mixture
//! terms a measurement can originate from and through which state block: the
//! in-sequence update (terms alive at the current step, last block), the OOS
//! update (tau-augmented terms, appended block) and the snap-to-nearest
//! baseline (terms alive at a chosen past step, that step's block).

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::assignment::{murty_kbest, CostMatrix};
use crate::error::{Result, TrackingError};
use crate::linalg::{log_sum_exp, mahalanobis_sq};
use crate::posterior::{BernoulliLocalHypothesis, GlobalHypothesis, PmbmPosterior};
use crate::sensor::{Scan, SensorModel};
use crate::trajectory::{MixtureTerm, TrajectoryMixture};

/// Weight-factor floor; keeps impossible hypotheses finite in the cost
/// matrix instead of producing infinities in the dual arithmetic.
const LN_FLOOR: f64 = -700.0;

/// Which mixture terms can generate a measurement, and through which block.
#[derive(Debug, Clone, Copy)]
pub(crate) enum DetectTarget {
    /// Terms alive at the current step, observed at their last state.
    CurrentStep,
    /// Tau-augmented (and OOS-birth) terms, observed at the appended state.
    TauState,
    /// Terms alive at the given step, observed at that step's state.
    AtStep(i64),
}

impl DetectTarget {
    /// Joint block index a detectable term is observed through.
    fn block_of(
        &self,
        current_step: i64,
        term: &crate::trajectory::MixtureTerm,
    ) -> Result<Option<usize>> {
        let g = &term.gaussian;
        match *self {
            DetectTarget::CurrentStep => {
                if !g.augmented && g.start_step >= 0 && g.end_step == current_step {
                    Ok(Some(g.last_block()))
                } else {
                    Ok(None)
                }
            }
            DetectTarget::TauState => {
                if g.augmented {
                    Ok(Some(g.last_block()))
                } else if g.is_oos_birth() {
                    Ok(Some(0))
                } else {
                    Ok(None)
                }
            }
            DetectTarget::AtStep(step) => {
                if g.augmented || !g.covers_step(step) {
                    return Ok(None);
                }
                match g.block_of_step(step) {
                    Some(b) => Ok(Some(b)),
                    None => Err(TrackingError::Window(format!(
                        "state at step {step} left the L-scan window"
                    ))),
                }
            }
        }
    }
}

/// Children spawned by one referenced local hypothesis during an update.
struct LocalChildren {
    /// Log misdetection weight factor `ln(1 - r p_D mass)`.
    ln_w_mis: f64,
    /// Index of the misdetection child; `None` when the local is untouched
    /// by this scan (no detectable mass) and is reused as its own child.
    mis_child: Option<usize>,
    /// Per-measurement detection children: `meas -> (child index, ln w_det)`.
    det_children: BTreeMap<usize, (usize, f64)>,
}

/// Side information from one update.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct UpdateStats {
    /// Measurements no hypothesis could explain (outside the clutter region
    /// and gated out everywhere); they are dropped from the association.
    pub orphaned: usize,
}

/// PMBM update of `posterior` with `scan`.
pub(crate) fn pmbm_update_with_stats(
    posterior: &PmbmPosterior,
    scan: &Scan,
    sensor: &SensorModel,
    max_globals: usize,
    target: DetectTarget,
) -> Result<(PmbmPosterior, UpdateStats)> {
    let mut out = posterior.clone();
    let current_step = out.current_step as i64;
    let p_d = sensor.p_detect;
    let gate = sensor.gate_threshold();
    let n_meas = scan.measurements.len();

    // --- PPP: per-measurement new-trajectory weights, then thinning. ---
    struct NewSlot {
        ln_weight: f64,
        local: Option<BernoulliLocalHypothesis>,
    }
    let mut new_slots: Vec<NewSlot> = Vec::with_capacity(n_meas);
    // Cache predicted measurements of detectable PPP components.
    let mut ppp_pred: Vec<Option<(usize, DVector<f64>, nalgebra::DMatrix<f64>)>> =
        Vec::with_capacity(out.ppp.len());
    for comp in &out.ppp {
        let term = MixtureTerm {
            weight: comp.weight,
            gaussian: comp.gaussian.clone(),
        };
        let block = target.block_of(current_step, &term)?;
        ppp_pred.push(block.map(|b| {
            let (zhat, s) = comp.gaussian.predicted_measurement(b, &sensor.h, &sensor.r);
            (b, zhat, s)
        }));
    }
    for (m, z) in scan.measurements.iter().enumerate() {
        let clutter = sensor.clutter_intensity(z);
        let mut mixture = TrajectoryMixture::default();
        let mut e_z = 0.0;
        for (comp, pred) in out.ppp.iter().zip(ppp_pred.iter()) {
            let Some((block, zhat, s)) = pred else {
                continue;
            };
            let diff = z - zhat;
            if mahalanobis_sq(&diff, s)? > gate {
                continue;
            }
            let (updated, ll) = comp.gaussian.kalman_update_block(*block, &sensor.h, &sensor.r, z)?;
            let w = comp.weight * p_d * ll.exp();
            if w > 0.0 {
                e_z += w;
                mixture.terms.push(MixtureTerm {
                    weight: w,
                    gaussian: updated,
                });
            }
        }
        let total = clutter + e_z;
        let local = if e_z > 0.0 {
            mixture.normalize();
            mixture.merge_by_shape()?;
            Some(BernoulliLocalHypothesis {
                existence: e_z / total,
                density: mixture,
                weight_ln_factor: total.ln(),
                history: vec![(scan.scan_id, Some(m as u32))],
            })
        } else if clutter > 0.0 {
            // Pure clutter: a slot that exists with probability zero.
            Some(BernoulliLocalHypothesis {
                existence: 0.0,
                density: TrajectoryMixture::default(),
                weight_ln_factor: total.ln(),
                history: vec![(scan.scan_id, Some(m as u32))],
            })
        } else {
            None
        };
        new_slots.push(NewSlot {
            ln_weight: if total > 0.0 { total.ln() } else { f64::NEG_INFINITY },
            local,
        });
    }
    // Thin the PPP: detectable components keep the misdetected mass.
    for (comp, pred) in out.ppp.iter_mut().zip(ppp_pred.iter()) {
        if pred.is_some() {
            comp.weight *= 1.0 - p_d;
        }
    }
    out.ppp.retain(|c| c.weight > 0.0);

    // --- Children of referenced Bernoulli local hypotheses. ---
    let mut referenced: Vec<Vec<bool>> = out.slots.iter().map(|s| vec![false; s.len()]).collect();
    for g in &out.globals {
        for (i, &j) in g.selections.iter().enumerate() {
            referenced[i][j] = true;
        }
    }
    let mut children: Vec<BTreeMap<usize, LocalChildren>> = Vec::with_capacity(out.slots.len());
    for (i, slot) in out.slots.iter_mut().enumerate() {
        let mut slot_children = BTreeMap::new();
        let n_existing = slot.len();
        for j in 0..n_existing {
            if !referenced[i][j] {
                continue;
            }
            let parent = slot[j].clone();
            // Detectable terms and their observation blocks.
            let mut det_terms: Vec<(usize, usize)> = Vec::new();
            for (t_idx, term) in parent.density.terms.iter().enumerate() {
                if let Some(b) = target.block_of(current_step, term)? {
                    det_terms.push((t_idx, b));
                }
            }
            let mass: f64 = det_terms
                .iter()
                .map(|&(t, _)| parent.density.terms[t].weight)
                .sum();
            if parent.existence <= 0.0 || mass <= 0.0 || det_terms.is_empty() {
                slot_children.insert(
                    j,
                    LocalChildren {

                        ln_w_mis: 0.0,
                        mis_child: None,
                        det_children: BTreeMap::new(),
                    },
                );
                continue;
            }

            let r = parent.existence;
            let w_mis = 1.0 - r * p_d * mass;
            let ln_w_mis = if w_mis > 0.0 { w_mis.ln().max(LN_FLOOR) } else { LN_FLOOR };

            // Misdetection child.
            let mut mis = parent.clone();
            let denom = 1.0 - p_d * mass;
            for &(t, _) in &det_terms {
                mis.density.terms[t].weight *= 1.0 - p_d;
            }
            if denom > 0.0 {
                for term in &mut mis.density.terms {
                    term.weight /= denom;
                }
                mis.existence = r * denom / w_mis;
            } else {
                // p_D = 1 on a surely-detectable trajectory: the
                // misdetection child cannot exist.
                mis.existence = 0.0;
                mis.density.normalize();
            }
            mis.weight_ln_factor += ln_w_mis;
            mis.history.push((scan.scan_id, None));
            let mis_idx = slot.len();
            slot.push(mis);

            // Detection children for gated measurements.
            let mut det_children = BTreeMap::new();
            let preds: Vec<(usize, usize, DVector<f64>, nalgebra::DMatrix<f64>)> = det_terms
                .iter()
                .map(|&(t, b)| {
                    let (zhat, s) =
                        parent.density.terms[t].gaussian.predicted_measurement(b, &sensor.h, &sensor.r);
                    (t, b, zhat, s)
                })
                .collect();
            for (m, z) in scan.measurements.iter().enumerate() {
                let mut admitted = false;
                for (_, _, zhat, s) in &preds {
                    if mahalanobis_sq(&(z - zhat), s)? <= gate {
                        admitted = true;
                        break;
                    }
                }
                if !admitted {
                    continue;
                }
                let mut terms = Vec::with_capacity(preds.len());
                let mut ln_terms = Vec::with_capacity(preds.len());
                for (t, b, _, _) in &preds {
                    let term = &parent.density.terms[*t];
                    let (updated, ll) =
                        term.gaussian.kalman_update_block(*b, &sensor.h, &sensor.r, z)?;
                    ln_terms.push(term.weight.ln() + ll);
                    terms.push(MixtureTerm {
                        weight: 0.0,
                        gaussian: updated,
                    });
                }
                let ln_like = p_d.ln() + log_sum_exp(&ln_terms);
                if !ln_like.is_finite() {
                    continue;
                }
                for (term, &lt) in terms.iter_mut().zip(ln_terms.iter()) {
                    term.weight = (lt - (ln_like - p_d.ln())).exp();
                }
                let mut density = TrajectoryMixture { terms };
                density.normalize();
                let ln_w_det = r.ln() + ln_like;
                let child = BernoulliLocalHypothesis {
                    existence: 1.0,
                    density,
                    weight_ln_factor: parent.weight_ln_factor + ln_w_det,
                    history: {
                        let mut h = parent.history.clone();
                        h.push((scan.scan_id, Some(m as u32)));
                        h
                    },
                };
                let idx = slot.len();
                slot.push(child);
                det_children.insert(m, (idx, ln_w_det));
            }

            slot_children.insert(
                j,
                LocalChildren {
                    ln_w_mis,
                    mis_child: Some(mis_idx),
                    det_children,
                },
            );
        }
        children.push(slot_children);
    }

    // --- Append new slots (one per measurement that can start a slot). ---
    let mut new_slot_index: Vec<Option<usize>> = vec![None; n_meas];
    for (m, ns) in new_slots.iter().enumerate() {
        if let Some(local) = &ns.local {
            new_slot_index[m] = Some(out.slots.len());
            out.slots
                .push(vec![BernoulliLocalHypothesis::nonexistent(), local.clone()]);
        }
    }
    let n_slots = out.slots.len();

    // Measurements no hypothesis can explain (outside the clutter region
    // and gated out of every trajectory) are dropped from the association.
    let active_meas: Vec<usize> = (0..n_meas)
        .filter(|m| {
            new_slot_index[*m].is_some()
                || children
                    .iter()
                    .any(|slot| slot.values().any(|c| c.det_children.contains_key(m)))
        })
        .collect();
    let stats = UpdateStats {
        orphaned: n_meas - active_meas.len(),
    };
    if active_meas.is_empty() && n_meas > 0 {
        return Err(TrackingError::NumericalFailure {
            what: "no measurement in the scan has an explanation of nonzero weight".into(),
            residual: f64::NAN,
        });
    }
    let n_active_meas = active_meas.len();

    // --- Global hypothesis generation via Murty's algorithm. ---
    let mut candidates: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for prior in &posterior.globals {
        // Active pairs: existence and detectable mass both positive.
        let active: Vec<(usize, usize)> = prior
            .selections
            .iter()
            .enumerate()
            .filter(|(i, &j)| children[*i].get(&j).is_some_and(|c| c.mis_child.is_some()))
            .map(|(i, &j)| (i, j))
            .collect();
        let base_ln: f64 = prior.weight.ln()
            + active
                .iter()
                .map(|&(i, j)| children[i][&j].ln_w_mis)
                .sum::<f64>();

        let n_active = active.len();
        let mut rows = Vec::with_capacity(n_active_meas);
        for (row_idx, &m) in active_meas.iter().enumerate() {
            let mut row = vec![CostMatrix::INFEASIBLE; n_active + n_active_meas];
            for (col, &(i, j)) in active.iter().enumerate() {
                if let Some(&(_, ln_w_det)) = children[i][&j].det_children.get(&m) {
                    row[col] = -(ln_w_det - children[i][&j].ln_w_mis);
                }
            }
            if new_slot_index[m].is_some() && new_slots[m].ln_weight.is_finite() {
                row[n_active + row_idx] = -new_slots[m].ln_weight;
            }
            rows.push(row);
        }
        let cost = CostMatrix::from_rows(rows)?;
        let k_request = ((max_globals as f64) * prior.weight).ceil().max(1.0) as usize;
        let assignments = murty_kbest(&cost, k_request)?;

        for (assign, total_cost) in assignments {
            let mut selections = vec![0usize; n_slots];
            for (i, &j) in prior.selections.iter().enumerate() {
                selections[i] = j;
            }
            // Default: misdetection children for active pairs, placeholders
            // for new slots.
            for &(i, j) in &active {
                selections[i] = children[i][&j].mis_child.expect("active pair has children");
            }
            for (row_idx, &m) in active_meas.iter().enumerate() {
                let col = assign[row_idx];
                if col < n_active {
                    let (i, j) = active[col];
                    selections[i] = children[i][&j].det_children[&m].0;
                } else {
                    let slot = new_slot_index[active_meas[col - n_active]]
                        .expect("assignment used a measurement without a slot");
                    selections[slot] = 1;
                }
            }
            candidates
                .entry(selections)
                .or_default()
                .push(base_ln - total_cost);
        }
    }

    if candidates.is_empty() {
        return Err(TrackingError::NumericalFailure {
            what: "no feasible global hypothesis explains the scan".into(),
            residual: f64::NAN,
        });
    }

    let entries: Vec<(Vec<usize>, f64)> = candidates
        .into_iter()
        .map(|(sel, lns)| (sel, log_sum_exp(&lns)))
        .collect();
    let max_ln = entries
        .iter()
        .map(|(_, ln)| *ln)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut globals: Vec<GlobalHypothesis> = entries
        .into_iter()
        .map(|(selections, ln)| GlobalHypothesis {
            weight: (ln - max_ln).exp(),
            selections,
        })
        .collect();
    let total: f64 = globals.iter().map(|g| g.weight).sum();
    for g in &mut globals {
        g.weight /= total;
    }
    out.globals = globals;
    Ok((out, stats))
}

/// In-sequence CD-TPMBM measurement update.
///
/// `scan.time` must equal the posterior's current step time; the posterior
/// must already be predicted to that time.
pub fn update(
    predicted: &PmbmPosterior,
    scan: &Scan,
    sensor: &SensorModel,
    max_globals: usize,
) -> Result<PmbmPosterior> {
    update_with_stats(predicted, scan, sensor, max_globals).map(|(p, _)| p)
}

pub(crate) fn update_with_stats(
    predicted: &PmbmPosterior,
    scan: &Scan,
    sensor: &SensorModel,
    max_globals: usize,
) -> Result<(PmbmPosterior, UpdateStats)> {
    if predicted.tau.is_some() {
        return Err(TrackingError::InvalidState(
            "in-sequence update on a retrodicted posterior".into(),
        ));
    }
    let t = predicted.current_time();
    if (scan.time - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(TrackingError::invalid(format!(
            "scan time {} does not match the current step time {}",
            scan.time, t
        )));
    }
    pmbm_update_with_stats(predicted, scan, sensor, max_globals, DetectTarget::CurrentStep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::PoissonComponent;
    use crate::sensor::ClutterRegion;
    use crate::trajectory::TrajectoryGaussian;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn sensor_1d(p_d: f64, clutter_rate: f64) -> SensorModel {
        let region = ClutterRegion::new(vec![(-100.0, 100.0)]).unwrap();
        SensorModel::position_sensor(1, 1.0, p_d, clutter_rate, region, 0.999999).unwrap()
    }

    fn bernoulli_1d(step: i64, r: f64, pos: f64) -> BernoulliLocalHypothesis {
        let g = TrajectoryGaussian::single(
            step,
            DVector::from_vec(vec![pos, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
        );
        BernoulliLocalHypothesis {
            existence: r,
            density: TrajectoryMixture::from_single(g),
            weight_ln_factor: 0.0,
            history: vec![(0, Some(0))],
        }
    }

    fn posterior_with(
        slots: Vec<Vec<BernoulliLocalHypothesis>>,
        ppp: Vec<PoissonComponent>,
    ) -> PmbmPosterior {
        let n = slots.len();
        PmbmPosterior {
            current_step: 0,
            step_times: vec![0.0],
            ppp,
            slots,
            globals: vec![GlobalHypothesis {
                weight: 1.0,
                selections: vec![0; n],
            }],
            tau: None,
        }
    }

    #[test]
    fn empty_scan_keeps_only_misdetection_children() {
        let post = posterior_with(
            vec![vec![bernoulli_1d(0, 0.8, 0.0)]],
            vec![PoissonComponent {
                weight: 0.5,
                gaussian: TrajectoryGaussian::single(
                    0,
                    DVector::from_vec(vec![10.0, 0.0]),
                    DMatrix::identity(2, 2),
                ),
            }],
        );
        let sensor = sensor_1d(0.9, 0.0);
        let scan = Scan {
            time: 0.0,
            measurements: vec![],
            scan_id: 1,
        };
        let updated = update(&post, &scan, &sensor, 10).unwrap();
        assert_eq!(updated.globals.len(), 1);
        assert_relative_eq!(updated.globals[0].weight, 1.0);
        let mis = &updated.slots[0][updated.globals[0].selections[0]];
        // r' = r(1-pD)/(1-r pD)
        let expect = 0.8 * 0.1 / (1.0 - 0.8 * 0.9);
        assert_relative_eq!(mis.existence, expect, epsilon = 1e-12);
        assert_eq!(mis.history.last().unwrap(), &(1, None));
        // PPP thinned by (1 - pD).
        assert_relative_eq!(updated.ppp[0].weight, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn single_target_single_measurement_two_explanations() {
        // One Bernoulli (r = 0.6), one PPP component, pD = 1, no clutter.
        let r = 0.6;
        let post = posterior_with(
            vec![vec![bernoulli_1d(0, r, 0.0)]],
            vec![PoissonComponent {
                weight: 0.3,
                gaussian: TrajectoryGaussian::single(
                    0,
                    DVector::from_vec(vec![1.0, 0.0]),
                    DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0])),
                ),
            }],
        );
        let sensor = sensor_1d(1.0, 0.0);
        let z = DVector::from_vec(vec![0.5]);
        let scan = Scan {
            time: 0.0,
            measurements: vec![z.clone()],
            scan_id: 1,
        };
        let updated = update(&post, &scan, &sensor, 10).unwrap();
        assert_eq!(updated.globals.len(), 2);

        // Hand computation: detection weight r * N(z; 0, 4 + 1),
        // new-slot weight e(z) = 0.3 * N(z; 1, 9 + 1) with misdetection
        // factor (1 - r) on the Bernoulli.
        let n_det = crate::linalg::gaussian_logpdf(
            &z,
            &DVector::from_vec(vec![0.0]),
            &DMatrix::from_element(1, 1, 5.0),
        )
        .unwrap()
        .exp();
        let n_new = crate::linalg::gaussian_logpdf(
            &z,
            &DVector::from_vec(vec![1.0]),
            &DMatrix::from_element(1, 1, 10.0),
        )
        .unwrap()
        .exp();
        let w_det = r * n_det;
        let w_new = 0.3 * n_new * (1.0 - r);
        let total = w_det + w_new;
        let mut weights: Vec<f64> = updated.globals.iter().map(|g| g.weight).collect();
        weights.sort_by(f64::total_cmp);
        let mut expect = vec![w_det / total, w_new / total];
        expect.sort_by(f64::total_cmp);
        assert_relative_eq!(weights[0], expect[0], epsilon = 1e-10);
        assert_relative_eq!(weights[1], expect[1], epsilon = 1e-10);
    }

    #[test]
    fn gating_removes_cross_pairings() {
        let post = posterior_with(
            vec![
                vec![bernoulli_1d(0, 0.9, -50.0)],
                vec![bernoulli_1d(0, 0.9, 50.0)],
            ],
            vec![],
        );
        let sensor = sensor_1d(0.9, 1.0);
        let scan = Scan {
            time: 0.0,
            measurements: vec![
                DVector::from_vec(vec![49.0]),
                DVector::from_vec(vec![-51.0]),
            ],
            scan_id: 1,
        };
        let updated = update(&post, &scan, &sensor, 50).unwrap();
        let best = updated
            .globals
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .unwrap();
        // Nearest-neighbour association: slot 0 takes z1, slot 1 takes z0.
        let s0 = &updated.slots[0][best.selections[0]];
        let s1 = &updated.slots[1][best.selections[1]];
        assert_eq!(s0.history.last().unwrap(), &(1, Some(1)));
        assert_eq!(s1.history.last().unwrap(), &(1, Some(0)));
    }

    #[test]
    fn vanishing_detection_probability_degenerates_to_clutter() {
        let post = posterior_with(vec![vec![bernoulli_1d(0, 0.8, 0.0)]], vec![]);
        let sensor = sensor_1d(1e-12, 5.0);
        let z = DVector::from_vec(vec![0.1]);
        let scan = Scan {
            time: 0.0,
            measurements: vec![z.clone()],
            scan_id: 1,
        };
        let updated = update(&post, &scan, &sensor, 10).unwrap();
        let best = updated
            .globals
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .unwrap();
        // The dominant global keeps the Bernoulli (essentially) unchanged and
        // explains the measurement as clutter via the new slot.
        let bern = &updated.slots[0][best.selections[0]];
        assert_relative_eq!(bern.existence, 0.8, epsilon = 1e-9);
        let new_slot = &updated.slots[1][best.selections[1]];
        assert!(new_slot.existence < 1e-9);
        assert_relative_eq!(
            new_slot.weight_ln_factor,
            sensor.clutter_intensity(&z).ln(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn global_weights_sum_to_one() {
        let post = posterior_with(
            vec![vec![bernoulli_1d(0, 0.7, 0.0)]],
            vec![PoissonComponent {
                weight: 0.2,
                gaussian: TrajectoryGaussian::single(
                    0,
                    DVector::from_vec(vec![0.0, 0.0]),
                    DMatrix::identity(2, 2),
                ),
            }],
        );
        let sensor = sensor_1d(0.9, 2.0);
        let scan = Scan {
            time: 0.0,
            measurements: vec![
                DVector::from_vec(vec![0.4]),
                DVector::from_vec(vec![-1.2]),
            ],
            scan_id: 3,
        };
        let updated = update(&post, &scan, &sensor, 20).unwrap();
        let total: f64 = updated.globals.iter().map(|g| g.weight).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
        // Every measurement is explained exactly once in every global.
        for g in &updated.globals {
            let mut explained = vec![0usize; 2];
            for (i, &j) in g.selections.iter().enumerate() {
                if let Some(&(sid, Some(m))) = updated.slots[i][j].history.last() {
                    if sid == 3 {
                        explained[m as usize] += 1;
                    }
                }
            }
            assert_eq!(explained, vec![1, 1]);
        }
    }
}
