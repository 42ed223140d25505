//! Shared oracles for the integration and acceptance suites. Everything in
//! here is independent of the filter implementation paths it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use tpmbm::posterior::PmbmPosterior;
use tpmbm::trajectory::{MixtureTerm, TrajectoryGaussian};

/// Forward Kalman filter plus RTS smoother over a fixed measurement
/// sequence. Returns smoothed (mean, cov) per step (step 0 is the prior
/// before any dynamics; measurements start at step 1).
pub struct RtsOracle {
    pub smoothed: Vec<(DVector<f64>, DMatrix<f64>)>,
}

impl RtsOracle {
    /// `kernels[i]` carries the transition from step i to step i+1;
    /// `measurements[i]` is observed at step i+1.
    pub fn run(
        prior_mean: &DVector<f64>,
        prior_cov: &DMatrix<f64>,
        kernels: &[(DMatrix<f64>, DMatrix<f64>)],
        h: &DMatrix<f64>,
        r: &DMatrix<f64>,
        measurements: &[DVector<f64>],
    ) -> Self {
        assert_eq!(kernels.len(), measurements.len());
        let n = measurements.len();
        let mut filt: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::with_capacity(n + 1);
        let mut pred: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::with_capacity(n);
        filt.push((prior_mean.clone(), prior_cov.clone()));
        for i in 0..n {
            let (f, q) = &kernels[i];
            let (m, p) = &filt[i];
            let mp = f * m;
            let pp = f * p * f.transpose() + q;
            pred.push((mp.clone(), pp.clone()));
            let s = h * &pp * h.transpose() + r;
            let k = &pp * h.transpose() * s.try_inverse().expect("S invertible");
            let mu = &mp + &k * (&measurements[i] - h * &mp);
            let pu = &pp - &k * h * &pp;
            filt.push((mu, pu));
        }
        // Backward RTS pass.
        let mut smoothed = vec![filt[n].clone()];
        for i in (0..n).rev() {
            let (f, _) = &kernels[i];
            let (mf, pf) = &filt[i];
            let (mp, pp) = &pred[i];
            let gain = pf * f.transpose() * pp.clone().try_inverse().expect("P pred invertible");
            let (ms_next, ps_next) = smoothed.last().unwrap().clone();
            let ms = mf + &gain * (&ms_next - mp);
            let ps = pf + &gain * (&ps_next - pp) * gain.transpose();
            smoothed.push((ms, ps));
        }
        smoothed.reverse();
        Self { smoothed }
    }
}

/// Removes one timeline step from a plain posterior: states at that step are
/// marginalized out, later step indices shift down by one, and trajectories
/// that existed only at that step have their mass moved to non-existence.
/// Same-shape terms are merged by moment matching, mirroring what the OOS
/// marginalization does. Requires fully-joint storage (no frozen states).
pub fn marginalize_timeline_step(posterior: &PmbmPosterior, step: usize) -> PmbmPosterior {
    assert!(posterior.tau.is_none());
    let s = step as i64;
    let strip = |g: &TrajectoryGaussian| -> Option<TrajectoryGaussian> {
        assert_eq!(g.frozen.len(), 0, "oracle requires fully-joint storage");
        assert!(!g.augmented);
        let mut out = g.clone();
        if g.start_step > s {
            out.start_step -= 1;
            out.end_step -= 1;
            return Some(out);
        }
        if g.end_step < s {
            return Some(out);
        }
        // Present at the step: drop its block.
        if g.start_step == s && g.end_step == s {
            return None; // lived only at the removed step
        }
        let n_x = g.n_x;
        let block = (s - g.start_step) as usize;
        let dim = g.joint_mean.len();
        let keep: Vec<usize> = (0..dim)
            .filter(|&i| i / n_x != block)
            .collect();
        let mut mean = DVector::zeros(dim - n_x);
        for (row, &i) in keep.iter().enumerate() {
            mean[row] = g.joint_mean[i];
        }
        let mut cov = DMatrix::zeros(dim - n_x, dim - n_x);
        for (row, &i) in keep.iter().enumerate() {
            for (col, &j) in keep.iter().enumerate() {
                cov[(row, col)] = g.joint_cov[(i, j)];
            }
        }
        out.joint_mean = mean;
        out.joint_cov = cov;
        out.end_step -= 1;
        Some(out)
    };

    let mut out = posterior.clone();
    for slot in &mut out.slots {
        for local in slot.iter_mut() {
            let mut gone_mass = 0.0;
            let mut terms = Vec::new();
            for term in &local.density.terms {
                match strip(&term.gaussian) {
                    Some(gaussian) => terms.push(MixtureTerm {
                        weight: term.weight,
                        gaussian,
                    }),
                    None => gone_mass += term.weight,
                }
            }
            local.density.terms = terms;
            let keep = 1.0 - gone_mass;
            local.existence *= keep.max(0.0);
            if keep > 1e-300 && local.existence > 0.0 {
                for term in &mut local.density.terms {
                    term.weight /= keep;
                }
            } else {
                local.existence = 0.0;
                local.density.terms.clear();
            }
            local.density.merge_by_shape().unwrap();
        }
    }
    let mut ppp = Vec::new();
    for comp in &out.ppp {
        if let Some(gaussian) = strip(&comp.gaussian) {
            ppp.push(tpmbm::posterior::PoissonComponent {
                weight: comp.weight,
                gaussian,
            });
        }
    }
    out.ppp = ppp;
    out.step_times.remove(step);
    out.current_step -= 1;
    out
}

/// Canonical form of a posterior for cross-pipeline comparison. Slots are
/// keyed by the measurement that created them and locals by their sorted
/// association history, so two posteriors built in different delivery
/// orders become comparable.
pub struct CanonicalPosterior {
    /// signature -> (weight, per-slot local data)
    pub globals: BTreeMap<String, (f64, Vec<CanonicalLocal>)>,
}

pub struct CanonicalLocal {
    pub existence: f64,
    /// (start, end) -> (weight, mean, cov)
    pub terms: BTreeMap<(i64, i64), (f64, DVector<f64>, DMatrix<f64>)>,
}

pub fn canonicalize(posterior: &PmbmPosterior) -> CanonicalPosterior {
    let slot_key = |slot: &[tpmbm::posterior::BernoulliLocalHypothesis]| -> String {
        let creator = slot
            .iter()
            .filter_map(|l| l.history.first())
            .next()
            .expect("slot has a creating measurement");
        format!("{}:{:?}", creator.0, creator.1)
    };
    let mut globals = BTreeMap::new();
    for g in &posterior.globals {
        let mut entries: Vec<(String, String, CanonicalLocal)> = Vec::new();
        for (i, &j) in g.selections.iter().enumerate() {
            let slot = &posterior.slots[i];
            let local = &slot[j];
            if local.existence == 0.0 && local.density.terms.is_empty() {
                // Zero-existence placeholders carry no density information;
                // garbage collection may or may not have dropped them.
                continue;
            }
            let mut history = local.history.clone();
            history.sort();
            let mut terms = BTreeMap::new();
            for term in &local.density.terms {
                terms.insert(
                    (term.gaussian.start_step, term.gaussian.end_step),
                    (
                        term.weight,
                        term.gaussian.joint_mean.clone(),
                        term.gaussian.joint_cov.clone(),
                    ),
                );
            }
            entries.push((
                slot_key(slot),
                format!("{history:?}"),
                CanonicalLocal {
                    existence: local.existence,
                    terms,
                },
            ));
        }
        entries.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        let signature = entries
            .iter()
            .map(|(k, h, _)| format!("[{k}|{h}]"))
            .collect::<Vec<_>>()
            .join(";");
        let locals = entries.into_iter().map(|(_, _, l)| l).collect();
        let entry = globals.entry(signature).or_insert((0.0, locals));
        entry.0 += g.weight;
    }
    CanonicalPosterior { globals }
}

/// Asserts two canonical posteriors are equal within the given tolerances.
pub fn assert_posteriors_match(
    a: &CanonicalPosterior,
    b: &CanonicalPosterior,
    tol_weight: f64,
    tol_mean: f64,
    tol_cov: f64,
) {
    let keys_a: Vec<&String> = a.globals.keys().collect();
    let keys_b: Vec<&String> = b.globals.keys().collect();
    assert_eq!(keys_a, keys_b, "global hypothesis structures differ");
    for (sig, (wa, la)) in &a.globals {
        let (wb, lb) = &b.globals[sig];
        assert!(
            (wa - wb).abs() <= tol_weight,
            "weight mismatch at {sig}: {wa} vs {wb}"
        );
        assert_eq!(la.len(), lb.len());
        for (ca, cb) in la.iter().zip(lb.iter()) {
            assert!(
                (ca.existence - cb.existence).abs() <= tol_weight,
                "existence mismatch: {} vs {}",
                ca.existence,
                cb.existence
            );
            let ka: Vec<_> = ca.terms.keys().collect();
            let kb: Vec<_> = cb.terms.keys().collect();
            assert_eq!(ka, kb, "mixture shapes differ");
            for (key, (w_a, m_a, p_a)) in &ca.terms {
                let (w_b, m_b, p_b) = &cb.terms[key];
                assert!(
                    (w_a - w_b).abs() <= tol_weight,
                    "term weight mismatch at {key:?}: {w_a} vs {w_b}"
                );
                assert!(
                    (m_a - m_b).abs().max() <= tol_mean,
                    "mean mismatch at {key:?}: {}",
                    (m_a - m_b).abs().max()
                );
                assert!(
                    (p_a - p_b).abs().max() <= tol_cov,
                    "cov mismatch at {key:?}: {}",
                    (p_a - p_b).abs().max()
                );
            }
        }
    }
}

/// Monte Carlo moment estimate of the appearance-lag mixture: sample a
/// truncated-exponential lag, then the state given the lag. Returns the
/// sample mean, sample covariance, and standard errors for both.
pub struct McMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    pub cov_se: DMatrix<f64>,
}

pub fn mc_birth_moments(
    model: &tpmbm::ContinuousModel,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> McMoments {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n_x = model.state_dim();
    let chol_a = model
        .cov_appearance
        .clone()
        .cholesky()
        .expect("appearance covariance is PD")
        .l();
    let mut samples: Vec<DVector<f64>> = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        // Inverse-CDF draw from the truncated exponential on [0, dt).
        let u: f64 = rng.random();
        let t = -(-u * (-(-model.mu * dt).exp_m1())).ln_1p() / model.mu;
        let kernel = tpmbm::wiener_kernel(model.q, model.d, t).unwrap();
        let z = DVector::from_iterator(n_x, (0..n_x).map(|_| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        }));
        let x_a = &model.mean_appearance + &chol_a * z;
        let mean = &kernel.f * x_a;
        let state = if t > 0.0 {
            let chol_q = kernel.q.cholesky().expect("Q is PD for t > 0").l();
            let w = DVector::from_iterator(n_x, (0..n_x).map(|_| {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
            }));
            mean + chol_q * w
        } else {
            mean
        };
        samples.push(state);
    }
    let nf = n_samples as f64;
    let mut mean = DVector::zeros(n_x);
    for s in &samples {
        mean += s;
    }
    mean /= nf;
    let mut cov = DMatrix::zeros(n_x, n_x);
    for s in &samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov /= nf - 1.0;
    let mean_se = DVector::from_iterator(n_x, (0..n_x).map(|i| (cov[(i, i)] / nf).sqrt()));
    // Standard error of covariance entries from the variance of centred
    // products.
    let mut cov_se = DMatrix::zeros(n_x, n_x);
    for i in 0..n_x {
        for j in 0..n_x {
            let mut var = 0.0;
            for s in &samples {
                let prod = (s[i] - mean[i]) * (s[j] - mean[j]);
                var += (prod - cov[(i, j)]).powi(2);
            }
            var /= nf - 1.0;
            cov_se[(i, j)] = (var / nf).sqrt();
        }
    }
    McMoments {
        mean,
        cov,
        mean_se,
        cov_se,
    }
}

/// Exhaustive ranked enumeration of all injective row-to-column maps,
/// sorted by (cost, assignment).
pub fn brute_force_assignments(
    cost: &tpmbm::assignment::CostMatrix,
) -> Vec<(Vec<usize>, f64)> {
    fn recurse(
        cost: &tpmbm::assignment::CostMatrix,
        row: usize,
        current: &mut Vec<usize>,
        used: &mut Vec<bool>,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if row == cost.n_rows() {
            let total: f64 = current
                .iter()
                .enumerate()
                .map(|(r, &c)| cost.get(r, c))
                .sum();
            if total < tpmbm::assignment::CostMatrix::INFEASIBLE_THRESHOLD {
                out.push((current.clone(), total));
            }
            return;
        }
        for c in 0..cost.n_cols() {
            if !used[c]
                && cost.get(row, c) < tpmbm::assignment::CostMatrix::INFEASIBLE_THRESHOLD
            {
                used[c] = true;
                current.push(c);
                recurse(cost, row + 1, current, used, out);
                current.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    recurse(
        cost,
        0,
        &mut Vec::new(),
        &mut vec![false; cost.n_cols()],
        &mut out,
    );
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Exact minimization over assignment sequences by Viterbi over the full
/// matching set: every matching at every step, every transition. Exhaustive
/// over the sequence space; independent of the component/shortest-path
/// machinery in the library.
pub fn brute_force_metric(
    truth: &[tpmbm::metric::MetricTrajectory],
    estimate: &[tpmbm::metric::MetricTrajectory],
    params: &tpmbm::metric::MetricParams,
    horizon: usize,
) -> f64 {
    let n = truth.len();
    let m = estimate.len();
    let cp = params.c.powf(params.p);
    let gp = params.gamma.powf(params.p);
    let alive = |t: &tpmbm::metric::MetricTrajectory, s: usize| {
        s >= t.start_step && s < t.start_step + t.positions.len()
    };
    fn pos<'a>(t: &'a tpmbm::metric::MetricTrajectory, s: usize) -> &'a DVector<f64> {
        &t.positions[s - t.start_step]
    }

    let mut matchings: Vec<Vec<Option<usize>>> = Vec::new();
    fn gen(
        i: usize,
        n: usize,
        m: usize,
        cur: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        gen(i + 1, n, m, cur, used, out);
        cur.pop();
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                gen(i + 1, n, m, cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    gen(0, n, m, &mut Vec::new(), &mut vec![false; m], &mut matchings);

    let step_cost = |mt: &Vec<Option<usize>>, s: usize| -> f64 {
        let mut cost = 0.0;
        let mut est_used = vec![false; m];
        for i in 0..n {
            match mt[i] {
                Some(j) => {
                    est_used[j] = true;
                    let ta = alive(&truth[i], s);
                    let ea = alive(&estimate[j], s);
                    if ta && ea {
                        let d = (pos(&truth[i], s) - pos(&estimate[j], s)).norm();
                        cost += d.min(params.c).powf(params.p);
                    } else if ta || ea {
                        cost += 0.5 * cp;
                    }
                }
                None => {
                    if alive(&truth[i], s) {
                        cost += 0.5 * cp;
                    }
                }
            }
        }
        for j in 0..m {
            if !est_used[j] && alive(&estimate[j], s) {
                cost += 0.5 * cp;
            }
        }
        cost
    };
    let switch_cost = |a: &Vec<Option<usize>>, b: &Vec<Option<usize>>| -> f64 {
        (0..n)
            .map(|i| match (a[i], b[i]) {
                (Some(x), Some(y)) if x != y => gp,
                (Some(_), None) | (None, Some(_)) => 0.5 * gp,
                _ => 0.0,
            })
            .sum()
    };
    let mut value: Vec<f64> = matchings.iter().map(|mt| step_cost(mt, 1)).collect();
    for s in 2..=horizon {
        let prev = value.clone();
        for (bi, b) in matchings.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (ai, a) in matchings.iter().enumerate() {
                let v = prev[ai] + switch_cost(a, b);
                if v < best {
                    best = v;
                }
            }
            value[bi] = best + step_cost(b, s);
        }
    }
    let best = value.iter().cloned().fold(f64::INFINITY, f64::min);
    (best / horizon as f64).powf(1.0 / params.p)
}
