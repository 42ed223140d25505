//! Gaussian densities over sampled trajectories.
//!
//! A trajectory Gaussian covers the states from `start_step` to `end_step`.
//! Under an L-scan window the covariance is block diagonal: states that left
//! the window are stored as frozen per-step marginals (structurally shared
//! between hypotheses that branched from a common past), while the recent
//! states keep a full joint mean and covariance. Out-of-sequence processing
//! may append one extra, non-timeline block holding the state at the OOS
//! time; such a Gaussian is `augmented`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TrackingError};
use crate::linalg::{gaussian_logpdf, spd_solve, symmetrize};

/// Immutable, structurally shared list of frozen per-step marginals.
#[derive(Clone, Default)]
pub struct FrozenStates {
    head: Option<Arc<FrozenNode>>,
    len: usize,
}

struct FrozenNode {
    prev: Option<Arc<FrozenNode>>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl FrozenStates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn push(&mut self, mean: DVector<f64>, cov: DMatrix<f64>) {
        let node = FrozenNode {
            prev: self.head.take(),
            mean,
            cov,
        };
        self.head = Some(Arc::new(node));
        self.len += 1;
    }

    /// Marginals in trajectory order (oldest first).
    pub fn to_vec(&self) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        let mut out = Vec::with_capacity(self.len);
        let mut cur = self.head.as_deref();
        while let Some(node) = cur {
            out.push((node.mean.clone(), node.cov.clone()));
            cur = node.prev.as_deref();
        }
        out.reverse();
        out
    }

    fn from_vec(items: Vec<(DVector<f64>, DMatrix<f64>)>) -> Self {
        let mut s = Self::new();
        for (mean, cov) in items {
            s.push(mean, cov);
        }
        s
    }
}

impl std::fmt::Debug for FrozenStates {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FrozenStates(len={})", self.len)
    }
}

/// A Gaussian over one trajectory with fixed start and end steps.
#[derive(Debug, Clone)]
pub struct TrajectoryGaussian {
    /// Birth step; `-1` marks a trajectory that only exists at an OOS time.
    pub start_step: i64,
    /// Last timeline step the trajectory is present at.
    pub end_step: i64,
    /// Single-target state dimension.
    pub n_x: usize,
    /// Frozen marginals for steps `start_step .. joint_start()`.
    pub frozen: FrozenStates,
    /// Joint mean over the windowed states (plus the OOS block if augmented).
    pub joint_mean: DVector<f64>,
    /// Joint covariance matching `joint_mean`.
    pub joint_cov: DMatrix<f64>,
    /// True when the last joint block is the state at an OOS time.
    pub augmented: bool,
}

impl TrajectoryGaussian {
    /// A length-one trajectory born at `step`.
    pub fn single(step: i64, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let n_x = mean.len();
        Self {
            start_step: step,
            end_step: step,
            n_x,
            frozen: FrozenStates::new(),
            joint_mean: mean,
            joint_cov: cov,
            augmented: false,
        }
    }

    /// First step whose state still lives in the joint.
    pub fn joint_start(&self) -> i64 {
        self.start_step + self.frozen.len() as i64
    }

    /// Number of timeline states in the joint.
    pub fn timeline_blocks(&self) -> usize {
        (self.end_step - self.joint_start() + 1) as usize
    }

    /// Total number of joint blocks including a possible OOS block.
    pub fn n_blocks(&self) -> usize {
        self.timeline_blocks() + usize::from(self.augmented)
    }

    /// Index of the last joint block (the OOS block when augmented).
    pub fn last_block(&self) -> usize {
        self.n_blocks() - 1
    }

    /// Marks a trajectory that appeared and disappeared strictly between two
    /// in-sequence sample times.
    pub fn is_oos_birth(&self) -> bool {
        self.start_step < 0
    }

    /// Joint block index of a timeline step, or `None` when frozen or out
    /// of range.
    pub fn block_of_step(&self, step: i64) -> Option<usize> {
        if step < self.joint_start() || step > self.end_step {
            None
        } else {
            Some((step - self.joint_start()) as usize)
        }
    }

    /// Whether the trajectory is present at `step`.
    pub fn covers_step(&self, step: i64) -> bool {
        self.start_step >= 0 && step >= self.start_step && step <= self.end_step
    }

    pub fn block_mean(&self, block: usize) -> DVector<f64> {
        self.joint_mean.rows(block * self.n_x, self.n_x).into_owned()
    }

    pub fn block_cov(&self, block: usize) -> DMatrix<f64> {
        self.joint_cov
            .view((block * self.n_x, block * self.n_x), (self.n_x, self.n_x))
            .into_owned()
    }

    /// Cross covariance between two joint blocks.
    pub fn block_cross(&self, a: usize, b: usize) -> DMatrix<f64> {
        self.joint_cov
            .view((a * self.n_x, b * self.n_x), (self.n_x, self.n_x))
            .into_owned()
    }

    /// Marginal (mean, cov) at a timeline step, whether frozen or joint.
    pub fn state_at_step(&self, step: i64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        if step < self.start_step || step > self.end_step {
            return None;
        }
        if let Some(block) = self.block_of_step(step) {
            return Some((self.block_mean(block), self.block_cov(block)));
        }
        let idx = (step - self.start_step) as usize;
        let frozen = self.frozen.to_vec();
        Some((frozen[idx].0.clone(), frozen[idx].1.clone()))
    }

    /// State means over the whole trajectory, oldest first. Excludes the
    /// OOS block.
    pub fn mean_sequence(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = self.frozen.to_vec().into_iter().map(|x| x.0).collect();
        for b in 0..self.timeline_blocks() {
            out.push(self.block_mean(b));
        }
        out
    }

    /// Appends a new block `x_new = sum_b A_b x_b + offset + w`,
    /// `w ~ N(0, noise)`, where `b` ranges over existing joint blocks.
    ///
    /// With `as_augmented` the block is the OOS state and `end_step` is
    /// unchanged; otherwise the trajectory is extended one timeline step.
    pub fn append_block(
        &self,
        terms: &[(usize, &DMatrix<f64>)],
        offset: Option<&DVector<f64>>,
        noise: &DMatrix<f64>,
        as_augmented: bool,
    ) -> Self {
        assert!(!self.augmented, "cannot append to an augmented trajectory");
        let n_x = self.n_x;
        let dim = self.joint_mean.len();

        let mut new_block_mean = match offset {
            Some(o) => o.clone(),
            None => DVector::zeros(n_x),
        };
        for (b, a) in terms {
            new_block_mean += *a * self.block_mean(*b);
        }

        // cross = C A^T, built from the involved block columns.
        let mut cross = DMatrix::zeros(dim, n_x);
        for (b, a) in terms {
            let cols = self.joint_cov.view((0, b * n_x), (dim, n_x));
            cross += cols * a.transpose();
        }
        // corner = A C A^T + noise = sum_b A_b * cross_rows(b) + noise.
        let mut corner = noise.clone();
        for (b, a) in terms {
            let rows = cross.view((b * n_x, 0), (n_x, n_x));
            corner += *a * rows;
        }
        symmetrize(&mut corner);

        let mut joint_mean = DVector::zeros(dim + n_x);
        joint_mean.rows_mut(0, dim).copy_from(&self.joint_mean);
        joint_mean.rows_mut(dim, n_x).copy_from(&new_block_mean);
        let mut joint_cov = DMatrix::zeros(dim + n_x, dim + n_x);
        joint_cov
            .view_mut((0, 0), (dim, dim))
            .copy_from(&self.joint_cov);
        joint_cov.view_mut((0, dim), (dim, n_x)).copy_from(&cross);
        joint_cov
            .view_mut((dim, 0), (n_x, dim))
            .copy_from(&cross.transpose());
        joint_cov
            .view_mut((dim, dim), (n_x, n_x))
            .copy_from(&corner);

        Self {
            start_step: self.start_step,
            end_step: if as_augmented {
                self.end_step
            } else {
                self.end_step + 1
            },
            n_x,
            frozen: self.frozen.clone(),
            joint_mean,
            joint_cov,
            augmented: as_augmented,
        }
    }

    /// Extends the trajectory one step with a linear-Gaussian kernel.
    pub fn extend(&self, f: &DMatrix<f64>, q: &DMatrix<f64>) -> Self {
        self.append_block(&[(self.last_block(), f)], None, q, false)
    }

    /// Predicted measurement moments `(zhat, S)` for `z = H x_block + v`.
    pub fn predicted_measurement(
        &self,
        block: usize,
        h: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let zhat = h * self.block_mean(block);
        let mut s = h * self.block_cov(block) * h.transpose() + r;
        symmetrize(&mut s);
        (zhat, s)
    }

    /// Kalman update of the joint against `z = H x_block + v`, with cross
    /// covariance over every windowed state. Returns the updated Gaussian
    /// and the log measurement likelihood.
    pub fn kalman_update_block(
        &self,
        block: usize,
        h: &DMatrix<f64>,
        r: &DMatrix<f64>,
        z: &DVector<f64>,
    ) -> Result<(Self, f64)> {
        let n_x = self.n_x;
        let dim = self.joint_mean.len();
        let (zhat, s) = self.predicted_measurement(block, h, r);
        let log_like = gaussian_logpdf(z, &zhat, &s)?;

        let cols = self
            .joint_cov
            .view((0, block * n_x), (dim, n_x))
            .into_owned();
        let cross = &cols * h.transpose(); // dim x n_z
        // K = cross S^{-1}; compute via S K^T = cross^T.
        let k_t = spd_solve(&s, &cross.transpose())?;
        let gain = k_t.transpose();
        let innovation = z - &zhat;

        let joint_mean = &self.joint_mean + &gain * &innovation;
        let mut joint_cov = &self.joint_cov - &gain * &s * gain.transpose();
        symmetrize(&mut joint_cov);

        Ok((
            Self {
                start_step: self.start_step,
                end_step: self.end_step,
                n_x,
                frozen: self.frozen.clone(),
                joint_mean,
                joint_cov,
                augmented: self.augmented,
            },
            log_like,
        ))
    }

    /// Drops the appended OOS block, returning the plain trajectory.
    pub fn marginalize_augmented(&self) -> Self {
        assert!(self.augmented, "no OOS block to marginalize");
        let dim = self.joint_mean.len() - self.n_x;
        Self {
            start_step: self.start_step,
            end_step: self.end_step,
            n_x: self.n_x,
            frozen: self.frozen.clone(),
            joint_mean: self.joint_mean.rows(0, dim).into_owned(),
            joint_cov: self.joint_cov.view((0, 0), (dim, dim)).into_owned(),
            augmented: false,
        }
    }

    /// Freezes every joint state at a step before `step`, keeping at least
    /// the last timeline state in the joint. Cross covariances of frozen
    /// states are discarded (the L-scan approximation).
    pub fn freeze_until(&mut self, step: i64) {
        assert!(!self.augmented, "cannot freeze an augmented trajectory");
        let target = step.min(self.end_step);
        while self.joint_start() < target {
            let n_x = self.n_x;
            let dim = self.joint_mean.len();
            self.frozen.push(self.block_mean(0), self.block_cov(0));
            self.joint_mean = self.joint_mean.rows(n_x, dim - n_x).into_owned();
            self.joint_cov = self
                .joint_cov
                .view((n_x, n_x), (dim - n_x, dim - n_x))
                .into_owned();
        }
    }

    /// Moment-matches a mixture of Gaussians sharing `(start, end,
    /// augmented)`. Frozen marginals are matched per step; joints jointly.
    pub fn moment_match(weighted: &[(f64, &TrajectoryGaussian)]) -> Result<TrajectoryGaussian> {
        let (w0, first) = weighted
            .first()
            .ok_or_else(|| TrackingError::invalid("empty mixture"))?;
        if weighted.len() == 1 {
            let mut g = (*first).clone();
            let _ = w0;
            return Ok(g.take());
        }
        for (_, g) in weighted {
            if g.start_step != first.start_step
                || g.end_step != first.end_step
                || g.augmented != first.augmented
            {
                return Err(TrackingError::invalid(
                    "moment matching requires identical (start, end, augmented)",
                ));
            }
        }
        let total: f64 = weighted.iter().map(|(w, _)| *w).sum();
        if !(total > 0.0) {
            return Err(TrackingError::invalid("mixture has no mass"));
        }

        // Harmonize the frozen/joint split to the latest joint start.
        let target = weighted
            .iter()
            .map(|(_, g)| g.joint_start())
            .max()
            .unwrap();
        let parts: Vec<(f64, TrajectoryGaussian)> = weighted
            .iter()
            .map(|(w, g)| {
                let mut c = (*g).clone();
                if c.joint_start() < target {
                    c.freeze_until(target);
                }
                (*w / total, c)
            })
            .collect();

        let n_frozen = parts[0].1.frozen.len();
        let mut frozen_items = Vec::with_capacity(n_frozen);
        if n_frozen > 0 {
            let frozen: Vec<Vec<(DVector<f64>, DMatrix<f64>)>> =
                parts.iter().map(|(_, g)| g.frozen.to_vec()).collect();
            for s in 0..n_frozen {
                let mut mean = DVector::zeros(parts[0].1.n_x);
                for (i, (w, _)) in parts.iter().enumerate() {
                    mean += &frozen[i][s].0 * *w;
                }
                let mut cov = DMatrix::zeros(parts[0].1.n_x, parts[0].1.n_x);
                for (i, (w, _)) in parts.iter().enumerate() {
                    let d = &frozen[i][s].0 - &mean;
                    cov += (&frozen[i][s].1 + &d * d.transpose()) * *w;
                }
                symmetrize(&mut cov);
                frozen_items.push((mean, cov));
            }
        }

        let dim = parts[0].1.joint_mean.len();
        let mut mean = DVector::zeros(dim);
        for (w, g) in &parts {
            mean += &g.joint_mean * *w;
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (w, g) in &parts {
            let d = &g.joint_mean - &mean;
            cov += (&g.joint_cov + &d * d.transpose()) * *w;
        }
        symmetrize(&mut cov);

        Ok(TrajectoryGaussian {
            start_step: parts[0].1.start_step,
            end_step: parts[0].1.end_step,
            n_x: parts[0].1.n_x,
            frozen: FrozenStates::from_vec(frozen_items),
            joint_mean: mean,
            joint_cov: cov,
            augmented: parts[0].1.augmented,
        })
    }

    fn take(&mut self) -> TrajectoryGaussian {
        self.clone()
    }

    /// Largest absolute difference over all stored moments; `None` when the
    /// two Gaussians have different shapes. Test and diagnostics helper.
    pub fn max_moment_difference(&self, other: &TrajectoryGaussian) -> Option<f64> {
        if self.start_step != other.start_step
            || self.end_step != other.end_step
            || self.augmented != other.augmented
            || self.frozen.len() != other.frozen.len()
        {
            return None;
        }
        let mut worst = (&self.joint_mean - &other.joint_mean).abs().max();
        worst = worst.max((&self.joint_cov - &other.joint_cov).abs().max());
        let fa = self.frozen.to_vec();
        let fb = other.frozen.to_vec();
        for ((ma, ca), (mb, cb)) in fa.iter().zip(fb.iter()) {
            worst = worst.max((ma - mb).abs().max());
            worst = worst.max((ca - cb).abs().max());
        }
        Some(worst)
    }
}

/// One weighted Gaussian in a trajectory mixture.
#[derive(Debug, Clone)]
pub struct MixtureTerm {
    pub weight: f64,
    pub gaussian: TrajectoryGaussian,
}

/// Mixture over end-time (and, during OOS processing, OOS-existence)
/// hypotheses of one potential trajectory. Weights sum to one.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryMixture {
    pub terms: Vec<MixtureTerm>,
}

impl TrajectoryMixture {
    pub fn from_single(gaussian: TrajectoryGaussian) -> Self {
        Self {
            terms: vec![MixtureTerm {
                weight: 1.0,
                gaussian,
            }],
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }

    /// Rescales weights to sum to one; drops zero-weight terms.
    pub fn normalize(&mut self) {
        self.terms.retain(|t| t.weight > 0.0);
        let total = self.total_weight();
        if total > 0.0 {
            for t in &mut self.terms {
                t.weight /= total;
            }
        }
    }

    /// Probability mass on terms alive at timeline step `k`.
    pub fn alive_mass(&self, k: i64) -> f64 {
        self.terms
            .iter()
            .filter(|t| !t.gaussian.augmented && t.gaussian.end_step == k && t.gaussian.start_step >= 0)
            .map(|t| t.weight)
            .sum()
    }

    /// Probability mass on terms that exist at the OOS time.
    pub fn tau_mass(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.gaussian.augmented || t.gaussian.is_oos_birth())
            .map(|t| t.weight)
            .sum()
    }

    /// Merges terms sharing `(start, end, augmented)` by weight addition and
    /// per-key moment matching. Keys are processed in sorted order.
    pub fn merge_by_shape(&mut self) -> Result<()> {
        use std::collections::BTreeMap;
        let mut groups: BTreeMap<(i64, i64, bool), Vec<usize>> = BTreeMap::new();
        for (i, t) in self.terms.iter().enumerate() {
            groups
                .entry((t.gaussian.start_step, t.gaussian.end_step, t.gaussian.augmented))
                .or_default()
                .push(i);
        }
        if groups.len() == self.terms.len() {
            return Ok(());
        }
        let mut merged = Vec::with_capacity(groups.len());
        for (_, idxs) in groups {
            let weight: f64 = idxs.iter().map(|&i| self.terms[i].weight).sum();
            if idxs.len() == 1 {
                let mut t = self.terms[idxs[0]].clone();
                t.weight = weight;
                merged.push(t);
            } else {
                let parts: Vec<(f64, &TrajectoryGaussian)> = idxs
                    .iter()
                    .map(|&i| (self.terms[i].weight, &self.terms[i].gaussian))
                    .collect();
                let gaussian = TrajectoryGaussian::moment_match(&parts)?;
                merged.push(MixtureTerm { weight, gaussian });
            }
        }
        self.terms = merged;
        Ok(())
    }
}
