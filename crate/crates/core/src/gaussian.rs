//! The reflection-aware Gaussian primitive and its parameterization.
//!
//! Every primitive carries geometry (mean, rotation, scale), a transmitted
//! appearance (SH colors + opacity), a reflected appearance (second SH set +
//! opacity) and a reflection confidence. Constrained quantities are stored
//! unconstrained: opacities and confidence as logits, scales as logs,
//! rotations as unnormalized quaternions `(w, x, y, z)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::sh;

/// Initial opacity, reflected opacity and reflection confidence of new primitives.
pub const INIT_PROBABILITY: f64 = 0.1;

/// Diagonal regularizer added before inverting a 3D covariance.
pub const COVARIANCE_EPSILON: f64 = 1e-10;

/// One primitive in its stored (pre-activation) form.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGaussian {
    pub mean: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    /// `coeff_count(max_degree) * 3` values, `[basis][channel]`.
    pub sh_trans: Vec<f64>,
    pub sh_ref: Vec<f64>,
    pub ref_opacity_logit: f64,
    pub beta_logit: f64,
}

impl RawGaussian {
    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.ref_opacity_logit.is_finite()
            && self.beta_logit.is_finite()
            && self.sh_trans.iter().all(|v| v.is_finite())
            && self.sh_ref.iter().all(|v| v.is_finite())
    }
}

/// A primitive after applying the activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivatedGaussian {
    pub mean: Vec3,
    pub cov3d: Mat3,
    pub opacity: f64,
    pub ref_opacity: f64,
    pub beta: f64,
}

/// Independently optimized parameter arrays of a [`GaussianCloud`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamGroup {
    Means,
    Rotations,
    LogScales,
    OpacityLogits,
    ShTrans,
    ShRef,
    RefOpacityLogits,
    BetaLogits,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Means,
        ParamGroup::Rotations,
        ParamGroup::LogScales,
        ParamGroup::OpacityLogits,
        ParamGroup::ShTrans,
        ParamGroup::ShRef,
        ParamGroup::RefOpacityLogits,
        ParamGroup::BetaLogits,
    ];

    /// Number of stored scalars per primitive.
    pub fn stride(self, max_sh_degree: usize) -> usize {
        match self {
            ParamGroup::Means | ParamGroup::LogScales => 3,
            ParamGroup::Rotations => 4,
            ParamGroup::ShTrans | ParamGroup::ShRef => sh::coeff_count(max_sh_degree) * 3,
            ParamGroup::OpacityLogits | ParamGroup::RefOpacityLogits | ParamGroup::BetaLogits => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Means => "means",
            ParamGroup::Rotations => "rotations",
            ParamGroup::LogScales => "log_scales",
            ParamGroup::OpacityLogits => "opacity_logits",
            ParamGroup::ShTrans => "sh_trans",
            ParamGroup::ShRef => "sh_ref",
            ParamGroup::RefOpacityLogits => "ref_opacity_logits",
            ParamGroup::BetaLogits => "beta_logits",
        }
    }
}

/// Structure-of-arrays storage for all primitives of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh_trans: Vec<f64>,
    pub sh_ref: Vec<f64>,
    pub ref_opacity_logits: Vec<f64>,
    pub beta_logits: Vec<f64>,
    pub active_sh_degree: usize,
    pub max_sh_degree: usize,
}

impl GaussianCloud {
    pub fn new(max_sh_degree: usize) -> Self {
        assert!(max_sh_degree <= sh::MAX_DEGREE, "SH degree above {}", sh::MAX_DEGREE);
        Self {
            means: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_trans: Vec::new(),
            sh_ref: Vec::new(),
            ref_opacity_logits: Vec::new(),
            beta_logits: Vec::new(),
            active_sh_degree: 0,
            max_sh_degree,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values per primitive in each SH set.
    #[inline]
    pub fn sh_stride(&self) -> usize {
        sh::coeff_count(self.max_sh_degree) * 3
    }

    pub fn push(&mut self, g: &RawGaussian) {
        let stride = self.sh_stride();
        assert_eq!(g.sh_trans.len(), stride, "sh_trans length");
        assert_eq!(g.sh_ref.len(), stride, "sh_ref length");
        self.means.extend_from_slice(&g.mean);
        self.rotations.extend_from_slice(&g.rotation);
        self.log_scales.extend_from_slice(&g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_trans.extend_from_slice(&g.sh_trans);
        self.sh_ref.extend_from_slice(&g.sh_ref);
        self.ref_opacity_logits.push(g.ref_opacity_logit);
        self.beta_logits.push(g.beta_logit);
    }

    pub fn get(&self, i: usize) -> RawGaussian {
        let s = self.sh_stride();
        RawGaussian {
            mean: self.mean(i),
            rotation: self.rotation(i),
            log_scale: self.log_scale(i),
            opacity_logit: self.opacity_logits[i],
            sh_trans: self.sh_trans[i * s..(i + 1) * s].to_vec(),
            sh_ref: self.sh_ref[i * s..(i + 1) * s].to_vec(),
            ref_opacity_logit: self.ref_opacity_logits[i],
            beta_logit: self.beta_logits[i],
        }
    }

    #[inline]
    pub fn mean(&self, i: usize) -> Vec3 {
        [self.means[3 * i], self.means[3 * i + 1], self.means[3 * i + 2]]
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let r = &self.rotations[4 * i..4 * i + 4];
        [r[0], r[1], r[2], r[3]]
    }

    #[inline]
    pub fn log_scale(&self, i: usize) -> Vec3 {
        [self.log_scales[3 * i], self.log_scales[3 * i + 1], self.log_scales[3 * i + 2]]
    }

    #[inline]
    pub fn sh_trans_of(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh_trans[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn sh_ref_of(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh_ref[i * s..(i + 1) * s]
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::Means => &self.means,
            ParamGroup::Rotations => &self.rotations,
            ParamGroup::LogScales => &self.log_scales,
            ParamGroup::OpacityLogits => &self.opacity_logits,
            ParamGroup::ShTrans => &self.sh_trans,
            ParamGroup::ShRef => &self.sh_ref,
            ParamGroup::RefOpacityLogits => &self.ref_opacity_logits,
            ParamGroup::BetaLogits => &self.beta_logits,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut Vec<f64> {
        match g {
            ParamGroup::Means => &mut self.means,
            ParamGroup::Rotations => &mut self.rotations,
            ParamGroup::LogScales => &mut self.log_scales,
            ParamGroup::OpacityLogits => &mut self.opacity_logits,
            ParamGroup::ShTrans => &mut self.sh_trans,
            ParamGroup::ShRef => &mut self.sh_ref,
            ParamGroup::RefOpacityLogits => &mut self.ref_opacity_logits,
            ParamGroup::BetaLogits => &mut self.beta_logits,
        }
    }

    /// Checks array lengths, degrees and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for g in ParamGroup::ALL {
            let expected = n * g.stride(self.max_sh_degree);
            if self.group(g).len() != expected {
                return Err(Error::shape(g.name(), expected, self.group(g).len()));
            }
        }
        if self.active_sh_degree > self.max_sh_degree {
            return Err(Error::InvalidConfig(alloc::format!(
                "active SH degree {} exceeds maximum {}",
                self.active_sh_degree,
                self.max_sh_degree
            )));
        }
        for g in ParamGroup::ALL {
            if let Some(pos) = self.group(g).iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "non-finite value in {} at primitive {}",
                    g.name(),
                    pos / g.stride(self.max_sh_degree)
                )));
            }
        }
        Ok(())
    }

    pub fn activate(&self, i: usize) -> Result<ActivatedGaussian> {
        Ok(ActivatedGaussian {
            mean: self.mean(i),
            cov3d: build_covariance(self.rotation(i), self.log_scale(i))?,
            opacity: math::sigmoid(self.opacity_logits[i]),
            ref_opacity: math::sigmoid(self.ref_opacity_logits[i]),
            beta: math::sigmoid(self.beta_logits[i]),
        })
    }

    /// Keeps primitives whose flag is `true`, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let deg = self.max_sh_degree;
        for g in ParamGroup::ALL {
            let stride = g.stride(deg);
            retain_strided(self.group_mut(g), stride, keep);
        }
    }

    /// Appends copies of the listed primitives (all attribute groups).
    pub fn append_copies(&mut self, indices: &[usize]) {
        let deg = self.max_sh_degree;
        for g in ParamGroup::ALL {
            let stride = g.stride(deg);
            let data = self.group_mut(g);
            data.reserve(indices.len() * stride);
            for &i in indices {
                data.extend_from_within(i * stride..(i + 1) * stride);
            }
        }
    }
}

/// Removes strided chunks of `data` whose flag in `keep` is false.
pub(crate) fn retain_strided(data: &mut Vec<f64>, stride: usize, keep: &[bool]) {
    let mut write = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            if write != i {
                data.copy_within(i * stride..(i + 1) * stride, write * stride);
            }
            write += 1;
        }
    }
    data.truncate(write * stride);
}

/// `R S Sᵀ Rᵀ` for the normalized quaternion and `S = diag(exp(log_scale))`.
pub fn build_covariance(rotation: [f64; 4], log_scale: Vec3) -> Result<Mat3> {
    let n = math::sqrt(rotation.iter().map(|v| v * v).sum::<f64>());
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    let q = [rotation[0] / n, rotation[1] / n, rotation[2] / n, rotation[3] / n];
    let r = math::quat_to_mat(q);
    let s = [math::exp(log_scale[0]), math::exp(log_scale[1]), math::exp(log_scale[2])];
    Ok(covariance_from_parts(&r, s))
}

/// `(R S)(R S)ᵀ`, written out so the result is exactly symmetric.
pub(crate) fn covariance_from_parts(r: &Mat3, s: Vec3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    cov
}

/// Unnormalized Gaussian density `exp(-½ dᵀ Σ⁻¹ d)` of an offset from the mean.
pub fn eval_gaussian_density(offset: Vec3, cov3d: &Mat3) -> Result<f64> {
    let mut reg = *cov3d;
    for (i, row) in reg.iter_mut().enumerate() {
        row[i] += COVARIANCE_EPSILON;
    }
    let inv = math::inverse3(&reg).ok_or(Error::SingularCovariance { det: math::det3(&reg) })?;
    let m = math::dot(offset, math::mat_vec(&inv, offset));
    Ok(math::exp(-0.5 * m))
}

/// Activation of a single raw primitive.
pub fn activate(raw: &RawGaussian) -> Result<ActivatedGaussian> {
    Ok(ActivatedGaussian {
        mean: raw.mean,
        cov3d: build_covariance(raw.rotation, raw.log_scale)?,
        opacity: math::sigmoid(raw.opacity_logit),
        ref_opacity: math::sigmoid(raw.ref_opacity_logit),
        beta: math::sigmoid(raw.beta_logit),
    })
}

/// Smallest neighbor distance used for the initial scale.
const MIN_INIT_DISTANCE: f64 = 1e-7;

/// Builds a cloud with one isotropic primitive per point.
///
/// The scale is the mean distance to the (up to) three nearest neighbors; a
/// lone point gets unit scale. Reflected SH coefficients start at zero and
/// every probability (opacity, reflected opacity, confidence) at 0.1.
pub fn init_from_points(points: &[Vec3], colors: &[Vec3], max_sh_degree: usize) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if colors.len() != points.len() {
        return Err(Error::shape("point colors", points.len(), colors.len()));
    }
    let tree = knn::KdTree::new(points);
    let p_logit = math::logit(INIT_PROBABILITY);
    let stride = sh::coeff_count(max_sh_degree) * 3;
    let mut cloud = GaussianCloud::new(max_sh_degree);
    for (i, (p, c)) in points.iter().zip(colors).enumerate() {
        let nn = tree.nearest(i, 3);
        let scale = if nn.is_empty() {
            1.0
        } else {
            (nn.iter().map(|&d2| math::sqrt(d2)).sum::<f64>() / nn.len() as f64).max(MIN_INIT_DISTANCE)
        };
        let ls = math::ln(scale);
        let mut sh_trans = alloc::vec![0.0; stride];
        for ch in 0..3 {
            sh_trans[ch] = sh::dc_from_color(c[ch]);
        }
        cloud.push(&RawGaussian {
            mean: *p,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [ls; 3],
            opacity_logit: p_logit,
            sh_trans,
            sh_ref: alloc::vec![0.0; stride],
            ref_opacity_logit: p_logit,
            beta_logit: p_logit,
        });
    }
    Ok(cloud)
}

mod knn {
    use alloc::vec::Vec;

    use crate::math::Vec3;

    /// Implicit median-split k-d tree over a borrowed point set.
    pub struct KdTree<'a> {
        points: &'a [Vec3],
        order: Vec<usize>,
    }

    impl<'a> KdTree<'a> {
        pub fn new(points: &'a [Vec3]) -> Self {
            let mut order: Vec<usize> = (0..points.len()).collect();
            build(&mut order, points, 0);
            Self { points, order }
        }

        /// Squared distances to the `k` nearest other points, ascending.
        pub fn nearest(&self, query: usize, k: usize) -> Vec<f64> {
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            self.search(0, self.order.len(), 0, query, k, &mut best);
            best
        }

        fn search(&self, lo: usize, hi: usize, depth: usize, query: usize, k: usize, best: &mut Vec<f64>) {
            if lo >= hi {
                return;
            }
            let mid = lo + (hi - lo) / 2;
            let node = self.order[mid];
            let q = self.points[query];
            let p = self.points[node];
            if node != query {
                let (dx, dy, dz) = (q[0] - p[0], q[1] - p[1], q[2] - p[2]);
                let d2 = dx * dx + dy * dy + dz * dz;
                if best.len() < k || d2 < best[best.len() - 1] {
                    let pos = best.partition_point(|&b| b <= d2);
                    best.insert(pos, d2);
                    best.truncate(k);
                }
            }
            let axis = depth % 3;
            let diff = q[axis] - p[axis];
            let (first, second) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
            self.search(first.0, first.1, depth + 1, query, k, best);
            if best.len() < k || diff * diff < best[best.len() - 1] {
                self.search(second.0, second.1, depth + 1, query, k, best);
            }
        }
    }

    fn build(order: &mut [usize], points: &[Vec3], depth: usize) {
        if order.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let (left, right) = order.split_at_mut(mid);
        build(left, points, depth + 1);
        build(&mut right[1..], points, depth + 1);
    }

}
