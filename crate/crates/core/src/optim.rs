//! Adam optimization, adaptive densification and the training loop.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{retain_strided, GaussianCloud, ParamGroup};
use crate::image::Image;
use crate::loss::{self, LossBundle, LossConfig};
use crate::math;
use crate::metrics;
use crate::raster::{self, AccumulationMode, ParamGradients, RenderGrads, RenderSettings};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-15;

/// Logit that keeps reflection confidence effectively zero when the reflected branch is frozen.
pub const FROZEN_BETA_LOGIT: f64 = -30.0;

/// Opacity ceiling applied by periodic resets.
pub const RESET_OPACITY: f64 = 0.01;

/// Children produced when splitting one primitive.
const SPLIT_COUNT: usize = 2;
/// Scale divisor applied to split children (`0.8 · SPLIT_COUNT`).
const SPLIT_SCALE_DIVISOR: f64 = 1.6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LearningRates {
    pub means_init: f64,
    pub means_final: f64,
    pub sh: f64,
    pub opacity: f64,
    pub beta: f64,
    pub scales: f64,
    pub rotations: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means_init: 1.6e-4,
            means_final: 1.6e-6,
            sh: 2.5e-3,
            opacity: 5e-2,
            beta: 5e-2,
            scales: 5e-3,
            rotations: 1e-3,
        }
    }
}

/// Whether the reflected appearance and confidence are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ReflectionBranch {
    #[default]
    Learned,
    /// Confidence pinned at a logit of -30 and the reflected set held fixed, i.e. plain splatting.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub total_iters: usize,
    pub lr: LearningRates,
    /// Multiplier on the mean learning rate; derived from the camera spread when unset.
    pub spatial_lr_scale: Option<f64>,
    pub densify: bool,
    pub densify_interval: usize,
    pub densify_start: usize,
    pub densify_end: usize,
    pub grad_threshold: f64,
    /// Primitives larger than this fraction of the scene extent are split rather than cloned.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: usize,
    pub sh_degree_interval: usize,
    pub loss: LossConfig,
    pub mode: AccumulationMode,
    pub reflection: ReflectionBranch,
    pub early_stop: f64,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 30_000,
            lr: LearningRates::default(),
            spatial_lr_scale: None,
            densify: true,
            densify_interval: 100,
            densify_start: 500,
            densify_end: 15_000,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 5e-3,
            opacity_reset_interval: 3000,
            sh_degree_interval: 1000,
            loss: LossConfig::default(),
            mode: AccumulationMode::Paper,
            reflection: ReflectionBranch::Learned,
            early_stop: raster::EARLY_STOP_TRANSMITTANCE,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    /// Sets the iteration budget, shrinking the densification window and
    /// opacity-reset period proportionally if they no longer fit.
    pub fn with_total_iters(mut self, total: usize) -> Self {
        if self.densify_end > total && self.total_iters > 0 {
            let f = total as f64 / self.total_iters as f64;
            let scale = |v: usize| math::floor(v as f64 * f) as usize;
            self.densify_start = scale(self.densify_start);
            self.densify_end = scale(self.densify_end).min(total);
            self.opacity_reset_interval = scale(self.opacity_reset_interval).max(1);
            if self.densify_start >= self.densify_end {
                self.densify = false;
            }
        }
        self.total_iters = total;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.densify && self.total_iters > 0 && !(self.densify_start < self.densify_end && self.densify_end <= self.total_iters) {
            return Err(Error::InvalidConfig(alloc::format!(
                "densification window must satisfy start < end <= total_iters (got {} < {} <= {})",
                self.densify_start,
                self.densify_end,
                self.total_iters
            )));
        }
        if self.densify_interval == 0 || self.sh_degree_interval == 0 || self.opacity_reset_interval == 0 {
            return Err(Error::InvalidConfig("intervals must be positive".into()));
        }
        if !(self.early_stop >= 0.0 && self.early_stop < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!("early-stop threshold must lie in [0, 1), got {}", self.early_stop)));
        }
        Ok(())
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            mode: self.mode,
            early_stop: self.early_stop,
            ..RenderSettings::default()
        }
    }

    pub fn learning_rate(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Means => self.lr.means_init,
            ParamGroup::Rotations => self.lr.rotations,
            ParamGroup::LogScales => self.lr.scales,
            ParamGroup::OpacityLogits | ParamGroup::RefOpacityLogits => self.lr.opacity,
            ParamGroup::ShTrans | ParamGroup::ShRef => self.lr.sh,
            ParamGroup::BetaLogits => self.lr.beta,
        }
    }

    /// Exponentially decayed mean learning rate (before spatial scaling).
    pub fn means_lr_at(&self, iteration: usize) -> f64 {
        if self.total_iters == 0 {
            return self.lr.means_init;
        }
        let t = (iteration as f64 / self.total_iters as f64).clamp(0.0, 1.0);
        math::exp(math::ln(self.lr.means_init) * (1.0 - t) + math::ln(self.lr.means_final) * t)
    }

    pub fn frozen(&self, group: ParamGroup) -> bool {
        self.reflection == ReflectionBranch::Frozen
            && matches!(group, ParamGroup::ShRef | ParamGroup::RefOpacityLogits | ParamGroup::BetaLogits)
    }
}

/// Adam moments of one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One Adam update. Non-finite gradient entries leave their parameter
/// untouched; the number of skipped entries is returned.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, lr: f64) -> Result<usize> {
    if params.len() != grads.len() || params.len() != moments.m.len() || params.len() != moments.v.len() {
        return Err(Error::shape("adam parameter/gradient/moment lengths", params.len(), grads.len()));
    }
    moments.step += 1;
    let t = moments.step as i32;
    let bc1 = 1.0 - math::powi(ADAM_BETA1, t);
    let bc2 = 1.0 - math::powi(ADAM_BETA2, t);
    let mut skipped = 0;
    for i in 0..params.len() {
        let g = grads[i];
        if !g.is_finite() {
            skipped += 1;
            continue;
        }
        let m = ADAM_BETA1 * moments.m[i] + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * moments.v[i] + (1.0 - ADAM_BETA2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        params[i] -= lr * (m / bc1) / (math::sqrt(v / bc2) + ADAM_EPSILON);
    }
    Ok(skipped)
}

/// Optimizer moments plus densification statistics, kept in step with the cloud.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerState {
    /// Indexed like [`ParamGroup::ALL`].
    pub moments: Vec<Moments>,
    /// Sum of screen-space gradient norms per primitive.
    pub grad_accum: Vec<f64>,
    /// Number of views in which each primitive was visible.
    pub grad_count: Vec<u32>,
    pub skipped_updates: u64,
}

impl OptimizerState {
    pub fn new(cloud: &GaussianCloud) -> Self {
        Self {
            moments: ParamGroup::ALL.iter().map(|g| Moments::zeros(cloud.group(*g).len())).collect(),
            grad_accum: vec![0.0; cloud.len()],
            grad_count: vec![0; cloud.len()],
            skipped_updates: 0,
        }
    }

    pub fn moments(&self, g: ParamGroup) -> &Moments {
        &self.moments[group_slot(g)]
    }

    fn moments_mut(&mut self, g: ParamGroup) -> &mut Moments {
        &mut self.moments[group_slot(g)]
    }

    /// Checks that every array tracks the cloud's size.
    pub fn check_sync(&self, cloud: &GaussianCloud) -> Result<()> {
        for g in ParamGroup::ALL {
            let n = cloud.group(g).len();
            let m = self.moments(g);
            if m.m.len() != n || m.v.len() != n {
                return Err(Error::shape(g.name(), n, m.m.len()));
            }
        }
        if self.grad_accum.len() != cloud.len() || self.grad_count.len() != cloud.len() {
            return Err(Error::shape("densification statistics", cloud.len(), self.grad_accum.len()));
        }
        Ok(())
    }

    fn accumulate(&mut self, grads: &ParamGradients) {
        for i in 0..grads.len() {
            if grads.visible[i] {
                let [gx, gy] = grads.mean2d_ndc[i];
                let n = math::sqrt(gx * gx + gy * gy);
                if n.is_finite() {
                    self.grad_accum[i] += n;
                    self.grad_count[i] += 1;
                }
            }
        }
    }

    fn retain(&mut self, keep: &[bool], max_sh_degree: usize) {
        for g in ParamGroup::ALL {
            let stride = g.stride(max_sh_degree);
            let m = self.moments_mut(g);
            retain_strided(&mut m.m, stride, keep);
            retain_strided(&mut m.v, stride, keep);
        }
        let mut k = keep.iter();
        self.grad_accum.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.grad_count.retain(|_| *k.next().unwrap());
    }

    fn push_zeros(&mut self, count: usize, max_sh_degree: usize) {
        for g in ParamGroup::ALL {
            let n = count * g.stride(max_sh_degree);
            let m = self.moments_mut(g);
            m.m.resize(m.m.len() + n, 0.0);
            m.v.resize(m.v.len() + n, 0.0);
        }
        self.grad_accum.resize(self.grad_accum.len() + count, 0.0);
        self.grad_count.resize(self.grad_count.len() + count, 0);
    }
}

fn group_slot(g: ParamGroup) -> usize {
    ParamGroup::ALL.iter().position(|x| *x == g).expect("group listed in ALL")
}

/// Outcome of one densification pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small and splits large high-gradient primitives, then prunes
/// transparent ones. `extent` is the scene radius used for the size test.
pub fn densify_and_prune<R: rand::Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    extent: f64,
    iteration: usize,
    rng: &mut R,
) -> Result<DensifyReport> {
    state.check_sync(cloud)?;
    let n = cloud.len();
    let max_deg = cloud.max_sh_degree;
    let size_limit = cfg.percent_dense * extent;
    let mut clone = Vec::new();
    let mut split = Vec::new();
    for i in 0..n {
        if state.grad_count[i] == 0 {
            continue;
        }
        let avg = state.grad_accum[i] / state.grad_count[i] as f64;
        if avg > cfg.grad_threshold {
            let ls = cloud.log_scale(i);
            let max_scale = math::exp(ls[0].max(ls[1]).max(ls[2]));
            if max_scale <= size_limit {
                clone.push(i);
            } else {
                split.push(i);
            }
        }
    }

    cloud.append_copies(&clone);
    state.push_zeros(clone.len(), max_deg);

    let mut children = Vec::with_capacity(split.len() * SPLIT_COUNT);
    for _ in 0..SPLIT_COUNT {
        children.extend_from_slice(&split);
    }
    let first_child = cloud.len();
    cloud.append_copies(&children);
    state.push_zeros(children.len(), max_deg);
    for (k, &parent) in children.iter().enumerate() {
        let c = first_child + k;
        let ls = cloud.log_scale(parent);
        let rot = {
            let q = cloud.rotation(parent);
            let qn = math::sqrt(q.iter().map(|v| v * v).sum::<f64>());
            math::quat_to_mat([q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn])
        };
        let mut z = [0.0; 3];
        for a in 0..3 {
            let n: f64 = StandardNormal.sample(rng);
            z[a] = n * math::exp(ls[a]);
        }
        let offset = math::mat_vec(&rot, z);
        for a in 0..3 {
            cloud.means[3 * c + a] += offset[a];
            cloud.log_scales[3 * c + a] = ls[a] - math::ln(SPLIT_SCALE_DIVISOR);
        }
    }

    let total = cloud.len();
    let mut keep = vec![true; total];
    for &i in &split {
        keep[i] = false;
    }
    let mut pruned = 0;
    for (i, k) in keep.iter_mut().enumerate() {
        if *k && math::sigmoid(cloud.opacity_logits[i]) < cfg.prune_opacity {
            *k = false;
            pruned += 1;
        }
    }
    if !keep.iter().any(|&k| k) {
        return Err(Error::EmptyCloud { iteration });
    }
    cloud.retain_mask(&keep);
    state.retain(&keep, max_deg);
    state.grad_accum.iter_mut().for_each(|v| *v = 0.0);
    state.grad_count.iter_mut().for_each(|v| *v = 0);
    Ok(DensifyReport {
        cloned: clone.len(),
        split: split.len(),
        pruned,
    })
}

/// Clamps both opacities down to 0.01 and clears their moments.
pub fn reset_opacity(cloud: &mut GaussianCloud, state: &mut OptimizerState) {
    let cap = math::logit(RESET_OPACITY);
    for g in [ParamGroup::OpacityLogits, ParamGroup::RefOpacityLogits] {
        for v in cloud.group_mut(g).iter_mut() {
            *v = v.min(cap);
        }
        let m = state.moments_mut(g);
        m.m.iter_mut().for_each(|x| *x = 0.0);
        m.v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Scene radius: 1.1 × the largest camera distance from the camera centroid.
pub fn camera_extent(cameras: &[&Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let mut c = [0.0; 3];
    let centers: Vec<_> = cameras.iter().map(|cam| cam.center()).collect();
    for p in &centers {
        c = math::add(c, *p);
    }
    c = math::scale(c, 1.0 / centers.len() as f64);
    let r = centers.iter().map(|p| math::norm(math::sub(*p, c))).fold(0.0, f64::max) * 1.1;
    // a single camera (or coincident ones) carries no scale information
    if r > 1e-6 {
        r
    } else {
        1.0
    }
}

/// A posed training image.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    pub image: Image,
}

/// Periodic training log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogRecord {
    pub iteration: usize,
    pub l_rgb: f64,
    pub l_init: f64,
    pub l_bi: f64,
    pub l_ref: f64,
    pub total: f64,
    pub gaussians: usize,
    pub train_psnr: f64,
}

/// What happened during one iteration.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub iteration: usize,
    pub view: usize,
    pub loss: LossBundle,
    pub densify: Option<DensifyReport>,
    pub gaussians: usize,
}

/// Everything needed to resume a run besides the cloud and the config.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainerSnapshot {
    pub iteration: usize,
    pub state: OptimizerState,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

/// Stateful training loop over a fixed set of views.
pub struct Trainer {
    pub cloud: GaussianCloud,
    pub state: OptimizerState,
    pub config: TrainConfig,
    pub views: Vec<TrainView>,
    pub log: Vec<LogRecord>,
    iteration: usize,
    extent: f64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(mut cloud: GaussianCloud, views: Vec<TrainView>, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(Error::InvalidConfig("training needs at least one view".into()));
        }
        if cloud.is_empty() {
            return Err(Error::EmptyCloud { iteration: 0 });
        }
        cloud.validate()?;
        for v in &views {
            v.camera.validate()?;
            if v.image.width != v.camera.width || v.image.height != v.camera.height || v.image.channels != 3 {
                return Err(Error::shape(
                    "training image vs camera",
                    alloc::format!("{}x{}x3", v.camera.width, v.camera.height),
                    alloc::format!("{}x{}x{}", v.image.width, v.image.height, v.image.channels),
                ));
            }
        }
        if config.reflection == ReflectionBranch::Frozen {
            cloud.beta_logits.iter_mut().for_each(|v| *v = FROZEN_BETA_LOGIT);
            cloud.sh_ref.iter_mut().for_each(|v| *v = 0.0);
        }
        let cams: Vec<&Camera> = views.iter().map(|v| &v.camera).collect();
        let extent = camera_extent(&cams);
        let state = OptimizerState::new(&cloud);
        Ok(Self {
            cloud,
            state,
            config,
            log: Vec::new(),
            iteration: 0,
            extent,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            views,
        })
    }

    /// Restores optimizer and sampling state saved by [`Trainer::snapshot`].
    pub fn resume(cloud: GaussianCloud, views: Vec<TrainView>, config: TrainConfig, snap: TrainerSnapshot) -> Result<Self> {
        let mut t = Self::new(cloud, views, config, 0)?;
        snap.state.check_sync(&t.cloud)?;
        if snap.order.iter().any(|&i| i >= t.views.len()) || snap.cursor > snap.order.len() {
            return Err(Error::InvalidConfig("snapshot view order does not match the dataset".into()));
        }
        t.state = snap.state;
        t.iteration = snap.iteration;
        t.order = snap.order;
        t.cursor = snap.cursor;
        t.rng = ChaCha8Rng::from_seed(snap.rng_seed);
        t.rng.set_word_pos(snap.rng_word_pos);
        Ok(t)
    }

    pub fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot {
            iteration: self.iteration,
            state: self.state.clone(),
            order: self.order.clone(),
            cursor: self.cursor,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.total_iters
    }

    fn next_view(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..self.views.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let v = self.order[self.cursor];
        self.cursor += 1;
        v
    }

    /// Runs one iteration: render, loss, backward, Adam, then scheduled densification.
    pub fn step(&mut self) -> Result<StepReport> {
        let iteration = self.iteration + 1;
        let cfg = &self.config;
        if iteration % cfg.sh_degree_interval == 0 && self.cloud.active_sh_degree < self.cloud.max_sh_degree {
            self.cloud.active_sh_degree += 1;
        }
        let vi = self.next_view();
        let cfg = &self.config;
        let view = &self.views[vi];
        let settings = cfg.render_settings();
        let out = raster::render(&self.cloud, &view.camera, &settings)?;
        let (bundle, lg) = loss::overall_loss_grad(&view.image, &out, &cfg.loss, iteration)?;
        if let Some((term, value)) = bundle.non_finite_term() {
            return Err(Error::NonFiniteLoss { iteration, term, value });
        }
        let grads = raster::backward(
            &self.cloud,
            &out,
            &RenderGrads {
                composed: Some(&lg.composed),
                transmitted: Some(&lg.transmitted),
                reflected: None,
                reflection_map: Some(&lg.reflection_map),
                depth: Some(&lg.depth),
            },
        )?;

        let densifying = cfg.densify && iteration <= cfg.densify_end;
        if densifying {
            self.state.accumulate(&grads);
        }

        for g in ParamGroup::ALL {
            if cfg.frozen(g) {
                continue;
            }
            let lr = match g {
                ParamGroup::Means => cfg.means_lr_at(iteration) * cfg.spatial_lr_scale.unwrap_or(self.extent),
                _ => cfg.learning_rate(g),
            };
            let slot = group_slot(g);
            let skipped = adam_step(self.cloud.group_mut(g), grads.group(g), &mut self.state.moments[slot], lr)?;
            self.state.skipped_updates += skipped as u64;
        }

        let mut densify = None;
        if densifying && iteration >= cfg.densify_start && iteration % cfg.densify_interval == 0 {
            densify = Some(densify_and_prune(&mut self.cloud, &mut self.state, cfg, self.extent, iteration, &mut self.rng)?);
        }
        if densifying && iteration % cfg.opacity_reset_interval == 0 {
            reset_opacity(&mut self.cloud, &mut self.state);
        }

        self.iteration = iteration;
        let report = StepReport {
            iteration,
            view: vi,
            loss: bundle,
            densify,
            gaussians: self.cloud.len(),
        };
        if iteration % self.config.log_interval.max(1) == 0 || iteration == self.config.total_iters {
            let psnr = metrics::psnr(&out.composed.clamped(0.0, 1.0), &self.views[vi].image)?;
            self.log.push(LogRecord {
                iteration,
                l_rgb: bundle.l_rgb,
                l_init: bundle.l_init,
                l_bi: bundle.l_bi,
                l_ref: bundle.l_ref,
                total: bundle.total,
                gaussians: self.cloud.len(),
                train_psnr: psnr,
            });
        }
        Ok(report)
    }

    /// Runs the remaining iterations, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &StepReport) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let r = self.step()?;
            on_step(self, &r)?;
        }
        Ok(())
    }
}

/// Trains `cloud` on `views` and returns the result with its log.
pub fn train(views: Vec<TrainView>, cloud: GaussianCloud, config: TrainConfig, seed: u64) -> Result<(GaussianCloud, Vec<LogRecord>)> {
    let mut t = Trainer::new(cloud, views, config, seed)?;
    t.run(|_, _| Ok(()))?;
    Ok((t.cloud, t.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::init_from_points;

    #[test]
    fn adam_single_step() {
        let mut p = [0.0];
        let mut m = Moments::zeros(1);
        adam_step(&mut p, &[1.0], &mut m, 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = [0.3, -2.0];
        let mut m = Moments::zeros(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut m, 0.1).unwrap();
        }
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut p = [0.0];
        let mut m = Moments::zeros(1);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p[0];
            adam_step(&mut p, &[-3.0], &mut m, 0.01).unwrap();
            last = p[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_skips_non_finite() {
        let mut p = [1.0, 1.0];
        let mut m = Moments::zeros(2);
        assert_eq!(adam_step(&mut p, &[f64::NAN, 1.0], &mut m, 0.1).unwrap(), 1);
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1.0);
    }

    fn line_cloud(n: usize) -> GaussianCloud {
        let pts: Vec<_> = (0..n).map(|i| [i as f64 * 0.1, 0.0, 3.0]).collect();
        init_from_points(&pts, &vec![[0.5; 3]; n], 3).unwrap()
    }

    #[test]
    fn densify_without_gradients_only_prunes() {
        let mut cloud = line_cloud(4);
        cloud.opacity_logits[2] = math::logit(0.001);
        let mut state = OptimizerState::new(&cloud);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = densify_and_prune(&mut cloud, &mut state, &cfg, 1.0, 500, &mut rng).unwrap();
        assert_eq!(r, DensifyReport { cloned: 0, split: 0, pruned: 1 });
        assert_eq!(cloud.len(), 3);
        state.check_sync(&cloud).unwrap();
    }

    #[test]
    fn split_and_clone_copy_every_group() {
        let mut cloud = line_cloud(3);
        cloud.beta_logits = vec![0.7, -1.3, 2.1];
        cloud.log_scales[0..3].copy_from_slice(&[-6.0; 3]);
        let mut state = OptimizerState::new(&cloud);
        state.moments[0].m.iter_mut().for_each(|v| *v = 1.0);
        state.grad_accum = vec![1.0, 1.0, 0.0];
        state.grad_count = vec![1, 1, 1];
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = densify_and_prune(&mut cloud, &mut state, &cfg, 1.0, 500, &mut rng).unwrap();
        assert_eq!((r.cloned, r.split), (1, 1));
        // 0 (kept) + 2 (kept) + clone of 0 + two children of 1
        assert_eq!(cloud.len(), 5);
        assert_eq!(cloud.beta_logits, vec![0.7, 2.1, 0.7, -1.3, -1.3]);
        let parent_ls = math::ln(0.1);
        assert!((cloud.log_scale(3)[0] - (parent_ls - math::ln(1.6))).abs() < 1e-12);
        state.check_sync(&cloud).unwrap();
        // new primitives start with zero moments
        assert!(state.moments[0].m[6..].iter().all(|&v| v == 0.0));
        assert!(state.moments[0].m[..6].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pruning_everything_is_an_error() {
        let mut cloud = line_cloud(2);
        cloud.opacity_logits = vec![-20.0, -20.0];
        let mut state = OptimizerState::new(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = densify_and_prune(&mut cloud, &mut state, &TrainConfig::default(), 1.0, 700, &mut rng);
        assert_eq!(e, Err(Error::EmptyCloud { iteration: 700 }));
    }

    #[test]
    fn opacity_reset_caps_both_opacities() {
        let mut cloud = line_cloud(2);
        cloud.opacity_logits = vec![3.0, -8.0];
        cloud.ref_opacity_logits = vec![1.0, -9.0];
        let mut state = OptimizerState::new(&cloud);
        reset_opacity(&mut cloud, &mut state);
        let cap = math::logit(0.01);
        assert_eq!(cloud.opacity_logits, vec![cap, -8.0]);
        assert_eq!(cloud.ref_opacity_logits, vec![cap, -9.0]);
    }

    #[test]
    fn schedule_scaling_keeps_invariants() {
        let c = TrainConfig::default().with_total_iters(500);
        c.validate().unwrap();
        assert_eq!((c.densify_start, c.densify_end, c.opacity_reset_interval), (8, 250, 50));
        let c = TrainConfig::default().with_total_iters(40_000);
        assert_eq!((c.densify_start, c.densify_end), (500, 15_000));
        TrainConfig::default().with_total_iters(0).validate().unwrap();
    }

    #[test]
    fn mean_lr_decays_exponentially() {
        let c = TrainConfig::default();
        assert!((c.means_lr_at(0) - 1.6e-4).abs() < 1e-18);
        assert!((c.means_lr_at(30_000) - 1.6e-6).abs() < 1e-18);
        assert!((c.means_lr_at(15_000) - 1.6e-5).abs() < 1e-15);
    }
}
