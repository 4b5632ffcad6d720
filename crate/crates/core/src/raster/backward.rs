use alloc::vec;
use alloc::vec::Vec;

use super::{gather_tile, map_tiles, tile_rect, AccumulationMode, Branches, PackedSplat, RenderOutputs, DEPTH_EPSILON, FOOTPRINT_CUTOFF, MAX_ALPHA};
use crate::camera;
use crate::error::{Error, Result};
use crate::gaussian::{covariance_from_parts, GaussianCloud, ParamGroup};
use crate::image::Image;
use crate::math::{self, Mat3, Vec3};
use crate::sh;

/// Upstream gradients of the rendered fields. Missing fields count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderGrads<'a> {
    pub composed: Option<&'a Image>,
    pub transmitted: Option<&'a Image>,
    pub reflected: Option<&'a Image>,
    pub reflection_map: Option<&'a Image>,
    pub depth: Option<&'a Image>,
}

/// Gradients laid out exactly like the parameter arrays of a [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub means: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh_trans: Vec<f64>,
    pub sh_ref: Vec<f64>,
    pub ref_opacity_logits: Vec<f64>,
    pub beta_logits: Vec<f64>,
    /// Gradient of the projected mean in normalized device coordinates, per primitive.
    pub mean2d_ndc: Vec<[f64; 2]>,
    /// Whether the primitive was projected (not culled) in this view.
    pub visible: Vec<bool>,
}

impl ParamGradients {
    pub fn zeros(count: usize, max_sh_degree: usize) -> Self {
        let sh = sh::coeff_count(max_sh_degree) * 3;
        Self {
            means: vec![0.0; 3 * count],
            rotations: vec![0.0; 4 * count],
            log_scales: vec![0.0; 3 * count],
            opacity_logits: vec![0.0; count],
            sh_trans: vec![0.0; sh * count],
            sh_ref: vec![0.0; sh * count],
            ref_opacity_logits: vec![0.0; count],
            beta_logits: vec![0.0; count],
            mean2d_ndc: vec![[0.0; 2]; count],
            visible: vec![false; count],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
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

    /// Accumulates another gradient of the same shape (e.g. from a second camera).
    pub fn add_assign(&mut self, other: &ParamGradients) -> Result<()> {
        for g in ParamGroup::ALL {
            if self.group(g).len() != other.group(g).len() {
                return Err(Error::shape(g.name(), self.group(g).len(), other.group(g).len()));
            }
            for (a, b) in self.group_mut(g).iter_mut().zip(other.group(g)) {
                *a += b;
            }
        }
        for (a, b) in self.mean2d_ndc.iter_mut().zip(&other.mean2d_ndc) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in ParamGroup::ALL {
            for v in self.group_mut(g).iter_mut() {
                *v *= s;
            }
        }
        for v in &mut self.mean2d_ndc {
            v[0] *= s;
            v[1] *= s;
        }
    }
}

/// Screen-space gradient of one binned splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    color: Vec3,
    color_ref: Vec3,
    opacity: f64,
    ref_opacity: f64,
    beta: f64,
    depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
            self.color_ref[k] += o.color_ref[k];
        }
        self.opacity += o.opacity;
        self.ref_opacity += o.ref_opacity;
        self.beta += o.beta;
        self.depth += o.depth;
    }
}

/// Forward state of one contribution, recorded during the per-pixel replay.
#[derive(Debug, Clone, Copy)]
struct Replay {
    slot: usize,
    g: f64,
    dx: f64,
    dy: f64,
    alpha: f64,
    alpha_clamped: bool,
    ref_alpha: f64,
    ref_clamped: bool,
    t: f64,
    t_ref: f64,
    t_beta: f64,
}

struct PixelUpstream {
    comp: Vec3,
    trans: Vec3,
    refl: Vec3,
    w: f64,
    depth: f64,
}

fn pixel_upstream(grads: &RenderGrads, p: usize) -> PixelUpstream {
    let rgb = |img: Option<&Image>| img.map_or([0.0; 3], |i| [i.data[3 * p], i.data[3 * p + 1], i.data[3 * p + 2]]);
    PixelUpstream {
        comp: rgb(grads.composed),
        trans: rgb(grads.transmitted),
        refl: rgb(grads.reflected),
        w: grads.reflection_map.map_or(0.0, |i| i.data[p]),
        depth: grads.depth.map_or(0.0, |i| i.data[p]),
    }
}

fn check_grad_shape(img: Option<&Image>, width: usize, height: usize, channels: usize, what: &'static str) -> Result<()> {
    if let Some(i) = img {
        if i.width != width || i.height != height || i.channels != channels {
            return Err(Error::shape(
                what,
                alloc::format!("{width}x{height}x{channels}"),
                alloc::format!("{}x{}x{}", i.width, i.height, i.channels),
            ));
        }
    }
    Ok(())
}

fn backward_tile(out: &RenderOutputs, grads: &RenderGrads, t: usize) -> Vec<SplatGrad> {
    let rec = &out.records;
    let settings = &rec.settings;
    let dual = settings.branches == Branches::Dual;
    let paper = settings.mode == AccumulationMode::Paper;
    let (width, height) = (out.width(), out.height());
    let list = rec.bins.tile_by_id(t);
    let packed: Vec<PackedSplat> = gather_tile(&rec.splats, list);
    let mut acc = vec![SplatGrad::default(); list.len()];
    let mut replay: Vec<Replay> = Vec::with_capacity(list.len());
    let (x0, y0, x1, y1) = tile_rect(&rec.bins, t, width, height);

    for y in y0..y1 {
        let py = y as f64 + 0.5;
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let p = y * width + x;
            let up = pixel_upstream(grads, p);
            let count = rec.traversed[p] as usize;

            replay.clear();
            let (mut t_a, mut t_r, mut t_b) = (1.0, 1.0, 1.0);
            for (slot, s) in packed.iter().enumerate().take(count) {
                let (power, dx, dy) = s.power(px, py);
                if power > FOOTPRINT_CUTOFF {
                    continue;
                }
                let g = math::exp(-power);
                let raw_a = s.opacity * g;
                let raw_r = s.ref_opacity * g;
                let alpha = raw_a.min(MAX_ALPHA);
                let ref_alpha = raw_r.min(MAX_ALPHA);
                replay.push(Replay {
                    slot,
                    g,
                    dx,
                    dy,
                    alpha,
                    alpha_clamped: raw_a > MAX_ALPHA,
                    ref_alpha,
                    ref_clamped: raw_r > MAX_ALPHA,
                    t: t_a,
                    t_ref: t_r,
                    t_beta: t_b,
                });
                t_a *= 1.0 - alpha;
                if dual {
                    t_r *= 1.0 - ref_alpha;
                    if paper {
                        t_b *= 1.0 - s.beta;
                    }
                }
            }
            if replay.is_empty() {
                continue;
            }

            let w = out.reflection_map.data[p];
            let r = [out.reflected.data[3 * p], out.reflected.data[3 * p + 1], out.reflected.data[3 * p + 2]];
            let a_sum = out.alpha_accum.data[p];
            let n_sum = out.depth.data[p] * a_sum.max(DEPTH_EPSILON);

            let g_c = math::add(up.comp, up.trans);
            let g_r = math::add(math::scale(up.comp, w), up.refl);
            let g_w = up.w + math::dot(up.comp, r);
            let (g_n, g_a) = if a_sum > DEPTH_EPSILON {
                (up.depth / a_sum, -up.depth * n_sum / (a_sum * a_sum))
            } else {
                (up.depth / DEPTH_EPSILON, 0.0)
            };

            let (mut gt_next, mut gr_next, mut gp_next) = (0.0, 0.0, 0.0);
            for k in replay.iter().rev() {
                let s = &packed[k.slot];
                let a = &mut acc[k.slot];
                let wt = k.alpha * k.t;
                let mut s_i = math::dot(g_c, s.color) + g_n * s.depth + g_a;
                if dual && !paper {
                    s_i += g_w * s.beta;
                }
                let mut d_alpha = k.t * (s_i - gt_next);
                gt_next = s_i * k.alpha + gt_next * (1.0 - k.alpha);
                a.color = math::add(a.color, math::scale(g_c, wt));
                a.depth += g_n * wt;

                let mut d_g = 0.0;
                if dual {
                    let wr = k.ref_alpha * k.t_ref;
                    let sr = math::dot(g_r, s.color_ref);
                    let d_ref_alpha = k.t_ref * (sr - gr_next);
                    gr_next = sr * k.ref_alpha + gr_next * (1.0 - k.ref_alpha);
                    a.color_ref = math::add(a.color_ref, math::scale(g_r, wr));
                    if !k.ref_clamped {
                        a.ref_opacity += d_ref_alpha * k.g;
                        d_g += d_ref_alpha * s.ref_opacity;
                    }
                    if paper {
                        d_alpha += g_w * s.beta * k.t_beta;
                        a.beta += g_w * k.alpha * k.t_beta - k.t_beta * gp_next;
                        gp_next = g_w * s.beta * k.alpha + gp_next * (1.0 - s.beta);
                    } else {
                        a.beta += g_w * wt;
                    }
                }
                if !k.alpha_clamped {
                    a.opacity += d_alpha * k.g;
                    d_g += d_alpha * s.opacity;
                }
                if d_g != 0.0 {
                    let d_power = -k.g * d_g;
                    let [ca, cb, cc] = s.conic;
                    a.mean2d[0] -= d_power * (ca * k.dx + cb * k.dy);
                    a.mean2d[1] -= d_power * (cb * k.dx + cc * k.dy);
                    a.conic[0] += d_power * 0.5 * k.dx * k.dx;
                    a.conic[1] += d_power * k.dx * k.dy;
                    a.conic[2] += d_power * 0.5 * k.dy * k.dy;
                }
            }
        }
    }
    acc
}

/// Exact adjoint of [`super::render`]: upstream image gradients to raw parameter gradients.
///
/// `cloud` must be the cloud that produced `outputs`. Tiles are reduced in a
/// fixed order, so the result does not depend on thread scheduling.
pub fn backward(cloud: &GaussianCloud, outputs: &RenderOutputs, grads: &RenderGrads) -> Result<ParamGradients> {
    let rec = &outputs.records;
    let (width, height) = (outputs.width(), outputs.height());
    if cloud.len() != rec.gaussian_count {
        return Err(Error::shape("cloud size vs render records", rec.gaussian_count, cloud.len()));
    }
    check_grad_shape(grads.composed, width, height, 3, "composed gradient")?;
    check_grad_shape(grads.transmitted, width, height, 3, "transmitted gradient")?;
    check_grad_shape(grads.reflected, width, height, 3, "reflected gradient")?;
    check_grad_shape(grads.reflection_map, width, height, 1, "reflection map gradient")?;
    check_grad_shape(grads.depth, width, height, 1, "depth gradient")?;

    let tile_grads = map_tiles(rec.bins.tile_count(), |t| backward_tile(outputs, grads, t));
    let mut splat_grads = vec![SplatGrad::default(); rec.splats.len()];
    for (t, tg) in tile_grads.iter().enumerate() {
        for (g, &i) in tg.iter().zip(rec.bins.tile_by_id(t)) {
            splat_grads[i as usize].add(g);
        }
    }

    let mut out = ParamGradients::zeros(cloud.len(), cloud.max_sh_degree);
    let degree = rec.active_sh_degree;
    let stride = cloud.sh_stride();
    let cam = &rec.camera;
    let dual = rec.settings.branches == Branches::Dual;
    for (s, sg) in rec.splats.iter().zip(&splat_grads) {
        let i = s.gaussian_index;
        out.visible[i] = true;
        out.mean2d_ndc[i] = [sg.mean2d[0] * width as f64 * 0.5, sg.mean2d[1] * height as f64 * 0.5];

        // appearance
        let basis = sh::basis(degree, s.view_dir);
        let basis_grad = sh::basis_gradient(degree, s.view_dir);
        let mut d_dir = sh::color_backward(
            cloud.sh_trans_of(i),
            &basis,
            &basis_grad,
            degree,
            s.raw_color,
            sg.color,
            &mut out.sh_trans[i * stride..(i + 1) * stride],
        );
        if dual {
            d_dir = math::add(
                d_dir,
                sh::color_backward(
                    cloud.sh_ref_of(i),
                    &basis,
                    &basis_grad,
                    degree,
                    s.raw_color_ref,
                    sg.color_ref,
                    &mut out.sh_ref[i * stride..(i + 1) * stride],
                ),
            );
        }
        out.opacity_logits[i] = sg.opacity * s.opacity * (1.0 - s.opacity);
        out.ref_opacity_logits[i] = sg.ref_opacity * s.ref_opacity * (1.0 - s.ref_opacity);
        out.beta_logits[i] = sg.beta * s.beta * (1.0 - s.beta);

        // geometry
        let d_cov2d = camera::conic_backward(s.cov2d, sg.conic);
        let q_raw = cloud.rotation(i);
        let qn = math::sqrt(q_raw.iter().map(|v| v * v).sum::<f64>());
        let q = [q_raw[0] / qn, q_raw[1] / qn, q_raw[2] / qn, q_raw[3] / qn];
        let rot = math::quat_to_mat(q);
        let ls = cloud.log_scale(i);
        let sc = [math::exp(ls[0]), math::exp(ls[1]), math::exp(ls[2])];
        let cov3d = covariance_from_parts(&rot, sc);
        let mean = cloud.mean(i);
        let (mut d_mean, d_cov) = camera::project_backward(cam, mean, &cov3d, sg.mean2d, d_cov2d, sg.depth);

        if s.view_dist > 0.0 {
            let dir = s.view_dir;
            let proj = math::dot(dir, d_dir);
            let d_v = math::scale(math::sub(d_dir, math::scale(dir, proj)), 1.0 / s.view_dist);
            d_mean = math::add(d_mean, d_v);
        }
        out.means[3 * i..3 * i + 3].copy_from_slice(&d_mean);

        let (d_q, d_ls) = covariance_backward(&rot, q, qn, sc, &d_cov);
        out.rotations[4 * i..4 * i + 4].copy_from_slice(&d_q);
        out.log_scales[3 * i..3 * i + 3].copy_from_slice(&d_ls);
    }
    Ok(out)
}

/// Adjoint of `Σ = (R S)(R S)ᵀ` back to the stored quaternion and log-scales.
fn covariance_backward(rot: &Mat3, q_unit: [f64; 4], q_norm: f64, scale: Vec3, d_cov: &Mat3) -> ([f64; 4], Vec3) {
    // M = R S, dL/dM = (G + Gᵀ) M
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = rot[r][c] * scale[c];
        }
    }
    let mut d_m = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut v = 0.0;
            for k in 0..3 {
                v += (d_cov[r][k] + d_cov[k][r]) * m[k][c];
            }
            d_m[r][c] = v;
        }
    }
    let mut d_rot = [[0.0; 3]; 3];
    let mut d_ls = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            d_rot[r][c] = d_m[r][c] * scale[c];
            d_ls[c] += d_m[r][c] * rot[r][c] * scale[c];
        }
    }
    let d_qu = math::quat_to_mat_backward(q_unit, &d_rot);
    let proj: f64 = (0..4).map(|k| q_unit[k] * d_qu[k]).sum();
    let mut d_q = [0.0; 4];
    for k in 0..4 {
        d_q[k] = (d_qu[k] - q_unit[k] * proj) / q_norm;
    }
    (d_q, d_ls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_backward_matches_finite_differences() {
        let q_raw = [0.8, -0.3, 0.4, 0.25];
        let ls = [-0.5, 0.2, -1.0];
        let g: Mat3 = [[0.3, 0.1, -0.2], [0.1, -0.5, 0.7], [-0.2, 0.7, 0.9]];
        let f = |q: [f64; 4], ls: Vec3| {
            let c = crate::gaussian::build_covariance(q, ls).unwrap();
            (0..9).map(|k| c[k / 3][k % 3] * g[k / 3][k % 3]).sum::<f64>()
        };
        let qn = math::sqrt(q_raw.iter().map(|v| v * v).sum::<f64>());
        let q = [q_raw[0] / qn, q_raw[1] / qn, q_raw[2] / qn, q_raw[3] / qn];
        let sc = [math::exp(ls[0]), math::exp(ls[1]), math::exp(ls[2])];
        let (dq, dls) = covariance_backward(&math::quat_to_mat(q), q, qn, sc, &g);
        let h = 1e-6;
        for k in 0..4 {
            let (mut p, mut m) = (q_raw, q_raw);
            p[k] += h;
            m[k] -= h;
            let fd = (f(p, ls) - f(m, ls)) / (2.0 * h);
            assert!((fd - dq[k]).abs() < 1e-8, "q{k}: {fd} vs {}", dq[k]);
        }
        for k in 0..3 {
            let (mut p, mut m) = (ls, ls);
            p[k] += h;
            m[k] -= h;
            let fd = (f(q_raw, p) - f(q_raw, m)) / (2.0 * h);
            assert!((fd - dls[k]).abs() < 1e-8, "ls{k}: {fd} vs {}", dls[k]);
        }
    }
}
