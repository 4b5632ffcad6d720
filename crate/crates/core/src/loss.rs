//! Training objectives and their gradients with respect to the rendered images.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;
use crate::raster::RenderOutputs;

/// Pixels with less accumulated alpha are treated as background by the depth prior.
pub const FOREGROUND_ALPHA: f64 = 1e-4;

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Neighbor offsets covering each unordered 8-neighborhood pair exactly once.
const PAIR_OFFSETS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (-1, 1)];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossConfig {
    /// Weight of L1 inside the photometric term; D-SSIM gets `1 - lambda_balance`.
    pub lambda_balance: f64,
    pub lambda_init: f64,
    pub lambda_bi: f64,
    pub lambda_ref: f64,
    /// Color-difference scale of the bilateral weights.
    pub gamma: f64,
    /// The init-alignment term is active for iterations strictly below this.
    pub init_cutoff_iter: usize,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_balance: 0.8,
            lambda_init: 0.1,
            lambda_bi: 1e-4,
            lambda_ref: 1e-4,
            gamma: 0.1,
            init_cutoff_iter: 3000,
            ssim_window: 11,
            ssim_sigma: 1.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(0.0..=1.0).contains(&self.lambda_balance) {
            return bad("lambda_balance must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        for (name, v) in [("lambda_init", self.lambda_init), ("lambda_bi", self.lambda_bi), ("lambda_ref", self.lambda_ref)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return bad("ssim_window must be an odd size >= 3");
        }
        if !(self.ssim_sigma > 0.0) {
            return bad("ssim_sigma must be positive");
        }
        Ok(())
    }
}

/// The weights actually applied in one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_balance: f64,
    /// Zero once the init-alignment cutoff has passed.
    pub lambda_init: f64,
    pub lambda_bi: f64,
    pub lambda_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub l_rgb: f64,
    pub l_init: f64,
    pub l_bi: f64,
    pub l_ref: f64,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBundle {
    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<(&'static str, f64)> {
        [("l_rgb", self.l_rgb), ("l_init", self.l_init), ("l_bi", self.l_bi), ("l_ref", self.l_ref), ("total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
    }
}

/// Gradients of the total loss with respect to the rendered fields.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub composed: Image,
    pub transmitted: Image,
    pub depth: Image,
    pub reflection_map: Image,
}

pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "l1 inputs")?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| math::abs(x - y)).sum::<f64>() / a.data.len() as f64)
}

/// L1 value and its gradient with respect to `a`.
pub fn l1_loss_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let v = l1_loss(a, b)?;
    let inv = if a.data.is_empty() { 0.0 } else { 1.0 / a.data.len() as f64 };
    let mut g = Image::new(a.width, a.height, a.channels);
    for ((d, x), y) in g.data.iter_mut().zip(&a.data).zip(&b.data) {
        *d = math::sign(x - y) * inv;
    }
    Ok((v, g))
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            math::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Valid-mode separable filtering of a `w x h` plane; output is `(w-k+1) x (h-k+1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                s += kv * row[x + t];
            }
            tmp[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (t, kv) in k.iter().enumerate() {
            let r = &tmp[(y + t) * ow..(y + t + 1) * ow];
            let o = &mut out[y * ow..(y + 1) * ow];
            for x in 0..ow {
                o[x] += kv * r[x];
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-size map back onto the full plane.
fn filter_valid_adjoint(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        let s = &src[y * ow..(y + 1) * ow];
        for (t, kv) in k.iter().enumerate() {
            let r = &mut tmp[(y + t) * ow..(y + t + 1) * ow];
            for x in 0..ow {
                r[x] += kv * s[x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let r = &tmp[y * ow..(y + 1) * ow];
        let o = &mut out[y * w..(y + 1) * w];
        for x in 0..ow {
            for (t, kv) in k.iter().enumerate() {
                o[x + t] += kv * r[x];
            }
        }
    }
    out
}

fn channel_plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

/// Mean SSIM over all valid windows and channels, optionally with its gradient with respect to `a`.
fn ssim_core(a: &Image, b: &Image, window: usize, sigma: f64, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.check_same_shape(b, "ssim inputs")?;
    if a.width < window || a.height < window {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            window,
        });
    }
    let k = gaussian_kernel(window, sigma);
    let (w, h) = (a.width, a.height);
    let valid = ((w + 1 - window) * (h + 1 - window)) as f64;
    let norm = 1.0 / (valid * a.channels as f64);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, a.channels));
    for c in 0..a.channels {
        let x = channel_plane(a, c);
        let y = channel_plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, w, h, &k);
        let mu_y = filter_valid(&y, w, h, &k);
        let e_xx = filter_valid(&xx, w, h, &k);
        let e_yy = filter_valid(&yy, w, h, &k);
        let e_xy = filter_valid(&xy, w, h, &k);
        let n = mu_x.len();
        let (mut d_mu, mut d_exx, mut d_exy) = if want_grad {
            (vec![0.0; n], vec![0.0; n], vec![0.0; n])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * (e_xy[i] - mx * my) + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = (e_xx[i] - mx * mx) + (e_yy[i] - my * my) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let bb = b1 * b2;
                d_mu[i] = norm * (2.0 * my * (a2 - a1) / bb - 2.0 * mx * s / b1 + 2.0 * mx * s / b2);
                d_exx[i] = norm * (-s / b2);
                d_exy[i] = norm * (2.0 * a1 / bb);
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = filter_valid_adjoint(&d_mu, w, h, &k);
            let t_xx = filter_valid_adjoint(&d_exx, w, h, &k);
            let t_xy = filter_valid_adjoint(&d_exy, w, h, &k);
            for p in 0..w * h {
                g.data[p * a.channels + c] = t_mu[p] + 2.0 * x[p] * t_xx[p] + y[p] * t_xy[p];
            }
        }
    }
    Ok((total * norm, grad))
}

/// Single-scale SSIM with a Gaussian window, averaged over valid windows and channels.
pub fn ssim(a: &Image, b: &Image, window: usize, sigma: f64) -> Result<f64> {
    Ok(ssim_core(a, b, window, sigma, false)?.0)
}

/// `(1 - SSIM) / 2` with the default 11-tap, σ = 1.5 window.
pub fn dssim_loss(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b, 11, 1.5)?) * 0.5)
}

/// D-SSIM value and its gradient with respect to `a`.
pub fn dssim_loss_grad(a: &Image, b: &Image, window: usize, sigma: f64) -> Result<(f64, Image)> {
    let (s, g) = ssim_core(a, b, window, sigma, true)?;
    let mut g = g.expect("gradient requested");
    for v in &mut g.data {
        *v *= -0.5;
    }
    Ok(((1.0 - s) * 0.5, g))
}

/// `λ·L1 + (1 - λ)·D-SSIM` between a ground truth and a render.
pub fn photometric_loss(gt: &Image, composed: &Image, lambda: f64) -> Result<f64> {
    Ok(photometric_loss_grad(gt, composed, lambda, 11, 1.5)?.0)
}

/// Photometric value and gradient with respect to `composed`.
pub fn photometric_loss_grad(gt: &Image, composed: &Image, lambda: f64, window: usize, sigma: f64) -> Result<(f64, Image)> {
    let (l1, mut g) = l1_loss_grad(composed, gt)?;
    for v in &mut g.data {
        *v *= lambda;
    }
    let mut value = lambda * l1;
    if lambda < 1.0 {
        let (d, gd) = dssim_loss_grad(composed, gt, window, sigma)?;
        value += (1.0 - lambda) * d;
        for (v, dv) in g.data.iter_mut().zip(&gd.data) {
            *v += (1.0 - lambda) * dv;
        }
    }
    Ok((value, g))
}

/// L1 between the ground truth and the transmitted image.
pub fn init_alignment_loss(gt: &Image, transmitted: &Image) -> Result<f64> {
    l1_loss(transmitted, gt)
}

/// Edge-aware depth smoothness over the 8-neighborhood.
///
/// Returns the value and gradients with respect to depth and color. Pairs
/// touching a background pixel (`alpha < 1e-4`) are skipped; the sum is
/// normalized by the number of remaining pairs.
pub fn bilateral_smoothness_grad(depth: &Image, color: &Image, gamma: f64, alpha: &Image) -> Result<(f64, Image, Image)> {
    let (w, h) = (depth.width, depth.height);
    if depth.channels != 1 || alpha.channels != 1 || !depth.same_shape(alpha) {
        return Err(Error::shape("depth/alpha maps", alloc::format!("{w}x{h}x1"), alloc::format!("{}x{}x{}", alpha.width, alpha.height, alpha.channels)));
    }
    if color.width != w || color.height != h {
        return Err(Error::shape("bilateral color", alloc::format!("{w}x{h}"), alloc::format!("{}x{}", color.width, color.height)));
    }
    let nc = color.channels;
    let mut d_depth = Image::new(w, h, 1);
    let mut d_color = Image::new(w, h, nc);
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for_each_pair(w, h, |i, j| {
        if alpha.data[i] < FOREGROUND_ALPHA || alpha.data[j] < FOREGROUND_ALPHA {
            return;
        }
        pairs += 1;
        let dd = depth.data[i] - depth.data[j];
        let mut cd = 0.0;
        for c in 0..nc {
            cd += math::abs(color.data[i * nc + c] - color.data[j * nc + c]);
        }
        let f = math::exp(-cd / gamma);
        sum += f * math::abs(dd);
    });
    if pairs == 0 {
        return Ok((0.0, d_depth, d_color));
    }
    let inv = 1.0 / pairs as f64;
    for_each_pair(w, h, |i, j| {
        if alpha.data[i] < FOREGROUND_ALPHA || alpha.data[j] < FOREGROUND_ALPHA {
            return;
        }
        let dd = depth.data[i] - depth.data[j];
        let mut cd = 0.0;
        for c in 0..nc {
            cd += math::abs(color.data[i * nc + c] - color.data[j * nc + c]);
        }
        let f = math::exp(-cd / gamma);
        let gd = f * math::sign(dd) * inv;
        d_depth.data[i] += gd;
        d_depth.data[j] -= gd;
        let gc = -f * math::abs(dd) * inv / gamma;
        for c in 0..nc {
            let s = math::sign(color.data[i * nc + c] - color.data[j * nc + c]) * gc;
            d_color.data[i * nc + c] += s;
            d_color.data[j * nc + c] -= s;
        }
    });
    Ok((sum * inv, d_depth, d_color))
}

pub fn bilateral_smoothness(depth: &Image, color: &Image, gamma: f64, alpha: &Image) -> Result<f64> {
    Ok(bilateral_smoothness_grad(depth, color, gamma, alpha)?.0)
}

/// Mean absolute difference of the reflection map over all 8-neighborhood pairs, with gradient.
pub fn reflection_map_smoothness_grad(map: &Image) -> Result<(f64, Image)> {
    if map.channels != 1 {
        return Err(Error::shape("reflection map channels", 1, map.channels));
    }
    let (w, h) = (map.width, map.height);
    let mut g = Image::new(w, h, 1);
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for_each_pair(w, h, |i, j| {
        sum += math::abs(map.data[i] - map.data[j]);
        pairs += 1;
    });
    if pairs == 0 {
        return Ok((0.0, g));
    }
    let inv = 1.0 / pairs as f64;
    for_each_pair(w, h, |i, j| {
        let s = math::sign(map.data[i] - map.data[j]) * inv;
        g.data[i] += s;
        g.data[j] -= s;
    });
    Ok((sum * inv, g))
}

pub fn reflection_map_smoothness(map: &Image) -> Result<f64> {
    Ok(reflection_map_smoothness_grad(map)?.0)
}

/// Calls `f(i, j)` once for every unordered in-bounds 8-neighborhood pair of pixel indices.
fn for_each_pair(w: usize, h: usize, mut f: impl FnMut(usize, usize)) {
    for y in 0..h {
        for x in 0..w {
            for &(ox, oy) in &PAIR_OFFSETS {
                let nx = x as isize + ox;
                let ny = y as isize + oy;
                if nx < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                f(y * w + x, ny as usize * w + nx as usize);
            }
        }
    }
}

/// Full weighted objective for one view at iteration `iter`, with image gradients.
pub fn overall_loss_grad(gt: &Image, out: &RenderOutputs, cfg: &LossConfig, iter: usize) -> Result<(LossBundle, LossGradients)> {
    gt.check_same_shape(&out.composed, "ground truth vs render")?;
    let (l_rgb, mut g_comp) = photometric_loss_grad(gt, &out.composed, cfg.lambda_balance, cfg.ssim_window, cfg.ssim_sigma)?;
    let lambda_init = if iter < cfg.init_cutoff_iter { cfg.lambda_init } else { 0.0 };
    let (l_init, mut g_trans) = l1_loss_grad(&out.transmitted, gt)?;
    for v in &mut g_trans.data {
        *v *= lambda_init;
    }
    let (l_bi, mut g_depth, g_bi_color) = bilateral_smoothness_grad(&out.depth, &out.composed, cfg.gamma, &out.alpha_accum)?;
    for v in &mut g_depth.data {
        *v *= cfg.lambda_bi;
    }
    for (v, d) in g_comp.data.iter_mut().zip(&g_bi_color.data) {
        *v += cfg.lambda_bi * d;
    }
    let (l_ref, mut g_w) = reflection_map_smoothness_grad(&out.reflection_map)?;
    for v in &mut g_w.data {
        *v *= cfg.lambda_ref;
    }
    let weights = LossWeights {
        lambda_balance: cfg.lambda_balance,
        lambda_init,
        lambda_bi: cfg.lambda_bi,
        lambda_ref: cfg.lambda_ref,
    };
    let total = l_rgb + lambda_init * l_init + cfg.lambda_bi * l_bi + cfg.lambda_ref * l_ref;
    Ok((
        LossBundle {
            l_rgb,
            l_init,
            l_bi,
            l_ref,
            weights,
            total,
        },
        LossGradients {
            composed: g_comp,
            transmitted: g_trans,
            depth: g_depth,
            reflection_map: g_w,
        },
    ))
}

pub fn overall_loss(gt: &Image, out: &RenderOutputs, cfg: &LossConfig, iter: usize) -> Result<LossBundle> {
    Ok(overall_loss_grad(gt, out, cfg, iter)?.0)
}
