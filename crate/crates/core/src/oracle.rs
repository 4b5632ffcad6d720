//! Reference implementations for verification: a brute-force renderer that
//! shares no code with the tiled compositor, random scene generators and
//! finite-difference helpers.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{self, Camera};
use crate::gaussian::{GaussianCloud, ParamGroup, RawGaussian};
use crate::image::Image;
use crate::math;
use crate::raster::AccumulationMode;
use crate::sh;

#[derive(Debug, Clone, Copy)]
struct Hit {
    depth_key: f64,
    index: usize,
    alpha: f64,
    ref_alpha: f64,
    beta: f64,
    depth: f64,
    color: [f64; 3],
    color_ref: [f64; 3],
}

/// Reference outputs: `(composed, transmitted, reflected, reflection_map, depth, alpha)`.
pub struct OracleOutputs {
    pub composed: Image,
    pub transmitted: Image,
    pub reflected: Image,
    pub reflection_map: Image,
    pub depth: Image,
    pub alpha: Image,
}

/// Per-pixel global sort over every primitive, no tiles, no early termination,
/// products of `(1 - α)` recomputed from scratch for each term.
pub fn brute_force_render(cloud: &GaussianCloud, cam: &Camera, mode: AccumulationMode) -> OracleOutputs {
    let (w, h) = (cam.width, cam.height);
    let center = cam.center();
    let degree = cloud.active_sh_degree;
    struct Proj {
        mean: [f64; 2],
        inv: [[f64; 2]; 2],
        depth: f64,
        opacity: f64,
        ref_opacity: f64,
        beta: f64,
        color: [f64; 3],
        color_ref: [f64; 3],
        index: usize,
    }
    let mut projs = Vec::new();
    for i in 0..cloud.len() {
        let a = cloud.activate(i).expect("valid cloud");
        let Some(s) = camera::project_gaussian(cam, a.mean, &a.cov3d, i) else {
            continue;
        };
        let [ca, cb, cc] = s.cov2d;
        let det = ca * cc - cb * cb;
        if !(det > 0.0) {
            continue;
        }
        let v = math::sub(a.mean, center);
        let dir = math::scale(v, 1.0 / math::norm(v));
        projs.push(Proj {
            mean: s.mean2d,
            inv: [[cc / det, -cb / det], [-cb / det, ca / det]],
            depth: s.depth,
            opacity: a.opacity,
            ref_opacity: a.ref_opacity,
            beta: a.beta,
            color: sh::eval_sh(cloud.sh_trans_of(i), dir, degree),
            color_ref: sh::eval_sh(cloud.sh_ref_of(i), dir, degree),
            index: i,
        });
    }

    let mut out = OracleOutputs {
        composed: Image::new(w, h, 3),
        transmitted: Image::new(w, h, 3),
        reflected: Image::new(w, h, 3),
        reflection_map: Image::new(w, h, 1),
        depth: Image::new(w, h, 1),
        alpha: Image::new(w, h, 1),
    };
    let mut hits: Vec<Hit> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            hits.clear();
            for pr in &projs {
                let d = [p[0] - pr.mean[0], p[1] - pr.mean[1]];
                let q = d[0] * (pr.inv[0][0] * d[0] + pr.inv[0][1] * d[1]) + d[1] * (pr.inv[1][0] * d[0] + pr.inv[1][1] * d[1]);
                // 3σ ellipse
                if q > 9.0 {
                    continue;
                }
                let g = math::exp(-0.5 * q);
                hits.push(Hit {
                    depth_key: pr.depth,
                    index: pr.index,
                    alpha: (pr.opacity * g).min(0.99),
                    ref_alpha: (pr.ref_opacity * g).min(0.99),
                    beta: pr.beta,
                    depth: pr.depth,
                    color: pr.color,
                    color_ref: pr.color_ref,
                });
            }
            hits.sort_by(|a, b| a.depth_key.total_cmp(&b.depth_key).then(a.index.cmp(&b.index)));

            let mut c = [0.0; 3];
            let mut r = [0.0; 3];
            let (mut wmap, mut n, mut acc) = (0.0, 0.0, 0.0);
            for (i, hi) in hits.iter().enumerate() {
                let t: f64 = hits[..i].iter().map(|hj| 1.0 - hj.alpha).product();
                let t_ref: f64 = hits[..i].iter().map(|hj| 1.0 - hj.ref_alpha).product();
                for k in 0..3 {
                    c[k] += hi.color[k] * hi.alpha * t;
                    r[k] += hi.color_ref[k] * hi.ref_alpha * t_ref;
                }
                n += hi.depth * hi.alpha * t;
                acc += hi.alpha * t;
                wmap += match mode {
                    AccumulationMode::Paper => hi.beta * hi.alpha * hits[..i].iter().map(|hj| 1.0 - hj.beta).product::<f64>(),
                    AccumulationMode::Alpha => hi.beta * hi.alpha * t,
                };
            }
            let pi = y * w + x;
            for k in 0..3 {
                out.transmitted.data[3 * pi + k] = c[k];
                out.reflected.data[3 * pi + k] = r[k];
                out.composed.data[3 * pi + k] = c[k] + wmap * r[k];
            }
            out.reflection_map.data[pi] = wmap;
            out.depth.data[pi] = n / acc.max(1e-8);
            out.alpha.data[pi] = acc;
        }
    }
    out
}

/// Options for [`random_scene`].
#[derive(Debug, Clone, Copy)]
pub struct SceneOptions {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub sh_degree: usize,
    /// Range of log-scales (world units).
    pub log_scale: (f64, f64),
    /// Range of opacity-like logits.
    pub logit: (f64, f64),
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            count: 50,
            width: 64,
            height: 64,
            sh_degree: 3,
            log_scale: (-2.8, -1.4),
            logit: (-2.5, 2.5),
        }
    }
}

/// Random cloud in front of a random camera looking at the origin.
pub fn random_scene(seed: u64, opts: SceneOptions) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eye = [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), -3.0];
    let f = 0.9 * opts.width as f64;
    let cam = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], f, f, opts.width, opts.height).expect("valid camera");
    let stride = sh::coeff_count(opts.sh_degree) * 3;
    let mut cloud = GaussianCloud::new(opts.sh_degree);
    cloud.active_sh_degree = opts.sh_degree;
    for _ in 0..opts.count {
        let mut sh_trans: Vec<f64> = (0..stride).map(|_| rng.random_range(-0.4..0.4)).collect();
        let mut sh_ref: Vec<f64> = (0..stride).map(|_| rng.random_range(-0.4..0.4)).collect();
        for c in 0..3 {
            sh_trans[c] = rng.random_range(-1.2..1.2);
            sh_ref[c] = rng.random_range(-1.2..1.2);
        }
        cloud.push(&RawGaussian {
            mean: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            rotation: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0)],
            log_scale: [
                rng.random_range(opts.log_scale.0..opts.log_scale.1),
                rng.random_range(opts.log_scale.0..opts.log_scale.1),
                rng.random_range(opts.log_scale.0..opts.log_scale.1),
            ],
            opacity_logit: rng.random_range(opts.logit.0..opts.logit.1),
            sh_trans,
            sh_ref,
            ref_opacity_logit: rng.random_range(opts.logit.0..opts.logit.1),
            beta_logit: rng.random_range(opts.logit.0..opts.logit.1),
        });
    }
    (cloud, cam)
}

/// Random image with values in `[lo, hi)`.
pub fn random_image(seed: u64, width: usize, height: usize, channels: usize, lo: f64, hi: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(width, height, channels, |_, _, _| rng.random_range(lo..hi))
}

/// Central difference of `f` with respect to entry `index` of parameter group `group`.
pub fn central_difference(cloud: &GaussianCloud, group: ParamGroup, index: usize, h: f64, mut f: impl FnMut(&GaussianCloud) -> f64) -> f64 {
    let mut c = cloud.clone();
    let x = c.group(group)[index];
    c.group_mut(group)[index] = x + h;
    let fp = f(&c);
    c.group_mut(group)[index] = x - h;
    let fm = f(&c);
    (fp - fm) / (2.0 * h)
}

/// Gradient comparison: relative error with an absolute floor for entries that are numerically zero.
pub fn gradients_agree(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = math::abs(analytic - numeric);
    diff <= abs_floor || diff <= rel * math::abs(analytic).max(math::abs(numeric))
}

/// Discrete regime of a render: visibility, footprint membership, opacity
/// clamps, SH clamps, early-stop depth and L1 signs. Finite differences are
/// only meaningful when a perturbation leaves this unchanged.
pub fn regime_signature(cloud: &GaussianCloud, cam: &Camera, out: &crate::raster::RenderOutputs, gt: &Image) -> Vec<u8> {
    let mut sig = Vec::new();
    let center = cam.center();
    let degree = cloud.active_sh_degree;
    for i in 0..cloud.len() {
        let a = cloud.activate(i).expect("valid cloud");
        let Some(s) = camera::project_gaussian(cam, a.mean, &a.cov3d, i) else {
            sig.push(0);
            continue;
        };
        sig.push(1);
        let v = math::sub(a.mean, center);
        let dir = math::scale(v, 1.0 / math::norm(v));
        let basis = sh::basis(degree, dir);
        for set in [cloud.sh_trans_of(i), cloud.sh_ref_of(i)] {
            let raw = sh::raw_color(set, &basis, degree);
            for c in raw {
                sig.push((c < 0.0) as u8);
            }
        }
        let [ca, cb, cc] = s.cov2d;
        let det = ca * cc - cb * cb;
        let inv = [cc / det, -cb / det, ca / det];
        for y in 0..cam.height {
            for x in 0..cam.width {
                let dx = x as f64 + 0.5 - s.mean2d[0];
                let dy = y as f64 + 0.5 - s.mean2d[1];
                let power = 0.5 * (inv[0] * dx * dx + inv[2] * dy * dy) + inv[1] * dx * dy;
                let inside = power <= crate::raster::FOOTPRINT_CUTOFF;
                let g = math::exp(-power);
                sig.push(inside as u8 | (((a.opacity * g) > crate::raster::MAX_ALPHA) as u8) << 1 | (((a.ref_opacity * g) > crate::raster::MAX_ALPHA) as u8) << 2);
            }
        }
    }
    for t in &out.records.traversed {
        sig.extend_from_slice(&t.to_le_bytes());
    }
    for img in [&out.composed, &out.transmitted] {
        for (a, b) in img.data.iter().zip(&gt.data) {
            sig.push((a > b) as u8);
        }
    }
    sig
}

/// Result of checking one parameter group against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub checked: usize,
    pub excluded: usize,
    pub failures: usize,
    /// Largest relative error among entries whose absolute error exceeds the floor.
    pub worst_rel: f64,
}

/// Compares the analytic gradient of the total loss of one view with central
/// differences for every stored scalar. Entries whose ±h perturbation changes
/// the [`regime_signature`] are excluded.
pub fn check_loss_gradients(
    cloud: &GaussianCloud,
    cam: &Camera,
    gt: &Image,
    cfg: &crate::loss::LossConfig,
    settings: &crate::raster::RenderSettings,
    iteration: usize,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Vec<GroupCheck> {
    use crate::loss::overall_loss_grad;
    use crate::raster::{backward, render, RenderGrads};

    let eval = |c: &GaussianCloud| {
        let out = render(c, cam, settings).expect("render");
        let total = overall_loss_grad(gt, &out, cfg, iteration).expect("loss").0.total;
        (total, regime_signature(c, cam, &out, gt))
    };
    let out = render(cloud, cam, settings).expect("render");
    let (_, lg) = overall_loss_grad(gt, &out, cfg, iteration).expect("loss");
    let grads = backward(
        cloud,
        &out,
        &RenderGrads {
            composed: Some(&lg.composed),
            transmitted: Some(&lg.transmitted),
            reflected: None,
            reflection_map: Some(&lg.reflection_map),
            depth: Some(&lg.depth),
        },
    )
    .expect("backward");
    let base_sig = regime_signature(cloud, cam, &out, gt);

    let mut report = Vec::new();
    for group in ParamGroup::ALL {
        let mut r = GroupCheck {
            group,
            checked: 0,
            excluded: 0,
            failures: 0,
            worst_rel: 0.0,
        };
        let mut c = cloud.clone();
        for idx in 0..cloud.group(group).len() {
            let x = cloud.group(group)[idx];
            c.group_mut(group)[idx] = x + h;
            let (fp, sp) = eval(&c);
            c.group_mut(group)[idx] = x - h;
            let (fm, sm) = eval(&c);
            c.group_mut(group)[idx] = x;
            if sp != base_sig || sm != base_sig {
                r.excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.group(group)[idx];
            r.checked += 1;
            let diff = math::abs(analytic - numeric);
            let scale = math::abs(analytic).max(math::abs(numeric));
            if diff > abs_floor {
                r.worst_rel = r.worst_rel.max(diff / scale);
            }
            if !gradients_agree(analytic, numeric, rel_tol, abs_floor) {
                r.failures += 1;
            }
        }
        report.push(r);
    }
    report
}
