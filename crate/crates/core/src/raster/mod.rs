//! Tile-based dual compositing.
//!
//! One depth-sorted traversal per pixel produces the transmitted color, the
//! reflected color (its own transmittance, shared 2D footprint), the
//! reflection map and the alpha-normalized depth. The final image is
//! `transmitted + reflection_map * reflected`.

mod backward;
mod tiles;

use alloc::vec;
use alloc::vec::Vec;

pub use backward::{backward, ParamGradients, RenderGrads};
pub use tiles::{bin_and_sort, TileBins, TILE_SIZE};

use crate::camera::{self, Camera};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::Image;
use crate::math::{self, Vec3};
use crate::sh;

/// Upper clamp applied to every per-pixel opacity.
pub const MAX_ALPHA: f64 = 0.99;
/// Default transmittance below which traversal stops.
pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;
/// Footprint cutoff on `½ dᵀ Σ⁻¹ d` (the 3σ ellipse).
pub const FOOTPRINT_CUTOFF: f64 = 4.5;
/// Floor on accumulated alpha when normalizing depth.
pub const DEPTH_EPSILON: f64 = 1e-8;

/// How per-primitive confidences accumulate into the reflection map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AccumulationMode {
    /// `W = Σ βᵢ αᵢ Πⱼ<ᵢ (1 - βⱼ)`
    #[default]
    Paper,
    /// `W = Σ βᵢ αᵢ Tᵢ`, attenuated by the ordinary alpha transmittance.
    Alpha,
}

impl core::str::FromStr for AccumulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(AccumulationMode::Paper),
            "alpha" => Ok(AccumulationMode::Alpha),
            other => Err(Error::InvalidConfig(alloc::format!("unknown accumulation mode `{other}` (expected paper|alpha)"))),
        }
    }
}

/// Which branches a render evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branches {
    /// Transmitted, reflected and reflection map.
    #[default]
    Dual,
    /// Plain splatting: transmitted color only, reflection map identically zero.
    TransmittedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub mode: AccumulationMode,
    pub branches: Branches,
    /// Stop once every tracked transmittance is below this. Zero disables early stopping.
    pub early_stop: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            mode: AccumulationMode::Paper,
            branches: Branches::Dual,
            early_stop: EARLY_STOP_TRANSMITTANCE,
        }
    }
}

impl RenderSettings {
    pub fn with_mode(mode: AccumulationMode) -> Self {
        Self { mode, ..Self::default() }
    }
}

/// One front-to-back contribution at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub color: Vec3,
    pub color_ref: Vec3,
    /// Transmitted-branch opacity `θ·G` (clamped to 0.99 on use).
    pub alpha: f64,
    /// Reflected-branch opacity `θ_ref·G` (clamped to 0.99 on use).
    pub ref_alpha: f64,
    pub beta: f64,
    pub depth: f64,
}

/// Composited values of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelResult {
    pub transmitted: Vec3,
    pub reflected: Vec3,
    pub reflection: f64,
    pub depth: f64,
    pub alpha: f64,
}

/// Running front-to-back state of one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelAccumulator {
    pub color: Vec3,
    pub color_ref: Vec3,
    pub reflection: f64,
    pub depth_sum: f64,
    pub alpha: f64,
    pub t: f64,
    pub t_ref: f64,
    /// `Π (1 - βⱼ)`, only advanced in paper mode.
    pub t_beta: f64,
}

impl PixelAccumulator {
    pub const fn new() -> Self {
        Self {
            color: [0.0; 3],
            color_ref: [0.0; 3],
            reflection: 0.0,
            depth_sum: 0.0,
            alpha: 0.0,
            t: 1.0,
            t_ref: 1.0,
            t_beta: 1.0,
        }
    }

    #[inline]
    pub fn saturated(&self, settings: &RenderSettings) -> bool {
        let thr = settings.early_stop;
        if !(self.t < thr) {
            return false;
        }
        match settings.branches {
            Branches::TransmittedOnly => true,
            Branches::Dual => self.t_ref < thr && (settings.mode == AccumulationMode::Alpha || self.t_beta < thr),
        }
    }

    #[inline]
    pub fn push(&mut self, k: &Contribution, settings: &RenderSettings) {
        let alpha = k.alpha.min(MAX_ALPHA);
        let w = alpha * self.t;
        self.color[0] += k.color[0] * w;
        self.color[1] += k.color[1] * w;
        self.color[2] += k.color[2] * w;
        self.depth_sum += k.depth * w;
        self.alpha += w;
        if settings.branches == Branches::Dual {
            let ref_alpha = k.ref_alpha.min(MAX_ALPHA);
            let wr = ref_alpha * self.t_ref;
            self.color_ref[0] += k.color_ref[0] * wr;
            self.color_ref[1] += k.color_ref[1] * wr;
            self.color_ref[2] += k.color_ref[2] * wr;
            self.t_ref *= 1.0 - ref_alpha;
            match settings.mode {
                AccumulationMode::Paper => {
                    self.reflection += k.beta * alpha * self.t_beta;
                    self.t_beta *= 1.0 - k.beta;
                }
                AccumulationMode::Alpha => self.reflection += k.beta * w,
            }
        }
        self.t *= 1.0 - alpha;
    }

    pub fn finish(&self) -> PixelResult {
        PixelResult {
            transmitted: self.color,
            reflected: self.color_ref,
            reflection: self.reflection,
            depth: self.depth_sum / self.alpha.max(DEPTH_EPSILON),
            alpha: self.alpha,
        }
    }
}

/// Composites an ordered (front to back) contribution list.
pub fn composite_pixel(contributions: &[Contribution], settings: &RenderSettings) -> PixelResult {
    let mut acc = PixelAccumulator::new();
    for k in contributions {
        if acc.saturated(settings) {
            break;
        }
        acc.push(k, settings);
    }
    acc.finish()
}

/// Per-primitive screen-space state saved for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedSplat {
    pub gaussian_index: usize,
    pub mean2d: [f64; 2],
    pub cov2d: [f64; 3],
    pub conic: [f64; 3],
    pub depth: f64,
    pub radius: f64,
    pub opacity: f64,
    pub ref_opacity: f64,
    pub beta: f64,
    pub color: Vec3,
    pub color_ref: Vec3,
    pub(crate) raw_color: Vec3,
    pub(crate) raw_color_ref: Vec3,
    /// Unit direction from the camera center to the mean.
    pub(crate) view_dir: Vec3,
    pub(crate) view_dist: f64,
}

/// Everything the backward pass needs to replay a forward render.
#[derive(Debug, Clone)]
pub struct RenderRecords {
    pub camera: Camera,
    pub settings: RenderSettings,
    pub gaussian_count: usize,
    pub active_sh_degree: usize,
    pub splats: Vec<ProjectedSplat>,
    pub bins: TileBins,
    /// Number of tile-list entries traversed per pixel.
    pub traversed: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct RenderOutputs {
    /// `transmitted + reflection_map * reflected`, unclamped.
    pub composed: Image,
    pub transmitted: Image,
    pub reflected: Image,
    pub reflection_map: Image,
    pub depth: Image,
    pub alpha_accum: Image,
    pub records: RenderRecords,
}

impl RenderOutputs {
    /// `transmitted + κ · reflection_map · reflected`, clamped to `[0, 1]`.
    pub fn relit(&self, kappa: f64) -> Image {
        let mut out = self.transmitted.clone();
        for p in 0..out.pixel_count() {
            let w = kappa * self.reflection_map.data[p];
            for c in 0..3 {
                let i = 3 * p + c;
                out.data[i] = (out.data[i] + w * self.reflected.data[i]).clamp(0.0, 1.0);
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.composed.width
    }

    pub fn height(&self) -> usize {
        self.composed.height
    }
}

/// Activates, projects and shades every primitive; culled ones are omitted.
pub(crate) fn project_cloud(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> Result<Vec<ProjectedSplat>> {
    let n = cloud.len();
    for g in crate::gaussian::ParamGroup::ALL {
        let expected = n * g.stride(cloud.max_sh_degree);
        if cloud.group(g).len() != expected {
            return Err(Error::shape(g.name(), expected, cloud.group(g).len()));
        }
    }
    let center = cam.center();
    let degree = cloud.active_sh_degree.min(cloud.max_sh_degree);
    let dual = settings.branches == Branches::Dual;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let act = cloud.activate(i)?;
        let Some(s) = camera::project_gaussian(cam, act.mean, &act.cov3d, i) else {
            continue;
        };
        let [a, b, c] = s.cov2d;
        if !(a * c - b * b > 0.0) {
            continue;
        }
        let radius = camera::splat_extent(s.cov2d);
        let v = math::sub(act.mean, center);
        let dist = math::norm(v);
        let dir = if dist > 0.0 { math::scale(v, 1.0 / dist) } else { [0.0, 0.0, 1.0] };
        let basis = sh::basis(degree, dir);
        let raw_color = sh::raw_color(cloud.sh_trans_of(i), &basis, degree);
        let raw_color_ref = if dual {
            sh::raw_color(cloud.sh_ref_of(i), &basis, degree)
        } else {
            [0.0; 3]
        };
        out.push(ProjectedSplat {
            gaussian_index: i,
            mean2d: s.mean2d,
            cov2d: s.cov2d,
            conic: camera::conic_of(s.cov2d),
            depth: s.depth,
            radius,
            opacity: act.opacity,
            ref_opacity: act.ref_opacity,
            beta: act.beta,
            color: sh::clamp_color(raw_color),
            color_ref: sh::clamp_color(raw_color_ref),
            raw_color,
            raw_color_ref,
            view_dir: dir,
            view_dist: dist,
        });
    }
    Ok(out)
}

/// Splat data packed for the per-pixel inner loop.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PackedSplat {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub ref_opacity: f64,
    pub beta: f64,
    pub depth: f64,
    pub color: Vec3,
    pub color_ref: Vec3,
}

impl PackedSplat {
    #[inline]
    pub fn from_splat(s: &ProjectedSplat) -> Self {
        Self {
            mean: s.mean2d,
            conic: s.conic,
            opacity: s.opacity,
            ref_opacity: s.ref_opacity,
            beta: s.beta,
            depth: s.depth,
            color: s.color,
            color_ref: s.color_ref,
        }
    }

    /// `½ dᵀ Σ⁻¹ d` at a pixel center.
    #[inline]
    pub fn power(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let p = 0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) + self.conic[1] * dx * dy;
        (p, dx, dy)
    }

    #[inline]
    pub fn contribution(&self, g: f64) -> Contribution {
        Contribution {
            color: self.color,
            color_ref: self.color_ref,
            alpha: self.opacity * g,
            ref_alpha: self.ref_opacity * g,
            beta: self.beta,
            depth: self.depth,
        }
    }
}

pub(crate) fn gather_tile(records_splats: &[ProjectedSplat], list: &[u32]) -> Vec<PackedSplat> {
    list.iter().map(|&i| PackedSplat::from_splat(&records_splats[i as usize])).collect()
}

/// Pixel rectangle `(x0, y0, x1, y1)` (exclusive end) of tile `t`.
#[inline]
pub(crate) fn tile_rect(bins: &TileBins, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tx = t % bins.tiles_x;
    let ty = t / bins.tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
}

#[cfg(feature = "parallel")]
pub(crate) fn map_tiles<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_tiles<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

struct TileOutput {
    pixels: Vec<PixelResult>,
    traversed: Vec<u32>,
}

fn render_tile(splats: &[ProjectedSplat], bins: &TileBins, t: usize, width: usize, height: usize, settings: &RenderSettings) -> TileOutput {
    let list = bins.tile_by_id(t);
    let packed = gather_tile(splats, list);
    let (x0, y0, x1, y1) = tile_rect(bins, t, width, height);
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
    let mut traversed = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        let py = y as f64 + 0.5;
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let mut acc = PixelAccumulator::new();
            let mut count = packed.len();
            for (j, s) in packed.iter().enumerate() {
                if acc.saturated(settings) {
                    count = j;
                    break;
                }
                let (power, _, _) = s.power(px, py);
                if power > FOOTPRINT_CUTOFF {
                    continue;
                }
                acc.push(&s.contribution(math::exp(-power)), settings);
            }
            pixels.push(acc.finish());
            traversed.push(count as u32);
        }
    }
    TileOutput { pixels, traversed }
}

/// Renders all outputs of `cloud` seen from `cam`.
///
/// A cloud with nothing visible yields all-background (zero) images.
pub fn render(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> Result<RenderOutputs> {
    cam.validate()?;
    let (width, height) = (cam.width, cam.height);
    let splats = project_cloud(cloud, cam, settings)?;
    let items: Vec<tiles::BinItem> = splats
        .iter()
        .map(|s| tiles::BinItem {
            center: s.mean2d,
            radius: s.radius,
            depth: s.depth,
            key: s.gaussian_index,
        })
        .collect();
    let bins = tiles::bin_items(&items, width, height);

    let tile_outputs = map_tiles(bins.tile_count(), |t| render_tile(&splats, &bins, t, width, height, settings));

    let mut transmitted = Image::new(width, height, 3);
    let mut reflected = Image::new(width, height, 3);
    let mut composed = Image::new(width, height, 3);
    let mut reflection_map = Image::new(width, height, 1);
    let mut depth = Image::new(width, height, 1);
    let mut alpha_accum = Image::new(width, height, 1);
    let mut traversed = vec![0u32; width * height];

    for (t, out) in tile_outputs.iter().enumerate() {
        let (x0, y0, x1, y1) = tile_rect(&bins, t, width, height);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * width + x;
                let r = &out.pixels[k];
                for c in 0..3 {
                    transmitted.data[3 * p + c] = r.transmitted[c];
                    reflected.data[3 * p + c] = r.reflected[c];
                    composed.data[3 * p + c] = r.transmitted[c] + r.reflection * r.reflected[c];
                }
                reflection_map.data[p] = r.reflection;
                depth.data[p] = r.depth;
                alpha_accum.data[p] = r.alpha;
                traversed[p] = out.traversed[k];
                k += 1;
            }
        }
    }

    Ok(RenderOutputs {
        composed,
        transmitted,
        reflected,
        reflection_map,
        depth,
        alpha_accum,
        records: RenderRecords {
            camera: cam.clone(),
            settings: *settings,
            gaussian_count: cloud.len(),
            active_sh_degree: cloud.active_sh_degree.min(cloud.max_sh_degree),
            splats,
            bins,
            traversed,
        },
    })
}

/// Renders with the reflection term scaled by `kappa`, clamped to `[0, 1]`.
pub fn render_relit(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings, kappa: f64) -> Result<Image> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("relighting coefficient must be finite and >= 0, got {kappa}")));
    }
    Ok(render(cloud, cam, settings)?.relit(kappa))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contrib(alpha: f64, beta: f64) -> Contribution {
        Contribution {
            color: [1.0, 0.0, 0.0],
            color_ref: [0.0, 0.0, 1.0],
            alpha,
            ref_alpha: alpha,
            beta,
            depth: 2.0,
        }
    }

    #[test]
    fn single_opaque_contribution_is_clamped() {
        let r = composite_pixel(&[contrib(1.0, 0.0)], &RenderSettings::default());
        assert_eq!(r.transmitted, [0.99, 0.0, 0.0]);
        assert_eq!(r.alpha, 0.99);
        assert!((r.depth - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_list_is_background() {
        let r = composite_pixel(&[], &RenderSettings::default());
        assert_eq!(r, PixelResult::default());
    }

    #[test]
    fn reflection_map_modes() {
        let paper = RenderSettings::with_mode(AccumulationMode::Paper);
        let alpha = RenderSettings::with_mode(AccumulationMode::Alpha);
        let same = [contrib(0.5, 0.5), contrib(0.5, 0.5)];
        assert!((composite_pixel(&same, &paper).reflection - 0.375).abs() < 1e-15);
        assert!((composite_pixel(&same, &alpha).reflection - 0.375).abs() < 1e-15);
        let diff = [contrib(0.9, 0.1), contrib(0.9, 0.1)];
        // 0.1·0.9 + 0.1·0.9·0.9 and 0.1·0.9 + 0.1·0.9·0.1
        assert!((composite_pixel(&diff, &paper).reflection - 0.171).abs() < 1e-12);
        assert!((composite_pixel(&diff, &alpha).reflection - 0.099).abs() < 1e-12);
    }

    #[test]
    fn early_stop_skips_hidden_contributions() {
        let settings = RenderSettings {
            branches: Branches::TransmittedOnly,
            ..RenderSettings::default()
        };
        let list = [contrib(0.99, 0.0), contrib(0.99, 0.0), contrib(0.99, 0.0)];
        // after two layers T = 1e-4, which is not below the threshold yet
        let r = composite_pixel(&list, &settings);
        let expected = 0.99 + 0.99 * 0.01 + 0.99 * 1e-4;
        assert!((r.transmitted[0] - expected).abs() < 1e-12);
        let r = composite_pixel(&[contrib(0.99, 0.0); 4], &settings);
        assert!((r.transmitted[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("paper".parse::<AccumulationMode>().unwrap(), AccumulationMode::Paper);
        assert_eq!("alpha".parse::<AccumulationMode>().unwrap(), AccumulationMode::Alpha);
        assert!("beta".parse::<AccumulationMode>().is_err());
    }
}
