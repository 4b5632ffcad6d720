//! Analytic forward-facing scene with a planar reflector, for verification.
//!
//! The world holds a textured diffuse wall at `z = wall_z`, a rectangular
//! reflector lying on the wall, and a textured plane at `z = object_z`
//! behind the cameras that is only visible through the reflector. Every
//! pixel is ray traced in closed form and composed additively:
//!
//! ```text
//! image = diffuse + mask * reflection_strength * mirrored
//! ```
//!
//! Each pixel averages a 4x4 grid of rays, so `mask` is the fraction of the
//! pixel covered by the reflector.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsplat_core::math::{self, Vec3};
use refsplat_core::{Camera, Image};
use serde::{Deserialize, Serialize};

use crate::colmap::{self, CameraModel, ColmapCamera, ColmapImage, ColmapModel, ColmapPoint};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::imageio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirrorRect {
    /// Center on the wall plane.
    pub center: [f64; 2],
    pub half_extent: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub n_views: usize,
    pub resolution: (usize, usize),
    pub focal: f64,
    pub wall_z: f64,
    pub object_z: f64,
    pub mirror: MirrorRect,
    pub reflection_strength: f64,
    /// Half-widths of the camera placement box around the origin.
    pub camera_spread: [f64; 3],
    pub wall_seed: u64,
    pub object_seed: u64,
    pub pose_seed: u64,
    /// Spacing of the sparse points sampled on the wall and on the mirrored plane.
    pub wall_point_spacing: f64,
    pub virtual_point_spacing: f64,
}

impl Default for MirrorRect {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            half_extent: [0.8, 0.6],
        }
    }
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            n_views: 32,
            resolution: (128, 128),
            focal: 111.0,
            wall_z: 4.0,
            object_z: -3.0,
            mirror: MirrorRect::default(),
            reflection_strength: 0.4,
            camera_spread: [0.6, 0.4, 0.15],
            wall_seed: 1,
            object_seed: 2,
            pose_seed: 3,
            wall_point_spacing: 0.15,
            virtual_point_spacing: 0.2,
        }
    }
}

/// Smooth procedural color field: a base color plus sinusoids and soft blobs, clamped.
#[derive(Debug, Clone)]
pub struct Texture {
    base: Vec3,
    waves: Vec<([f64; 2], f64, Vec3)>,
    blobs: Vec<([f64; 2], f64, Vec3)>,
    lo: f64,
    hi: f64,
}

impl Texture {
    fn wall(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [0; 3].map(|_| rng.random_range(0.28..0.36));
        let waves = (0..5).map(|_| wave(&mut rng, 0.8..3.0, 0.05)).collect();
        let blobs = (0..6)
            .map(|_| {
                let c = [rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5)];
                (c, rng.random_range(0.25..0.6), [0; 3].map(|_| rng.random_range(-0.12..0.12)))
            })
            .collect();
        Self { base, waves, blobs, lo: 0.05, hi: 0.55 }
    }

    fn object(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [0.5; 3];
        let waves = (0..4).map(|_| wave(&mut rng, 0.6..2.0, 0.12)).collect();
        let blobs = (0..10)
            .map(|_| {
                let c = [rng.random_range(-3.5..3.5), rng.random_range(-2.5..2.5)];
                (c, rng.random_range(0.3..0.8), [0; 3].map(|_| rng.random_range(-0.45..0.45)))
            })
            .collect();
        Self { base, waves, blobs, lo: 0.0, hi: 1.0 }
    }

    pub fn eval(&self, x: f64, y: f64) -> Vec3 {
        let mut c = self.base;
        for (k, phase, amp) in &self.waves {
            let s = (k[0] * x + k[1] * y + phase).sin();
            for ch in 0..3 {
                c[ch] += amp[ch] * s;
            }
        }
        for (center, radius, amp) in &self.blobs {
            let d2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
            let g = (-0.5 * d2 / (radius * radius)).exp();
            for ch in 0..3 {
                c[ch] += amp[ch] * g;
            }
        }
        c.map(|v| v.clamp(self.lo, self.hi))
    }
}

fn wave(rng: &mut ChaCha8Rng, freq: std::ops::Range<f64>, amp: f64) -> ([f64; 2], f64, Vec3) {
    let f = rng.random_range(freq);
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let k = [f * a.cos(), f * a.sin()];
    (k, rng.random_range(0.0..std::f64::consts::TAU), [0; 3].map(|_| rng.random_range(0.0..amp)))
}

/// Rendered scene with its exact generative decomposition.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    /// Wall color alone (the mirror-free render).
    pub diffuse: Vec<Image>,
    /// Color of the mirrored plane seen along each reflected ray (zero outside the mirror).
    pub mirrored: Vec<Image>,
    /// 1 where the pixel-center ray hits the reflector, else 0.
    pub masks: Vec<Image>,
    pub points: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic scene: {m}")));
        if self.n_views == 0 {
            return bad("n_views must be positive".into());
        }
        if self.resolution.0 < 16 || self.resolution.1 < 16 {
            return bad("resolution must be at least 16x16".into());
        }
        if !(self.focal > 0.0) {
            return bad("focal length must be positive".into());
        }
        if !(self.mirror.half_extent[0] > 0.0 && self.mirror.half_extent[1] > 0.0) {
            return bad("mirror extent must be positive".into());
        }
        if !(self.reflection_strength >= 0.0 && self.reflection_strength <= 0.45) {
            return bad("reflection_strength must lie in [0, 0.45] so images stay in [0, 1]".into());
        }
        if !(self.object_z < -self.camera_spread[2]) {
            return bad("the mirrored plane must lie behind every camera".into());
        }
        if !(self.wall_point_spacing > 0.0 && self.virtual_point_spacing > 0.0) {
            return bad("point spacing must be positive".into());
        }
        Ok(())
    }

    pub fn mirror_corners(&self) -> [Vec3; 4] {
        let [cx, cy] = self.mirror.center;
        let [hx, hy] = self.mirror.half_extent;
        let z = self.wall_z;
        [[cx - hx, cy - hy, z], [cx + hx, cy - hy, z], [cx + hx, cy + hy, z], [cx - hx, cy + hy, z]]
    }

    fn in_mirror(&self, x: f64, y: f64) -> bool {
        (x - self.mirror.center[0]).abs() <= self.mirror.half_extent[0] && (y - self.mirror.center[1]).abs() <= self.mirror.half_extent[1]
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.pose_seed);
        let (w, h) = self.resolution;
        let cols = (self.n_views as f64).sqrt().ceil() as usize;
        let rows = self.n_views.div_ceil(cols);
        let [sx, sy, sz] = self.camera_spread;
        let target_center = [self.mirror.center[0], self.mirror.center[1], self.wall_z];
        (0..self.n_views)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                let gx = if cols > 1 { c as f64 / (cols - 1) as f64 * 2.0 - 1.0 } else { 0.0 };
                let gy = if rows > 1 { r as f64 / (rows - 1) as f64 * 2.0 - 1.0 } else { 0.0 };
                let eye = [
                    gx * sx + rng.random_range(-0.05..0.05) * sx,
                    gy * sy + rng.random_range(-0.05..0.05) * sy,
                    rng.random_range(-sz..=sz),
                ];
                let target = [
                    target_center[0] + rng.random_range(-0.3..0.3),
                    target_center[1] + rng.random_range(-0.3..0.3),
                    target_center[2],
                ];
                Ok(Camera::look_at(eye, target, [0.0, -1.0, 0.0], self.focal, self.focal, w, h)?)
            })
            .collect()
    }

    /// Checks the reflector is in front of the cameras and fully in view for at least half of them.
    pub fn check_visibility(&self, cameras: &[Camera]) -> Result<()> {
        let corners = self.mirror_corners();
        let mut in_front = 0;
        let mut inside = 0;
        for cam in cameras {
            let t: Vec<Vec3> = corners.iter().map(|p| cam.world_to_camera(*p)).collect();
            if t.iter().all(|p| p[2] > 0.0) {
                in_front += 1;
                let fits = t.iter().all(|p| {
                    let [u, v] = cam.project_point(*p);
                    u > 0.0 && v > 0.0 && u < cam.width as f64 && v < cam.height as f64
                });
                inside += fits as usize;
            }
        }
        if in_front == 0 {
            return Err(Error::Config("synthetic scene: the mirror is behind every camera".into()));
        }
        if 2 * inside < cameras.len() {
            return Err(Error::Config(format!(
                "synthetic scene: the mirror is fully visible in only {inside} of {} views",
                cameras.len()
            )));
        }
        Ok(())
    }
}

struct PixelSample {
    diffuse: Vec3,
    mirrored: Vec3,
    mask: bool,
}

fn world_ray(cam: &Camera, u: f64, v: f64) -> (Vec3, Vec3) {
    let d_cam = [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0];
    (cam.center(), math::mat_t_vec(&cam.rotation, d_cam))
}

fn trace(spec: &SyntheticSceneSpec, wall: &Texture, object: &Texture, origin: Vec3, dir: Vec3) -> PixelSample {
    let zero = PixelSample {
        diffuse: [0.0; 3],
        mirrored: [0.0; 3],
        mask: false,
    };
    if dir[2] <= 0.0 {
        return zero;
    }
    let t = (spec.wall_z - origin[2]) / dir[2];
    if t <= 0.0 {
        return zero;
    }
    let p = math::add(origin, math::scale(dir, t));
    let diffuse = wall.eval(p[0], p[1]);
    if !spec.in_mirror(p[0], p[1]) {
        return PixelSample { diffuse, ..zero };
    }
    // reflected ray (dx, dy, -dz) travels from the wall back to the object plane
    let t2 = (spec.wall_z - spec.object_z) / dir[2];
    let q = [p[0] + dir[0] * t2, p[1] + dir[1] * t2];
    PixelSample {
        diffuse,
        mirrored: object.eval(q[0], q[1]),
        mask: true,
    }
}

const SUBSAMPLES: usize = 4;

/// Renders every view of the scene and samples the sparse point cloud.
pub fn generate_synthetic_mirror_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let cameras = spec.cameras()?;
    spec.check_visibility(&cameras)?;
    let wall = Texture::wall(spec.wall_seed);
    let object = Texture::object(spec.object_seed);
    let (w, h) = spec.resolution;

    let mut scene = SyntheticScene {
        spec: spec.clone(),
        cameras: Vec::new(),
        images: Vec::new(),
        diffuse: Vec::new(),
        mirrored: Vec::new(),
        masks: Vec::new(),
        points: Vec::new(),
        colors: Vec::new(),
    };
    for cam in &cameras {
        let mut image = Image::new(w, h, 3);
        let mut diffuse = Image::new(w, h, 3);
        let mut mirrored = Image::new(w, h, 3);
        let mut mask = Image::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let mut sum = PixelSample { diffuse: [0.0; 3], mirrored: [0.0; 3], mask: false };
                let mut hits = 0usize;
                for j in 0..SUBSAMPLES {
                    for i in 0..SUBSAMPLES {
                        let u = x as f64 + (i as f64 + 0.5) / SUBSAMPLES as f64;
                        let v = y as f64 + (j as f64 + 0.5) / SUBSAMPLES as f64;
                        let (o, d) = world_ray(cam, u, v);
                        let s = trace(spec, &wall, &object, o, d);
                        sum.diffuse = math::add(sum.diffuse, s.diffuse);
                        if s.mask {
                            sum.mirrored = math::add(sum.mirrored, s.mirrored);
                            hits += 1;
                        }
                    }
                }
                let n = (SUBSAMPLES * SUBSAMPLES) as f64;
                let m = hits as f64 / n;
                mask.set(x, y, 0, m);
                for c in 0..3 {
                    let dif = sum.diffuse[c] / n;
                    let mir = if hits > 0 { sum.mirrored[c] / hits as f64 } else { 0.0 };
                    diffuse.set(x, y, c, dif);
                    mirrored.set(x, y, c, mir);
                    image.set(x, y, c, dif + m * spec.reflection_strength * mir);
                }
            }
        }
        scene.images.push(image);
        scene.diffuse.push(diffuse);
        scene.mirrored.push(mirrored);
        scene.masks.push(mask);
    }
    let (points, colors) = sparse_points(spec, &cameras, &wall, &object);
    scene.points = points;
    scene.colors = colors;
    scene.cameras = cameras;
    Ok(scene)
}

fn visible_in(cam: &Camera, p: Vec3) -> bool {
    let t = cam.world_to_camera(p);
    if t[2] <= 0.0 {
        return false;
    }
    let [u, v] = cam.project_point(t);
    u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64
}

/// Wall points seen by at least two views, plus points on the mirror image of
/// the object plane seen through the reflector by at least two views.
fn sparse_points(spec: &SyntheticSceneSpec, cameras: &[Camera], wall: &Texture, object: &Texture) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let grid = |spacing: f64, extent: f64| {
        let n = (extent / spacing).floor() as i64;
        (-n..=n).map(move |i| i as f64 * spacing)
    };

    for y in grid(spec.wall_point_spacing, 4.0) {
        for x in grid(spec.wall_point_spacing, 4.0) {
            let p = [x, y, spec.wall_z];
            if cameras.iter().filter(|c| visible_in(c, p)).count() >= 2 {
                points.push(p);
                colors.push(wall.eval(x, y));
            }
        }
    }

    let virtual_z = 2.0 * spec.wall_z - spec.object_z;
    for y in grid(spec.virtual_point_spacing, 6.0) {
        for x in grid(spec.virtual_point_spacing, 6.0) {
            let p = [x, y, virtual_z];
            let seen = cameras
                .iter()
                .filter(|c| {
                    let o = c.center();
                    let s = (spec.wall_z - o[2]) / (virtual_z - o[2]);
                    let hit = [o[0] + (x - o[0]) * s, o[1] + (y - o[1]) * s];
                    spec.in_mirror(hit[0], hit[1]) && visible_in(c, p)
                })
                .count();
            if seen >= 2 {
                points.push(p);
                colors.push(object.eval(x, y).map(|v| v * spec.reflection_strength));
            }
        }
    }
    (points, colors)
}

pub fn view_name(i: usize) -> String {
    format!("view_{i:03}.png")
}

impl SyntheticScene {
    /// All views as an unsplit dataset.
    pub fn dataset(&self) -> Dataset {
        let n = self.images.len();
        Dataset {
            names: (0..n).map(view_name).collect(),
            cameras: self.cameras.clone(),
            images: self.images.clone(),
            split: vec![Split::Train; n],
            points: self.points.clone(),
            colors: self.colors.clone(),
        }
    }

    pub fn colmap_model(&self) -> ColmapModel {
        let mut model = ColmapModel::default();
        for (i, cam) in self.cameras.iter().enumerate() {
            let id = i as u32 + 1;
            model.cameras.insert(
                id,
                ColmapCamera {
                    id,
                    model: CameraModel::Pinhole,
                    width: cam.width as u64,
                    height: cam.height as u64,
                    params: vec![cam.fx, cam.fy, cam.cx, cam.cy],
                },
            );
            model.images.push(ColmapImage {
                id,
                qvec: colmap::rotation_to_quat(&cam.rotation),
                tvec: cam.translation,
                camera_id: id,
                name: view_name(i),
            });
        }
        for (i, (p, c)) in self.points.iter().zip(&self.colors).enumerate() {
            model.points.push(ColmapPoint {
                id: i as u64 + 1,
                xyz: *p,
                rgb: c.map(imageio::quantize),
                error: 0.0,
            });
        }
        model
    }

    /// Writes `images/`, `masks/`, a text model in `sparse/0` and `scene.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mk = |d: &Path| fs::create_dir_all(d).map_err(|e| Error::io(d, e));
        let images = dir.join("images");
        let masks = dir.join("masks");
        let sparse = dir.join("sparse").join("0");
        for d in [&images, &masks, &sparse] {
            mk(d)?;
        }
        for i in 0..self.images.len() {
            imageio::save_png(&self.images[i], &images.join(view_name(i)))?;
            imageio::save_png(&self.masks[i], &masks.join(view_name(i)))?;
        }
        colmap::write_text(&self.colmap_model(), &sparse)?;
        let json = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        let path = dir.join("scene.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Loads the ground-truth reflector masks written next to a synthetic dataset.
pub fn load_masks(dir: &Path, names: &[String]) -> Result<Vec<Image>> {
    names
        .iter()
        .map(|n| {
            let rgb = imageio::load_rgb(&dir.join("masks").join(n))?;
            let data = rgb.data.chunks(3).map(|p| p[0]).collect();
            Ok(Image::from_vec(rgb.width, rgb.height, 1, data)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_stay_in_range() {
        let w = Texture::wall(7);
        let o = Texture::object(8);
        for i in 0..200 {
            let (x, y) = (i as f64 * 0.07 - 7.0, (i * 13 % 200) as f64 * 0.05 - 5.0);
            assert!(w.eval(x, y).iter().all(|v| (0.05..=0.55).contains(v)));
            assert!(o.eval(x, y).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = SyntheticSceneSpec::default();
        spec.validate().unwrap();
        spec.check_visibility(&spec.cameras().unwrap()).unwrap();
    }
}
