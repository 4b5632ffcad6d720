//! Pinhole cameras and the EWA projection of 3D Gaussians to screen space.

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

/// Points closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.2;
/// Splat centers further than this factor of the half-extent from the image center are culled.
pub const CULL_MARGIN: f64 = 1.3;
/// Screen-space low-pass dilation added to every 2D covariance, in pixels².
pub const LOW_PASS_DILATION: f64 = 0.3;
/// Splat footprint radius in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;

/// Pinhole camera with a rigid world-to-camera transform (`x_cam = R x_world + t`).
///
/// Camera space looks down +z with +x right and +y down; pixel centers sit at
/// half-integer coordinates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, rotation: Mat3, translation: Vec3) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidConfig(alloc::format!(
                "camera image must be at least 16x16, got {}x{}",
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite to image +y.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        let f = math::sub(target, eye);
        let fz = math::scale(f, 1.0 / math::norm(f));
        // image +y points down, i.e. against `up`
        let down = math::scale(up, -1.0);
        let x = cross(down, fz);
        let xn = math::norm(x);
        if xn == 0.0 {
            return Err(Error::InvalidConfig("look_at: up is parallel to the view direction".into()));
        }
        let x = math::scale(x, 1.0 / xn);
        let y = cross(fz, x);
        let rotation = [x, y, fz];
        let translation = math::scale(math::mat_vec(&rotation, eye), -1.0);
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height, rotation, translation)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        math::scale(math::mat_t_vec(&self.rotation, self.translation), -1.0)
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        math::add(math::mat_vec(&self.rotation, p), self.translation)
    }

    /// Pixel coordinates of a camera-space point.
    #[inline]
    pub fn project_point(&self, t: Vec3) -> [f64; 2] {
        [self.fx * t[0] / t[2] + self.cx, self.fy * t[1] / t[2] + self.cy]
    }

    /// Copy with intrinsics rescaled to a new image size.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Screen-space footprint of one primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Symmetric 2x2 covariance `[[a, b], [b, c]]` stored as `[a, b, c]`, dilation included.
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub gaussian_index: usize,
}

/// Perspective Jacobian of `(fx x/z, fy y/z)` at camera-space point `t`.
#[inline]
fn perspective_jacobian(cam: &Camera, t: Vec3) -> [[f64; 3]; 2] {
    let iz = 1.0 / t[2];
    let iz2 = iz * iz;
    [[cam.fx * iz, 0.0, -cam.fx * t[0] * iz2], [0.0, cam.fy * iz, -cam.fy * t[1] * iz2]]
}

/// `M = J W`, the linear map from world offsets to pixel offsets.
#[inline]
fn screen_map(j: &[[f64; 3]; 2], w: &Mat3) -> [[f64; 3]; 2] {
    let mut m = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            m[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    m
}

/// Projects one Gaussian; `None` when it is culled (behind the near plane or far off-screen).
pub fn project_gaussian(cam: &Camera, mean: Vec3, cov3d: &Mat3, gaussian_index: usize) -> Option<Splat2D> {
    let t = cam.world_to_camera(mean);
    if !(t[2] > NEAR_PLANE) {
        return None;
    }
    let mean2d = cam.project_point(t);
    let half_w = cam.width as f64 * 0.5;
    let half_h = cam.height as f64 * 0.5;
    if math::abs(mean2d[0] - half_w) > CULL_MARGIN * half_w || math::abs(mean2d[1] - half_h) > CULL_MARGIN * half_h {
        return None;
    }
    let j = perspective_jacobian(cam, t);
    let m = screen_map(&j, &cam.rotation);
    // M Σ Mᵀ
    let mut ms = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ms[r][c] = m[r][0] * cov3d[0][c] + m[r][1] * cov3d[1][c] + m[r][2] * cov3d[2][c];
        }
    }
    let a = ms[0][0] * m[0][0] + ms[0][1] * m[0][1] + ms[0][2] * m[0][2] + LOW_PASS_DILATION;
    let b = ms[0][0] * m[1][0] + ms[0][1] * m[1][1] + ms[0][2] * m[1][2];
    let c = ms[1][0] * m[1][0] + ms[1][1] * m[1][1] + ms[1][2] * m[1][2] + LOW_PASS_DILATION;
    Some(Splat2D {
        mean2d,
        cov2d: [a, b, c],
        depth: t[2],
        gaussian_index,
    })
}

/// 3σ footprint radius in whole pixels.
pub fn splat_extent(cov2d: [f64; 3]) -> f64 {
    let (l1, _) = math::sym2_eigenvalues(cov2d[0], cov2d[1], cov2d[2]);
    math::ceil(EXTENT_SIGMAS * math::sqrt(l1.max(0.0)))
}

/// Conic (inverse covariance) `[a, b, c]` of a 2D covariance.
#[inline]
pub fn conic_of(cov2d: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = cov2d;
    let det = a * c - b * b;
    let inv = 1.0 / det;
    [c * inv, -b * inv, a * inv]
}

/// Adjoint of [`conic_of`]: conic gradients to covariance gradients (off-diagonal counted once).
#[inline]
pub fn conic_backward(cov2d: [f64; 3], d_conic: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = cov2d;
    let det = a * c - b * b;
    let inv2 = 1.0 / (det * det);
    let [ga, gb, gc] = d_conic;
    [
        (-c * c * ga + b * c * gb - b * b * gc) * inv2,
        (2.0 * b * c * ga - (det + 2.0 * b * b) * gb + 2.0 * a * b * gc) * inv2,
        (-b * b * ga + a * b * gb - a * a * gc) * inv2,
    ]
}

/// Adjoint of [`project_gaussian`] for a visible splat.
///
/// Takes gradients of the pixel-space mean, the 2D covariance (`[a, b, c]`,
/// off-diagonal counted once) and the depth; returns gradients of the world
/// mean and of the full (symmetric) 3D covariance.
pub fn project_backward(cam: &Camera, mean: Vec3, cov3d: &Mat3, d_mean2d: [f64; 2], d_cov2d: [f64; 3], d_depth: f64) -> (Vec3, Mat3) {
    let t = cam.world_to_camera(mean);
    let j = perspective_jacobian(cam, t);
    let w = &cam.rotation;
    let m = screen_map(&j, w);

    // Symmetric matrix gradient of cov2d.
    let g2 = [[d_cov2d[0], 0.5 * d_cov2d[1]], [0.5 * d_cov2d[1], d_cov2d[2]]];

    // dL/dΣ3 = Mᵀ G2 M
    let mut g2m = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            g2m[r][c] = g2[r][0] * m[0][c] + g2[r][1] * m[1][c];
        }
    }
    let mut d_cov3d = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            d_cov3d[r][c] = m[0][r] * g2m[0][c] + m[1][r] * g2m[1][c];
        }
    }

    // dL/dM = 2 G2 M Σ3
    let mut d_m = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_m[r][c] = 2.0 * (g2m[r][0] * cov3d[0][c] + g2m[r][1] * cov3d[1][c] + g2m[r][2] * cov3d[2][c]);
        }
    }
    // dL/dJ = dL/dM Wᵀ
    let mut d_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_j[r][c] = d_m[r][0] * w[c][0] + d_m[r][1] * w[c][1] + d_m[r][2] * w[c][2];
        }
    }

    let iz = 1.0 / t[2];
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_t = [0.0; 3];
    // Jacobian entries.
    d_t[0] += -fx * iz2 * d_j[0][2];
    d_t[1] += -fy * iz2 * d_j[1][2];
    d_t[2] += -fx * iz2 * d_j[0][0] + 2.0 * fx * t[0] * iz3 * d_j[0][2] - fy * iz2 * d_j[1][1] + 2.0 * fy * t[1] * iz3 * d_j[1][2];
    // Pixel mean.
    d_t[0] += fx * iz * d_mean2d[0];
    d_t[1] += fy * iz * d_mean2d[1];
    d_t[2] += -fx * t[0] * iz2 * d_mean2d[0] - fy * t[1] * iz2 * d_mean2d[1];
    // Depth.
    d_t[2] += d_depth;

    (math::mat_t_vec(w, d_t), d_cov3d)
}
