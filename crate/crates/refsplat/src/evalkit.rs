//! Metrics reports, render timing and qualitative exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use refsplat_core::metrics::{psnr, ssim_metric};
use refsplat_core::raster::{self, RenderSettings};
use refsplat_core::{Camera, GaussianCloud, Image};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imageio;

/// Relighting coefficients of the default sequence.
pub const DEFAULT_RELIGHT: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scene: String,
    pub config_hash: String,
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Forward-only renders per second; wall-clock dependent.
    pub fps: f64,
}

impl MetricsReport {
    pub fn new(scene: impl Into<String>, config_hash: impl Into<String>, views: Vec<ViewMetrics>, fps: f64) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        Self {
            scene: scene.into(),
            config_hash: config_hash.into(),
            views,
            mean_psnr,
            mean_ssim,
            fps,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("view\tpsnr\tssim\n");
        for v in &self.views {
            writeln!(s, "{}\t{:.6}\t{:.6}", v.view, v.psnr, v.ssim).unwrap();
        }
        writeln!(s, "mean\t{:.6}\t{:.6}", self.mean_psnr, self.mean_ssim).unwrap();
        s
    }

    /// Writes `metrics.tsv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tsv = dir.join("metrics.tsv");
        fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        let json = dir.join("metrics.json");
        fs::write(&json, serde_json::to_string_pretty(self).expect("report serializes")).map_err(|e| Error::io(&json, e))
    }
}

/// Hex SHA-256 of a serialized configuration.
pub fn config_hash(serialized: &str) -> String {
    Sha256::digest(serialized.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders each view and scores the clamped composed image against its ground truth.
pub fn evaluate_views(cloud: &GaussianCloud, views: &[(String, Camera, Image)], settings: &RenderSettings) -> Result<Vec<ViewMetrics>> {
    views
        .iter()
        .map(|(name, cam, gt)| {
            let out = raster::render(cloud, cam, settings)?;
            let img = out.composed.clamped(0.0, 1.0);
            Ok(ViewMetrics {
                view: name.clone(),
                psnr: psnr(&img, gt)?,
                ssim: ssim_metric(&img, gt)?,
            })
        })
        .collect()
}

/// Mean forward-render rate over `reps` renders (cycling through `cameras`) after `warmup` untimed ones.
pub fn measure_fps(cloud: &GaussianCloud, cameras: &[Camera], settings: &RenderSettings, warmup: usize, reps: usize) -> Result<f64> {
    if reps == 0 || cameras.is_empty() {
        return Err(Error::Config("measure_fps needs reps >= 1 and at least one camera".into()));
    }
    for i in 0..warmup {
        raster::render(cloud, &cameras[i % cameras.len()], settings)?;
    }
    let start = Instant::now();
    for i in 0..reps {
        raster::render(cloud, &cameras[i % cameras.len()], settings)?;
    }
    Ok(reps as f64 / start.elapsed().as_secs_f64())
}

/// Min-max normalized depth; a constant map becomes all zeros.
pub fn normalize_depth(depth: &Image) -> Image {
    let lo = depth.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = depth.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = depth.data.iter().map(|&d| if span > 0.0 { (d - lo) / span } else { 0.0 }).collect();
    Image::from_vec(depth.width, depth.height, depth.channels, data).expect("same shape")
}

pub const DECOMPOSITION_PARTS: [&str; 5] = ["composed", "transmitted", "reflected", "reflection_map", "depth"];

/// Writes `<stem>_{composed,transmitted,reflected,reflection_map,depth}.png`.
pub fn export_decomposition(cloud: &GaussianCloud, camera: &Camera, settings: &RenderSettings, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = raster::render(cloud, camera, settings)?;
    let images = [&out.composed, &out.transmitted, &out.reflected, &out.reflection_map, &normalize_depth(&out.depth)];
    DECOMPOSITION_PARTS
        .iter()
        .zip(images)
        .map(|(part, img)| {
            let path = dir.join(format!("{stem}_{part}.png"));
            imageio::save_png(img, &path)?;
            Ok(path)
        })
        .collect()
}

/// One relit image per coefficient, from a single render.
pub fn relit_sequence(cloud: &GaussianCloud, camera: &Camera, settings: &RenderSettings, coefficients: &[f64]) -> Result<Vec<Image>> {
    if let Some(k) = coefficients.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
        return Err(Error::Config(format!("relighting coefficients must be finite and >= 0, got {k}")));
    }
    let out = raster::render(cloud, camera, settings)?;
    Ok(coefficients.iter().map(|&k| out.relit(k)).collect())
}

/// Writes `<stem>_k<coefficient>.png` for each coefficient.
pub fn export_relit_sequence(
    cloud: &GaussianCloud,
    camera: &Camera,
    settings: &RenderSettings,
    coefficients: &[f64],
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frames = relit_sequence(cloud, camera, settings, coefficients)?;
    coefficients
        .iter()
        .zip(&frames)
        .map(|(k, img)| {
            let path = dir.join(format!("{stem}_k{k:.2}.png"));
            imageio::save_png(img, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_means_and_tsv() {
        let views = vec![
            ViewMetrics { view: "a".into(), psnr: 30.0, ssim: 0.9 },
            ViewMetrics { view: "b".into(), psnr: 20.0, ssim: 0.7 },
        ];
        let r = MetricsReport::new("s", config_hash("x"), views, 1.0);
        assert!((r.mean_psnr - 25.0).abs() < 1e-12);
        assert!((r.mean_ssim - 0.8).abs() < 1e-12);
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.ends_with("mean\t25.000000\t0.800000\n"));
        assert_eq!(r.config_hash.len(), 64);
    }

    #[test]
    fn depth_normalization_spans_unit_range() {
        let d = Image::from_vec(2, 2, 1, vec![2.0, 4.0, 3.0, 2.5]).unwrap();
        let n = normalize_depth(&d);
        assert_eq!(n.data, vec![0.0, 1.0, 0.5, 0.25]);
        assert!(normalize_depth(&Image::filled(2, 2, 1, 7.0)).data.iter().all(|&v| v == 0.0));
    }
}
