//! Posed image datasets: loading, resampling and the train/test split.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use refsplat_core::math::Vec3;
use refsplat_core::optim::TrainView;
use refsplat_core::{Camera, Image};
use serde::{Deserialize, Serialize};

use crate::colmap;
use crate::error::{Error, Result};
use crate::imageio;

/// Target resolution used when none is configured.
pub const DEFAULT_RESOLUTION: (usize, usize) = (1296, 864);

/// One image in this many is held out for testing.
pub const TEST_EVERY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub split: Vec<Split>,
    pub points: Vec<Vec3>,
    pub colors: Vec<Vec3>,
}

/// Which images were held out, so evaluation can reproduce the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub test: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.cameras.len() != n || self.images.len() != n || self.split.len() != n {
            return Err(Error::Data("cameras, images and split tags differ in length".into()));
        }
        if self.points.len() != self.colors.len() {
            return Err(Error::Data("sparse points and colors differ in length".into()));
        }
        if !self.split.contains(&Split::Train) {
            return Err(Error::Data("dataset has no training image".into()));
        }
        for (i, (c, im)) in self.cameras.iter().zip(&self.images).enumerate() {
            if c.width != im.width || c.height != im.height {
                return Err(Error::Data(format!(
                    "image `{}` is {}x{} but its camera is {}x{}",
                    self.names[i], im.width, im.height, c.width, c.height
                )));
            }
        }
        Ok(())
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn views(&self, which: Split) -> Vec<TrainView> {
        self.indices(which)
            .into_iter()
            .map(|i| TrainView {
                camera: self.cameras[i].clone(),
                image: self.images[i].clone(),
            })
            .collect()
    }

    /// Resamples every image (and rescales its intrinsics) to `width × height`.
    pub fn resize(&mut self, (width, height): (usize, usize)) {
        self.images.par_iter_mut().for_each(|im| *im = resample_area(im, width, height));
        for c in &mut self.cameras {
            *c = c.resized(width, height);
        }
    }

    pub fn split_record(&self, seed: u64) -> SplitRecord {
        SplitRecord {
            seed,
            test: self.indices(Split::Test).into_iter().map(|i| self.names[i].clone()).collect(),
        }
    }

    /// Re-applies a saved split; every recorded test name must exist.
    pub fn apply_split(&mut self, record: &SplitRecord) -> Result<()> {
        self.split.iter_mut().for_each(|s| *s = Split::Train);
        for name in &record.test {
            let i = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Data(format!("recorded test image `{name}` is not in the dataset")))?;
            self.split[i] = Split::Test;
        }
        Ok(())
    }
}

/// Loads a COLMAP dataset (images at native resolution, all tagged train).
///
/// The model is searched in `sparse/0`, `sparse` and `root`; images are read
/// from `root/images`. Images are ordered by name.
pub fn load_colmap(root: &Path) -> Result<Dataset> {
    let model_dir = colmap::find_model_dir(root)?;
    let model = colmap::read_model(&model_dir)?;
    if model.points.is_empty() {
        return Err(Error::Data(format!("{}: the sparse model has no 3D points", model_dir.display())));
    }
    if model.images.is_empty() {
        return Err(Error::Data(format!("{}: the sparse model has no registered images", model_dir.display())));
    }
    let image_dir = root.join("images");
    if !image_dir.is_dir() {
        return Err(Error::Data(format!("missing image folder {}", image_dir.display())));
    }
    let mut entries = model.images.clone();
    entries.sort_by(|a, b| a.name.cmp(&b.name));

    let loaded = entries
        .par_iter()
        .map(|e| {
            let cam = model.camera_for(e)?;
            let image = imageio::load_rgb(&image_dir.join(&e.name))?;
            let cam = if (image.width, image.height) != (cam.width, cam.height) {
                cam.resized(image.width, image.height)
            } else {
                cam
            };
            Ok((cam, image))
        })
        .collect::<Result<Vec<_>>>()?;
    let (cameras, images): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    let n = entries.len();
    let ds = Dataset {
        names: entries.into_iter().map(|e| e.name).collect(),
        cameras,
        images,
        split: vec![Split::Train; n],
        points: model.points.iter().map(|p| p.xyz).collect(),
        colors: model.points.iter().map(|p| p.rgb.map(|c| c as f64 / 255.0)).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Area-averaging resample: each output pixel is the overlap-weighted mean of
/// the source pixels under its footprint.
pub fn resample_area(img: &Image, width: usize, height: usize) -> Image {
    if (img.width, img.height) == (width, height) {
        return img.clone();
    }
    let wx = area_weights(img.width, width);
    let wy = area_weights(img.height, height);
    let c = img.channels;
    let mut rows = Image::new(width, img.height, c);
    for y in 0..img.height {
        for (x, taps) in wx.iter().enumerate() {
            for ch in 0..c {
                let v = taps.iter().map(|&(sx, w)| w * img.get(sx, y, ch)).sum();
                rows.set(x, y, ch, v);
            }
        }
    }
    let mut out = Image::new(width, height, c);
    for (y, taps) in wy.iter().enumerate() {
        for x in 0..width {
            for ch in 0..c {
                let v = taps.iter().map(|&(sy, w)| w * rows.get(x, sy, ch)).sum();
                out.set(x, y, ch, v);
            }
        }
    }
    out
}

/// Normalized `(source index, weight)` taps of each output sample.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if w > 0.0 {
                    taps.push((s, w));
                }
                s += 1;
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Resamples every image to `target`.
pub fn preprocess(images: &[Image], target: (usize, usize)) -> Vec<Image> {
    images.par_iter().map(|im| resample_area(im, target.0, target.1)).collect()
}

/// Shuffles image order with `seed` and tags every eighth image as test.
/// With fewer than eight images everything stays in training.
pub fn split_train_test(dataset: &mut Dataset, seed: u64) {
    let n = dataset.len();
    dataset.split = vec![Split::Train; n];
    if n < TEST_EVERY {
        log::warn!("only {n} images: no test split, all images used for training");
        return;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (pos, &i) in order.iter().enumerate() {
        if (pos + 1) % TEST_EVERY == 0 {
            dataset.split[i] = Split::Test;
        }
    }
}
