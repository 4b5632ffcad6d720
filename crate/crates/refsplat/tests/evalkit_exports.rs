use refsplat::evalkit::{
    self, export_decomposition, export_relit_sequence, measure_fps, relit_sequence, MetricsReport, ViewMetrics, DEFAULT_RELIGHT,
};
use refsplat::imageio::{self, quantize};
use refsplat_core::metrics::{psnr, ssim_metric};
use refsplat_core::oracle::{random_image, random_scene, SceneOptions};
use refsplat_core::optim::{TrainView, Trainer};
use refsplat_core::raster::{self, RenderSettings};
use refsplat_core::{Image, TrainConfig};

/// Direct windowed SSIM: every valid 11x11 window with explicit 2D Gaussian weights.
fn brute_force_ssim(a: &Image, b: &Image) -> f64 {
    let n = 11;
    let sigma: f64 = 1.5;
    let w1: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w1.iter().sum();
    let (c1, c2) = (0.0001, 0.0009);
    let mut total = 0.0;
    let mut count = 0.0;
    for c in 0..a.channels {
        for y0 in 0..=a.height - n {
            for x0 in 0..=a.width - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..n {
                    for dx in 0..n {
                        let w = w1[dx] * w1[dy] / (s * s);
                        let (p, q) = (a.get(x0 + dx, y0 + dy, c), b.get(x0 + dx, y0 + dy, c));
                        ma += w * p;
                        mb += w * q;
                        saa += w * p * p;
                        sbb += w * q * q;
                        sab += w * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
    }
    total / count
}

#[test]
fn ssim_matches_windowed_oracle() {
    for seed in 0..3 {
        let a = random_image(seed, 24, 20, 3, 0.0, 1.0);
        let mut b = a.clone();
        let noise = random_image(seed + 100, 24, 20, 3, -0.2, 0.2);
        for (v, n) in b.data.iter_mut().zip(&noise.data) {
            *v = (*v + n).clamp(0.0, 1.0);
        }
        let fast = ssim_metric(&a, &b).unwrap();
        let slow = brute_force_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }
}

#[test]
fn independent_noise_has_near_zero_ssim() {
    for seed in 0..10 {
        let a = random_image(2 * seed, 64, 64, 3, 0.0, 1.0);
        let b = random_image(2 * seed + 1, 64, 64, 3, 0.0, 1.0);
        let s = ssim_metric(&a, &b).unwrap();
        assert!(s.abs() < 0.1, "seed {seed}: {s}");
    }
}

#[test]
fn metrics_are_symmetric() {
    let a = random_image(1, 32, 32, 3, 0.0, 1.0);
    let b = random_image(2, 32, 32, 3, 0.0, 1.0);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    assert!((ssim_metric(&a, &b).unwrap() - ssim_metric(&b, &a).unwrap()).abs() < 1e-12);
}

#[test]
fn report_mean_is_the_row_mean() {
    let rows: Vec<ViewMetrics> = (0..7)
        .map(|i| ViewMetrics {
            view: format!("v{i}"),
            psnr: 20.0 + i as f64 * 1.37,
            ssim: 0.5 + i as f64 * 0.031,
        })
        .collect();
    let hand_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / 7.0;
    let hand_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / 7.0;
    let r = MetricsReport::new("scene", "h", rows, 3.0);
    assert!((r.mean_psnr - hand_psnr).abs() < 1e-9);
    assert!((r.mean_ssim - hand_ssim).abs() < 1e-9);
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let back: MetricsReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn near_zero_confidence_gives_a_black_reflection_map() {
    let (mut cloud, cam) = random_scene(3, SceneOptions::default());
    cloud.beta_logits.iter_mut().for_each(|v| *v = -30.0);
    let dir = tempfile::tempdir().unwrap();
    let files = export_decomposition(&cloud, &cam, &RenderSettings::default(), dir.path(), "v").unwrap();
    assert_eq!(files.len(), 5);
    let map = imageio::load_rgb(&files[3]).unwrap();
    assert!(map.mean() < 2.0 / 255.0);
}

#[test]
fn decomposition_pngs_follow_the_composition() {
    let (cloud, cam) = random_scene(4, SceneOptions::default());
    let settings = RenderSettings::default();
    let dir = tempfile::tempdir().unwrap();
    let files = export_decomposition(&cloud, &cam, &settings, dir.path(), "view").unwrap();
    let names: Vec<_> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["view_composed.png", "view_transmitted.png", "view_reflected.png", "view_reflection_map.png", "view_depth.png"]);

    let out = raster::render(&cloud, &cam, &settings).unwrap();
    let composed = imageio::load_rgb(&files[0]).unwrap();
    for p in 0..cam.width * cam.height {
        let w = out.reflection_map.data[p];
        for c in 0..3 {
            let v = out.transmitted.data[3 * p + c] + w * out.reflected.data[3 * p + c];
            assert_eq!(composed.data[3 * p + c], quantize(v) as f64 / 255.0);
        }
    }
    let depth = imageio::load_rgb(&files[4]).unwrap();
    let lo = depth.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = depth.data.iter().copied().fold(0.0, f64::max);
    assert_eq!((lo, hi), (0.0, 1.0));
}

#[test]
fn relit_sequence_properties() {
    assert_eq!(DEFAULT_RELIGHT.len(), 5);
    assert_eq!(DEFAULT_RELIGHT, [0.8, 0.9, 1.0, 1.1, 1.2]);
    let (cloud, cam) = random_scene(5, SceneOptions::default());
    let settings = RenderSettings::default();
    let frames = relit_sequence(&cloud, &cam, &settings, &DEFAULT_RELIGHT).unwrap();
    let out = raster::render(&cloud, &cam, &settings).unwrap();
    assert_eq!(frames[2], out.composed.clamped(0.0, 1.0));
    let mut strict = 0;
    for p in 0..cam.width * cam.height {
        for c in 0..3 {
            if out.reflection_map.data[p] * out.reflected.data[3 * p + c] > 0.0 {
                assert!(frames[0].data[3 * p + c] <= frames[4].data[3 * p + c]);
                strict += (frames[0].data[3 * p + c] < frames[4].data[3 * p + c]) as usize;
            }
        }
    }
    assert!(strict > 0);
    assert!(relit_sequence(&cloud, &cam, &settings, &[1.0, -0.1]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let files = export_relit_sequence(&cloud, &cam, &settings, &DEFAULT_RELIGHT, dir.path(), "v").unwrap();
    assert_eq!(files.len(), 5);
    assert!(files[4].ends_with("v_k1.20.png"));
}

#[test]
fn fps_is_positive_and_falls_with_gaussian_count() {
    let (cloud, cam) = random_scene(6, SceneOptions { count: 4000, width: 128, height: 128, ..SceneOptions::default() });
    let settings = RenderSettings::default();
    let one = measure_fps(&cloud, std::slice::from_ref(&cam), &settings, 0, 1).unwrap();
    assert!(one.is_finite() && one > 0.0);
    assert!(measure_fps(&cloud, std::slice::from_ref(&cam), &settings, 0, 0).is_err());

    let mut rates = Vec::new();
    for keep in [250, 1000, 4000] {
        let mut c = cloud.clone();
        c.retain_mask(&(0..cloud.len()).map(|i| i < keep).collect::<Vec<_>>());
        rates.push(measure_fps(&c, std::slice::from_ref(&cam), &settings, 1, 5).unwrap());
    }
    assert!(rates[0] >= rates[1] && rates[1] >= rates[2], "{rates:?}");
}

#[test]
fn zero_iteration_evaluation_matches_the_initial_render() {
    let (cloud, cam) = random_scene(7, SceneOptions::default());
    let gt = random_image(8, cam.width, cam.height, 3, 0.0, 1.0);
    let views = vec![("v".to_string(), cam.clone(), gt.clone())];
    let settings = RenderSettings::default();
    let before = evalkit::evaluate_views(&cloud, &views, &settings).unwrap();
    let trainer = Trainer::new(cloud.clone(), vec![TrainView { camera: cam.clone(), image: gt.clone() }], TrainConfig::default(), 0).unwrap();
    let after = evalkit::evaluate_views(&trainer.cloud, &views, &settings).unwrap();
    assert_eq!(before, after);
    let out = raster::render(&cloud, &cam, &settings).unwrap();
    assert_eq!(before[0].psnr, psnr(&out.composed.clamped(0.0, 1.0), &gt).unwrap());
}
