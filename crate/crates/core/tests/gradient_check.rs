use refsplat_core::loss::LossConfig;
use refsplat_core::oracle::{check_loss_gradients, random_image, random_scene, SceneOptions};
use refsplat_core::raster::{AccumulationMode, RenderSettings};

#[test]
fn total_loss_gradients_match_central_differences() {
    // heavier regularizer weights so every term visibly contributes
    let cfg = LossConfig { lambda_bi: 0.05, lambda_ref: 0.05, ..LossConfig::default() };
    for (seed, mode) in [(1u64, AccumulationMode::Paper), (2, AccumulationMode::Alpha)] {
        let opts = SceneOptions { count: 12, width: 24, height: 24, log_scale: (-1.9, -1.2), ..SceneOptions::default() };
        let (cloud, cam) = random_scene(seed, opts);
        let gt = random_image(seed + 100, 24, 24, 3, 0.0, 1.0);
        let settings = RenderSettings::with_mode(mode);
        let report = check_loss_gradients(&cloud, &cam, &gt, &cfg, &settings, 10, 1e-5, 1e-5, 1e-10);
        for r in &report {
            assert!(r.checked > 0, "{:?}: nothing checked", r.group);
            assert_eq!(r.failures, 0, "{:?} ({mode:?}): {} of {} failed, worst rel {:e}", r.group, r.failures, r.checked, r.worst_rel);
        }
    }
}
