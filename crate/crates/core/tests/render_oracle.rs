use refsplat_core::oracle::{brute_force_render, random_scene, SceneOptions};
use refsplat_core::raster::{render, AccumulationMode, RenderSettings};

#[test]
fn tiled_renderer_matches_brute_force() {
    for seed in 0..6u64 {
        let (cloud, cam) = random_scene(seed, SceneOptions { count: 60, ..SceneOptions::default() });
        for mode in [AccumulationMode::Paper, AccumulationMode::Alpha] {
            let settings = RenderSettings { mode, early_stop: 0.0, ..RenderSettings::default() };
            let out = render(&cloud, &cam, &settings).unwrap();
            let reference = brute_force_render(&cloud, &cam, mode);
            let pairs = [
                (&out.composed, &reference.composed),
                (&out.transmitted, &reference.transmitted),
                (&out.reflected, &reference.reflected),
                (&out.reflection_map, &reference.reflection_map),
                (&out.depth, &reference.depth),
                (&out.alpha_accum, &reference.alpha),
            ];
            for (a, b) in pairs {
                let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(worst <= 1e-9, "seed {seed} {mode:?}: max difference {worst}");
            }
        }
    }
}

#[test]
fn composition_identities_hold() {
    for seed in 10..16u64 {
        let (cloud, cam) = random_scene(seed, SceneOptions::default());
        let out = render(&cloud, &cam, &RenderSettings::default()).unwrap();
        for p in 0..out.composed.pixel_count() {
            let w = out.reflection_map.data[p];
            assert!((0.0..=1.0).contains(&w));
            assert!((0.0..=1.0).contains(&out.alpha_accum.data[p]));
            for c in 0..3 {
                let i = 3 * p + c;
                let expected = out.transmitted.data[i] + w * out.reflected.data[i];
                assert!((out.composed.data[i] - expected).abs() <= 1e-6);
            }
        }
        assert_eq!(out.relit(1.0), out.composed.clamped(0.0, 1.0));
        assert_eq!(out.relit(0.0), out.transmitted.clamped(0.0, 1.0));
    }
}
