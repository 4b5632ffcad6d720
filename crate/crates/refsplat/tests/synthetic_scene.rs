use refsplat::dataset::load_colmap;
use refsplat::synth::{generate_synthetic_mirror_scene, load_masks, MirrorRect, SyntheticSceneSpec};
use refsplat::Error;
use refsplat_core::Camera;

fn small_spec() -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        n_views: 9,
        resolution: (64, 64),
        focal: 55.5,
        ..SyntheticSceneSpec::default()
    }
}

#[test]
fn zero_strength_reproduces_the_mirror_free_render() {
    let spec = SyntheticSceneSpec {
        reflection_strength: 0.0,
        ..small_spec()
    };
    let scene = generate_synthetic_mirror_scene(&spec).unwrap();
    for (img, diffuse) in scene.images.iter().zip(&scene.diffuse) {
        assert_eq!(img, diffuse);
    }
    assert!(scene.masks.iter().any(|m| m.data.contains(&1.0)));
}

#[test]
fn composition_is_exactly_additive() {
    let spec = small_spec();
    let scene = generate_synthetic_mirror_scene(&spec).unwrap();
    for v in 0..scene.images.len() {
        let (img, d, m, r) = (&scene.images[v], &scene.diffuse[v], &scene.masks[v], &scene.mirrored[v]);
        for p in 0..m.data.len() {
            for c in 0..3 {
                let want = d.data[3 * p + c] + m.data[p] * spec.reflection_strength * r.data[3 * p + c];
                assert_eq!(img.data[3 * p + c], want);
                assert!((0.0..=1.0).contains(&img.data[3 * p + c]));
            }
        }
    }
}

#[test]
fn same_seeds_give_identical_pixels() {
    let a = generate_synthetic_mirror_scene(&small_spec()).unwrap();
    let b = generate_synthetic_mirror_scene(&small_spec()).unwrap();
    assert_eq!(a.images, b.images);
    assert_eq!(a.points, b.points);
    let c = generate_synthetic_mirror_scene(&SyntheticSceneSpec { object_seed: 99, ..small_spec() }).unwrap();
    assert_ne!(a.images, c.images);
}

fn project(cam: &Camera, p: [f64; 3]) -> [f64; 3] {
    let r = cam.rotation;
    let t = cam.translation;
    let x = [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i]);
    [cam.fx * x[0] / x[2] + cam.cx, cam.fy * x[1] / x[2] + cam.cy, x[2]]
}

/// Sutherland-Hodgman clip of a polygon against one half-plane `a·u + b·v <= c`.
fn clip(poly: &[[f64; 2]], a: f64, b: f64, c: f64) -> Vec<[f64; 2]> {
    let inside = |p: &[f64; 2]| a * p[0] + b * p[1] <= c;
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let (pi, qi) = (inside(&p), inside(&q));
        if pi {
            out.push(p);
        }
        if pi != qi {
            let fp = a * p[0] + b * p[1] - c;
            let fq = a * q[0] + b * q[1] - c;
            let s = fp / (fp - fq);
            out.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
        }
    }
    out
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>().abs() / 2.0
}

#[test]
fn mask_coverage_matches_projected_rectangle() {
    let spec = SyntheticSceneSpec::default();
    let scene = generate_synthetic_mirror_scene(&spec).unwrap();
    let (w, h) = (spec.resolution.0 as f64, spec.resolution.1 as f64);
    let [cx, cy] = spec.mirror.center;
    let [hx, hy] = spec.mirror.half_extent;
    let corners = [[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]];
    let mut checked = 0;
    for (cam, mask) in scene.cameras.iter().zip(&scene.masks) {
        let proj: Vec<[f64; 3]> = corners.iter().map(|c| project(cam, [c[0], c[1], spec.wall_z])).collect();
        assert!(proj.iter().all(|p| p[2] > 0.0));
        let mut poly: Vec<[f64; 2]> = proj.iter().map(|p| [p[0], p[1]]).collect();
        poly = clip(&poly, -1.0, 0.0, 0.0);
        poly = clip(&poly, 1.0, 0.0, w);
        poly = clip(&poly, 0.0, -1.0, 0.0);
        poly = clip(&poly, 0.0, 1.0, h);
        let area = shoelace(&poly);
        let covered: f64 = mask.data.iter().sum();
        if area > 0.0 {
            let rel = (covered - area).abs() / area;
            assert!(rel <= 0.02, "coverage {covered} vs analytic {area:.1} ({:.2}%)", 100.0 * rel);
            checked += 1;
        }
    }
    assert_eq!(checked, scene.cameras.len());
}

#[test]
fn reflector_out_of_view_is_rejected() {
    let spec = SyntheticSceneSpec {
        mirror: MirrorRect {
            center: [40.0, 0.0],
            half_extent: [0.5, 0.5],
        },
        ..small_spec()
    };
    let cams = SyntheticSceneSpec::default().cameras().unwrap();
    assert!(matches!(spec.check_visibility(&cams), Err(Error::Config(_))));
    let behind = SyntheticSceneSpec { wall_z: -4.0, ..SyntheticSceneSpec::default() };
    assert!(matches!(behind.check_visibility(&cams), Err(Error::Config(_))));
    assert!(SyntheticSceneSpec { n_views: 0, ..small_spec() }.validate().is_err());
    assert!(SyntheticSceneSpec { reflection_strength: 0.9, ..small_spec() }.validate().is_err());
}

#[test]
fn written_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_synthetic_mirror_scene(&small_spec()).unwrap();
    scene.write(dir.path()).unwrap();
    let ds = load_colmap(dir.path()).unwrap();
    assert_eq!(ds.len(), scene.cameras.len());
    for (a, b) in ds.cameras.iter().zip(&scene.cameras) {
        assert_eq!((a.width, a.height), (b.width, b.height));
        assert!((a.fx - b.fx).abs() < 1e-12);
        for i in 0..3 {
            assert!((a.translation[i] - b.translation[i]).abs() < 1e-12);
            for j in 0..3 {
                assert!((a.rotation[i][j] - b.rotation[i][j]).abs() < 1e-12);
            }
        }
    }
    for (a, b) in ds.images.iter().zip(&scene.images) {
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(ds.points.len(), scene.points.len());
    let masks = load_masks(dir.path(), &ds.names).unwrap();
    for (a, b) in masks.iter().zip(&scene.masks) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
    }
}
