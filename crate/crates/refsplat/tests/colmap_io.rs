use std::fs;
use std::path::Path;

use refsplat::colmap::{self, CameraModel};
use refsplat::dataset::load_colmap;
use refsplat::{imageio, Error};
use refsplat_core::Image;

const CAMERAS: &str = "# Camera list with one line of data per camera:
#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]
# Number of cameras: 2
1 PINHOLE 64 48 70.5 71.25 32 24
2 SIMPLE_PINHOLE 64 48 66.0 31.5 23.5
";

const IMAGES: &str = "# Image list with two lines of data per image:
#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME
#   POINTS2D[] as (X, Y, POINT3D_ID)
1 1 0 0 0 0 0 0 1 a.png
10.0 20.0 1 30.5 11.0 -1
2 0.9238795325112867 0 0.3826834323650898 0 0.5 -0.25 1.5 2 b.png

";

const POINTS: &str = "# 3D point list with one line of data per point:
1 0.1 0.2 3.0 255 0 128 0.5 1 0 2 0
2 -0.4 0.3 4.0 10 20 30 0.25 1 1
";

fn write_fixture(root: &Path, points: &str) {
    let sparse = root.join("sparse").join("0");
    fs::create_dir_all(&sparse).unwrap();
    fs::write(sparse.join("cameras.txt"), CAMERAS).unwrap();
    fs::write(sparse.join("images.txt"), IMAGES).unwrap();
    fs::write(sparse.join("points3D.txt"), points).unwrap();
    let images = root.join("images");
    fs::create_dir_all(&images).unwrap();
    for (name, seed) in [("a.png", 1usize), ("b.png", 2)] {
        let img = Image::from_fn(64, 48, 3, |x, y, c| ((x * 5 + y * 3 + c * 7 + seed * 11) % 256) as f64 / 255.0);
        imageio::save_png(&img, &images.join(name)).unwrap();
    }
}

#[test]
fn text_fixture_parses_file_values() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), POINTS);
    let model = colmap::read_text(&dir.path().join("sparse/0")).unwrap();
    assert_eq!(model.cameras.len(), 2);
    let c1 = &model.cameras[&1];
    assert_eq!(c1.model, CameraModel::Pinhole);
    assert_eq!(c1.pinhole(), (70.5, 71.25, 32.0, 24.0));
    assert_eq!(model.cameras[&2].pinhole(), (66.0, 66.0, 31.5, 23.5));
    assert_eq!(model.images.len(), 2);
    assert_eq!(model.images[1].name, "b.png");
    assert_eq!(model.images[1].tvec, [0.5, -0.25, 1.5]);
    assert_eq!(model.points.len(), 2);
    assert_eq!(model.points[0].rgb, [255, 0, 128]);

    let ds = load_colmap(dir.path()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!((ds.cameras[0].fx, ds.cameras[0].fy), (70.5, 71.25));
    assert_eq!((ds.cameras[1].fx, ds.cameras[1].fy), (66.0, 66.0));
    // 45° about y for image b
    let r = ds.cameras[1].rotation;
    assert!((r[0][0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert!((r[0][2] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert!((r[2][0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert_eq!(ds.colors[1], [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    assert_eq!(ds.images[0].width, 64);
}

#[test]
fn binary_and_text_encodings_agree() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), POINTS);
    let text = load_colmap(dir.path()).unwrap();
    let model = colmap::read_text(&dir.path().join("sparse/0")).unwrap();

    let bin_root = tempfile::tempdir().unwrap();
    let sparse = bin_root.path().join("sparse/0");
    fs::create_dir_all(&sparse).unwrap();
    colmap::write_binary(&model, &sparse).unwrap();
    fs::create_dir_all(bin_root.path().join("images")).unwrap();
    for n in ["a.png", "b.png"] {
        fs::copy(dir.path().join("images").join(n), bin_root.path().join("images").join(n)).unwrap();
    }
    assert_eq!(colmap::read_binary(&sparse).unwrap(), model);
    let bin = load_colmap(bin_root.path()).unwrap();
    assert_eq!(bin.names, text.names);
    assert_eq!(bin.cameras, text.cameras);
    assert_eq!(bin.images, text.images);
    assert_eq!(bin.points, text.points);
    assert_eq!(bin.colors, text.colors);

    // and the text writer reproduces the same model
    let again = tempfile::tempdir().unwrap();
    colmap::write_text(&model, again.path()).unwrap();
    assert_eq!(colmap::read_text(again.path()).unwrap(), model);
}

#[test]
fn binary_reader_skips_observations_and_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = Vec::new();
    b.extend(1u64.to_le_bytes());
    b.extend(7i32.to_le_bytes());
    b.extend(0i32.to_le_bytes());
    b.extend(32u64.to_le_bytes());
    b.extend(16u64.to_le_bytes());
    for p in [40.0f64, 16.0, 8.0] {
        b.extend(p.to_le_bytes());
    }
    fs::write(dir.path().join("cameras.bin"), &b).unwrap();

    let mut b = Vec::new();
    b.extend(1u64.to_le_bytes());
    b.extend(3u32.to_le_bytes());
    for v in [1.0f64, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3] {
        b.extend(v.to_le_bytes());
    }
    b.extend(7u32.to_le_bytes());
    b.extend(b"frame.jpg\0");
    b.extend(2u64.to_le_bytes());
    for _ in 0..2 {
        b.extend(1.5f64.to_le_bytes());
        b.extend(2.5f64.to_le_bytes());
        b.extend((-1i64).to_le_bytes());
    }
    fs::write(dir.path().join("images.bin"), &b).unwrap();

    let mut b = Vec::new();
    b.extend(2u64.to_le_bytes());
    for id in [5u64, 6] {
        b.extend(id.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0] {
            b.extend(v.to_le_bytes());
        }
        b.extend([9u8, 8, 7]);
        b.extend(0.75f64.to_le_bytes());
        b.extend(3u64.to_le_bytes());
        for _ in 0..3 {
            b.extend(3i32.to_le_bytes());
            b.extend(0i32.to_le_bytes());
        }
    }
    fs::write(dir.path().join("points3D.bin"), &b).unwrap();

    let m = colmap::read_binary(dir.path()).unwrap();
    assert_eq!(m.cameras[&7].model, CameraModel::SimplePinhole);
    assert_eq!(m.images[0].name, "frame.jpg");
    assert_eq!(m.images[0].camera_id, 7);
    assert_eq!(m.points.len(), 2);
    assert_eq!(m.points[1].id, 6);
    assert_eq!(m.points[1].rgb, [9, 8, 7]);
}

#[test]
fn empty_points_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), "# 3D point list\n");
    match load_colmap(dir.path()) {
        Err(e @ Error::Data(_)) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn unsupported_model_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), POINTS);
    let cams = CAMERAS.replace("SIMPLE_PINHOLE 64 48 66.0 31.5 23.5", "OPENCV 64 48 66 66 31.5 23.5 0 0 0 0");
    fs::write(dir.path().join("sparse/0/cameras.txt"), cams).unwrap();
    match load_colmap(dir.path()) {
        Err(Error::UnsupportedCameraModel(name)) => assert_eq!(name, "OPENCV"),
        other => panic!("expected an unsupported-model error, got {other:?}"),
    }
}

#[test]
fn simple_radial_is_accepted_without_distortion() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), POINTS);
    let cams = CAMERAS.replace("SIMPLE_PINHOLE 64 48 66.0 31.5 23.5", "SIMPLE_RADIAL 64 48 66.0 31.5 23.5 0.02");
    fs::write(dir.path().join("sparse/0/cameras.txt"), cams).unwrap();
    let ds = load_colmap(dir.path()).unwrap();
    assert_eq!((ds.cameras[1].fx, ds.cameras[1].cx, ds.cameras[1].cy), (66.0, 31.5, 23.5));
}

#[test]
fn missing_model_and_images_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_colmap(dir.path()), Err(Error::Data(_))));
    write_fixture(dir.path(), POINTS);
    fs::remove_file(dir.path().join("images/b.png")).unwrap();
    assert!(matches!(load_colmap(dir.path()), Err(Error::Image { .. })));
}

#[test]
fn model_search_order() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), POINTS);
    assert_eq!(colmap::find_model_dir(dir.path()).unwrap(), dir.path().join("sparse/0"));
    let flat = tempfile::tempdir().unwrap();
    fs::write(flat.path().join("cameras.txt"), CAMERAS).unwrap();
    assert_eq!(colmap::find_model_dir(flat.path()).unwrap(), flat.path());
}

#[test]
fn images_at_another_size_rescale_intrinsics() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), POINTS);
    let half = Image::filled(32, 24, 3, 0.5);
    imageio::save_png(&half, &dir.path().join("images/a.png")).unwrap();
    let ds = load_colmap(dir.path()).unwrap();
    assert_eq!((ds.cameras[0].width, ds.cameras[0].height), (32, 24));
    assert_eq!((ds.cameras[0].fx, ds.cameras[0].cx), (35.25, 16.0));
}
