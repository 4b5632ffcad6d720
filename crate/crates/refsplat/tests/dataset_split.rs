use std::collections::HashSet;

use refsplat::dataset::{preprocess, resample_area, split_train_test, Dataset, Split, DEFAULT_RESOLUTION};
use refsplat_core::oracle::random_image;
use refsplat_core::{Camera, Image};

fn dummy(n: usize) -> Dataset {
    let cam = Camera::look_at([0.0, 0.0, -2.0], [0.0; 3], [0.0, -1.0, 0.0], 20.0, 20.0, 16, 16).unwrap();
    Dataset {
        names: (0..n).map(|i| format!("{i:02}.png")).collect(),
        cameras: vec![cam; n],
        images: vec![Image::new(16, 16, 3); n],
        split: vec![Split::Train; n],
        points: vec![[0.0; 3]],
        colors: vec![[0.5; 3]],
    }
}

#[test]
fn paper_size_from_double_resolution_is_a_2x2_box() {
    let (w, h) = DEFAULT_RESOLUTION;
    assert_eq!((w, h), (1296, 864));
    let src = random_image(3, 2 * w, 2 * h, 3, 0.0, 1.0);
    let out = &preprocess(std::slice::from_ref(&src), (w, h))[0];
    assert_eq!((out.width, out.height), (w, h));
    let mut worst: f64 = 0.0;
    for y in (0..h).step_by(7) {
        for x in (0..w).step_by(5) {
            for c in 0..3 {
                let box_mean = (src.get(2 * x, 2 * y, c) + src.get(2 * x + 1, 2 * y, c) + src.get(2 * x, 2 * y + 1, c) + src.get(2 * x + 1, 2 * y + 1, c)) / 4.0;
                worst = worst.max((out.get(x, y, c) - box_mean).abs());
            }
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn target_size_input_is_unchanged() {
    let src = random_image(4, 40, 30, 3, 0.0, 1.0);
    assert_eq!(resample_area(&src, 40, 30), src);
}

#[test]
fn constant_images_stay_constant() {
    for (sw, sh, tw, th) in [(37, 23, 16, 16), (16, 16, 37, 23), (100, 7, 9, 3)] {
        let src = Image::filled(sw, sh, 3, 0.6);
        let out = resample_area(&src, tw, th);
        assert!(out.data.iter().all(|v| (v - 0.6).abs() < 1e-14));
    }
}

#[test]
fn sixteen_images_give_two_test_views() {
    let mut ds = dummy(16);
    split_train_test(&mut ds, 5);
    assert_eq!(ds.indices(Split::Test).len(), 2);
    assert_eq!(ds.indices(Split::Train).len(), 14);
}

#[test]
fn split_is_a_seeded_partition() {
    for n in [8, 9, 23, 64] {
        let mut a = dummy(n);
        let mut b = dummy(n);
        split_train_test(&mut a, 11);
        split_train_test(&mut b, 11);
        assert_eq!(a.split, b.split);
        let train: HashSet<_> = a.indices(Split::Train).into_iter().collect();
        let test: HashSet<_> = a.indices(Split::Test).into_iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), n);
        assert_eq!(test.len(), n / 8);
    }
    let mut a = dummy(64);
    let mut b = dummy(64);
    split_train_test(&mut a, 1);
    split_train_test(&mut b, 2);
    assert_ne!(a.split, b.split);
}

#[test]
fn fewer_than_eight_images_are_all_train() {
    let mut ds = dummy(7);
    split_train_test(&mut ds, 0);
    assert!(ds.indices(Split::Test).is_empty());
    assert_eq!(ds.indices(Split::Train).len(), 7);
}

#[test]
fn split_record_round_trip() {
    let mut ds = dummy(24);
    split_train_test(&mut ds, 9);
    let rec = ds.split_record(9);
    let mut other = dummy(24);
    other.apply_split(&rec).unwrap();
    assert_eq!(other.split, ds.split);
    let mut small = dummy(2);
    assert!(small.apply_split(&rec).is_err());
}

#[test]
fn resize_rescales_cameras() {
    let mut ds = dummy(2);
    ds.resize((32, 24));
    ds.validate().unwrap();
    assert_eq!(ds.cameras[0].fx, 40.0);
    assert_eq!(ds.cameras[0].fy, 30.0);
}
