//! Partition, synthesis, loading and slicing properties of the data pipeline.

use std::collections::BTreeSet;

use duoseg_core::data::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dummy(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|id| {
            Sample::new(
                id,
                ImageTensor::new(1, 2, 2, vec![id as f32 / n as f32; 4]).unwrap(),
                MaskTensor::new(2, 2, vec![0, 1, 0, 1]).unwrap(),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn splits_partition_all_ids_for_random_fractions_and_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let n = rng.random_range(10..120);
        let train = rng.random_range(0.3..0.95);
        let label = rng.random_range(0.01..=1.0);
        let seed = rng.random();
        let s = make_split(dummy(n), train, label, seed).unwrap();
        let l: BTreeSet<usize> = s.train_labeled.iter().map(|x| x.id).collect();
        let u: BTreeSet<usize> = s.train_unlabeled.iter().map(|x| x.id).collect();
        let t: BTreeSet<usize> = s.test.iter().map(|x| x.id).collect();
        assert_eq!(l.len() + u.len() + t.len(), n, "duplicate ids");
        assert!(l.is_disjoint(&u) && l.is_disjoint(&t) && u.is_disjoint(&t));
        let all: BTreeSet<usize> = l.union(&u).chain(t.iter()).copied().collect();
        assert_eq!(all, (0..n).collect());
    }
}

#[test]
fn views_partition_labeled_samples_for_every_size() {
    for n in 2..=50 {
        for seed in 0..3 {
            let mut s = make_split(dummy(100), 0.8, 1.0, seed).unwrap();
            s.train_labeled.truncate(n);
            let v = assign_views(&s, seed).unwrap();
            let a: BTreeSet<usize> = v.view1.iter().copied().collect();
            let b: BTreeSet<usize> = v.view2.iter().copied().collect();
            assert!(a.is_disjoint(&b));
            assert_eq!(a.union(&b).copied().collect::<BTreeSet<_>>(), (0..n).collect());
            assert!(v.view1.len().abs_diff(v.view2.len()) <= 1);
        }
    }
    let mut s = make_split(dummy(20), 0.8, 0.5, 0).unwrap();
    s.train_labeled.truncate(1);
    assert!(assign_views(&s, 0).is_err());
}

/// Independent point-in-ellipse test in the ellipse's own frame.
fn inside(e: &Ellipse, row: usize, col: usize) -> bool {
    let (x, y) = (col as f64 + 0.5 - e.cx, row as f64 + 0.5 - e.cy);
    let (ca, sa) = (e.angle.cos(), e.angle.sin());
    let along = x * ca + y * sa;
    let across = y * ca - x * sa;
    (along / e.semi_major).powi(2) + (across / e.semi_minor).powi(2) <= 1.0
}

#[test]
fn masks_equal_an_independent_rasterization_of_the_stored_shapes() {
    let cfg = SynthConfig {
        n: 40,
        resolution: 48,
        seed: 3,
        noise_level: 0.2,
    };
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    for (s, p) in ds.samples.iter().zip(&ds.params) {
        assert_eq!(s.id, p.id);
        assert!((1..=3).contains(&p.ellipses.len()));
        assert!(p.foreground - p.background >= 0.3);
        for row in 0..48 {
            for col in 0..48 {
                let want = p.ellipses.iter().any(|e| inside(e, row, col));
                assert_eq!(s.mask.data()[row * 48 + col] == 1, want, "sample {} at ({row},{col})", s.id);
            }
        }
    }
}

#[test]
fn synthetic_masks_cover_a_moderate_fraction() {
    let ds = generate_synthetic_dataset(&SynthConfig {
        n: 200,
        resolution: 64,
        seed: 7,
        noise_level: 0.1,
    })
    .unwrap();
    assert_eq!(ds.samples.len(), 200);
    for s in &ds.samples {
        let f = s.mask.foreground_fraction();
        assert!(f > 0.01 && f < 0.6, "sample {} covers {f}", s.id);
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(s.mask.data().iter().all(|&m| m <= 1));
    }
}

#[test]
fn directory_round_trip_recovers_synthetic_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (img_dir, mask_dir) = (dir.path().join("images"), dir.path().join("masks"));
    std::fs::create_dir_all(&img_dir).unwrap();
    std::fs::create_dir_all(&mask_dir).unwrap();
    let ds = generate_synthetic_dataset(&SynthConfig {
        n: 6,
        resolution: 32,
        seed: 1,
        noise_level: 0.0,
    })
    .unwrap();
    for s in &ds.samples {
        let name = format!("{:03}.png", s.id);
        save_gray_png16(&img_dir.join(&name), 32, 32, s.image.data()).unwrap();
        let m: Vec<f32> = s.mask.data().iter().map(|&v| v as f32).collect();
        save_gray_png(&mask_dir.join(&name), 32, 32, &m).unwrap();
    }
    let loaded = load_image_mask_dir(&img_dir, &mask_dir, 32).unwrap();
    assert_eq!(loaded.len(), 6);
    for (a, b) in loaded.iter().zip(&ds.samples) {
        assert_eq!(a.mask, b.mask);
        // loaded images are min-max scaled, so foreground is 1 and background 0
        for (&v, &m) in a.image.data().iter().zip(a.mask.data()) {
            assert!((v - m as f32).abs() < 1e-4);
        }
    }
    let half = load_image_mask_dir(&img_dir, &mask_dir, 64).unwrap();
    assert!(half.iter().all(|s| s.mask.data().iter().all(|&m| m <= 1)));
}

#[test]
fn volume_slices_follow_the_axis_convention() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f32> = (0..2 * 3 * 4).map(|v| v as f32).collect();
    let vol = Volume::new([2, 3, 4], data).unwrap();
    let path = dir.path().join("vol");
    vol.write(&path).unwrap();
    let back = Volume::read(&path.with_extension("raw")).unwrap();
    assert_eq!(back, vol);
    assert_eq!(vol.slice(1, 2).unwrap(), (2, 4, vec![8.0, 9.0, 10.0, 11.0, 20.0, 21.0, 22.0, 23.0]));
    assert_eq!(vol.slice(2, 0).unwrap(), (2, 3, vec![0.0, 4.0, 8.0, 12.0, 16.0, 20.0]));
    let files = slice_volume(&path, 0, &dir.path().join("out"), true).unwrap();
    assert_eq!(files.len(), 2);
    let (w, h, first) = load_gray_png(&files[0]).unwrap();
    assert_eq!((h, w), (3, 4));
    assert_eq!(first[0], 0.0);
    assert_eq!(first[11], 1.0);
}

#[test]
fn constant_slices_normalize_to_zero() {
    let mut v = vec![0.4f32; 9];
    min_max_normalize(&mut v);
    assert!(v.iter().all(|&x| x == 0.0));
}

proptest! {
    #[test]
    fn synthesis_is_a_function_of_its_config(seed in 0u64..1000, noise in 0.0f64..0.9) {
        let cfg = SynthConfig { n: 5, resolution: 32, seed, noise_level: noise };
        let a = generate_synthetic_dataset(&cfg).unwrap();
        let b = generate_synthetic_dataset(&cfg).unwrap();
        prop_assert_eq!(a.samples, b.samples);
    }
}
