use std::collections::HashSet;

use ctf_core::datagen::{
    generate_pair, generate_pair_overlap, radius_outlier_filter, GenConfig, PointBudget, ScanPair,
};
use ctf_core::geometry::{dist_m, RigidTransform, Vec3};
use ctf_core::pointcloud::{voxel_iou, PointCloud};
use ctf_core::shapes::{generate_shape, ShapeFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape(family: ShapeFamily, budget: PointBudget, seed: u64) -> PointCloud {
    generate_shape(family, budget.shape, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn check_pair(pair: &ScanPair, config: &GenConfig) {
    let b = config.budget;
    assert_eq!(pair.p1.len(), b.part);
    assert_eq!(pair.p2.len(), b.part);
    for c in &pair.crops {
        assert!((config.radius_range.0..=config.radius_range.1).contains(&c.radius));
    }
    let ident = pair.m12_gt.compose(&pair.m21_gt);
    assert!(dist_m(&ident, &RigidTransform::IDENTITY) < 1e-6);
    for (i, levels) in pair.missing_cr.iter().chain(&pair.missing_rc).enumerate() {
        let sizes: Vec<usize> = levels.iter().map(PointCloud::len).collect();
        assert_eq!(sizes, b.levels().to_vec(), "level set {i}");
    }
    let prov = pair.provenance.as_ref().unwrap();
    for i in 0..2 {
        let crop: HashSet<_> = prov.crops[i].iter().collect();
        assert!(prov.parts[i].iter().all(|k| crop.contains(k)));
        assert!(prov.missing_cr[i].iter().all(|k| !crop.contains(k)));
    }
}

#[test]
fn generated_pairs_meet_constraints() {
    let config = GenConfig::default();
    let mut generated = 0;
    for (k, family) in ShapeFamily::ALL.into_iter().enumerate() {
        let s = shape(family, config.budget, k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let Ok(pair) = generate_pair(&s, &mut rng, &config) else {
            continue;
        };
        check_pair(&pair, &config);
        let d = (pair.crops[0].center() - pair.crops[1].center()).norm();
        assert!(d >= 0.3);
        let prov = pair.provenance.as_ref().unwrap();
        let crop1: HashSet<_> = prov.crops[0].iter().chain(&prov.crops[1]).collect();
        assert!(prov.missing_rc[0].iter().all(|k| !crop1.contains(k)));
        generated += 1;
    }
    assert!(generated >= 4, "only {generated} families generated");
}

#[test]
fn generation_is_deterministic() {
    let config = GenConfig::with_budget(PointBudget::SMALL);
    let s = shape(ShapeFamily::Chair, config.budget, 3);
    let a = generate_pair(&s, &mut ChaCha8Rng::seed_from_u64(9), &config).unwrap();
    let b = generate_pair(&s, &mut ChaCha8Rng::seed_from_u64(9), &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stored_transforms_replay_the_crops() {
    let config = GenConfig::with_budget(PointBudget::SMALL);
    let s = shape(ShapeFamily::Table, config.budget, 5);
    let pair = generate_pair(&s, &mut ChaCha8Rng::seed_from_u64(1), &config).unwrap();
    let prov = pair.provenance.as_ref().unwrap();

    // Canonical crop points pushed through M_i must reproduce the stored part.
    for i in 0..2 {
        let canonical = s.select(&prov.parts[i]);
        let replay = canonical.transformed(pair.part_transform(i));
        for (a, b) in replay.iter().zip(pair.part(i)) {
            assert!((a - b).norm() < 1e-9);
        }
    }
    // M21 carries part 2 onto where part 1's frame would see it.
    let p2_in_1 = pair.p2.transformed(&pair.m21_gt);
    let expected = s.select(&prov.parts[1]).transformed(&pair.m1);
    let err = p2_in_1
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");

    // Orientation ground truth lands each part in its canonical frame.
    let canon = pair.p1.rotated(&pair.r1o_gt);
    let expected = s.select(&prov.parts[0]).translated(&-pair.offsets[0]);
    for (a, b) in canon.iter().zip(&expected) {
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn overlap_band_holds() {
    let config = GenConfig {
        max_attempts: 400,
        ..GenConfig::with_budget(PointBudget::SMALL)
    };
    for eta in [0.0, 0.4] {
        let mut emitted = 0;
        for k in 0..6 {
            let s = shape(ShapeFamily::ALL[k % 6], config.budget, 40 + k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            if let Ok(pair) = generate_pair_overlap(&s, eta, &mut rng, &config) {
                assert!(pair.overlap_iou >= 0.9 * eta && pair.overlap_iou <= 1.1 * eta);
                let prov = pair.provenance.as_ref().unwrap();
                let iou = voxel_iou(&s.select(&prov.crops[0]), &s.select(&prov.crops[1]), 32);
                assert_eq!(iou, pair.overlap_iou);
                emitted += 1;
            }
        }
        assert!(emitted > 0, "no pair at eta={eta}");
    }
    let s = shape(ShapeFamily::Box, config.budget, 1);
    assert!(generate_pair_overlap(&s, 0.9, &mut ChaCha8Rng::seed_from_u64(0), &config).is_err());
}

#[test]
fn radius_filter_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..5 {
        let pc: PointCloud = (0..512)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
            .collect();
        let radius = 0.05 + 0.03 * trial as f64;
        let min_neighbors = 1 + trial;
        let brute: PointCloud = pc
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                pc.iter()
                    .enumerate()
                    .filter(|(j, q)| j != i && (*q - *p).norm() <= radius)
                    .count()
                    >= min_neighbors
            })
            .map(|(_, p)| *p)
            .collect();
        assert_eq!(radius_outlier_filter(&pc, radius, min_neighbors), brute);
    }
}
