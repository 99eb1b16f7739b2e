use rand::{Rng as _, SeedableRng};
use sscxr_core::data::Batch;
use sscxr_core::gmml::{apply_corruption, sample_group_mask, CorruptionMode, CorruptionSpec};
use sscxr_core::rng::Rng;

fn random_batch(rng: &mut Rng, n: usize, size: usize) -> Batch<f64> {
    Batch {
        images: (0..n * size * size).map(|_| rng.random::<f64>()).collect(),
        height: size,
        width: size,
        labels: None,
        masks: None,
        sample_indices: (0..n).collect(),
    }
}

fn random_spec(rng: &mut Rng) -> CorruptionSpec {
    let modes = [
        CorruptionMode::NoiseOnly,
        CorruptionMode::AlienOnly,
        CorruptionMode::PerSampleChoice,
        CorruptionMode::BothDisjoint,
    ];
    let a0 = rng.random_range(1..=4);
    CorruptionSpec {
        noise_fraction: rng.random_range(0.0..=1.0),
        alien_fraction: rng.random_range(0.0..=1.0),
        mode: modes[rng.random_range(0..modes.len())],
        group_aspect: (1.0 / 3.0, 3.0),
        group_area: (a0, a0 + rng.random_range(0..8)),
    }
}

#[test]
fn unmasked_pixels_are_untouched() {
    let mut meta = Rng::seed_from_u64(99);
    for _ in 0..300 {
        let p = [2, 4][meta.random_range(0..2)];
        let size = p * meta.random_range(2..6);
        let n = meta.random_range(2..4);
        let batch = random_batch(&mut meta, n, size);
        let spec = random_spec(&mut meta);
        let mut rng = Rng::seed_from_u64(meta.random());
        let c = apply_corruption(&batch, p, &spec, &mut rng).unwrap();
        for (i, (&m, (&x, &y))) in c.masks.iter().zip(c.images.iter().zip(&batch.images)).enumerate() {
            if m == 0.0 {
                assert_eq!(x.to_bits(), y.to_bits(), "pixel {i}");
            } else {
                assert_eq!(m, 1.0);
            }
        }
    }
}

#[test]
fn masks_are_patch_aligned_and_cover_the_target() {
    let mut meta = Rng::seed_from_u64(3);
    for _ in 0..200 {
        let spec = random_spec(&mut meta);
        let (gh, gw) = (meta.random_range(2..10), meta.random_range(2..10));
        let target = spec.noise_fraction;
        let m = sample_group_mask(gh, gw, target, &spec, &mut meta);
        let needed = if target > 0.0 { ((target * (gh * gw) as f64) - 1e-9).ceil().max(1.0) as usize } else { 0 };
        assert!(m.marked() >= needed);
        for b in &m.blocks {
            assert!(b.top + b.height <= gh && b.left + b.width <= gw);
            assert!(b.height * b.width <= spec.group_area.1);
        }
        let px = m.pixel_mask(3);
        for i in 0..gh * 3 {
            for j in 0..gw * 3 {
                assert_eq!(px[i * gw * 3 + j] == 1, m.grid[(i / 3) * gw + j / 3]);
            }
        }
    }
}

#[test]
fn noise_is_uniform_and_alien_copies_the_donor() {
    let mut meta = Rng::seed_from_u64(5);
    let batch = random_batch(&mut meta, 4, 16);
    let noise = CorruptionSpec {
        mode: CorruptionMode::NoiseOnly,
        noise_fraction: 1.0,
        ..CorruptionSpec::default()
    };
    let c = apply_corruption(&batch, 4, &noise, &mut Rng::seed_from_u64(1)).unwrap();
    let mean = c.images.iter().sum::<f64>() / c.images.len() as f64;
    assert!(c.images.iter().all(|&v| (0.0..1.0).contains(&v)));
    assert!((mean - 0.5).abs() < 0.03, "mean {mean}");

    let alien = CorruptionSpec {
        mode: CorruptionMode::AlienOnly,
        alien_fraction: 0.5,
        ..CorruptionSpec::default()
    };
    let c = apply_corruption(&batch, 4, &alien, &mut Rng::seed_from_u64(2)).unwrap();
    for (k, d) in c.details.iter().enumerate() {
        let donor = d.donor.expect("alien patches need a donor");
        assert_ne!(donor, k);
        for idx in 0..256 {
            if c.masks[k * 256 + idx] == 1.0 {
                assert_eq!(c.images[k * 256 + idx], batch.images[donor * 256 + idx]);
            }
        }
    }
}

#[test]
fn same_rng_state_gives_the_same_corruption() {
    let mut meta = Rng::seed_from_u64(8);
    let batch = random_batch(&mut meta, 3, 16);
    let spec = CorruptionSpec::default();
    let a = apply_corruption(&batch, 4, &spec, &mut Rng::seed_from_u64(4)).unwrap();
    let b = apply_corruption(&batch, 4, &spec, &mut Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a.images, b.images);
    assert_eq!(a.masks, b.masks);
}
