use sscxr_core::data::{load_image, load_mask, synth_dataset, Dataset, SynthKind, TaskKind};

#[test]
fn seg_masks_match_the_recorded_ellipse() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_dataset(SynthKind::SegShapes, 6, 48, 11, dir.path()).unwrap();
    assert_eq!(out.manifest.task, TaskKind::Segmentation);
    for rec in &out.records {
        let e = rec.ellipse.expect("seg samples record their ellipse");
        let mask = load_mask(rec.mask.as_ref().unwrap(), 48).unwrap();
        let mut inside = 0;
        for i in 0..48 {
            for j in 0..48 {
                assert_eq!(mask[i * 48 + j] == 1, e.contains(i, j), "pixel ({i}, {j})");
                inside += usize::from(e.contains(i, j));
            }
        }
        assert!(inside > 0, "ellipse must cover at least one pixel");
    }
}

#[test]
fn cls2_is_balanced_and_labels_follow_the_disc() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_dataset(SynthKind::Cls2, 16, 32, 5, dir.path()).unwrap();
    let labels: Vec<usize> = out.records.iter().map(|r| r.label.unwrap()).collect();
    assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 8);
    let ds = Dataset::load(&out.manifest, 32).unwrap();
    for s in &ds.samples {
        let top: f32 = s.pixels[..16 * 32].iter().sum();
        let bottom: f32 = s.pixels[16 * 32..].iter().sum();
        let brighter_bottom = usize::from(bottom > top);
        assert_eq!(brighter_bottom, s.label.unwrap());
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for kind in [SynthKind::Recon, SynthKind::Cls2, SynthKind::SegShapes] {
        let oa = synth_dataset(kind, 4, 32, 9, a.path()).unwrap();
        let ob = synth_dataset(kind, 4, 32, 9, b.path()).unwrap();
        for (ra, rb) in oa.records.iter().zip(&ob.records) {
            assert_eq!(std::fs::read(&ra.image).unwrap(), std::fs::read(&rb.image).unwrap());
        }
        assert_eq!(
            std::fs::read(&oa.manifest_path).unwrap(),
            std::fs::read(&ob.manifest_path).unwrap()
        );
    }
    let c = tempfile::tempdir().unwrap();
    let oc = synth_dataset(SynthKind::Recon, 4, 32, 10, c.path()).unwrap();
    let oa = synth_dataset(SynthKind::Recon, 4, 32, 9, a.path()).unwrap();
    assert_ne!(
        std::fs::read(&oa.records[0].image).unwrap(),
        std::fs::read(&oc.records[0].image).unwrap()
    );
}

#[test]
fn loading_recovers_stored_pixels_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_dataset(SynthKind::Recon, 3, 40, 2, dir.path()).unwrap();
    for rec in &out.records {
        let raw = image::open(&rec.image).unwrap().to_luma8();
        let stored: Vec<f32> = raw.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
        let loaded = load_image(&rec.image, 40).unwrap();
        // Files are written min-max normalized, so values span 0..255.
        for (a, b) in loaded.pixels.iter().zip(&stored) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6, "{a} vs {b}");
        }
    }
}
