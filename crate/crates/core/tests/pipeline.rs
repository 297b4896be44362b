//! Generator -> segmentation -> calibration on synthetic cases.

use std::fs;

use qct_core::calibration::{fit_calibration, manual_roi_calibration, region_statistics, RoiSpec, Statistic};
use qct_core::metrics::{dice, evaluate_case};
use qct_core::segmentation::{erode_labels, import_mask, segment_classical, DetectorParams, SegmentationError};
use qct_core::synth::{
    generate_dataset, ground_truth, render_ct, render_field, site_scanner, CaseSpec, DatasetManifest, DeformationSpec,
    Jitter, PartialFov, ScannerModel, SiteSpec, MANIFEST_NAME,
};
use qct_core::volume::{phantom_densities, read_hu, read_labels, write_volume, ImageGrid, LabelMap, VolumeError};

fn noiseless(alpha: f64, beta: f64) -> CaseSpec {
    CaseSpec::with_scanner(ScannerModel {
        alpha,
        beta,
        noise_sd: 0.0,
        kernel_blur_sd: 0.0,
        seed: 3,
    })
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn calibrating_the_noiseless_field_inverts_the_scanner_law() {
    let spec = noiseless(1.0 / 0.841, -0.6 / 0.841);
    let gt = ground_truth(&spec).unwrap();
    let field = render_field(&gt, &spec).unwrap();
    let stats = region_statistics(&field, &erode_labels(&gt, 3)).unwrap();
    let model = fit_calibration(&stats, phantom_densities(), Statistic::Mean).unwrap();
    assert!(rel(model.slope, spec.scanner.true_slope()) < 1e-6, "{}", model.slope);
    assert!(
        rel(model.intercept, spec.scanner.true_intercept()) < 1e-6,
        "{}",
        model.intercept
    );
    assert!((model.r - 1.0).abs() < 1e-12);
}

#[test]
fn blurred_field_still_inverts_after_erosion() {
    let mut spec = noiseless(1.3, 12.0);
    spec.scanner.kernel_blur_sd = 0.6;
    let gt = ground_truth(&spec).unwrap();
    let field = render_field(&gt, &spec).unwrap();
    let stats = region_statistics(&field, &erode_labels(&gt, 3)).unwrap();
    let model = fit_calibration(&stats, phantom_densities(), Statistic::Mean).unwrap();
    assert!(rel(model.slope, 1.0 / 1.3) < 1e-5, "{}", model.slope);
}

#[test]
fn detector_orders_rods_on_an_undeformed_phantom() {
    let mut spec = noiseless(1.2, -5.0);
    spec.deformation = DeformationSpec::default();
    let gt = ground_truth(&spec).unwrap();
    let ct = render_ct(&gt, &spec).unwrap();
    let pred = segment_classical(&ct, &DetectorParams::default()).unwrap();
    let stats = region_statistics(&ct, &pred).unwrap();
    let means = stats.values(Statistic::Mean);
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
    assert!(dice(&pred, &gt).unwrap() >= 0.97);
}

#[test]
fn detector_matches_ground_truth_on_a_noisy_bowed_case() {
    let site = SiteSpec {
        tag: "B".into(),
        template: CaseSpec::with_scanner(site_scanner("B").unwrap()),
        count: 1,
        jitter: Jitter::default(),
    };
    let spec = qct_core::synth::jittered_case(&site, "B004", 11);
    let gt = ground_truth(&spec).unwrap();
    let ct = render_ct(&gt, &spec).unwrap();
    let pred = segment_classical(&ct, &DetectorParams::default()).unwrap();
    let report = evaluate_case("B004", "B", &ct, &pred, &gt, 3).unwrap();
    for m in report.labels {
        assert!(m.dice >= 0.97, "{report:?}");
        assert!(m.asd_mm <= 0.3, "{report:?}");
    }
    // Segmentation is a pure function of the image.
    assert_eq!(pred, segment_classical(&ct, &DetectorParams::default()).unwrap());
}

#[test]
fn partial_field_of_view_is_tolerated() {
    let mut spec = CaseSpec::with_scanner(site_scanner("A").unwrap());
    spec.artifacts.partial_fov = Some(PartialFov { crop_fraction: 0.2 });
    let gt = ground_truth(&spec).unwrap();
    let ct = render_ct(&gt, &spec).unwrap();
    let pred = segment_classical(&ct, &DetectorParams::default()).unwrap();
    for code in 1..=5 {
        assert!(pred.count(code) > 0, "label {code} missing");
    }
}

#[test]
fn flat_water_is_not_a_phantom() {
    let mut spec = noiseless(1.0, 0.0);
    spec.geometry.rod_densities = [1.0, 2.0, 3.0, 4.0];
    let gt = ground_truth(&spec).unwrap();
    let ct = render_ct(&gt, &spec).unwrap();
    // Rods at +1..+4 HU never clear the contrast margin.
    assert!(matches!(
        segment_classical(&ct, &DetectorParams::default()),
        Err(SegmentationError::PhantomNotFound)
    ));
}

#[test]
fn manual_rois_agree_with_automated_fit_on_noiseless_data() {
    let spec = noiseless(1.0 / 0.744, 0.0);
    let gt = ground_truth(&spec).unwrap();
    let field = render_field(&gt, &spec).unwrap();
    let auto = fit_calibration(
        &region_statistics(&field, &erode_labels(&gt, 3)).unwrap(),
        phantom_densities(),
        Statistic::Mean,
    )
    .unwrap();
    let roi = RoiSpec::centered_on(&gt, [2, 5, 8], 4.0).unwrap();
    let manual = manual_roi_calibration(&field, &roi, phantom_densities()).unwrap();
    assert!((manual.slope - auto.slope).abs() < 1e-6);

    let one = RoiSpec::new(vec![5], roi.rods).unwrap();
    let same = RoiSpec::new(vec![5, 5, 5], roi.rods).unwrap();
    assert_eq!(
        manual_roi_calibration(&field, &one, phantom_densities()).unwrap(),
        manual_roi_calibration(&field, &same, phantom_densities()).unwrap()
    );
}

#[test]
fn dataset_generation_is_deterministic() {
    let sites = |count| {
        vec![
            SiteSpec {
                tag: "A".into(),
                template: CaseSpec::with_scanner(site_scanner("A").unwrap()),
                count,
                jitter: Jitter::default(),
            },
            SiteSpec {
                tag: "B".into(),
                template: CaseSpec::with_scanner(site_scanner("B").unwrap()),
                count,
                jitter: Jitter::default(),
            },
        ]
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = generate_dataset(&sites(2), d1.path(), 42).unwrap();
    let m2 = generate_dataset(&sites(2), d2.path(), 42).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.records.len(), 4);

    let mut names: Vec<_> = fs::read_dir(d1.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    // 4 cases x (mhd + raw) x (image + labels) + 4 params + manifest.
    assert_eq!(names.len(), 4 * 4 + 4 + 1);
    for name in &names {
        assert_eq!(
            fs::read(d1.path().join(name)).unwrap(),
            fs::read(d2.path().join(name)).unwrap(),
            "{name:?}"
        );
    }

    let manifest = DatasetManifest::read(&d1.path().join(MANIFEST_NAME)).unwrap();
    let ids: Vec<_> = manifest.records.iter().map(|r| r.case_id.as_str()).collect();
    assert_eq!(ids, ["A000", "A001", "B000", "B001"]);
    for r in &manifest.records {
        let ct = read_hu(&r.volume_path).unwrap();
        let gt = read_labels(&r.label_path).unwrap();
        assert!(ct.grid().is_compatible(gt.grid()));
        assert!((r.true_slope() - 1.0 / r.alpha).abs() < 1e-15);
    }

    let other = tempfile::tempdir().unwrap();
    let m3 = generate_dataset(&sites(2), other.path(), 43).unwrap();
    assert_ne!(m1.records[0].alpha, m3.records[0].alpha);
}

#[test]
fn imported_masks_are_checked_against_the_image_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = ImageGrid::new([8, 6, 3], [0.8, 0.8, 1.0], [0.0; 3]).unwrap();
    let mask = LabelMap::from_fn(grid.clone(), |x, _, _| (x % 6) as u8).unwrap();
    let path = dir.path().join("mask.mhd");
    write_volume(&mask, &path).unwrap();
    assert_eq!(import_mask(&path, &grid).unwrap(), mask);

    let wider = ImageGrid::new([9, 6, 3], [0.8, 0.8, 1.0], [0.0; 3]).unwrap();
    assert!(matches!(
        import_mask(&path, &wider),
        Err(SegmentationError::Volume(VolumeError::GridMismatch { .. }))
    ));

    // Patch one voxel to code 7 directly in the raw file.
    let raw = dir.path().join("mask.raw");
    let mut bytes = fs::read(&raw).unwrap();
    bytes[5] = 7;
    fs::write(&raw, bytes).unwrap();
    assert!(matches!(
        import_mask(&path, &grid),
        Err(SegmentationError::Volume(VolumeError::InvalidLabel {
            code: 7,
            index: 5
        }))
    ));
}
