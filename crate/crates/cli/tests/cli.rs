//! End-to-end runs of the `qct` subcommands through `qct_cli::run`.

use std::fs;
use std::path::Path;

use qct_core::calibration::CalibrationModel;
use qct_core::metrics::FoldPlan;
use qct_core::synth::DatasetManifest;
use qct_core::volume::{read_labels, write_volume, HuVolume, ImageGrid, LabelMap, Volume};
use tempfile::TempDir;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn qct(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("qct").chain(args.iter().copied());
    let code = qct_cli::run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generates a small two-site dataset and returns its manifest path.
fn dataset(dir: &Path, sites: &str) -> std::path::PathBuf {
    let data = dir.join("data");
    let o = qct(&["gen", "--sites", sites, "--seed", "11", "--out", p(&data), "--quiet"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    data.join("manifest.tsv")
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(qct(&["--help"]).code, 0);
    assert_eq!(qct(&["--version"]).code, 0);
    assert!(qct(&["gen", "--help"]).stdout.contains("--sites"));
}

#[test]
fn unknown_flag_is_a_configuration_error() {
    let o = qct(&["gen", "--bogus"]);
    assert_eq!(o.code, 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn missing_out_prints_usage() {
    let o = qct(&["gen", "--sites", "A:1"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("--out is required"), "{}", o.stderr);
    assert!(o.stderr.contains("Usage"), "{}", o.stderr);
}

#[test]
fn bad_site_lists_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(qct(&["gen", "--sites", "A", "--out", p(&out)]).code, 2);
    assert_eq!(qct(&["gen", "--sites", "A:two", "--out", p(&out)]).code, 2);
    // No preset scanner for site C and no alpha/beta given.
    assert_eq!(qct(&["gen", "--sites", "C:1", "--out", p(&out)]).code, 2);
    assert!(!out.exists(), "nothing is written before validation passes");
}

#[test]
fn gen_is_deterministic_for_a_seed() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = qct(&["gen", "--sites", "A:2,B:1", "--seed", "5", "--out", p(dir)]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        assert!(o.stdout.contains("manifest.tsv"));
    }
    for name in ["manifest.tsv", "A000.raw", "A001_label.raw", "B000.raw", "B000.params"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let c = tmp.path().join("c");
    qct(&["gen", "--sites", "A:1", "--seed", "6", "--out", p(&c), "--quiet"]);
    assert_ne!(
        fs::read(a.join("A000.raw")).unwrap(),
        fs::read(c.join("A000.raw")).unwrap()
    );
}

#[test]
fn config_file_sets_template_values_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(
        &cfg,
        "# small scans\nsites = A:1,C:1\ndims = 360 200 4\njitter = off\nC.alpha = 1.25\nC.beta = 3\nseed = 9\n",
    )
    .unwrap();
    let out = tmp.path().join("d");
    let o = qct(&["--config", p(&cfg), "gen", "--out", p(&out), "--quiet"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let m = DatasetManifest::read(&out.join("manifest.tsv")).unwrap();
    assert_eq!(m.records.len(), 2);
    let c = &m.records[1];
    assert_eq!(c.site, "C");
    assert_eq!((c.alpha, c.beta), (1.25, 3.0));
    assert_eq!(read_labels(&c.label_path).unwrap().grid().dims(), [360, 200, 4]);

    let out2 = tmp.path().join("e");
    let o = qct(&[
        "--config",
        p(&cfg),
        "gen",
        "--sites",
        "B:1",
        "--out",
        p(&out2),
        "--quiet",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let m = DatasetManifest::read(&out2.join("manifest.tsv")).unwrap();
    assert_eq!(m.records.len(), 1);
    assert_eq!(m.records[0].site, "B");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "erosion = 3\n").unwrap();
    let o = qct(&["--config", p(&cfg), "gen", "--out", p(tmp.path())]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("unknown key"), "{}", o.stderr);
}

#[test]
fn full_pipeline_recovers_site_calibrations() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "A:4,B:4");

    let o = qct(&["segment", "--manifest", p(&manifest)]);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    assert!(o.stdout.contains("segmented 8 of 8 cases"), "{}", o.stdout);

    let cal = tmp.path().join("cal");
    let o = qct(&["calibrate", "--manifest", p(&manifest), "--out", p(&cal)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(
        o.stdout.lines().filter(|l| l.contains("r=0.99999")).count(),
        8,
        "{}",
        o.stdout
    );
    let models = fs::read_to_string(cal.join("models.csv")).unwrap();
    for line in models.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        let (slope, r, true_slope) = (f[0], f[2], f[3]);
        assert!(((slope - true_slope) / true_slope).abs() < 0.01, "{line}");
        assert!(r >= 0.999, "{line}");
    }
    for ext in [".model", "_regression.csv", "_regression.svg"] {
        assert!(cal.join("A").join(format!("A000{ext}")).exists(), "{ext}");
    }
    let rec = fs::read_to_string(cal.join("B").join("B003.model")).unwrap();
    assert_eq!(CalibrationModel::from_record(&rec).unwrap().case_id, "B003");

    let eval = tmp.path().join("eval");
    let o = qct(&["evaluate", "--manifest", p(&manifest), "--out", p(&eval)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(
        fs::read_to_string(eval.join("metrics.csv")).unwrap().lines().count(),
        1 + 8 * 5
    );
    assert!(fs::read_to_string(eval.join("summary.csv"))
        .unwrap()
        .contains("dice,all"));

    let cmp = tmp.path().join("cmp");
    let (a, b) = (cal.join("A"), cal.join("B"));
    let o = qct(&[
        "compare",
        "--site-a",
        p(&a),
        "--site-b",
        p(&b),
        "--range",
        "-100:700",
        "--out",
        p(&cmp),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("significant HU"), "{}", o.stdout);
    let csv = fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 801);
    assert!(cmp.join("comparison.svg").exists());
    assert_eq!(
        fs::read_to_string(cmp.join("comparison_summary.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    // Ground-truth labels give the same kind of output.
    let cal2 = tmp.path().join("cal_truth");
    let o = qct(&[
        "calibrate",
        "--manifest",
        p(&manifest),
        "--labels-from",
        "truth",
        "--stat",
        "median",
        "--out",
        p(&cal2),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
}

#[test]
fn compare_with_a_narrow_range_and_strict_alpha() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "A:3,B:3");
    let cal = tmp.path().join("cal");
    assert_eq!(
        qct(&[
            "calibrate",
            "--manifest",
            p(&manifest),
            "--labels-from",
            "truth",
            "--out",
            p(&cal),
            "--quiet"
        ])
        .code,
        0
    );
    let out = tmp.path().join("cmp");
    // With three cases per site the smallest two-sided MWU p-value is 0.1.
    let o = qct(&[
        "compare",
        "--site-a",
        p(&cal.join("A")),
        "--site-b",
        p(&cal.join("B")),
        "--range",
        "500:510",
        "--significance",
        "0.05",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("no significant HU"), "{}", o.stdout);
    assert_eq!(
        fs::read_to_string(out.join("comparison.csv")).unwrap().lines().count(),
        12
    );
}

#[test]
fn compare_rejects_bad_ranges_and_empty_sites() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("o");
    let base = [
        "compare",
        "--site-a",
        p(&empty),
        "--site-b",
        p(&empty),
        "--out",
        p(&out),
    ];
    assert_eq!(qct(&base).code, 2);
    let mut args = base.to_vec();
    args.extend(["--range", "700:-100"]);
    assert_eq!(qct(&args).code, 2);
    let mut args = base.to_vec();
    args.extend(["--range", "abc"]);
    assert_eq!(qct(&args).code, 2);
    let mut args = base.to_vec();
    args.extend(["--significance", "1.5"]);
    assert_eq!(qct(&args).code, 2);
    let missing = tmp.path().join("missing");
    assert_eq!(
        qct(&[
            "compare",
            "--site-a",
            p(&missing),
            "--site-b",
            p(&empty),
            "--out",
            p(&out)
        ])
        .code,
        3
    );
}

fn flat_water(dir: &Path) -> std::path::PathBuf {
    let grid = ImageGrid::new([64, 64, 3], [0.8, 0.8, 1.0], [0.0; 3]).unwrap();
    let v: HuVolume = Volume::filled(grid, 0i16);
    let path = dir.join("water.mhd");
    write_volume(&v, &path).unwrap();
    path
}

#[test]
fn segmenting_a_volume_without_phantom_exits_4() {
    let tmp = TempDir::new().unwrap();
    let water = flat_water(tmp.path());
    let o = qct(&["segment", "--input", p(&water)]);
    assert_eq!(o.code, 4, "{}", o.stderr);
    assert!(!tmp.path().join("water_pred.mhd").exists());
}

#[test]
fn missing_input_exits_3_and_mode_conflicts_exit_2() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.mhd");
    assert_eq!(qct(&["segment", "--input", p(&missing)]).code, 3);
    assert_eq!(qct(&["segment"]).code, 2);
    assert_eq!(qct(&["segment", "--input", "a.mhd", "--manifest", "m.tsv"]).code, 2);
    assert_eq!(qct(&["segment", "--input", "a.mhd", "--backend", "mask"]).code, 2);
    assert_eq!(qct(&["calibrate", "--input", "a.mhd", "--out", p(tmp.path())]).code, 2);
    assert_eq!(
        qct(&[
            "calibrate",
            "--manifest",
            p(&missing),
            "--stat",
            "mode",
            "--out",
            p(tmp.path())
        ])
        .code,
        2
    );
}

#[test]
fn single_case_segment_calibrate_and_evaluate() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "B:1");
    let data = manifest.parent().unwrap();
    let ct = data.join("B000.mhd");
    let o = qct(&["segment", "--input", p(&ct), "--out", p(&tmp.path().join("seg"))]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let pred = tmp.path().join("seg").join("B000_pred.mhd");
    assert!(o.stdout.contains("B000: ok"), "{}", o.stdout);

    let cal = tmp.path().join("cal");
    let o = qct(&[
        "calibrate",
        "--input",
        p(&ct),
        "--labels",
        p(&pred),
        "--erode",
        "2",
        "--out",
        p(&cal),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.starts_with("B000: slope="), "{}", o.stdout);
    let reg = fs::read_to_string(cal.join("B000_regression.csv")).unwrap();
    assert_eq!(reg.lines().next().unwrap(), "label,density,hu,predicted,residual");
    assert_eq!(reg.lines().count(), 6);

    let eval = tmp.path().join("eval");
    let truth = data.join("B000_label.mhd");
    let o = qct(&[
        "evaluate",
        "--input",
        p(&ct),
        "--pred",
        p(&pred),
        "--ref",
        p(&truth),
        "--out",
        p(&eval),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("dice"));
}

#[test]
fn vanished_region_exits_5() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "A:1");
    let data = manifest.parent().unwrap();
    let truth = read_labels(&data.join("A000_label.mhd")).unwrap();
    // Drop the 200 mg/cm³ rod.
    let lm: LabelMap = truth.map(|c| if c == 5 { 1 } else { c }).unwrap();
    let labels = tmp.path().join("no_rod.mhd");
    write_volume(&lm, &labels).unwrap();
    let o = qct(&[
        "calibrate",
        "--input",
        p(&data.join("A000.mhd")),
        "--labels",
        p(&labels),
        "--out",
        p(&tmp.path().join("c")),
    ]);
    assert_eq!(o.code, 5, "{}", o.stderr);
}

#[test]
fn grid_mismatch_exits_6() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "A:1");
    let data = manifest.parent().unwrap();
    let ct = data.join("A000.mhd");
    let truth = read_labels(&data.join("A000_label.mhd")).unwrap();
    let shifted = truth.clone().with_grid(truth.grid().scaled(1.5).unwrap()).unwrap();
    let bad = tmp.path().join("bad.mhd");
    write_volume(&shifted, &bad).unwrap();
    let o = qct(&[
        "calibrate",
        "--input",
        p(&ct),
        "--labels",
        p(&bad),
        "--out",
        p(&tmp.path().join("c")),
    ]);
    assert_eq!(o.code, 6, "{}", o.stderr);
    let o = qct(&[
        "evaluate",
        "--input",
        p(&ct),
        "--pred",
        p(&bad),
        "--ref",
        p(&data.join("A000_label.mhd")),
        "--out",
        p(&tmp.path().join("e")),
    ]);
    assert_eq!(o.code, 6, "{}", o.stderr);
    let o = qct(&[
        "segment",
        "--input",
        p(&ct),
        "--backend",
        "mask",
        "--mask",
        p(&bad),
        "--out",
        p(&tmp.path().join("s")),
    ]);
    assert_eq!(o.code, 6, "{}", o.stderr);
}

#[test]
fn mask_backend_imports_external_uchar_masks() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "A:2");
    let data = manifest.parent().unwrap();
    // An external segmenter drops `<case_id>.mhd` MET_UCHAR masks in a directory.
    let masks = tmp.path().join("masks");
    fs::create_dir(&masks).unwrap();
    for id in ["A000", "A001"] {
        let lm = read_labels(&data.join(format!("{id}_label.mhd"))).unwrap();
        write_volume(&lm, &masks.join(format!("{id}.mhd"))).unwrap();
        let header = fs::read_to_string(masks.join(format!("{id}.mhd"))).unwrap();
        assert!(header.contains("ElementType = MET_UCHAR"), "{header}");
    }
    let preds = tmp.path().join("pred");
    let o = qct(&[
        "segment",
        "--manifest",
        p(&manifest),
        "--backend",
        "mask",
        "--mask-dir",
        p(&masks),
        "--out",
        p(&preds),
    ]);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    let eval = tmp.path().join("eval");
    let o = qct(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--pred-dir",
        p(&preds),
        "--out",
        p(&eval),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let summary = fs::read_to_string(eval.join("summary.csv")).unwrap();
    assert!(summary.contains("dice,all,1,0"), "{summary}");

    // A mask carrying an undefined label code is rejected as malformed input.
    let raw = masks.join("A000.raw");
    let mut bytes = fs::read(&raw).unwrap();
    bytes[0] = 9;
    fs::write(&raw, bytes).unwrap();
    let o = qct(&[
        "segment",
        "--manifest",
        p(&manifest),
        "--backend",
        "mask",
        "--mask-dir",
        p(&masks),
        "--out",
        p(&preds),
    ]);
    assert_eq!(o.code, 3, "{}", o.stdout);
    assert!(o.stdout.contains("A000: FAILED"), "{}", o.stdout);
    assert!(o.stdout.contains("A001: ok"), "{}", o.stdout);
}

#[test]
fn crossval_writes_fold_plan_and_validates_first() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "A:4,B:4");
    assert_eq!(qct(&["segment", "--manifest", p(&manifest), "--quiet"]).code, 0);
    let eval = tmp.path().join("eval");
    let o = qct(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--crossval",
        "4",
        "--seed",
        "3",
        "--out",
        p(&eval),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let plan = FoldPlan::from_tsv(&fs::read_to_string(eval.join("folds.tsv")).unwrap()).unwrap();
    assert_eq!(plan.k, 4);
    for fold in &plan.folds {
        assert_eq!(fold.validation.len(), 2);
        assert_eq!(fold.train.len(), 6);
    }
    let cv = fs::read_to_string(eval.join("crossval_summary.csv")).unwrap();
    assert!(cv.starts_with("fold,metric,scope,median,iqr\n"));
    assert!(cv.lines().any(|l| l.starts_with("3,dice,all,")));

    // 4 cases per site cannot be split into 3 equal folds.
    let eval3 = tmp.path().join("eval3");
    let o = qct(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--crossval",
        "3",
        "--out",
        p(&eval3),
    ]);
    assert_eq!(o.code, 2, "{}", o.stderr);
    assert!(!eval3.exists(), "validation happens before any output");
}

#[test]
fn batch_segment_reports_per_case_failures() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), "A:2");
    let data = manifest.parent().unwrap();
    // Replace one case with an empty water volume on the same grid.
    let ct = qct_core::volume::read_hu(&data.join("A001.mhd")).unwrap();
    let water: HuVolume = Volume::filled(ct.grid().clone(), 0i16);
    write_volume(&water, &data.join("A001.mhd")).unwrap();
    let o = qct(&["segment", "--manifest", p(&manifest)]);
    assert_eq!(o.code, 4);
    assert!(o.stdout.contains("A000: ok"), "{}", o.stdout);
    assert!(o.stdout.contains("A001: FAILED"), "{}", o.stdout);
    assert!(o.stdout.contains("segmented 1 of 2 cases"), "{}", o.stdout);
}
