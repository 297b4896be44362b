use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rayon::prelude::*;

use qct_core::calibration::{
    compare_models, fit_calibration, region_statistics, CalibrationModel, ModelComparison, Statistic,
};
use qct_core::metrics::{
    aggregate_report, crossval_split, evaluate_case, reports_csv, summary_csv, FoldPlan, MetricsReport, SummaryRow,
};
use qct_core::segmentation::{erode_labels, import_mask, segment_classical, DetectorParams};
use qct_core::synth::{
    generate_dataset, site_scanner, CaseSpec, DatasetManifest, HalationPatches, Jitter, ManifestRecord, MetalStreaks,
    PartialFov, PhantomGeometry, ScannerModel, SiteSpec, MANIFEST_NAME,
};
use qct_core::volume::{phantom_densities, read_hu, read_labels, write_volume, HuVolume, ImageGrid, LabelMap, Region};

use crate::config::{Config, TEMPLATE_KEYS};
use crate::svg;
use crate::{Backend, CalibrateArgs, CliError, CompareArgs, Ctx, EvaluateArgs, GenArgs, LabelSource, SegmentArgs};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn pick_enum<T: ValueEnum>(config: &Config, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    config
        .raw(key)
        .map(|v| T::from_str(v, true).map_err(|_| CliError::Config(format!("invalid value '{v}' for '{key}'"))))
        .transpose()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Exactly one of `--manifest` / `--input`.
enum Mode {
    Batch(PathBuf),
    Single(PathBuf),
}

fn mode(config: &Config, manifest: Option<PathBuf>, input: Option<PathBuf>) -> Result<Mode, CliError> {
    match (config.pick(manifest, "manifest")?, config.pick(input, "input")?) {
        (Some(m), None) => Ok(Mode::Batch(m)),
        (None, Some(i)) => Ok(Mode::Single(i)),
        _ => Err(CliError::Config("give exactly one of --manifest or --input".into())),
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Runs `f` over the records in parallel; results come back in record order.
fn per_case<T: Send>(
    records: &[ManifestRecord],
    f: impl Fn(&ManifestRecord) -> Result<T, CliError> + Sync,
) -> Vec<Result<T, CliError>> {
    records.par_iter().map(&f).collect()
}

fn fail_line(ctx: &mut Ctx<'_>, id: &str, e: &CliError) {
    let _ = writeln!(ctx.stdout, "{id}: FAILED ({e})");
}

// --- gen -------------------------------------------------------------------

fn apply_template(spec: &mut CaseSpec, jitter: &mut Jitter, c: &Config, prefix: &str) -> Result<(), CliError> {
    let k = |key: &str| format!("{prefix}{key}");
    let g = spec.grid.clone();
    let dims = c.get_array::<usize, 3>(&k("dims"))?.unwrap_or(g.dims());
    let spacing = c.get_array::<f64, 3>(&k("spacing"))?.unwrap_or(g.spacing());
    let origin = c.get_array::<f64, 3>(&k("origin"))?.unwrap_or(g.origin());
    spec.grid = ImageGrid::new(dims, spacing, origin)?;
    apply_geometry(&mut spec.geometry, c, prefix)?;
    let f = |key: &str, v: &mut f64| -> Result<(), CliError> {
        if let Some(x) = c.get::<f64>(&k(key))? {
            *v = x;
        }
        Ok(())
    };
    f("sagitta", &mut spec.deformation.sagitta)?;
    f("axial_tilt", &mut spec.deformation.axial_tilt)?;
    f("alpha", &mut spec.scanner.alpha)?;
    f("beta", &mut spec.scanner.beta)?;
    f("noise_sd", &mut spec.scanner.noise_sd)?;
    f("kernel_blur_sd", &mut spec.scanner.kernel_blur_sd)?;
    f("table_gap", &mut spec.table_gap)?;
    f("body_gap", &mut spec.body.gap)?;
    f("soft_tissue", &mut spec.body.soft_tissue)?;
    f("bone", &mut spec.body.bone)?;
    if let Some(v) = c.get_array::<f64, 2>(&k("body_semi_axes"))? {
        spec.body.semi_axes = v;
    }
    if let Some([count, amplitude, width, start, end]) = c.get_array::<f64, 5>(&k("metal_streaks"))? {
        spec.artifacts.metal_streaks = Some(MetalStreaks {
            count: count as usize,
            amplitude,
            width,
            slices: (start as usize, end as usize),
        });
    }
    if let Some(crop_fraction) = c.get::<f64>(&k("crop_fraction"))? {
        spec.artifacts.partial_fov = Some(PartialFov { crop_fraction });
    }
    if let Some([count, amplitude, radius]) = c.get_array::<f64, 3>(&k("halation"))? {
        spec.artifacts.halation = Some(HalationPatches {
            count: count as usize,
            amplitude,
            radius,
        });
    }
    match c.raw(&k("jitter")) {
        None => {}
        Some("on") => *jitter = Jitter::default(),
        Some("off") => *jitter = Jitter::none(),
        Some(v) => return Err(CliError::Config(format!("jitter must be on or off, got '{v}'"))),
    }
    Ok(())
}

fn apply_geometry(g: &mut PhantomGeometry, c: &Config, prefix: &str) -> Result<(), CliError> {
    let k = |key: &str| format!("{prefix}{key}");
    for (key, v) in [
        ("slab_width", &mut g.slab_width),
        ("slab_height", &mut g.slab_height),
        ("slab_length", &mut g.slab_length),
        ("rod_radius", &mut g.rod_radius),
        ("rod_pitch", &mut g.rod_pitch),
        ("base_density", &mut g.base_density),
    ] {
        if let Some(x) = c.get::<f64>(&k(key))? {
            *v = x;
        }
    }
    if let Some(d) = c.get_array::<f64, 4>(&k("rod_densities"))? {
        g.rod_densities = d;
    }
    Ok(())
}

fn site_template(c: &Config, tag: &str) -> Result<(CaseSpec, Jitter), CliError> {
    let scanner = match site_scanner(tag) {
        Some(s) => s,
        None => {
            let has = |key: &str| c.raw(&format!("{tag}.{key}")).is_some() || c.raw(key).is_some();
            if !(has("alpha") && has("beta")) {
                return Err(CliError::Config(format!(
                    "site '{tag}' has no preset scanner; set {tag}.alpha and {tag}.beta"
                )));
            }
            ScannerModel {
                alpha: 1.0,
                beta: 0.0,
                noise_sd: 5.0,
                kernel_blur_sd: 0.5,
                seed: 0,
            }
        }
    };
    let mut spec = CaseSpec::with_scanner(scanner);
    let mut jitter = Jitter::default();
    apply_template(&mut spec, &mut jitter, c, "")?;
    apply_template(&mut spec, &mut jitter, c, &format!("{tag}."))?;
    spec.validate()?;
    Ok((spec, jitter))
}

fn parse_sites(s: &str) -> Result<Vec<(String, usize)>, CliError> {
    s.split(',')
        .map(|part| {
            let (tag, n) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("site entry '{part}' must look like A:10")))?;
            let n = n
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad case count in '{part}'")))?;
            Ok((tag.to_string(), n))
        })
        .collect()
}

pub fn gen(ctx: &mut Ctx<'_>, a: GenArgs) -> Result<i32, CliError> {
    let sites = ctx.config.pick(a.sites, "sites")?.unwrap_or_else(|| "A:20,B:20".into());
    let mut specs = Vec::new();
    for (tag, count) in parse_sites(&sites)? {
        if tag.contains('.') || TEMPLATE_KEYS.contains(&tag.as_str()) {
            return Err(CliError::Config(format!("invalid site tag '{tag}'")));
        }
        let (template, jitter) = site_template(&ctx.config, &tag)?;
        specs.push(SiteSpec {
            tag,
            template,
            count,
            jitter,
        });
    }
    let seed = ctx.seed()?;
    let out = ctx.out_dir()?;
    let manifest = generate_dataset(&specs, &out, seed)?;
    ctx.say(format!("generated {} cases", manifest.records.len()));
    let _ = writeln!(ctx.stdout, "{}", out.join(MANIFEST_NAME).display());
    Ok(0)
}

// --- segment ---------------------------------------------------------------

pub fn detector_params(c: &Config) -> Result<DetectorParams, CliError> {
    let mut p = DetectorParams::default();
    apply_geometry(&mut p.geometry, c, "")?;
    if let Some(w) = c.get_array::<f64, 2>("base_hu_window")? {
        p.base_hu_window = w;
    }
    if let Some(v) = c.get("rod_hu_margin")? {
        p.rod_hu_margin = v;
    }
    if let Some(v) = c.get("search_region")? {
        p.search_region = v;
    }
    if let Some(v) = c.get("min_component_voxels")? {
        p.min_component_voxels = v;
    }
    p.validate()?;
    Ok(p)
}

fn optional_out(ctx: &Ctx<'_>) -> Result<Option<PathBuf>, CliError> {
    match ctx.config.pick(ctx.out.clone(), "out")? {
        Some(dir) => {
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn labeled_slices(m: &LabelMap) -> usize {
    (0..m.grid().dims()[2])
        .filter(|&z| m.slice(z).iter().any(|&c| c != 0))
        .count()
}

fn segment_volume(
    ct: &HuVolume,
    backend: Backend,
    params: &DetectorParams,
    mask: Option<&Path>,
) -> Result<LabelMap, CliError> {
    match backend {
        Backend::Classical => Ok(segment_classical(ct, params)?),
        Backend::Mask => {
            let path = mask.ok_or_else(|| CliError::Config("mask backend needs --mask or --mask-dir".into()))?;
            Ok(import_mask(path, ct.grid())?)
        }
    }
}

pub fn segment(ctx: &mut Ctx<'_>, a: SegmentArgs) -> Result<i32, CliError> {
    let backend = pick_enum(&ctx.config, a.backend, "backend")?.unwrap_or(Backend::Classical);
    let params = detector_params(&ctx.config)?;
    let mode = mode(&ctx.config, a.manifest, a.input)?;
    let mask = ctx.config.pick(a.mask, "mask")?;
    let mask_dir = ctx.config.pick(a.mask_dir, "mask_dir")?;
    if backend == Backend::Mask && mask.is_none() && mask_dir.is_none() {
        return Err(CliError::Config("mask backend needs --mask or --mask-dir".into()));
    }
    let out = optional_out(ctx)?;
    match mode {
        Mode::Single(input) => {
            let ct = read_hu(&input)?;
            let pred = segment_volume(&ct, backend, &params, mask.as_deref())?;
            let dir = out.unwrap_or_else(|| manifest_dir(&input));
            let path = dir.join(format!("{}_pred.mhd", stem(&input)));
            write_volume(&pred, &path)?;
            ctx.say(format!(
                "{}: ok ({} of {} slices labeled) -> {}",
                stem(&input),
                labeled_slices(&pred),
                pred.grid().dims()[2],
                path.display()
            ));
            Ok(0)
        }
        Mode::Batch(manifest_path) => {
            let manifest = DatasetManifest::read(&manifest_path)?;
            let dir = out.unwrap_or_else(|| manifest_dir(&manifest_path));
            let results = per_case(&manifest.records, |r| {
                let ct = read_hu(&r.volume_path)?;
                let mask_path = mask_dir.as_ref().map(|d| d.join(format!("{}.mhd", r.case_id)));
                let pred = segment_volume(&ct, backend, &params, mask_path.as_deref())?;
                write_volume(&pred, &dir.join(format!("{}_pred.mhd", r.case_id)))?;
                Ok((labeled_slices(&pred), pred.grid().dims()[2]))
            });
            let mut code = 0;
            let mut ok = 0;
            for (r, res) in manifest.records.iter().zip(results) {
                match res {
                    Ok((k, nz)) => {
                        ok += 1;
                        ctx.say(format!("{}: ok ({k} of {nz} slices labeled)", r.case_id));
                    }
                    Err(e) => {
                        fail_line(ctx, &r.case_id, &e);
                        if code == 0 {
                            code = e.exit_code();
                        }
                    }
                }
            }
            ctx.say(format!("segmented {ok} of {} cases", manifest.records.len()));
            Ok(code)
        }
    }
}

// --- calibrate -------------------------------------------------------------

fn calibrate_case(
    ct: &HuVolume,
    labels: &LabelMap,
    erode: usize,
    stat: Statistic,
    case_id: &str,
) -> Result<CalibrationModel, CliError> {
    ct.grid().ensure_compatible(labels.grid())?;
    let stats = region_statistics(ct, &erode_labels(labels, erode))?;
    Ok(fit_calibration(&stats, phantom_densities(), stat)?.with_case_id(case_id))
}

fn regression_csv(m: &CalibrationModel) -> String {
    let mut s = String::from("label,density,hu,predicted,residual\n");
    for (k, ((hu, d), res)) in m.points.iter().zip(m.residuals).enumerate() {
        let _ = writeln!(s, "{},{d},{hu},{},{res}", Region::ALL[k].code(), m.predict(*hu));
    }
    s
}

fn write_model(dir: &Path, m: &CalibrationModel) -> Result<(), CliError> {
    write_file(&dir.join(format!("{}.model", m.case_id)), m.to_record())?;
    write_file(&dir.join(format!("{}_regression.csv", m.case_id)), regression_csv(m))?;
    write_file(
        &dir.join(format!("{}_regression.svg", m.case_id)),
        svg::regression_plot(m),
    )
}

fn model_line(m: &CalibrationModel) -> String {
    format!(
        "{}: slope={:.6} intercept={:.4} r={:.9}",
        m.case_id, m.slope, m.intercept, m.r
    )
}

pub fn calibrate(ctx: &mut Ctx<'_>, a: CalibrateArgs) -> Result<i32, CliError> {
    let erode = ctx.config.pick(a.erode, "erode")?.unwrap_or(3);
    let stat: Statistic = match ctx.config.pick(a.stat, "stat")? {
        Some(s) => s.parse().map_err(CliError::Config)?,
        None => Statistic::Mean,
    };
    let mode = mode(&ctx.config, a.manifest, a.input)?;
    let labels_from = pick_enum(&ctx.config, a.labels_from, "labels_from")?.unwrap_or(LabelSource::Pred);
    let labels = ctx.config.pick(a.labels, "labels")?;
    let pred_dir = ctx.config.pick(a.pred_dir, "pred_dir")?;
    if matches!(mode, Mode::Single(_)) && labels.is_none() {
        return Err(CliError::Config("--input needs --labels".into()));
    }
    let out = ctx.out_dir()?;
    match mode {
        Mode::Single(input) => {
            let ct = read_hu(&input)?;
            let lm = read_labels(labels.as_deref().unwrap())?;
            let model = calibrate_case(&ct, &lm, erode, stat, &stem(&input))?;
            write_model(&out, &model)?;
            ctx.say(model_line(&model));
            Ok(0)
        }
        Mode::Batch(manifest_path) => {
            let manifest = DatasetManifest::read(&manifest_path)?;
            let pred_dir = pred_dir.unwrap_or_else(|| manifest_dir(&manifest_path));
            let results = per_case(&manifest.records, |r| {
                let ct = read_hu(&r.volume_path)?;
                let label_path = match labels_from {
                    LabelSource::Pred => pred_dir.join(format!("{}_pred.mhd", r.case_id)),
                    LabelSource::Truth => r.label_path.clone(),
                };
                let lm = read_labels(&label_path)?;
                let model = calibrate_case(&ct, &lm, erode, stat, &r.case_id)?;
                let site_dir = out.join(&r.site);
                fs::create_dir_all(&site_dir).map_err(|e| CliError::io(&site_dir, e))?;
                write_model(&site_dir, &model)?;
                Ok(model)
            });
            let mut code = 0;
            let mut table = String::from("case_id,site,slope,intercept,r,true_slope,true_intercept\n");
            for (r, res) in manifest.records.iter().zip(results) {
                match res {
                    Ok(m) => {
                        let _ = writeln!(
                            table,
                            "{},{},{},{},{},{},{}",
                            r.case_id,
                            r.site,
                            m.slope,
                            m.intercept,
                            m.r,
                            r.true_slope(),
                            r.true_intercept()
                        );
                        ctx.say(model_line(&m));
                    }
                    Err(e) => {
                        fail_line(ctx, &r.case_id, &e);
                        if code == 0 {
                            code = e.exit_code();
                        }
                    }
                }
            }
            write_file(&out.join("models.csv"), table)?;
            Ok(code)
        }
    }
}

// --- evaluate --------------------------------------------------------------

fn print_summary(ctx: &mut Ctx<'_>, rows: &[SummaryRow]) {
    ctx.say(format!("{:<12} {:<6} median (IQR)", "metric", "scope"));
    for r in rows {
        ctx.say(format!(
            "{:<12} {:<6} {:.4} ({:.4})",
            r.metric, r.scope, r.median, r.iqr
        ));
    }
}

fn sites_of(records: &[ManifestRecord]) -> Vec<(String, Vec<String>)> {
    let mut sites: Vec<(String, Vec<String>)> = Vec::new();
    for r in records {
        match sites.iter_mut().find(|(s, _)| *s == r.site) {
            Some((_, ids)) => ids.push(r.case_id.clone()),
            None => sites.push((r.site.clone(), vec![r.case_id.clone()])),
        }
    }
    sites
}

fn crossval_csv(plan: &FoldPlan, reports: &[MetricsReport]) -> String {
    let mut s = String::from("fold,metric,scope,median,iqr\n");
    for (i, fold) in plan.folds.iter().enumerate() {
        let val: Vec<MetricsReport> = reports
            .iter()
            .filter(|r| fold.validation.iter().any(|c| c.id == r.case_id))
            .cloned()
            .collect();
        if val.is_empty() {
            continue;
        }
        for row in aggregate_report(&val) {
            let _ = writeln!(s, "{i},{},{},{},{}", row.metric, row.scope, row.median, row.iqr);
        }
    }
    s
}

pub fn evaluate(ctx: &mut Ctx<'_>, a: EvaluateArgs) -> Result<i32, CliError> {
    let erode = ctx.config.pick(a.erode, "erode")?.unwrap_or(3);
    let crossval: Option<usize> = ctx.config.pick(a.crossval, "crossval")?;
    let seed = ctx.seed()?;
    let mode = mode(&ctx.config, a.manifest, a.input)?;
    let pred_dir = ctx.config.pick(a.pred_dir, "pred_dir")?;

    let mut failures = Vec::new();
    let (reports, plan, out) = match mode {
        Mode::Single(input) => {
            if crossval.is_some() {
                return Err(CliError::Config("--crossval needs --manifest".into()));
            }
            let (Some(pred), Some(reference)) = (a.pred, a.reference) else {
                return Err(CliError::Config("--input needs --pred and --ref".into()));
            };
            let out = ctx.out_dir()?;
            let ct = read_hu(&input)?;
            let (p, r) = (read_labels(&pred)?, read_labels(&reference)?);
            ct.grid().ensure_compatible(p.grid())?;
            let report = evaluate_case(&stem(&input), "-", &ct, &p, &r, erode)?;
            (vec![report], None, out)
        }
        Mode::Batch(manifest_path) => {
            let manifest = DatasetManifest::read(&manifest_path)?;
            let plan = crossval
                .map(|k| crossval_split(&sites_of(&manifest.records), k, seed))
                .transpose()?;
            let out = ctx.out_dir()?;
            let pred_dir = pred_dir.unwrap_or_else(|| manifest_dir(&manifest_path));
            let results = per_case(&manifest.records, |r| {
                let ct = read_hu(&r.volume_path)?;
                let p = read_labels(&pred_dir.join(format!("{}_pred.mhd", r.case_id)))?;
                let reference = read_labels(&r.label_path)?;
                ct.grid().ensure_compatible(p.grid())?;
                Ok(evaluate_case(&r.case_id, &r.site, &ct, &p, &reference, erode)?)
            });
            let mut reports = Vec::new();
            for (r, res) in manifest.records.iter().zip(results) {
                match res {
                    Ok(rep) => reports.push(rep),
                    Err(e) => failures.push((r.case_id.clone(), e)),
                }
            }
            (reports, plan, out)
        }
    };

    let mut code = 0;
    for (id, e) in &failures {
        fail_line(ctx, id, e);
        if code == 0 {
            code = e.exit_code();
        }
    }
    write_file(&out.join("metrics.csv"), reports_csv(&reports))?;
    if !reports.is_empty() {
        let rows = aggregate_report(&reports);
        write_file(&out.join("summary.csv"), summary_csv(&rows))?;
        print_summary(ctx, &rows);
    }
    if let Some(plan) = plan {
        write_file(&out.join("folds.tsv"), plan.to_tsv())?;
        write_file(&out.join("crossval_summary.csv"), crossval_csv(&plan, &reports))?;
        ctx.say(format!(
            "{}-fold plan written to {}",
            plan.k,
            out.join("folds.tsv").display()
        ));
    }
    Ok(code)
}

// --- compare ---------------------------------------------------------------

fn parse_range(s: &str) -> Result<(i32, i32), CliError> {
    let err = || CliError::Config(format!("range must look like -100:700, got '{s}'"));
    let (lo, hi) = s.split_once(':').ok_or_else(err)?;
    let lo: i32 = lo.trim().parse().map_err(|_| err())?;
    let hi: i32 = hi.trim().parse().map_err(|_| err())?;
    if lo > hi {
        return Err(CliError::Config(format!("range start {lo} exceeds end {hi}")));
    }
    Ok((lo, hi))
}

/// All `*.model` records in `dir`, in file-name order.
fn load_models(dir: &Path) -> Result<Vec<CalibrationModel>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "model"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no .model records in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            CalibrationModel::from_record(&text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn comparison_summary_csv(cmp: &ModelComparison) -> String {
    let mut s = String::from("hu,median_a,q1_a,q3_a,median_b,q1_b,q3_b,diff,p_adj,significant\n");
    for r in cmp.summary() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.hu, r.median_a, r.iqr_a.0, r.iqr_a.1, r.median_b, r.iqr_b.0, r.iqr_b.1, r.diff, r.p_adj, r.significant
        );
    }
    s
}

pub fn compare(ctx: &mut Ctx<'_>, a: CompareArgs) -> Result<i32, CliError> {
    let site_a: PathBuf = ctx
        .config
        .pick(a.site_a, "site_a")?
        .ok_or_else(|| CliError::Config("--site-a is required".into()))?;
    let site_b: PathBuf = ctx
        .config
        .pick(a.site_b, "site_b")?
        .ok_or_else(|| CliError::Config("--site-b is required".into()))?;
    let range = ctx.config.pick(a.range, "range")?.unwrap_or_else(|| "-100:700".into());
    let (lo, hi) = parse_range(&range)?;
    let alpha = ctx.config.pick(a.significance, "significance")?.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Config(format!(
            "significance must lie in (0, 1), got {alpha}"
        )));
    }
    let out = ctx.out_dir()?;
    let models_a = load_models(&site_a)?;
    let models_b = load_models(&site_b)?;
    let cmp = compare_models(&models_a, &models_b, lo, hi, alpha)?;
    write_file(&out.join("comparison.csv"), cmp.to_csv())?;
    write_file(&out.join("comparison.svg"), svg::comparison_plot(&cmp))?;
    write_file(&out.join("comparison_summary.csv"), comparison_summary_csv(&cmp))?;
    ctx.say(format!(
        "{} models at site A, {} at site B, HU {lo}..={hi}",
        models_a.len(),
        models_b.len()
    ));
    ctx.say(format!(
        "{:>6} {:>22} {:>22} {:>9} {:>10}",
        "HU", "site A median (IQR)", "site B median (IQR)", "diff", "p_adj"
    ));
    for r in cmp.summary() {
        ctx.say(format!(
            "{:>6} {:>9.2} ({:>5.2}-{:>5.2}) {:>9.2} ({:>5.2}-{:>5.2}) {:>9.2} {:>10.3e}",
            r.hu, r.median_a, r.iqr_a.0, r.iqr_a.1, r.median_b, r.iqr_b.0, r.iqr_b.1, r.diff, r.p_adj
        ));
    }
    let ranges = cmp.significant_ranges();
    if ranges.is_empty() {
        ctx.say("no significant HU");
    } else {
        let text: Vec<String> = ranges.iter().map(|(l, h)| format!("{l}..={h}")).collect();
        ctx.say(format!("significant HU: {}", text.join(", ")));
    }
    Ok(0)
}
