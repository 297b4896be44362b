//! Segmentation accuracy: Dice, average symmetric surface distance,
//! region HU differences, cross-validation splits and median/IQR
//! aggregation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::segmentation::erode_labels;
use crate::stats::quartiles;
use crate::volume::{ImageGrid, LabelMap, Region, Volume, VolumeError, Voxel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("surface distance is undefined for an empty mask")]
    EmptyMask,
    #[error("label {0} is empty in one of the maps")]
    EmptyLabel(u8),
    #[error("fold count {0} must be at least 2")]
    TooFewFolds(usize),
    #[error("site {site} has {count} cases, not divisible into {k} folds")]
    Indivisible { site: String, count: usize, k: usize },
    #[error("duplicate case id {0}")]
    DuplicateCase(String),
    #[error("malformed fold plan: {0}")]
    FoldPlan(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// `2 |a ∩ b| / (|a| + |b|)` over boolean masks; 1 when both are empty.
pub fn dice_masks(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "mask length mismatch");
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &q) in a.iter().zip(b) {
        inter += usize::from(p && q);
        total += usize::from(p) + usize::from(q);
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

fn foreground(m: &LabelMap) -> Vec<bool> {
    m.data().iter().map(|&c| c != 0).collect()
}

fn label_mask(m: &LabelMap, code: u8) -> Vec<bool> {
    m.data().iter().map(|&c| c == code).collect()
}

/// Dice of two binary masks (any nonzero voxel is foreground).
pub fn dice(a: &LabelMap, b: &LabelMap) -> Result<f64, MetricsError> {
    a.grid().ensure_compatible(b.grid())?;
    Ok(dice_masks(&foreground(a), &foreground(b)))
}

/// Mask voxels with at least one of the six face neighbours outside the
/// mask; outside the grid counts as outside.
pub fn surface(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let mut out = vec![false; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if !mask[i] {
                    continue;
                }
                out[i] = x == 0
                    || x + 1 == nx
                    || y == 0
                    || y + 1 == ny
                    || z == 0
                    || z + 1 == nz
                    || !mask[i - 1]
                    || !mask[i + 1]
                    || !mask[i - nx]
                    || !mask[i + nx]
                    || !mask[i - nx * ny]
                    || !mask[i + nx * ny];
            }
        }
    }
    out
}

/// One pass of the exact squared distance transform (lower envelope of
/// parabolas) along a line with sample step `step` mm. Infinite entries
/// carry no feature.
fn edt_line(f: &[f64], step: f64, out: &mut [f64], v: &mut Vec<usize>, zs: &mut Vec<f64>) {
    let w = step * step;
    v.clear();
    zs.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        while let Some(&p) = v.last() {
            let s = ((fq + w * (q * q) as f64) - (f[p] + w * (p * p) as f64)) / (2.0 * w * (q - p) as f64);
            if s <= *zs.last().unwrap() {
                v.pop();
                zs.pop();
            } else {
                zs.push(s);
                break;
            }
        }
        if v.is_empty() {
            zs.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && zs[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = w * d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel of a box to the
/// nearest `true` voxel of `features`.
fn squared_edt(features: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut d: Vec<f64> = features.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let (mut v, mut zs) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for start in 0..d.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = d[start + i * stride];
            }
            edt_line(&line, spacing[axis], &mut out, &mut v, &mut zs);
            for (i, o) in out.iter().enumerate() {
                d[start + i * stride] = *o;
            }
        }
    }
    d
}

/// Average symmetric surface distance in mm between two non-empty boolean
/// masks on `grid`.
pub fn asd_masks(a: &[bool], b: &[bool], grid: &ImageGrid) -> Result<f64, MetricsError> {
    let dims = grid.dims();
    let (sa, sb) = (surface(a, dims), surface(b, dims));
    let (na, nb) = (sa.iter().filter(|&&s| s).count(), sb.iter().filter(|&&s| s).count());
    if na == 0 || nb == 0 {
        return Err(MetricsError::EmptyMask);
    }
    // Crop to the joint bounding box of both surfaces; it holds every
    // feature and every query, so distances inside it are exact.
    let (mut lo, mut hi) = ([usize::MAX; 3], [0usize; 3]);
    for (i, _) in sa.iter().zip(&sb).enumerate().filter(|(_, (p, q))| **p || **q) {
        let c = grid.coords(i);
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let cd = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let crop = |s: &[bool]| {
        let mut out = Vec::with_capacity(cd[0] * cd[1] * cd[2]);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    out.push(s[grid.index(x, y, z)]);
                }
            }
        }
        out
    };
    let (ca, cb) = (crop(&sa), crop(&sb));
    let spacing = grid.spacing();
    let to_b = squared_edt(&cb, cd, spacing);
    let to_a = squared_edt(&ca, cd, spacing);
    let sum_a: f64 = ca.iter().zip(&to_b).filter(|(s, _)| **s).map(|(_, d)| d.sqrt()).sum();
    let sum_b: f64 = cb.iter().zip(&to_a).filter(|(s, _)| **s).map(|(_, d)| d.sqrt()).sum();
    Ok((sum_a + sum_b) / (na + nb) as f64)
}

/// ASD between the foregrounds of two label maps, in world mm.
pub fn asd(a: &LabelMap, b: &LabelMap) -> Result<f64, MetricsError> {
    a.grid().ensure_compatible(b.grid())?;
    asd_masks(&foreground(a), &foreground(b), a.grid())
}

fn region_mean<T: Voxel>(v: &Volume<T>, m: &LabelMap, code: u8) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (s, &c) in v.data().iter().zip(m.data()) {
        if c == code {
            sum += s.to_f64();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per label 1-5: |mean HU over a's region - mean HU over b's region|.
pub fn region_hu_abs_diff<T: Voxel>(v: &Volume<T>, a: &LabelMap, b: &LabelMap) -> Result<[f64; 5], MetricsError> {
    v.grid().ensure_compatible(a.grid())?;
    v.grid().ensure_compatible(b.grid())?;
    let mut out = [0.0; 5];
    for region in Region::ALL {
        let code = region.code();
        let ma = region_mean(v, a, code).ok_or(MetricsError::EmptyLabel(code))?;
        let mb = region_mean(v, b, code).ok_or(MetricsError::EmptyLabel(code))?;
        out[region.slot()] = (ma - mb).abs();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMetrics {
    pub dice: f64,
    pub asd_mm: f64,
    pub abs_hu_diff: f64,
}

/// Accuracy of one predicted label map against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub case_id: String,
    pub site: String,
    /// Indexed by [`Region::slot`].
    pub labels: [LabelMetrics; 5],
    pub pooled_dice: f64,
}

/// Scores `pred` against `reference`. Dice and ASD use the maps as given;
/// the HU differences compare regions after per-slice disk erosion by
/// `erode_radius`, as they would enter calibration.
pub fn evaluate_case<T: Voxel>(
    case_id: &str,
    site: &str,
    v: &Volume<T>,
    pred: &LabelMap,
    reference: &LabelMap,
    erode_radius: usize,
) -> Result<MetricsReport, MetricsError> {
    pred.grid().ensure_compatible(reference.grid())?;
    let hu = region_hu_abs_diff(
        v,
        &erode_labels(pred, erode_radius),
        &erode_labels(reference, erode_radius),
    )?;
    let mut labels = [LabelMetrics {
        dice: 0.0,
        asd_mm: 0.0,
        abs_hu_diff: 0.0,
    }; 5];
    for region in Region::ALL {
        let (a, b) = (label_mask(pred, region.code()), label_mask(reference, region.code()));
        let asd_mm = asd_masks(&a, &b, pred.grid()).map_err(|_| MetricsError::EmptyLabel(region.code()))?;
        labels[region.slot()] = LabelMetrics {
            dice: dice_masks(&a, &b),
            asd_mm,
            abs_hu_diff: hu[region.slot()],
        };
    }
    Ok(MetricsReport {
        case_id: case_id.to_string(),
        site: site.to_string(),
        labels,
        pooled_dice: dice(pred, reference)?,
    })
}

/// Per-case CSV: `case_id,site,label,dice,asd_mm,abs_hu_diff`.
pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("case_id,site,label,dice,asd_mm,abs_hu_diff\n");
    for r in reports {
        for region in Region::ALL {
            let m = r.labels[region.slot()];
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.case_id,
                r.site,
                region.code(),
                m.dice,
                m.asd_mm,
                m.abs_hu_diff
            );
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: &'static str,
    /// `all`, or a site tag.
    pub scope: String,
    pub median: f64,
    pub iqr: f64,
}

fn summarize_metric(metric: &'static str, scope: &str, values: &[f64]) -> SummaryRow {
    let (q25, median, q75) = quartiles(values);
    SummaryRow {
        metric,
        scope: scope.to_string(),
        median,
        iqr: q75 - q25,
    }
}

fn summary_rows(reports: &[&MetricsReport], scope: &str) -> Vec<SummaryRow> {
    if reports.is_empty() {
        return Vec::new();
    }
    let per_label =
        |f: fn(&LabelMetrics) -> f64| -> Vec<f64> { reports.iter().flat_map(|r| r.labels.iter().map(f)).collect() };
    let pooled: Vec<f64> = reports.iter().map(|r| r.pooled_dice).collect();
    vec![
        summarize_metric("dice", scope, &per_label(|m| m.dice)),
        summarize_metric("asd_mm", scope, &per_label(|m| m.asd_mm)),
        summarize_metric("abs_hu_diff", scope, &per_label(|m| m.abs_hu_diff)),
        summarize_metric("pooled_dice", scope, &pooled),
    ]
}

/// Summary rows for the cases of one site; empty if it has none.
pub fn site_summary(reports: &[MetricsReport], site: &str) -> Vec<SummaryRow> {
    let sel: Vec<&MetricsReport> = reports.iter().filter(|r| r.site == site).collect();
    summary_rows(&sel, site)
}

/// Median and IQR of each metric over all (case, label) observations,
/// overall (scope `all`) and per site in sorted order.
pub fn aggregate_report(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let all: Vec<&MetricsReport> = reports.iter().collect();
    let mut rows = summary_rows(&all, "all");
    let sites: BTreeSet<&str> = reports.iter().map(|r| r.site.as_str()).collect();
    for site in sites {
        rows.extend(site_summary(reports, site));
    }
    rows
}

/// Summary CSV: `metric,scope,median,iqr`.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("metric,scope,median,iqr\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.metric, r.scope, r.median, r.iqr);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CaseRef {
    pub id: String,
    pub site: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<CaseRef>,
    pub validation: Vec<CaseRef>,
}

/// k-fold split stratified by site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Tab-separated `fold, case_id, site, role` lines (role `train` or
    /// `validation`), with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("fold\tcase_id\tsite\trole\n");
        for (f, fold) in self.folds.iter().enumerate() {
            for (role, cases) in [("train", &fold.train), ("validation", &fold.validation)] {
                for c in cases {
                    let _ = writeln!(s, "{f}\t{}\t{}\t{role}", c.id, c.site);
                }
            }
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, MetricsError> {
        let bad = |m: String| MetricsError::FoldPlan(m);
        let mut folds: Vec<Fold> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if n == 0 && line.starts_with("fold\t") || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [f, id, site, role] = cols[..] else {
                return Err(bad(format!("line {}: expected 4 columns", n + 1)));
            };
            let f: usize = f.parse().map_err(|_| bad(format!("line {}: bad fold '{f}'", n + 1)))?;
            if folds.len() <= f {
                folds.resize(
                    f + 1,
                    Fold {
                        train: Vec::new(),
                        validation: Vec::new(),
                    },
                );
            }
            let case = CaseRef {
                id: id.to_string(),
                site: site.to_string(),
            };
            match role {
                "train" => folds[f].train.push(case),
                "validation" => folds[f].validation.push(case),
                other => return Err(bad(format!("line {}: bad role '{other}'", n + 1))),
            }
        }
        Ok(Self { k: folds.len(), folds })
    }
}

/// Splits each site's cases into `k` shards after a seeded shuffle; fold
/// `f` validates shard `f` of every site and trains on everything else.
pub fn crossval_split(sites: &[(String, Vec<String>)], k: usize, seed: u64) -> Result<FoldPlan, MetricsError> {
    if k < 2 {
        return Err(MetricsError::TooFewFolds(k));
    }
    let mut seen = BTreeSet::new();
    for (_, ids) in sites {
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(MetricsError::DuplicateCase(id.clone()));
            }
        }
    }
    let mut shards: Vec<Vec<Vec<CaseRef>>> = Vec::new();
    for (s, (site, ids)) in sites.iter().enumerate() {
        if ids.len() % k != 0 {
            return Err(MetricsError::Indivisible {
                site: site.clone(),
                count: ids.len(),
                k,
            });
        }
        let mut cases: Vec<CaseRef> = ids
            .iter()
            .map(|id| CaseRef {
                id: id.clone(),
                site: site.clone(),
            })
            .collect();
        cases.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        cases.shuffle(&mut rng);
        let size = cases.len() / k;
        shards.push(cases.chunks(size.max(1)).map(|c| c.to_vec()).collect());
    }
    let folds = (0..k)
        .map(|f| {
            let mut fold = Fold {
                train: Vec::new(),
                validation: Vec::new(),
            };
            for site in &shards {
                for (g, shard) in site.iter().enumerate() {
                    if g == f {
                        fold.validation.extend(shard.iter().cloned());
                    } else {
                        fold.train.extend(shard.iter().cloned());
                    }
                }
            }
            fold
        })
        .collect();
    Ok(FoldPlan { k, folds })
}
