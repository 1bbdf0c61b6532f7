//! Scan-level workflow: segmentation, lung extraction, slice removal,
//! slice classification and patient-level aggregation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use covct_nn::Network;
use rayon::prelude::*;

use crate::classicseg::{
    default_region_seeds, segment_kmeans2, segment_otsu, segment_region, SegMethod,
    DEFAULT_REGION_TOLERANCE,
};
use crate::classifier::{predict_slices, ClfConfig};
use crate::error::{Error, Result};
use crate::imaging::{count_nondark, resize_bilinear, squeeze_intensity, Image, Mask};
use crate::morphology::{extract_lungs, ExtractParams};
use crate::unet::{predict_mask, UNetConfig};

/// Diagnosis class. COVID is the positive class in every metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Covid,
    NonCovid,
}

impl Label {
    /// Folder and CSV spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Covid => "covid",
            Label::NonCovid => "non-covid",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "covid" | "1" => Ok(Label::Covid),
            "non-covid" | "noncovid" | "0" => Ok(Label::NonCovid),
            _ => Err(Error::Parse(format!(
                "unknown label {s:?} (expected covid or non-covid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtScan {
    pub scan_id: String,
    pub slices: Vec<Image>,
    pub label: Option<Label>,
}

impl CtScan {
    /// Requires at least one slice, all of the same size.
    pub fn new(
        scan_id: impl Into<String>,
        slices: Vec<Image>,
        label: Option<Label>,
    ) -> Result<Self> {
        let scan_id = scan_id.into();
        let Some(first) = slices.first() else {
            return Err(Error::InvalidArgument(format!(
                "scan {scan_id} has no slices"
            )));
        };
        if let Some(bad) = slices.iter().find(|s| s.dims() != first.dims()) {
            return Err(Error::InvalidArgument(format!(
                "scan {scan_id} mixes {:?} and {:?} slices",
                first.dims(),
                bad.dims()
            )));
        }
        Ok(Self {
            scan_id,
            slices,
            label,
        })
    }
}

/// Minimum non-dark pixel counts for keeping a slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceFilterPolicy {
    pub primary_threshold: usize,
    pub fallbacks: Vec<usize>,
    pub keep_all_if_empty: bool,
}

impl Default for SliceFilterPolicy {
    fn default() -> Self {
        Self {
            primary_threshold: 1764,
            fallbacks: vec![1000, 500],
            keep_all_if_empty: true,
        }
    }
}

/// Named square thresholds: `45x45`, `42x42`, `40x40`.
pub fn filter_preset(name: &str) -> Result<usize> {
    match name {
        "45x45" => Ok(2025),
        "42x42" => Ok(1764),
        "40x40" => Ok(1600),
        _ => Err(Error::InvalidArgument(format!(
            "unknown filter preset {name:?} (expected 45x45, 42x42 or 40x40)"
        ))),
    }
}

impl SliceFilterPolicy {
    /// Single threshold without fallbacks; scans may end up empty.
    pub fn training(threshold: usize) -> Self {
        Self {
            primary_threshold: threshold,
            fallbacks: Vec::new(),
            keep_all_if_empty: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = self.primary_threshold;
        for &t in &self.fallbacks {
            if t >= prev {
                return Err(Error::InvalidArgument(format!(
                    "filter thresholds must strictly decrease: {} then {:?}",
                    self.primary_threshold, self.fallbacks
                )));
            }
            prev = t;
        }
        Ok(())
    }

    pub fn thresholds(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.primary_threshold).chain(self.fallbacks.iter().copied())
    }
}

/// Which slices survived and at what threshold. `threshold_used` is 0 when
/// every pass came up empty and the scan was kept whole, and `None` when
/// nothing survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub threshold_used: Option<usize>,
}

/// Indices of slices with at least `threshold` non-dark pixels.
pub fn kept_at(slices: &[Image], threshold: usize) -> Vec<usize> {
    slices
        .iter()
        .enumerate()
        .filter(|(_, s)| count_nondark(s) >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Keeps slices meeting the primary threshold, retrying with each fallback
/// while nothing survives.
pub fn filter_outcome(slices: &[Image], policy: &SliceFilterPolicy) -> Result<FilterOutcome> {
    policy.validate()?;
    let counts: Vec<usize> = slices.iter().map(count_nondark).collect();
    for t in policy.thresholds() {
        let kept: Vec<usize> = (0..slices.len()).filter(|&i| counts[i] >= t).collect();
        if !kept.is_empty() {
            return Ok(FilterOutcome {
                kept,
                threshold_used: Some(t),
            });
        }
    }
    Ok(if policy.keep_all_if_empty {
        FilterOutcome {
            kept: (0..slices.len()).collect(),
            threshold_used: Some(0),
        }
    } else {
        FilterOutcome {
            kept: Vec::new(),
            threshold_used: None,
        }
    })
}

/// The filtered scan. With `keep_all_if_empty` the result is never empty;
/// otherwise an all-removed scan comes back with no slices.
pub fn filter_slices(scan: &CtScan, policy: &SliceFilterPolicy) -> Result<(CtScan, FilterOutcome)> {
    let outcome = filter_outcome(&scan.slices, policy)?;
    let slices = outcome
        .kept
        .iter()
        .map(|&i| scan.slices[i].clone())
        .collect();
    Ok((
        CtScan {
            scan_id: scan.scan_id.clone(),
            slices,
            label: scan.label,
        },
        outcome,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientDecision {
    pub scan_id: String,
    pub probs: Vec<f32>,
    pub slice_threshold: f32,
    pub verdict: Label,
    pub covid_slice_fraction: f64,
}

/// A slice votes COVID when its non-COVID probability is below
/// `slice_threshold`; the scan is COVID when at least half the slices vote
/// COVID.
pub fn aggregate(scan_id: &str, probs: Vec<f32>, slice_threshold: f32) -> Result<PatientDecision> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "scan {scan_id} has no slices to classify"
        )));
    }
    let n = probs.len();
    let covid = probs.iter().filter(|&&p| p < slice_threshold).count();
    Ok(PatientDecision {
        scan_id: scan_id.to_string(),
        probs,
        slice_threshold,
        verdict: if 2 * covid >= n {
            Label::Covid
        } else {
            Label::NonCovid
        },
        covid_slice_fraction: covid as f64 / n as f64,
    })
}

pub fn classify_scan(
    scan: &CtScan,
    clf: &Network,
    clf_cfg: &ClfConfig,
    slice_threshold: f32,
) -> Result<PatientDecision> {
    if scan.slices.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "scan {} has no slices",
            scan.scan_id
        )));
    }
    aggregate(
        &scan.scan_id,
        predict_slices(clf, &scan.slices, clf_cfg)?,
        slice_threshold,
    )
}

fn majority(ids: &[&str], verdicts: &[Label]) -> Result<Label> {
    if verdicts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "hybrid vote needs exactly 3 decisions, got {}",
            verdicts.len()
        )));
    }
    if ids.iter().any(|id| *id != ids[0]) {
        return Err(Error::InvalidArgument(format!(
            "hybrid vote over different scans: {ids:?}"
        )));
    }
    let covid = verdicts.iter().filter(|&&v| v == Label::Covid).count();
    Ok(if covid >= 2 {
        Label::Covid
    } else {
        Label::NonCovid
    })
}

/// Majority verdict of three methods on the same scan.
pub fn hybrid_vote(decisions: &[PatientDecision]) -> Result<Label> {
    let ids: Vec<&str> = decisions.iter().map(|d| d.scan_id.as_str()).collect();
    let verdicts: Vec<Label> = decisions.iter().map(|d| d.verdict).collect();
    majority(&ids, &verdicts)
}

/// Majority verdict over three decision-file rows for the same scan.
pub fn hybrid_vote_records(records: &[DecisionRecord]) -> Result<Label> {
    let ids: Vec<&str> = records.iter().map(|d| d.scan_id.as_str()).collect();
    let verdicts: Vec<Label> = records.iter().map(|d| d.verdict).collect();
    majority(&ids, &verdicts)
}

/// A segmentation method ready to run on 8-bit slices.
#[derive(Debug, Clone, Copy)]
pub enum Segmenter<'a> {
    Region {
        tol: f64,
    },
    Otsu,
    KMeans {
        seed: u64,
    },
    UNet {
        net: &'a Network,
        cfg: &'a UNetConfig,
    },
}

impl Segmenter<'_> {
    /// Classical segmenter with default parameters. `SegMethod::UNet` needs a
    /// model and is rejected here.
    pub fn classical(method: SegMethod, seed: u64) -> Result<Self> {
        match method {
            SegMethod::RegionBased => Ok(Segmenter::Region {
                tol: DEFAULT_REGION_TOLERANCE,
            }),
            SegMethod::OtsuThreshold => Ok(Segmenter::Otsu),
            SegMethod::KMeans2 => Ok(Segmenter::KMeans { seed }),
            SegMethod::UNet => Err(Error::InvalidArgument(
                "the unet method needs a trained model".into(),
            )),
        }
    }

    pub fn method(&self) -> SegMethod {
        match self {
            Segmenter::Region { .. } => SegMethod::RegionBased,
            Segmenter::Otsu => SegMethod::OtsuThreshold,
            Segmenter::KMeans { .. } => SegMethod::KMeans2,
            Segmenter::UNet { .. } => SegMethod::UNet,
        }
    }

    /// Raw lung mask. A single-intensity slice has no lungs to find and
    /// yields an empty mask.
    pub fn segment(&self, img: &Image) -> Result<Mask> {
        let (w, h) = img.dims();
        let raw = match *self {
            Segmenter::Region { tol } => segment_region(img, &default_region_seeds(w, h), tol),
            Segmenter::Otsu => segment_otsu(img),
            Segmenter::KMeans { seed } => segment_kmeans2(img, seed),
            Segmenter::UNet { net, cfg } => predict_mask(net, &squeeze_intensity(img), cfg),
        };
        match raw {
            Err(Error::DegenerateHistogram) => Ok(Mask::empty(w, h)),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Side length every slice is resized to before segmentation.
    pub work_size: usize,
    pub extract: ExtractParams,
    pub policy: SliceFilterPolicy,
    pub slice_threshold: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            work_size: 224,
            extract: ExtractParams::default(),
            policy: SliceFilterPolicy::default(),
            slice_threshold: 0.5,
        }
    }
}

/// Resize, segment and extract one slice.
pub fn extract_slice(img: &Image, seg: &Segmenter<'_>, cfg: &PipelineConfig) -> Result<Image> {
    let resized = resize_bilinear(img, cfg.work_size, cfg.work_size)?;
    let raw = seg.segment(&resized)?;
    extract_lungs(&resized, &raw, &cfg.extract)
}

/// Raw masks of every slice, computed in parallel and kept in order.
pub fn segment_scan(scan: &CtScan, seg: &Segmenter<'_>) -> Result<Vec<Mask>> {
    scan.slices.par_iter().map(|s| seg.segment(s)).collect()
}

/// Extracted slices of a scan, computed in parallel and kept in order.
pub fn extract_scan(scan: &CtScan, seg: &Segmenter<'_>, cfg: &PipelineConfig) -> Result<CtScan> {
    let slices = scan
        .slices
        .par_iter()
        .map(|s| extract_slice(s, seg, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(CtScan {
        scan_id: scan.scan_id.clone(),
        slices,
        label: scan.label,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub decision: PatientDecision,
    pub n_slices_in: usize,
    pub kept: Vec<usize>,
    pub threshold_used: usize,
}

/// Full workflow for one scan.
pub fn run_pipeline(
    scan: &CtScan,
    seg: &Segmenter<'_>,
    clf: &Network,
    clf_cfg: &ClfConfig,
    cfg: &PipelineConfig,
) -> Result<ScanResult> {
    if clf_cfg.input_size != cfg.work_size {
        return Err(Error::InvalidArgument(format!(
            "classifier input {} differs from pipeline work size {}",
            clf_cfg.input_size, cfg.work_size
        )));
    }
    let extracted = extract_scan(scan, seg, cfg)?;
    let (filtered, outcome) = filter_slices(&extracted, &cfg.policy)?;
    let threshold_used = outcome.threshold_used.ok_or_else(|| {
        Error::InvalidArgument(format!("every slice of scan {} was removed", scan.scan_id))
    })?;
    let decision = classify_scan(&filtered, clf, clf_cfg, cfg.slice_threshold)?;
    Ok(ScanResult {
        decision,
        n_slices_in: scan.slices.len(),
        kept: outcome.kept,
        threshold_used,
    })
}

/// Runs scans on a pool of `jobs` threads. Results follow input order and
/// do not depend on `jobs`.
pub fn run_scans(
    scans: &[CtScan],
    seg: &Segmenter<'_>,
    clf: &Network,
    clf_cfg: &ClfConfig,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<ScanResult>> {
    with_jobs(jobs, || {
        scans
            .par_iter()
            .map(|s| run_pipeline(s, seg, clf, clf_cfg, cfg))
            .collect()
    })
}

/// Runs `f` on a dedicated pool of `jobs` worker threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(f)
}

pub const DECISION_CSV_HEADER: &str =
    "scan_id,n_slices_in,n_slices_kept,threshold_used,covid_slice_fraction,verdict";

/// One row of a decision file.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub scan_id: String,
    pub n_slices_in: usize,
    pub n_slices_kept: usize,
    pub threshold_used: usize,
    pub covid_slice_fraction: f64,
    pub verdict: Label,
}

impl From<&ScanResult> for DecisionRecord {
    fn from(r: &ScanResult) -> Self {
        Self {
            scan_id: r.decision.scan_id.clone(),
            n_slices_in: r.n_slices_in,
            n_slices_kept: r.kept.len(),
            threshold_used: r.threshold_used,
            covid_slice_fraction: r.decision.covid_slice_fraction,
            verdict: r.decision.verdict,
        }
    }
}

pub fn write_decisions<W: Write>(mut w: W, records: &[DecisionRecord]) -> std::io::Result<()> {
    writeln!(w, "{DECISION_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{:.6},{}",
            r.scan_id,
            r.n_slices_in,
            r.n_slices_kept,
            r.threshold_used,
            r.covid_slice_fraction,
            r.verdict
        )?;
    }
    Ok(())
}

fn csv_field<T: FromStr>(field: Option<&str>, name: &str, line: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = field.ok_or_else(|| Error::Parse(format!("line {line}: missing {name}")))?;
    raw.trim()
        .parse()
        .map_err(|e| Error::Parse(format!("line {line}: {name} {raw:?}: {e}")))
}

pub fn parse_decisions(text: &str) -> Result<Vec<DecisionRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == DECISION_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "expected header {DECISION_CSV_HEADER:?}, found {:?}",
                other.map(|(_, l)| l)
            )))
        }
    }
    lines
        .map(|(n, line)| {
            let n = n + 1;
            let mut f = line.split(',');
            let scan_id = f
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Parse(format!("line {n}: missing scan_id")))?
                .to_string();
            let rec = DecisionRecord {
                scan_id,
                n_slices_in: csv_field(f.next(), "n_slices_in", n)?,
                n_slices_kept: csv_field(f.next(), "n_slices_kept", n)?,
                threshold_used: csv_field(f.next(), "threshold_used", n)?,
                covid_slice_fraction: csv_field(f.next(), "covid_slice_fraction", n)?,
                verdict: csv_field(f.next(), "verdict", n)?,
            };
            if f.next().is_some() {
                return Err(Error::Parse(format!("line {n}: too many fields")));
            }
            Ok(rec)
        })
        .collect()
}

pub const SLICE_CSV_HEADER: &str = "scan_id,slice_index,prob_noncovid";

/// Per-slice probabilities; `slice_index` refers to the unfiltered scan.
pub fn write_slice_predictions<W: Write>(mut w: W, results: &[ScanResult]) -> std::io::Result<()> {
    writeln!(w, "{SLICE_CSV_HEADER}")?;
    for r in results {
        for (&i, p) in r.kept.iter().zip(&r.decision.probs) {
            writeln!(w, "{},{},{:.6}", r.decision.scan_id, i, p)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice_with(n: usize) -> Image {
        Image::from_fn(64, 64, |x, y| u8::from(y * 64 + x < n) * 9).unwrap()
    }

    fn scan(counts: &[usize]) -> CtScan {
        CtScan::new("s", counts.iter().map(|&n| slice_with(n)).collect(), None).unwrap()
    }

    #[test]
    fn boundary_at_primary_threshold() {
        let out =
            filter_outcome(&scan(&[1764, 1763]).slices, &SliceFilterPolicy::default()).unwrap();
        assert_eq!(out.kept, vec![0]);
        assert_eq!(out.threshold_used, Some(1764));
    }

    #[test]
    fn fallback_cascade() {
        let s = scan(&[600, 600, 600]);
        let p = SliceFilterPolicy::default();
        assert!(kept_at(&s.slices, 1764).is_empty());
        assert!(kept_at(&s.slices, 1000).is_empty());
        let (f, out) = filter_slices(&s, &p).unwrap();
        assert_eq!(f.slices.len(), 3);
        assert_eq!(out.threshold_used, Some(500));
    }

    #[test]
    fn all_dark_scan_kept_whole() {
        let s = scan(&[0, 0]);
        let (f, out) = filter_slices(&s, &SliceFilterPolicy::default()).unwrap();
        assert_eq!(f, s);
        assert_eq!(out.threshold_used, Some(0));
        let (f, out) = filter_slices(&s, &SliceFilterPolicy::training(1764)).unwrap();
        assert!(f.slices.is_empty());
        assert_eq!(out.threshold_used, None);
    }

    #[test]
    fn policy_must_decrease() {
        let p = SliceFilterPolicy {
            fallbacks: vec![1000, 1000],
            ..SliceFilterPolicy::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(filter_preset("45x45").unwrap(), 2025);
        assert_eq!(filter_preset("42x42").unwrap(), 1764);
        assert_eq!(filter_preset("40x40").unwrap(), 1600);
        assert!(filter_preset("41x41").is_err());
    }

    #[test]
    fn aggregation_rules() {
        let d = aggregate("a", vec![0.1, 0.2, 0.3, 0.9, 0.8], 0.5).unwrap();
        assert_eq!(d.verdict, Label::Covid);
        let d = aggregate("a", vec![0.9; 4], 0.5).unwrap();
        assert_eq!((d.verdict, d.covid_slice_fraction), (Label::NonCovid, 0.0));
        let d = aggregate("a", vec![0.1, 0.9, 0.2, 0.8], 0.5).unwrap();
        assert_eq!(d.verdict, Label::Covid, "ties go to COVID");
        let d = aggregate("a", vec![0.45], 0.4).unwrap();
        assert_eq!(d.verdict, Label::NonCovid);
        assert!(aggregate("a", vec![], 0.5).is_err());
    }

    #[test]
    fn aggregation_tie_rule_exhaustive() {
        for n in 1..40usize {
            for covid in 0..=n {
                let probs: Vec<f32> = (0..n).map(|i| if i < covid { 0.1 } else { 0.9 }).collect();
                let d = aggregate("x", probs, 0.5).unwrap();
                let expected = if 2 * covid >= n {
                    Label::Covid
                } else {
                    Label::NonCovid
                };
                assert_eq!(d.verdict, expected, "n={n} covid={covid}");
            }
        }
    }

    fn decision(id: &str, v: Label) -> PatientDecision {
        PatientDecision {
            scan_id: id.into(),
            probs: vec![],
            slice_threshold: 0.5,
            verdict: v,
            covid_slice_fraction: 0.0,
        }
    }

    #[test]
    fn hybrid_cases() {
        use Label::*;
        let v =
            |a, b, c| hybrid_vote(&[decision("s", a), decision("s", b), decision("s", c)]).unwrap();
        assert_eq!(v(Covid, Covid, NonCovid), Covid);
        assert_eq!(v(NonCovid, NonCovid, NonCovid), NonCovid);
        assert!(hybrid_vote(&[decision("s", Covid), decision("s", Covid)]).is_err());
        assert!(hybrid_vote(&[
            decision("s", Covid),
            decision("t", Covid),
            decision("s", Covid)
        ])
        .is_err());
    }

    #[test]
    fn label_parsing() {
        for l in [Label::Covid, Label::NonCovid] {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert_eq!("NonCOVID".parse::<Label>().unwrap(), Label::NonCovid);
        assert!("maybe".parse::<Label>().is_err());
    }

    #[test]
    fn decision_csv_round_trip() {
        let recs = vec![
            DecisionRecord {
                scan_id: "a".into(),
                n_slices_in: 5,
                n_slices_kept: 3,
                threshold_used: 1764,
                covid_slice_fraction: 0.666667,
                verdict: Label::Covid,
            },
            DecisionRecord {
                scan_id: "b".into(),
                n_slices_in: 2,
                n_slices_kept: 2,
                threshold_used: 0,
                covid_slice_fraction: 0.0,
                verdict: Label::NonCovid,
            },
        ];
        let mut buf = Vec::new();
        write_decisions(&mut buf, &recs).unwrap();
        assert_eq!(
            parse_decisions(std::str::from_utf8(&buf).unwrap()).unwrap(),
            recs
        );
        assert!(parse_decisions("bad header\n").is_err());
    }

    #[test]
    fn scans_need_consistent_slices() {
        assert!(CtScan::new("x", vec![], None).is_err());
        let a = Image::filled(4, 4, 0).unwrap();
        let b = Image::filled(5, 4, 0).unwrap();
        assert!(CtScan::new("x", vec![a, b], None).is_err());
    }

    #[test]
    fn uniform_slices_segment_to_empty() {
        let img = Image::filled(16, 16, 0).unwrap();
        for m in [
            SegMethod::OtsuThreshold,
            SegMethod::KMeans2,
            SegMethod::RegionBased,
        ] {
            let seg = Segmenter::classical(m, 0).unwrap();
            let raw = seg.segment(&img).unwrap();
            assert_eq!(raw.dims(), (16, 16));
        }
        assert!(Segmenter::classical(SegMethod::UNet, 0).is_err());
    }
}
