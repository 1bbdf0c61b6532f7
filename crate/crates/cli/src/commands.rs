//! One function per subcommand. Each reads its settings from a resolved
//! [`RunConfig`] and registers every output with [`Outputs`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use covct::classicseg::SegMethod;
use covct::classifier::{
    build_classifier, load_classifier, predict_slices, save_classifier, train_classifier, ClfConfig,
};
use covct::config::{sidecar_path, Config};
use covct::data::{
    generate_phantoms, index_dataset, load_scan, DatasetIndex, IndexEntry, Partition, PhantomSpec,
    MASK_DIR,
};
use covct::imaging::{read_mask, resize_bilinear, squeeze_intensity, write_mask, write_pgm};
use covct::metrics::{confusion, dice_summary, report, MetricsReport};
use covct::morphology::ExtractParams;
use covct::nn::Network;
use covct::nn::{TrainConfig, TrainLog};
use covct::pipeline::{
    extract_scan, filter_outcome, filter_preset, hybrid_vote_records, parse_decisions, run_scans,
    segment_scan, with_jobs, write_decisions, write_slice_predictions, DecisionRecord,
    PipelineConfig, Segmenter, SliceFilterPolicy,
};
use covct::unet::{build_unet, load_unet, predict_masks, save_unet, train_unet, UNetConfig};
use covct::{Image, Label, Mask};

use crate::run::{
    io_err, manifest_for_file, CliError, CliResult, Outputs, RunConfig, DIR_MANIFEST,
};

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Output folder of a scan, mirroring the labeled or unlabeled layout.
fn scan_dir(root: &Path, entry: &IndexEntry) -> PathBuf {
    match entry.label {
        Some(l) => root.join(l.as_str()).join(&entry.scan_id),
        None => root.join(&entry.scan_id),
    }
}

fn index(dir: &Path, partition: Partition) -> CliResult<DatasetIndex> {
    let index = index_dataset(dir, partition)?;
    for issue in &index.issues {
        eprintln!("warning: {issue}");
    }
    if index.entries.is_empty() {
        return Err(CliError::Failed(format!(
            "{}: no scans found",
            dir.display()
        )));
    }
    Ok(index)
}

fn write_file(outputs: &mut Outputs, path: &Path, bytes: &[u8]) -> CliResult<()> {
    outputs.file(path);
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_log(outputs: &mut Outputs, path: &Path, log: &TrainLog) -> CliResult<()> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf).map_err(io_err(path))?;
    write_file(outputs, path, &buf)
}

fn check_model_path(outputs: &mut Outputs, path: &Path) {
    outputs.file(path);
    outputs.file(&sidecar_path(path));
}

/// Segmentation settings shared by `segment`, `extract` and `predict`.
pub fn seg_defaults(c: &mut Config) {
    c.set("method", SegMethod::OtsuThreshold);
    c.set("seed", 0);
    c.set("jobs", 1);
    c.set(
        "region_tolerance",
        covct::classicseg::DEFAULT_REGION_TOLERANCE,
    );
}

/// A loaded UNet when `--method unet`, otherwise nothing.
fn load_unet_if_needed(rc: &RunConfig) -> CliResult<Option<(Network, UNetConfig)>> {
    let method: SegMethod = rc.value("method")?;
    if method != SegMethod::UNet {
        return Ok(None);
    }
    if !rc.has("unet") {
        return Err(CliError::Usage("--method unet needs --unet <model>".into()));
    }
    Ok(Some(load_unet(rc.input_file("unet")?)?))
}

fn segmenter<'a>(
    rc: &RunConfig,
    unet: &'a Option<(Network, UNetConfig)>,
) -> CliResult<Segmenter<'a>> {
    let method: SegMethod = rc.value("method")?;
    Ok(match (method, unet) {
        (SegMethod::UNet, Some((net, cfg))) => Segmenter::UNet { net, cfg },
        (SegMethod::RegionBased, _) => Segmenter::Region {
            tol: rc.value("region_tolerance")?,
        },
        (m, _) => Segmenter::classical(m, rc.value("seed")?)?,
    })
}

pub fn extract_defaults(c: &mut Config) {
    let d = ExtractParams::default();
    c.set("work_size", 224);
    c.set("erode_radius", d.erode_radius);
    c.set("close_radius", d.close_radius);
    c.set("edge_thresh", d.edge_thresh);
}

fn extract_params(rc: &RunConfig) -> CliResult<ExtractParams> {
    Ok(ExtractParams {
        erode_radius: rc.value("erode_radius")?,
        close_radius: rc.value("close_radius")?,
        edge_thresh: rc.value("edge_thresh")?,
    })
}

pub fn policy_defaults(c: &mut Config) {
    let d = SliceFilterPolicy::default();
    c.set("filter_preset", "42x42");
    c.set("fallbacks", covct::config::join_list(&d.fallbacks));
    c.set("keep_all", d.keep_all_if_empty);
}

/// `--threshold` wins over `--filter-preset`.
fn policy(rc: &RunConfig) -> CliResult<SliceFilterPolicy> {
    let primary = if rc.has("threshold") {
        rc.value("threshold")?
    } else {
        filter_preset(rc.required("filter_preset")?).map_err(|e| CliError::Usage(e.to_string()))?
    };
    let p = SliceFilterPolicy {
        primary_threshold: primary,
        fallbacks: rc.list("fallbacks")?,
        keep_all_if_empty: rc.value("keep_all")?,
    };
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(p)
}

fn check_unet_size(unet: &Option<(Network, UNetConfig)>, size: usize) -> CliResult<()> {
    match unet {
        Some((_, cfg)) if cfg.input_size != size => Err(CliError::Failed(format!(
            "the unet model takes {0}x{0} slices but the work size is {size}",
            cfg.input_size
        ))),
        _ => Ok(()),
    }
}

// ------------------------------------------------------------------ phantom

pub fn phantom_defaults() -> Config {
    PhantomSpec::default().to_config()
}

pub fn phantom(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let out = rc.path("out")?;
    let spec = PhantomSpec::from_config(rc.config()).map_err(|e| CliError::Usage(e.to_string()))?;
    let jobs = rc.value("jobs")?;
    outputs.dir(&out)?;
    let scans = with_jobs(jobs, || generate_phantoms(&spec, &out))?;
    rc.write_manifest(&out.join(DIR_MANIFEST))?;
    let slices: usize = scans.iter().map(|s| s.slices.len()).sum();
    println!(
        "wrote {} scans ({slices} slices) to {}",
        scans.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ segment

pub fn segment_defaults() -> Config {
    let mut c = Config::new();
    seg_defaults(&mut c);
    c
}

pub fn segment(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let input = rc.input_dir("in")?;
    let out = rc.opt_path("out");
    let report_path = rc.opt_path("report");
    let truth = rc.opt_path("truth");
    if out.is_none() && report_path.is_none() {
        return Err(CliError::Usage(
            "segment needs --out, --report or both".into(),
        ));
    }
    if report_path.is_some() && truth.is_none() {
        return Err(CliError::Usage("--report needs --truth".into()));
    }
    if let Some(t) = &truth {
        if !t.is_dir() {
            return Err(CliError::Failed(format!(
                "--truth {}: not a directory",
                t.display()
            )));
        }
    }
    let method: SegMethod = rc.value("method")?;
    let jobs = rc.value("jobs")?;
    let unet = load_unet_if_needed(rc)?;
    let seg = segmenter(rc, &unet)?;
    let index = index(&input, Partition::Test)?;
    if let Some(o) = &out {
        outputs.dir(o)?;
    }

    let mut pairs: Vec<(Mask, Mask)> = Vec::new();
    for entry in &index.entries {
        let scan = load_scan(entry)?;
        let masks = with_jobs(jobs, || segment_scan(&scan, &seg))?;
        for (path, mask) in entry.slices.iter().zip(masks) {
            let name = file_name(path);
            if let Some(o) = &out {
                let dir = o.join(&entry.scan_id);
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                write_mask(&mask, dir.join(&name))?;
            }
            if let Some(t) = &truth {
                let gt = read_mask(t.join(&entry.scan_id).join(&name))?;
                pairs.push((mask, gt));
            }
        }
    }

    if let Some(r) = &report_path {
        let (avg, min) = dice_summary(pairs.iter().map(|(a, b)| (a, b)))?;
        let text = format!("method,avg_dice,min_dice\n{method},{avg:.6},{min:.6}\n");
        write_file(outputs, r, text.as_bytes())?;
        print!("{text}");
    }
    let manifest = match (&out, &report_path) {
        (Some(o), _) => o.join(DIR_MANIFEST),
        (None, Some(r)) => manifest_for_file(r),
        (None, None) => unreachable!("checked above"),
    };
    outputs.file(&manifest);
    rc.write_manifest(&manifest)
}

// ------------------------------------------------------------------ train-unet

pub fn train_unet_defaults() -> Config {
    let mut c = UNetConfig::default().to_config();
    c.remove("model");
    c.remove("input_size");
    c.set("epochs", 20);
    c.set("batch_size", 32);
    c.set("initial_lr", 0.1);
    c.set("rng_seed", 0);
    c.set("jobs", 1);
    c
}

pub fn train_unet_cmd(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let input = rc.input_dir("in")?;
    let truth = rc.opt_path("truth").unwrap_or_else(|| input.join(MASK_DIR));
    if !truth.is_dir() {
        return Err(CliError::Failed(format!(
            "--truth {}: not a directory",
            truth.display()
        )));
    }
    let out = rc.path("out")?;
    let jobs = rc.value("jobs")?;
    let index = index(&input, Partition::Train)?;

    let mut pairs = Vec::new();
    for entry in &index.entries {
        let scan = load_scan(entry)?;
        for (path, img) in entry.slices.iter().zip(&scan.slices) {
            let mask = read_mask(truth.join(&entry.scan_id).join(file_name(path)))?;
            pairs.push((squeeze_intensity(img), mask));
        }
    }
    let mut c = rc.config().clone();
    if !rc.has("input_size") {
        c.set("input_size", pairs[0].0.width());
    }
    let cfg = UNetConfig::from_config(&c).map_err(|e| CliError::Usage(e.to_string()))?;
    let tc = TrainConfig {
        batch_size: rc.value("batch_size")?,
        epochs: rc.value("epochs")?,
        initial_lr: rc.value("initial_lr")?,
        train_set_size: pairs.len(),
        test_set_size: pairs.len(),
        rng_seed: rc.value("rng_seed")?,
    };
    let mut net = build_unet(&cfg, tc.rng_seed)?;
    let log = with_jobs(jobs, || train_unet(&mut net, &pairs, &cfg, &tc))?;

    check_model_path(outputs, &out);
    save_unet(&net, &cfg, &out)?;
    if let Some(l) = rc.opt_path("log") {
        write_log(outputs, &l, &log)?;
    }
    let images: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
    let masks = with_jobs(jobs, || predict_masks(&net, &images, &cfg))?;
    let (avg, min) = dice_summary(masks.iter().zip(pairs.iter().map(|p| &p.1)))?;
    let last = log.epoch_losses().last().copied().unwrap_or(f32::NAN);
    println!(
        "trained on {} slices; final epoch loss {last:.4}; training dice avg {avg:.4} min {min:.4}",
        pairs.len()
    );
    let manifest = manifest_for_file(&out);
    outputs.file(&manifest);
    rc.write_manifest(&manifest)
}

// ------------------------------------------------------------------ extract

pub fn extract_defaults_config() -> Config {
    let mut c = Config::new();
    seg_defaults(&mut c);
    extract_defaults(&mut c);
    c
}

pub fn extract(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let input = rc.input_dir("in")?;
    let out = rc.path("out")?;
    let jobs = rc.value("jobs")?;
    let unet = load_unet_if_needed(rc)?;
    let seg = segmenter(rc, &unet)?;
    let cfg = PipelineConfig {
        work_size: rc.value("work_size")?,
        extract: extract_params(rc)?,
        ..PipelineConfig::default()
    };
    check_unet_size(&unet, cfg.work_size)?;
    let index = index(&input, Partition::Train)?;
    outputs.dir(&out)?;
    let mut n = 0;
    for entry in &index.entries {
        let scan = load_scan(entry)?;
        let extracted = with_jobs(jobs, || extract_scan(&scan, &seg, &cfg))?;
        let dir = scan_dir(&out, entry);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (path, img) in entry.slices.iter().zip(&extracted.slices) {
            write_pgm(img, dir.join(file_name(path)))?;
            n += 1;
        }
    }
    println!(
        "extracted {n} slices from {} scans into {}",
        index.entries.len(),
        out.display()
    );
    rc.write_manifest(&out.join(DIR_MANIFEST))
}

// ------------------------------------------------------------------ filter

pub fn filter_defaults() -> Config {
    let mut c = Config::new();
    policy_defaults(&mut c);
    c
}

pub fn filter(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let input = rc.input_dir("in")?;
    let out = rc.path("out")?;
    let policy = policy(rc)?;
    let index = index(&input, Partition::Train)?;
    outputs.dir(&out)?;
    let mut csv = String::from("scan_id,n_slices_in,n_slices_kept,threshold_used\n");
    let (mut total, mut kept) = (0, 0);
    for entry in &index.entries {
        let scan = load_scan(entry)?;
        let outcome = filter_outcome(&scan.slices, &policy)?;
        if !outcome.kept.is_empty() {
            let dir = scan_dir(&out, entry);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            for &i in &outcome.kept {
                let src = &entry.slices[i];
                let dst = dir.join(file_name(src));
                fs::copy(src, &dst).map_err(io_err(&dst))?;
            }
        }
        let used = outcome
            .threshold_used
            .map(|t| t.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{used}\n",
            entry.scan_id,
            scan.slices.len(),
            outcome.kept.len()
        ));
        total += scan.slices.len();
        kept += outcome.kept.len();
    }
    write_file(outputs, &out.join("filter.csv"), csv.as_bytes())?;
    println!("kept {kept} of {total} slices");
    rc.write_manifest(&out.join(DIR_MANIFEST))
}

// ------------------------------------------------------------------ train-clf

pub fn train_clf_defaults() -> Config {
    let mut c = ClfConfig::default().to_config();
    c.remove("model");
    c.set("jobs", 1);
    c
}

fn labeled_slices(index: &DatasetIndex, size: usize) -> CliResult<Vec<(Image, Label)>> {
    let mut out = Vec::new();
    for entry in &index.entries {
        let label = entry.label.ok_or_else(|| {
            CliError::Failed(format!("scan {} has no label folder", entry.scan_id))
        })?;
        for img in load_scan(entry)?.slices {
            let img = if img.dims() == (size, size) {
                img
            } else {
                resize_bilinear(&img, size, size)?
            };
            out.push((img, label));
        }
    }
    Ok(out)
}

pub fn train_clf(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let input = rc.input_dir("in")?;
    let out = rc.path("out")?;
    let jobs = rc.value("jobs")?;
    let cfg = ClfConfig::from_config(rc.config()).map_err(|e| CliError::Usage(e.to_string()))?;
    let index = index(&input, Partition::Train)?;
    let slices = labeled_slices(&index, cfg.input_size)?;
    let mut net = build_classifier(&cfg)?;
    let log = with_jobs(jobs, || train_classifier(&mut net, &slices, &cfg))?;

    check_model_path(outputs, &out);
    save_classifier(&net, &cfg, &out)?;
    if let Some(l) = rc.opt_path("log") {
        write_log(outputs, &l, &log)?;
    }
    let images: Vec<Image> = slices.iter().map(|s| s.0.clone()).collect();
    let probs = with_jobs(jobs, || predict_slices(&net, &images, &cfg))?;
    let right = probs
        .iter()
        .zip(&slices)
        .filter(|(p, s)| (**p >= 0.5) == (s.1 == Label::NonCovid))
        .count();
    let last = log.epoch_losses().last().copied().unwrap_or(f32::NAN);
    println!(
        "trained on {} slices; final epoch loss {last:.4}; training accuracy {:.4}",
        slices.len(),
        right as f64 / slices.len() as f64
    );
    let manifest = manifest_for_file(&out);
    outputs.file(&manifest);
    rc.write_manifest(&manifest)
}

// ------------------------------------------------------------------ predict

pub fn predict_defaults() -> Config {
    let mut c = Config::new();
    seg_defaults(&mut c);
    extract_defaults(&mut c);
    c.remove("work_size");
    policy_defaults(&mut c);
    c.set("slice_threshold", 0.5);
    c
}

pub fn predict(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let input = rc.input_dir("in")?;
    let model = rc.input_file("model")?;
    let out = rc.path("out")?;
    let jobs = rc.value("jobs")?;
    let unet = load_unet_if_needed(rc)?;
    let seg = segmenter(rc, &unet)?;
    let (clf, clf_cfg) = load_classifier(&model)?;
    let work_size = if rc.has("work_size") {
        rc.value("work_size")?
    } else {
        clf_cfg.input_size
    };
    let cfg = PipelineConfig {
        work_size,
        extract: extract_params(rc)?,
        policy: policy(rc)?,
        slice_threshold: rc.value("slice_threshold")?,
    };
    check_unet_size(&unet, cfg.work_size)?;
    let index = index(&input, Partition::Test)?;
    let scans = index
        .entries
        .iter()
        .map(load_scan)
        .collect::<covct::Result<Vec<_>>>()?;
    let results = run_scans(&scans, &seg, &clf, &clf_cfg, &cfg, jobs)?;

    let records: Vec<DecisionRecord> = results.iter().map(Into::into).collect();
    let mut buf = Vec::new();
    write_decisions(&mut buf, &records).map_err(io_err(&out))?;
    write_file(outputs, &out, &buf)?;
    if let Some(s) = rc.opt_path("slices") {
        let mut buf = Vec::new();
        write_slice_predictions(&mut buf, &results).map_err(io_err(&s))?;
        write_file(outputs, &s, &buf)?;
    }
    let covid = records.iter().filter(|r| r.verdict == Label::Covid).count();
    println!(
        "{} scans: {covid} covid, {} non-covid",
        records.len(),
        records.len() - covid
    );
    let manifest = manifest_for_file(&out);
    outputs.file(&manifest);
    rc.write_manifest(&manifest)
}

// ------------------------------------------------------------------ evaluate

/// Header names and rows of a simple comma-separated file.
fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Failed(format!("{}: empty file", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Failed(format!("{}: no {name:?} column", path.display())))
}

/// `scan_id -> label` from two named columns.
fn label_table(path: &Path, label_col: &str) -> CliResult<Vec<(String, Label)>> {
    let (header, rows) = read_table(path)?;
    let id = column(&header, "scan_id", path)?;
    let lab = column(&header, label_col, path)?;
    rows.iter()
        .enumerate()
        .map(|(n, r)| {
            let get = |i: usize| {
                r.get(i).ok_or_else(|| {
                    CliError::Failed(format!("{}: row {} is short", path.display(), n + 2))
                })
            };
            let label = get(lab)?
                .parse()
                .map_err(|e| CliError::Failed(format!("{}: row {}: {e}", path.display(), n + 2)))?;
            Ok((get(id)?.clone(), label))
        })
        .collect()
}

pub fn evaluate(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let preds_path = rc.input_file("predictions")?;
    let labels_path = rc.path("labels")?;
    let out = rc
        .opt_path("out")
        .unwrap_or_else(|| preds_path.with_extension("metrics.csv"));
    let predictions = label_table(&preds_path, "verdict")?;
    let truth: BTreeMap<String, Label> = if labels_path.is_dir() {
        let index = index(&labels_path, Partition::Test)?;
        let mut m = BTreeMap::new();
        for e in &index.entries {
            let l = e.label.ok_or_else(|| {
                CliError::Failed(format!("--labels: scan {} is unlabeled", e.scan_id))
            })?;
            m.insert(e.scan_id.clone(), l);
        }
        m
    } else if labels_path.is_file() {
        label_table(&labels_path, "label")?.into_iter().collect()
    } else {
        return Err(CliError::Failed(format!(
            "--labels {}: no such file or directory",
            labels_path.display()
        )));
    };
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for (id, p) in &predictions {
        let t = truth
            .get(id)
            .ok_or_else(|| CliError::Failed(format!("no label for scan {id}")))?;
        predicted.push(*p);
        actual.push(*t);
    }
    let r = report(confusion(&predicted, &actual)?)?;
    println!("{r}");
    let text = format!("{}\n{}\n", MetricsReport::CSV_HEADER, r.csv_row());
    write_file(outputs, &out, text.as_bytes())?;
    let manifest = manifest_for_file(&out);
    outputs.file(&manifest);
    rc.write_manifest(&manifest)
}

// ------------------------------------------------------------------ hybrid

pub fn hybrid(rc: &RunConfig, outputs: &mut Outputs) -> CliResult<()> {
    let inputs: Vec<PathBuf> = rc.list("inputs")?;
    if inputs.len() != 3 {
        return Err(CliError::Usage(format!(
            "--inputs needs exactly 3 decision files, got {}",
            inputs.len()
        )));
    }
    let out = rc.path("out")?;
    let mut tables = Vec::new();
    for p in &inputs {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        let records = parse_decisions(&text)
            .map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?;
        let map: BTreeMap<String, DecisionRecord> = records
            .into_iter()
            .map(|r| (r.scan_id.clone(), r))
            .collect();
        tables.push(map);
    }
    let ids: Vec<&String> = tables[0].keys().collect();
    for (t, p) in tables.iter().zip(&inputs).skip(1) {
        if t.keys().collect::<Vec<_>>() != ids {
            return Err(CliError::Failed(format!(
                "{} covers different scans than {}",
                p.display(),
                inputs[0].display()
            )));
        }
    }
    let mut csv = String::from("scan_id,verdict_1,verdict_2,verdict_3,verdict\n");
    for id in ids {
        let rows: Vec<DecisionRecord> = tables.iter().map(|t| t[id].clone()).collect();
        let v = hybrid_vote_records(&rows)?;
        csv.push_str(&format!(
            "{id},{},{},{},{v}\n",
            rows[0].verdict, rows[1].verdict, rows[2].verdict
        ));
    }
    write_file(outputs, &out, csv.as_bytes())?;
    let manifest = manifest_for_file(&out);
    outputs.file(&manifest);
    rc.write_manifest(&manifest)
}
