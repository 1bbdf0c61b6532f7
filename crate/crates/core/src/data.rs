//! Dataset discovery and the synthetic phantom generator.
//!
//! On-disk layout: `root/{covid,non-covid}/<scan_id>/<index>.pgm`, or
//! `root/<scan_id>/<index>.pgm` when labels are unknown. Slices are ordered
//! by file name, so zero-padded indices give slice order.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::imaging::{encode_pgm, read_pgm, Image, Mask};
use crate::pipeline::{CtScan, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            _ => Err(Error::InvalidArgument(format!("unknown partition {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub scan_id: String,
    pub path: PathBuf,
    pub label: Option<Label>,
    /// Slice files in slice order.
    pub slices: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub partition: Partition,
    pub entries: Vec<IndexEntry>,
    /// Non-fatal problems, such as scan folders without slices.
    pub issues: Vec<String>,
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(Error::io_at(path))? {
        out.push(entry.map_err(Error::io_at(path))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_pgm(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Lists scans under `root`. If a `covid` or `non-covid` folder exists the
/// layout is labeled and only those two folders are read; otherwise every
/// sub-folder is an unlabeled scan.
pub fn index_dataset(root: impl AsRef<Path>, partition: Partition) -> Result<DatasetIndex> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::IoAt {
            path: root.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "dataset root is not a directory",
            ),
        });
    }
    let labeled: Vec<(PathBuf, Option<Label>)> = [Label::Covid, Label::NonCovid]
        .into_iter()
        .map(|l| (root.join(l.as_str()), Some(l)))
        .filter(|(p, _)| p.is_dir())
        .collect();
    let groups = if labeled.is_empty() {
        vec![(root.to_path_buf(), None)]
    } else {
        labeled
    };

    let mut entries: Vec<IndexEntry> = Vec::new();
    let mut issues = Vec::new();
    for (dir, label) in groups {
        for scan_dir in sorted_dir(&dir)?.into_iter().filter(|p| p.is_dir()) {
            let scan_id = file_name(&scan_dir);
            let slices: Vec<PathBuf> = sorted_dir(&scan_dir)?
                .into_iter()
                .filter(|p| is_pgm(p))
                .collect();
            if slices.is_empty() {
                issues.push(format!("{}: no .pgm slices", scan_dir.display()));
                continue;
            }
            if let Some(prev) = entries.iter().find(|e| e.scan_id == scan_id) {
                return Err(Error::Index(format!(
                    "scan id {scan_id:?} appears in both {} and {}",
                    prev.path.display(),
                    scan_dir.display()
                )));
            }
            entries.push(IndexEntry {
                scan_id,
                path: scan_dir,
                label,
                slices,
            });
        }
    }
    Ok(DatasetIndex {
        partition,
        entries,
        issues,
    })
}

pub fn load_scan(entry: &IndexEntry) -> Result<CtScan> {
    let slices = entry
        .slices
        .iter()
        .map(read_pgm)
        .collect::<Result<Vec<_>>>()?;
    CtScan::new(entry.scan_id.clone(), slices, entry.label)
}

/// Splits the public segmentation volumes: `t0`, `t1` are test, `t2`..`t8`
/// train. Returns `(train, test)` in input order.
pub fn split_public_seg<S: AsRef<str>>(volumes: &[S]) -> Result<(Vec<String>, Vec<String>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for v in volumes {
        let name = v.as_ref();
        let k: Option<u32> = name.strip_prefix('t').and_then(|d| d.parse().ok());
        match k {
            Some(0 | 1) => test.push(name.to_string()),
            Some(2..=8) => train.push(name.to_string()),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "volume {name:?} is not one of t0..t8"
                )))
            }
        }
    }
    Ok((train, test))
}

/// Axis-aligned ellipse in fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub const fn new(cx: f64, cy: f64, rx: f64, ry: f64) -> Self {
        Self { cx, cy, rx, ry }
    }

    /// `<= 1` inside.
    fn level(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.level(x, y) <= 1.0
    }

    fn shifted(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            rx: self.rx * s,
            ry: self.ry * s,
            ..*self
        }
    }

    fn boundary(&self, n: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..n).map(move |i| {
            let t = i as f64 * std::f64::consts::TAU / n as f64;
            (self.cx + self.rx * t.cos(), self.cy + self.ry * t.sin())
        })
    }
}

impl fmt::Display for Ellipse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.cx, self.cy, self.rx, self.ry)
    }
}

impl FromStr for Ellipse {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<f64> = crate::config::parse_list(s)?;
        match v[..] {
            [cx, cy, rx, ry] => Ok(Self::new(cx, cy, rx, ry)),
            _ => Err(format!("ellipse needs cx,cy,rx,ry, got {s:?}")),
        }
    }
}

/// Parameters of the synthetic CT generator. Geometry is in fractions of
/// the image side.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub rng_seed: u64,
    pub image_size: usize,
    pub scans_per_class: usize,
    pub slices_min: usize,
    pub slices_max: usize,
    pub body: Ellipse,
    pub left_lung: Ellipse,
    pub right_lung: Ellipse,
    /// Lung size at the first and last slice relative to the middle one.
    pub lung_scale_min: f64,
    pub lesions_min: usize,
    pub lesions_max: usize,
    pub lesion_radius_min: f64,
    pub lesion_radius_max: f64,
    pub lesion_intensity_min: u8,
    pub lesion_intensity_max: u8,
    pub background_intensity: u8,
    pub body_intensity: u8,
    pub lung_intensity: u8,
    pub noise_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            rng_seed: 7,
            image_size: 224,
            scans_per_class: 3,
            slices_min: 4,
            slices_max: 8,
            body: Ellipse::new(0.5, 0.5, 0.45, 0.38),
            left_lung: Ellipse::new(0.25, 0.5, 0.15, 0.25),
            right_lung: Ellipse::new(0.75, 0.5, 0.15, 0.25),
            lung_scale_min: 0.6,
            lesions_min: 1,
            lesions_max: 3,
            lesion_radius_min: 0.03,
            lesion_radius_max: 0.06,
            lesion_intensity_min: 120,
            lesion_intensity_max: 160,
            background_intensity: 220,
            body_intensity: 180,
            lung_intensity: 30,
            noise_sigma: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.image_size < 16 {
            return bad(format!("image_size {} is below 16", self.image_size));
        }
        if self.scans_per_class == 0 {
            return bad("scans_per_class must be positive".into());
        }
        if self.slices_min == 0 || self.slices_min > self.slices_max {
            return bad(format!(
                "slice range {}..={} is empty",
                self.slices_min, self.slices_max
            ));
        }
        for (name, e) in [
            ("body", &self.body),
            ("left_lung", &self.left_lung),
            ("right_lung", &self.right_lung),
        ] {
            if !(e.rx > 0.0 && e.ry > 0.0) {
                return bad(format!("{name} radii must be positive"));
            }
            if e.boundary(720)
                .any(|(x, y)| !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y))
            {
                return bad(format!("{name} ellipse leaves the image"));
            }
        }
        for (name, lung) in [
            ("left_lung", &self.left_lung),
            ("right_lung", &self.right_lung),
        ] {
            if lung.boundary(720).any(|(x, y)| !self.body.contains(x, y)) {
                return bad(format!("{name} is not inside the body ellipse"));
            }
        }
        if self
            .left_lung
            .boundary(720)
            .any(|(x, y)| self.right_lung.contains(x, y))
            || self
                .right_lung
                .boundary(720)
                .any(|(x, y)| self.left_lung.contains(x, y))
        {
            return bad("lung ellipses overlap".into());
        }
        if !(self.lung_scale_min > 0.0 && self.lung_scale_min <= 1.0) {
            return bad(format!(
                "lung_scale_min {} outside (0, 1]",
                self.lung_scale_min
            ));
        }
        if self.lesions_min == 0 || self.lesions_min > self.lesions_max {
            return bad(format!(
                "lesion count range {}..={} invalid",
                self.lesions_min, self.lesions_max
            ));
        }
        if !(self.lesion_radius_min > 0.0 && self.lesion_radius_min <= self.lesion_radius_max) {
            return bad("lesion radius range invalid".into());
        }
        if self.lesion_intensity_min > self.lesion_intensity_max {
            return bad("lesion intensity range invalid".into());
        }
        if self.lung_intensity >= self.lesion_intensity_min {
            return bad("lesions must be brighter than lungs".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma {} must be a finite non-negative number",
                self.noise_sigma
            ));
        }
        Ok(())
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("rng_seed", self.rng_seed);
        c.set("image_size", self.image_size);
        c.set("scans_per_class", self.scans_per_class);
        c.set("slices_min", self.slices_min);
        c.set("slices_max", self.slices_max);
        c.set("body", self.body);
        c.set("left_lung", self.left_lung);
        c.set("right_lung", self.right_lung);
        c.set("lung_scale_min", self.lung_scale_min);
        c.set("lesions_min", self.lesions_min);
        c.set("lesions_max", self.lesions_max);
        c.set("lesion_radius_min", self.lesion_radius_min);
        c.set("lesion_radius_max", self.lesion_radius_max);
        c.set("lesion_intensity_min", self.lesion_intensity_min);
        c.set("lesion_intensity_max", self.lesion_intensity_max);
        c.set("background_intensity", self.background_intensity);
        c.set("body_intensity", self.body_intensity);
        c.set("lung_intensity", self.lung_intensity);
        c.set("noise_sigma", self.noise_sigma);
        c
    }

    /// Missing keys keep their defaults.
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        let spec = Self {
            rng_seed: c.parsed_or("rng_seed", d.rng_seed)?,
            image_size: c.parsed_or("image_size", d.image_size)?,
            scans_per_class: c.parsed_or("scans_per_class", d.scans_per_class)?,
            slices_min: c.parsed_or("slices_min", d.slices_min)?,
            slices_max: c.parsed_or("slices_max", d.slices_max)?,
            body: c.parsed_or("body", d.body)?,
            left_lung: c.parsed_or("left_lung", d.left_lung)?,
            right_lung: c.parsed_or("right_lung", d.right_lung)?,
            lung_scale_min: c.parsed_or("lung_scale_min", d.lung_scale_min)?,
            lesions_min: c.parsed_or("lesions_min", d.lesions_min)?,
            lesions_max: c.parsed_or("lesions_max", d.lesions_max)?,
            lesion_radius_min: c.parsed_or("lesion_radius_min", d.lesion_radius_min)?,
            lesion_radius_max: c.parsed_or("lesion_radius_max", d.lesion_radius_max)?,
            lesion_intensity_min: c.parsed_or("lesion_intensity_min", d.lesion_intensity_min)?,
            lesion_intensity_max: c.parsed_or("lesion_intensity_max", d.lesion_intensity_max)?,
            background_intensity: c.parsed_or("background_intensity", d.background_intensity)?,
            body_intensity: c.parsed_or("body_intensity", d.body_intensity)?,
            lung_intensity: c.parsed_or("lung_intensity", d.lung_intensity)?,
            noise_sigma: c.parsed_or("noise_sigma", d.noise_sigma)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One generated scan with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomScan {
    pub scan_id: String,
    pub label: Label,
    pub slices: Vec<Image>,
    pub masks: Vec<Mask>,
    /// Lesions painted on each slice.
    pub lesions: Vec<usize>,
}

impl PhantomScan {
    pub fn to_ct_scan(&self) -> CtScan {
        CtScan {
            scan_id: self.scan_id.clone(),
            slices: self.slices.clone(),
            label: Some(self.label),
        }
    }
}

struct Lesion {
    cx: f64,
    cy: f64,
    r: f64,
    value: u8,
}

/// Renders one slice with the given lung ellipses.
fn render_slice(
    spec: &PhantomSpec,
    lungs: [Ellipse; 2],
    label: Label,
    rng: &mut ChaCha8Rng,
) -> (Image, Mask, usize) {
    let n = spec.image_size;
    let side = n as f64;
    let lesions: Vec<Lesion> = if label == Label::Covid {
        let count = rng.random_range(spec.lesions_min..=spec.lesions_max);
        (0..count)
            .map(|_| {
                let lung = lungs[rng.random_range(0..2)];
                let rho = 0.6 * rng.random::<f64>().sqrt();
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                Lesion {
                    cx: lung.cx + rho * lung.rx * theta.cos(),
                    cy: lung.cy + rho * lung.ry * theta.sin(),
                    r: rng.random_range(spec.lesion_radius_min..=spec.lesion_radius_max),
                    value: rng.random_range(spec.lesion_intensity_min..=spec.lesion_intensity_max),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let noise =
        (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma"));
    let mut pixels = Vec::with_capacity(n * n);
    let mut bits = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = ((x as f64 + 0.5) / side, (y as f64 + 0.5) / side);
            let in_lung = lungs.iter().any(|l| l.contains(fx, fy));
            let base = if in_lung {
                lesions
                    .iter()
                    .find(|l| (fx - l.cx).powi(2) + (fy - l.cy).powi(2) <= l.r * l.r)
                    .map_or(spec.lung_intensity, |l| l.value)
            } else if spec.body.contains(fx, fy) {
                spec.body_intensity
            } else {
                spec.background_intensity
            };
            let v = match &noise {
                Some(d) => (base as f64 + d.sample(rng)).round().clamp(0.0, 255.0) as u8,
                None => base,
            };
            pixels.push(v);
            bits.push(in_lung);
        }
    }
    (
        Image::new(n, n, pixels).expect("square raster"),
        Mask::new(n, n, bits).expect("square raster"),
        lesions.len(),
    )
}

/// Per-scan variation: each lung shrinks by up to 15% and moves by up to
/// 2% of the image side, as long as it stays inside the body and clear of
/// the other lung.
fn jittered_lungs(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> [Ellipse; 2] {
    let mut pick = |l: Ellipse| {
        let s = rng.random_range(0.85..=1.0);
        let dx = rng.random_range(-0.02..=0.02);
        let dy = rng.random_range(-0.02..=0.02);
        l.scaled(s).shifted(dx, dy)
    };
    let candidate = [pick(spec.left_lung), pick(spec.right_lung)];
    let inside = candidate
        .iter()
        .all(|l| l.boundary(360).all(|(x, y)| spec.body.contains(x, y)));
    let apart = candidate[0]
        .boundary(360)
        .all(|(x, y)| !candidate[1].contains(x, y));
    if inside && apart {
        candidate
    } else {
        [spec.left_lung, spec.right_lung]
    }
}

fn generate_scan(spec: &PhantomSpec, label: Label, index: usize) -> PhantomScan {
    let class = match label {
        Label::Covid => 0u64,
        Label::NonCovid => 1u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(class << 32 | index as u64);
    let n_slices = rng.random_range(spec.slices_min..=spec.slices_max);
    let lungs = jittered_lungs(spec, &mut rng);
    let mut scan = PhantomScan {
        scan_id: format!("{}-{index:03}", label.as_str().replace('-', "")),
        label,
        slices: Vec::with_capacity(n_slices),
        masks: Vec::with_capacity(n_slices),
        lesions: Vec::with_capacity(n_slices),
    };
    for z in 0..n_slices {
        let t = (std::f64::consts::PI * (z as f64 + 0.5) / n_slices as f64).sin();
        let scale = spec.lung_scale_min + (1.0 - spec.lung_scale_min) * t;
        let (img, mask, lesions) =
            render_slice(spec, lungs.map(|l| l.scaled(scale)), label, &mut rng);
        scan.slices.push(img);
        scan.masks.push(mask);
        scan.lesions.push(lesions);
    }
    scan
}

/// Generates every scan in memory: COVID scans first, then non-COVID. Each
/// scan draws from its own stream of the seeded generator, so the output
/// does not depend on how work is scheduled.
pub fn phantom_scans(spec: &PhantomSpec) -> Result<Vec<PhantomScan>> {
    spec.validate()?;
    let jobs: Vec<(Label, usize)> = [Label::Covid, Label::NonCovid]
        .into_iter()
        .flat_map(|l| (0..spec.scans_per_class).map(move |i| (l, i)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(l, i)| generate_scan(spec, l, i))
        .collect())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(Error::io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io_at(path))
}

pub const PHANTOM_SPEC_FILE: &str = "phantom.cfg";
pub const LESION_FILE: &str = "lesions.csv";
pub const MASK_DIR: &str = "masks";

/// Slice file name for index `i`.
pub fn slice_file_name(i: usize) -> String {
    format!("{i:04}.pgm")
}

/// Writes the phantom dataset under `root`:
/// `{covid,non-covid}/<scan>/<i>.pgm`, `masks/<scan>/<i>.pgm`, the spec as
/// `phantom.cfg` and per-slice lesion counts as `lesions.csv`.
pub fn generate_phantoms(spec: &PhantomSpec, root: impl AsRef<Path>) -> Result<Vec<PhantomScan>> {
    let root = root.as_ref();
    let scans = phantom_scans(spec)?;
    scans.par_iter().try_for_each(|scan| -> Result<()> {
        let img_dir = root.join(scan.label.as_str()).join(&scan.scan_id);
        let mask_dir = root.join(MASK_DIR).join(&scan.scan_id);
        for dir in [&img_dir, &mask_dir] {
            fs::create_dir_all(dir).map_err(Error::io_at(dir))?;
        }
        for (i, (img, mask)) in scan.slices.iter().zip(&scan.masks).enumerate() {
            write_atomic(&img_dir.join(slice_file_name(i)), &encode_pgm(img))?;
            write_atomic(
                &mask_dir.join(slice_file_name(i)),
                &encode_pgm(&mask.to_image()),
            )?;
        }
        Ok(())
    })?;
    spec.to_config().save(root.join(PHANTOM_SPEC_FILE))?;
    let mut csv = Vec::new();
    writeln!(csv, "scan_id,label,slice_index,lesions")?;
    for scan in &scans {
        for (i, n) in scan.lesions.iter().enumerate() {
            writeln!(csv, "{},{},{},{}", scan.scan_id, scan.label, i, n)?;
        }
    }
    write_atomic(&root.join(LESION_FILE), &csv)?;
    Ok(scans)
}
