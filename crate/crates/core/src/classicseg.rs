//! Traditional lung segmentation: Otsu thresholding, two-cluster k-means on
//! intensities, and seeded region growing.
//!
//! Lungs are air-filled and therefore the dark side of every split.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegMethod {
    RegionBased,
    OtsuThreshold,
    KMeans2,
    UNet,
}

impl SegMethod {
    pub const ALL: [SegMethod; 4] = [
        SegMethod::RegionBased,
        SegMethod::OtsuThreshold,
        SegMethod::KMeans2,
        SegMethod::UNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SegMethod::RegionBased => "region",
            SegMethod::OtsuThreshold => "otsu",
            SegMethod::KMeans2 => "kmeans",
            SegMethod::UNet => "unet",
        }
    }
}

impl fmt::Display for SegMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SegMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown segmentation method {s:?} (expected region, otsu, kmeans or unet)"
                ))
            })
    }
}

fn require_two_levels(hist: &[u64; 256]) -> Result<()> {
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }
    Ok(())
}

/// Otsu's threshold: the level `t` maximising the between-class variance
/// of `{v <= t}` versus `{v > t}`. Ties go to the smaller `t`.
///
/// The variance is proportional to `(N*S0 - n0*S)^2 / (n0*n1)`; candidates
/// are compared by cross-multiplication in integers so ties are exact.
pub fn otsu_threshold(img: &Image) -> Result<u8> {
    let hist = img.histogram();
    require_two_levels(&hist)?;
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();

    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(u8, u128, u128)> = None;
    for (t, &c) in hist.iter().enumerate().take(255) {
        n0 += c;
        s0 += t as u64 * c;
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (total_n as i128 * s0 as i128 - n0 as i128 * total_s as i128).unsigned_abs();
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => match (num.checked_mul(bd), bn.checked_mul(den)) {
                (Some(a), Some(b)) => a > b,
                _ => num as f64 / den as f64 > bn as f64 / bd as f64,
            },
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    Ok(best.expect("two levels guarantee a candidate").0)
}

/// Foreground where intensity `<= t`.
pub fn binarize_dark(img: &Image, t: u8) -> Mask {
    let (w, h) = img.dims();
    Mask::new(w, h, img.pixels().iter().map(|&p| p <= t).collect()).expect("same dims")
}

/// Dark side of Otsu's threshold, without any morphological cleanup.
pub fn segment_otsu(img: &Image) -> Result<Mask> {
    Ok(binarize_dark(img, otsu_threshold(img)?))
}

/// Result of 1-D two-cluster k-means on intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Cluster means, dark cluster first.
    pub centers: [f64; 2],
    /// Largest intensity assigned to the dark cluster.
    pub cut: u8,
    /// Sum of squared distances to the assigned center, after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITERATIONS: usize = 100;

/// Lloyd iterations on the intensity histogram, centers initialised at the
/// minimum and maximum intensity. Stops when assignments repeat or after
/// [`KMEANS_MAX_ITERATIONS`]. An intensity equidistant from both centers
/// joins the dark cluster.
pub fn kmeans2_fit(img: &Image) -> Result<KMeansFit> {
    let hist = img.histogram();
    require_two_levels(&hist)?;
    let lo = hist.iter().position(|&c| c > 0).expect("non-empty") as f64;
    let hi = hist.iter().rposition(|&c| c > 0).expect("non-empty") as f64;
    let mut centers = [lo, hi];
    let mut inertia = Vec::new();
    let mut cut: Option<u8> = None;
    let mut iterations = 0;

    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        // Assignment: intensities up to `new_cut` go to the dark center.
        let new_cut = (0..=255u8)
            .rev()
            .find(|&v| {
                let v = v as f64;
                (v - centers[0]).abs() <= (v - centers[1]).abs()
            })
            .unwrap_or(0);
        let mut sums = [0.0f64; 2];
        let mut counts = [0u64; 2];
        for (v, &c) in hist.iter().enumerate() {
            let k = usize::from(v as u8 > new_cut);
            sums[k] += v as f64 * c as f64;
            counts[k] += c;
        }
        let sse: f64 = hist
            .iter()
            .enumerate()
            .map(|(v, &c)| {
                let k = usize::from(v as u8 > new_cut);
                c as f64 * (v as f64 - centers[k]).powi(2)
            })
            .sum();
        inertia.push(sse);
        let stable = cut == Some(new_cut);
        cut = Some(new_cut);
        if stable {
            break;
        }
        for k in 0..2 {
            if counts[k] > 0 {
                centers[k] = sums[k] / counts[k] as f64;
            }
        }
    }
    Ok(KMeansFit {
        centers,
        cut: cut.expect("at least one iteration"),
        inertia,
        iterations,
    })
}

/// Lower-mean cluster of [`kmeans2_fit`]. The initialisation is fixed, so
/// `seed` does not change the result; it is accepted so callers can treat
/// every segmenter uniformly.
pub fn segment_kmeans2(img: &Image, seed: u64) -> Result<Mask> {
    let _ = seed;
    let fit = kmeans2_fit(img)?;
    Ok(binarize_dark(img, fit.cut))
}

/// Default seeds: the typical left and right lung centers.
pub fn default_region_seeds(width: usize, height: usize) -> Vec<(usize, usize)> {
    vec![(width / 4, height / 2), (3 * width / 4, height / 2)]
}

pub const DEFAULT_REGION_TOLERANCE: f64 = 40.0;

/// Seeded region growing over 4-neighbours. A pixel joins a seed's region
/// when its intensity is within `tol` of that region's running mean. The
/// result is the union of all seed regions.
pub fn segment_region(img: &Image, seeds: &[(usize, usize)], tol: f64) -> Result<Mask> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "region growing needs at least one seed".into(),
        ));
    }
    let (w, h) = img.dims();
    if let Some(&(x, y)) = seeds.iter().find(|&&(x, y)| x >= w || y >= h) {
        return Err(Error::InvalidArgument(format!(
            "seed ({x}, {y}) outside {w}x{h} image"
        )));
    }
    let mut out = Mask::empty(w, h);
    let mut visited = vec![false; w * h];
    let mut queue = VecDeque::new();
    for &(sx, sy) in seeds {
        if out.get(sx, sy) {
            continue;
        }
        visited.iter_mut().for_each(|v| *v = false);
        let mut sum = img.get(sx, sy) as f64;
        let mut n = 1.0f64;
        visited[sy * w + sx] = true;
        out.set(sx, sy, true);
        queue.push_back((sx, sy));
        while let Some((x, y)) = queue.pop_front() {
            let neighbours = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbours {
                if nx >= w || ny >= h || visited[ny * w + nx] {
                    continue;
                }
                let v = img.get(nx, ny) as f64;
                if (v - sum / n).abs() <= tol {
                    visited[ny * w + nx] = true;
                    out.set(nx, ny, true);
                    sum += v;
                    n += 1.0;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level(lo: u8, hi: u8) -> Image {
        Image::from_fn(16, 16, |x, _| if x < 8 { lo } else { hi }).unwrap()
    }

    #[test]
    fn otsu_separates_two_levels() {
        let img = two_level(10, 200);
        let t = otsu_threshold(&img).unwrap();
        assert!((10..200).contains(&t));
        assert_eq!(t, 10, "smaller-t tie rule");
        let m = segment_otsu(&img).unwrap();
        assert!(m
            .bits()
            .iter()
            .zip(img.pixels())
            .all(|(&b, &p)| b == (p == 10)));
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = Image::filled(4, 4, 77).unwrap();
        assert!(matches!(
            otsu_threshold(&img),
            Err(Error::DegenerateHistogram)
        ));
        assert!(matches!(
            segment_kmeans2(&img, 0),
            Err(Error::DegenerateHistogram)
        ));
    }

    #[test]
    fn inverted_contrast_gives_complement() {
        let img = two_level(10, 200);
        let inv = Image::new(16, 16, img.pixels().iter().map(|p| 255 - p).collect()).unwrap();
        assert_eq!(
            segment_otsu(&inv).unwrap(),
            segment_otsu(&img).unwrap().complement()
        );
    }

    #[test]
    fn threshold_below_minimum_is_empty() {
        let img = two_level(10, 200);
        assert_eq!(binarize_dark(&img, 9).count(), 0);
    }

    #[test]
    fn kmeans_two_points() {
        let img = two_level(10, 200);
        let fit = kmeans2_fit(&img).unwrap();
        assert_eq!(fit.centers, [10.0, 200.0]);
        let m = segment_kmeans2(&img, 0).unwrap();
        assert_eq!(m, segment_otsu(&img).unwrap());
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        let img = Image::from_fn(32, 32, |x, y| ((x * 37 + y * 91) % 256) as u8).unwrap();
        let fit = kmeans2_fit(&img).unwrap();
        assert!(fit.iterations >= 2);
        for w in fit.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.inertia);
        }
    }

    #[test]
    fn kmeans_ignores_seed() {
        let img = Image::from_fn(20, 20, |x, y| ((x * x + 3 * y) % 250) as u8).unwrap();
        assert_eq!(
            segment_kmeans2(&img, 1).unwrap(),
            segment_kmeans2(&img, 999).unwrap()
        );
    }

    fn disk_image() -> (Image, Mask) {
        let inside = |x: usize, y: usize| {
            let (dx, dy) = (x as f64 - 10.0, y as f64 - 10.0);
            dx * dx + dy * dy <= 36.0
        };
        (
            Image::from_fn(21, 21, |x, y| if inside(x, y) { 30 } else { 200 }).unwrap(),
            Mask::from_fn(21, 21, inside),
        )
    }

    #[test]
    fn region_grows_homogeneous_disk() {
        let (img, disk) = disk_image();
        assert_eq!(segment_region(&img, &[(10, 10)], 10.0).unwrap(), disk);
    }

    #[test]
    fn region_with_full_tolerance_covers_everything() {
        let (img, _) = disk_image();
        assert_eq!(
            segment_region(&img, &[(0, 0)], 255.0).unwrap().count(),
            21 * 21
        );
    }

    #[test]
    fn region_rejects_bad_seeds() {
        let (img, _) = disk_image();
        assert!(matches!(
            segment_region(&img, &[], 5.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            segment_region(&img, &[(21, 0)], 5.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in SegMethod::ALL {
            assert_eq!(m.as_str().parse::<SegMethod>().unwrap(), m);
        }
        assert!("watershed".parse::<SegMethod>().is_err());
    }
}
