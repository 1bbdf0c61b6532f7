//! Grayscale rasters, binary masks and binary PGM (P5) I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Binary mask aligned to an [`Image`]; `true` marks foreground (lung).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Intensities rescaled to `[0, 100]` by [`squeeze_intensity`]. Kept apart
/// from [`Image`] so the rescaling cannot be applied twice.
#[derive(Debug, Clone, PartialEq)]
pub struct NormImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "raster dimensions {width}x{height} must be positive"
        )));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} raster needs {} values, got {len}",
            width.saturating_mul(height)
        )));
    }
    Ok(())
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for row in out.pixels.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width).rev() {
            pixels.extend_from_slice(row);
        }
        Self { pixels, ..*self }
    }

    /// 256-bin intensity histogram.
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..*self
        }
    }

    pub fn union(&self, other: &Mask) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidArgument(format!(
                "mask {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Self {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    /// Foreground as 255, background as 0.
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    /// Foreground wherever the image is non-zero.
    pub fn from_image(img: &Image) -> Self {
        Self {
            width: img.width,
            height: img.height,
            bits: img.pixels.iter().map(|&p| p > 0).collect(),
        }
    }
}

impl NormImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(v) = values.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "normalised value {v} outside [0, 100]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Mask rendered on the normalised scale: foreground 100, background 0.
    pub fn from_mask(m: &Mask) -> Self {
        Self {
            width: m.width,
            height: m.height,
            values: m
                .bits
                .iter()
                .map(|&b| if b { 100.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Maps each intensity to `v * 100 / 255`.
pub fn squeeze_intensity(img: &Image) -> NormImage {
    NormImage {
        width: img.width,
        height: img.height,
        values: img
            .pixels
            .iter()
            .map(|&p| (p as f64 * 100.0 / 255.0) as f32)
            .collect(),
    }
}

/// Number of pixels with intensity above zero.
pub fn count_nondark(img: &Image) -> usize {
    img.pixels.iter().filter(|&&p| p > 0).count()
}

/// Bilinear resampling with corner-aligned sample positions: output column
/// `x` samples source column `x * (w_in - 1) / (w_out - 1)`. Results are
/// rounded to nearest and clamped to `0..=255`.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size {out_w}x{out_h} must be positive"
        )));
    }
    if (out_w, out_h) == img.dims() {
        return Ok(img.clone());
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, out_w, img.width)).collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, img.height);
        for &(x0, x1, fx) in &xs {
            let p = |x, y| img.get(x, y) as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(out_w, out_h, pixels)
}

/// Reads the next header token, skipping whitespace and `#` comments.
fn header_token(data: &[u8], pos: &mut usize) -> Result<u64> {
    loop {
        match data.get(*pos) {
            Some(b'#') => {
                while let Some(&c) = data.get(*pos) {
                    *pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Parse("PGM header ends early".into())),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse(format!("expected a number at byte {start}")));
    }
    std::str::from_utf8(&data[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|e| Error::Parse(format!("header number: {e}")))
}

/// Decodes a binary (P5) PGM with maxval 255.
pub fn decode_pgm(data: &[u8]) -> Result<Image> {
    if data.len() < 2 || &data[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&data[..data.len().min(2)]).into_owned();
        return Err(Error::Parse(format!("expected magic P5, found {magic:?}")));
    }
    let mut pos = 2;
    let width = header_token(data, &mut pos)? as usize;
    let height = header_token(data, &mut pos)? as usize;
    let maxval = header_token(data, &mut pos)?;
    if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Parse("missing whitespace after maxval".into()));
    }
    pos += 1;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval} (only 255 is supported)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse(format!("zero dimension {width}x{height}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Parse("dimensions overflow".into()))?;
    let raster = data.get(pos..pos + n).ok_or_else(|| {
        Error::Parse(format!(
            "expected {n} pixel bytes, found {}",
            data.len() - pos
        ))
    })?;
    Image::new(width, height, raster.to_vec())
}

/// Canonical encoding: `"P5\n<w> <h>\n255\n"` followed by the raw bytes.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path).map_err(Error::io_at(path))?)
}

pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(Error::io_at(path))?;
    f.write_all(&encode_pgm(img)).map_err(Error::io_at(path))?;
    Ok(())
}

/// Masks on disk are PGMs with foreground 255; any non-zero byte reads as foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(Mask::from_image(&read_pgm(path)?))
}

pub fn write_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(&m.to_image(), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_two_by_two() {
        let mut f = b"P5\n2 2\n255\n".to_vec();
        f.extend_from_slice(&[0, 128, 255, 7]);
        let img = decode_pgm(&f).unwrap();
        assert_eq!(img, Image::new(2, 2, vec![0, 128, 255, 7]).unwrap());
        assert_eq!(encode_pgm(&img), f);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut f = b"P5 # made by hand\n# another\n3\t1 # w h\n255\n".to_vec();
        f.extend_from_slice(&[1, 2, 3]);
        assert_eq!(decode_pgm(&f).unwrap().pixels(), &[1, 2, 3]);
    }

    #[test]
    fn encodes_canonical_header() {
        let img = Image::new(1, 1, vec![42]).unwrap();
        assert_eq!(encode_pgm(&img), b"P5\n1 1\n255\n\x2a");
    }

    #[test]
    fn rejects_ascii_and_other_maxvals() {
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n255\n0\n"),
            Err(Error::Parse(_))
        ));
        let mut f = b"P5\n1 1\n65535\n".to_vec();
        f.extend_from_slice(&[0, 0]);
        assert!(matches!(decode_pgm(&f), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n255\n\x00"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(decode_pgm(b"P5\n2"), Err(Error::Parse(_))));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let img = Image::filled(2, 2, 1).unwrap();
        let err = write_pgm(&img, "/nonexistent-dir/x/y.pgm").unwrap_err();
        assert!(matches!(err, Error::IoAt { .. }));
    }

    #[test]
    fn squeeze_endpoints_and_midpoint() {
        let img = Image::new(3, 1, vec![0, 255, 128]).unwrap();
        let n = squeeze_intensity(&img);
        assert_eq!(n.values()[0], 0.0);
        assert_eq!(n.values()[1], 100.0);
        assert!((n.values()[2] - 50.19608).abs() < 1e-4);
    }

    #[test]
    fn nondark_counts() {
        assert_eq!(count_nondark(&Image::filled(5, 5, 0).unwrap()), 0);
        assert_eq!(count_nondark(&Image::filled(224, 224, 255).unwrap()), 50176);
        let img = Image::from_fn(224, 224, |x, y| u8::from(y * 224 + x < 1764)).unwrap();
        assert_eq!(count_nondark(&img), 1764);
    }

    #[test]
    fn resize_two_to_three() {
        let img = Image::new(2, 1, vec![0, 255]).unwrap();
        let r = resize_bilinear(&img, 3, 1).unwrap();
        assert_eq!(r.pixels(), &[0, 128, 255]);
    }

    #[test]
    fn resize_zero_target_is_invalid() {
        let img = Image::filled(4, 4, 9).unwrap();
        assert!(matches!(
            resize_bilinear(&img, 0, 3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn flips_compose_to_rotation() {
        let img = Image::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(img.flip_horizontal().pixels(), &[3, 2, 1, 6, 5, 4]);
        assert_eq!(img.flip_vertical().pixels(), &[4, 5, 6, 1, 2, 3]);
        assert_eq!(
            img.flip_horizontal().flip_vertical().pixels(),
            &[6, 5, 4, 3, 2, 1]
        );
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h)
                .prop_map(move |px| Image::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pgm_round_trip(img in arb_image()) {
            let bytes = encode_pgm(&img);
            let back = decode_pgm(&bytes).unwrap();
            prop_assert_eq!(encode_pgm(&back), bytes);
            prop_assert_eq!(back, img);
        }

        #[test]
        fn nondark_plus_zero_is_area(img in arb_image()) {
            let zeros = img.pixels().iter().filter(|&&p| p == 0).count();
            prop_assert_eq!(count_nondark(&img) + zeros, img.width() * img.height());
        }

        #[test]
        fn squeeze_is_monotone(a in any::<u8>(), b in any::<u8>()) {
            let img = Image::new(2, 1, vec![a.min(b), a.max(b)]).unwrap();
            let n = squeeze_intensity(&img);
            prop_assert!(n.values()[0] <= n.values()[1]);
        }

        #[test]
        fn resize_stays_in_range(img in arb_image(), w in 1usize..20, h in 1usize..20) {
            let r = resize_bilinear(&img, w, h).unwrap();
            let lo = *img.pixels().iter().min().unwrap();
            let hi = *img.pixels().iter().max().unwrap();
            prop_assert!(r.pixels().iter().all(|&p| p >= lo && p <= hi));
            if lo == hi {
                prop_assert!(r.pixels().iter().all(|&p| p == lo));
            }
            prop_assert_eq!(resize_bilinear(&img, img.width(), img.height()).unwrap(), img);
        }
    }
}
