//! Binary morphology and the lung-extraction chain.
//!
//! Pixels outside the raster count as background, except inside `close`,
//! whose erosion ignores them so that closing stays extensive and
//! idempotent at the image edge.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask, NormImage};

/// Disk structuring element: offsets with `dx^2 + dy^2 <= r^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Disk {
    radius: usize,
}

impl Disk {
    pub fn new(radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidArgument(
                "disk radius must be at least 1".into(),
            ));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Half-width of the disk at each row offset `-r..=r`.
    fn row_spans(&self) -> Vec<(isize, usize)> {
        let r = self.radius as isize;
        (-r..=r)
            .map(|dy| {
                let rem = (r * r - dy * dy) as usize;
                (dy, rem.isqrt())
            })
            .collect()
    }

    pub fn offsets(&self) -> Vec<(isize, isize)> {
        self.row_spans()
            .into_iter()
            .flat_map(|(dy, w)| (-(w as isize)..=w as isize).map(move |dx| (dx, dy)))
            .collect()
    }
}

/// Per-row prefix counts of foreground pixels.
fn row_prefix(m: &Mask) -> Vec<u32> {
    let (w, h) = m.dims();
    let mut pre = vec![0u32; (w + 1) * h];
    for y in 0..h {
        for x in 0..w {
            pre[y * (w + 1) + x + 1] = pre[y * (w + 1) + x] + u32::from(m.get(x, y));
        }
    }
    pre
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    Dilate,
    /// Out-of-bounds offsets fail the test.
    Erode,
    /// Out-of-bounds offsets are skipped.
    ErodeInside,
}

fn morph(m: &Mask, d: Disk, op: Op) -> Mask {
    let erode = op != Op::Dilate;
    let strict = op == Op::Erode;
    let (w, h) = m.dims();
    let pre = row_prefix(m);
    let spans = d.row_spans();
    Mask::from_fn(w, h, |x, y| {
        let mut any = false;
        for &(dy, half) in &spans {
            let yy = y as isize + dy;
            let x0 = x as isize - half as isize;
            let x1 = x as isize + half as isize;
            if yy < 0 || yy >= h as isize {
                if strict {
                    return false;
                }
                continue;
            }
            if strict && (x0 < 0 || x1 >= w as isize) {
                return false;
            }
            let lo = x0.max(0) as usize;
            let hi = (x1.min(w as isize - 1)) as usize;
            let row = yy as usize * (w + 1);
            let count = (pre[row + hi + 1] - pre[row + lo]) as usize;
            if erode {
                if count != hi - lo + 1 {
                    return false;
                }
            } else if count > 0 {
                any = true;
                break;
            }
        }
        erode || any
    })
}

/// Foreground iff every disk offset lands on foreground.
pub fn erode(m: &Mask, d: Disk) -> Mask {
    morph(m, d, Op::Erode)
}

/// Foreground iff some disk offset lands on foreground.
pub fn dilate(m: &Mask, d: Disk) -> Mask {
    morph(m, d, Op::Dilate)
}

/// Dilation followed by an erosion that only looks at in-bounds offsets.
pub fn close(m: &Mask, d: Disk) -> Mask {
    morph(&dilate(m, d), d, Op::ErodeInside)
}

/// Marks every pixel with value `target` that is 4-connected to a start pixel.
fn flood(
    bits: &[bool],
    w: usize,
    h: usize,
    target: bool,
    starts: impl Iterator<Item = (usize, usize)>,
) -> Vec<bool> {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (x, y) in starts {
        let i = y * w + x;
        if bits[i] == target && !seen[i] {
            seen[i] = true;
            queue.push_back((x, y));
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let mut visit = |nx: usize, ny: usize| {
            let i = ny * w + nx;
            if bits[i] == target && !seen[i] {
                seen[i] = true;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    seen
}

fn border_pixels(w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = (0..w).flat_map(move |x| [(x, 0), (x, h - 1)]);
    let cols = (0..h).flat_map(move |y| [(0, y), (w - 1, y)]);
    rows.chain(cols)
}

/// Removes every 4-connected foreground component touching the image edge.
pub fn clear_border(m: &Mask) -> Mask {
    let (w, h) = m.dims();
    let touching = flood(m.bits(), w, h, true, border_pixels(w, h));
    let bits = m
        .bits()
        .iter()
        .zip(&touching)
        .map(|(&b, &t)| b && !t)
        .collect();
    Mask::new(w, h, bits).expect("same dims")
}

/// Background regions not 4-connected to the border become foreground.
pub fn fill_holes(m: &Mask) -> Mask {
    let (w, h) = m.dims();
    let outside = flood(m.bits(), w, h, false, border_pixels(w, h));
    Mask::new(w, h, outside.iter().map(|&o| !o).collect()).expect("same dims")
}

/// Roberts cross gradient magnitude thresholded at `edge_thresh`. The
/// magnitude is evaluated where the full 2x2 window fits; the last row and
/// column are zero.
pub fn roberts_edges(img: &NormImage, edge_thresh: f32) -> Mask {
    let (w, h) = img.dims();
    Mask::from_fn(w, h, |x, y| {
        if x + 1 >= w || y + 1 >= h {
            return false;
        }
        let g1 = img.get(x, y) - img.get(x + 1, y + 1);
        let g2 = img.get(x + 1, y) - img.get(x, y + 1);
        (g1 * g1 + g2 * g2).sqrt() > edge_thresh
    })
}

/// Keeps image pixels under the mask and zeroes the rest.
pub fn overlay(img: &Image, m: &Mask) -> Result<Image> {
    if img.dims() != m.dims() {
        return Err(Error::InvalidArgument(format!(
            "image {:?} and mask {:?} differ in size",
            img.dims(),
            m.dims()
        )));
    }
    let (w, h) = img.dims();
    let pixels = img
        .pixels()
        .iter()
        .zip(m.bits())
        .map(|(&p, &b)| if b { p } else { 0 })
        .collect();
    Image::new(w, h, pixels)
}

/// Parameters of [`extract_lungs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractParams {
    pub erode_radius: usize,
    pub close_radius: usize,
    pub edge_thresh: f32,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            erode_radius: 2,
            close_radius: 10,
            edge_thresh: 10.0,
        }
    }
}

/// Cleans a raw lung mask and returns the final mask used for extraction:
/// clear border, erode, close, OR with the Roberts edges of the closed mask,
/// fill holes.
pub fn refine_mask(raw: &Mask, params: &ExtractParams) -> Result<Mask> {
    let cleared = clear_border(raw);
    let eroded = erode(&cleared, Disk::new(params.erode_radius)?);
    let closed = close(&eroded, Disk::new(params.close_radius)?);
    let edges = roberts_edges(&NormImage::from_mask(&closed), params.edge_thresh);
    Ok(fill_holes(&closed.union(&edges)?))
}

/// Zeroes everything outside the refined lung mask.
pub fn extract_lungs(img: &Image, raw: &Mask, params: &ExtractParams) -> Result<Image> {
    if img.dims() != raw.dims() {
        return Err(Error::InvalidArgument(format!(
            "image {:?} and mask {:?} differ in size",
            img.dims(),
            raw.dims()
        )));
    }
    overlay(img, &refine_mask(raw, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk_mask(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    #[test]
    fn disk_offsets() {
        assert_eq!(Disk::new(1).unwrap().offsets().len(), 5);
        assert_eq!(Disk::new(2).unwrap().offsets().len(), 13);
        assert!(Disk::new(0).is_err());
    }

    #[test]
    fn erode_full_mask_leaves_disk_frame() {
        let d = Disk::new(2).unwrap();
        let e = erode(&Mask::full(10, 10), d);
        let expected = Mask::from_fn(10, 10, |x, y| {
            d.offsets().iter().all(|&(dx, dy)| {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                (0..10).contains(&xx) && (0..10).contains(&yy)
            })
        });
        assert_eq!(e, expected);
        assert_eq!(e.count(), 36);
        assert_eq!(erode(&Mask::empty(7, 7), d), Mask::empty(7, 7));
    }

    #[test]
    fn dilate_point_is_disk() {
        let mut m = Mask::empty(9, 9);
        m.set(4, 4, true);
        assert_eq!(
            dilate(&m, Disk::new(3).unwrap()),
            disk_mask(9, 9, 4.0, 4.0, 3.0)
        );
    }

    #[test]
    fn close_merges_nearby_blobs() {
        let a = Mask::from_fn(40, 40, |x, y| {
            (10..18).contains(&x) && (15..25).contains(&y)
        });
        let b = Mask::from_fn(40, 40, |x, y| {
            (21..29).contains(&x) && (15..25).contains(&y)
        });
        let closed = close(&a.union(&b).unwrap(), Disk::new(10).unwrap());
        for x in 18..21 {
            assert!(closed.get(x, 20), "gap column {x} not bridged");
        }
    }

    #[test]
    fn clear_border_cases() {
        let top = Mask::from_fn(8, 8, |x, y| y < 2 && x < 4);
        assert_eq!(clear_border(&top).count(), 0);
        let inner = Mask::from_fn(8, 8, |x, y| (3..5).contains(&x) && (3..5).contains(&y));
        assert_eq!(clear_border(&inner), inner);
        assert_eq!(clear_border(&top.union(&inner).unwrap()), inner);
    }

    #[test]
    fn fill_ring() {
        let ring = Mask::from_fn(21, 21, |x, y| {
            let d2 = (x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2);
            (25.0..=64.0).contains(&d2)
        });
        assert_eq!(fill_holes(&ring), disk_mask(21, 21, 10.0, 10.0, 8.0));
    }

    #[test]
    fn roberts_cases() {
        let c = NormImage::new(5, 5, vec![40.0; 25]).unwrap();
        assert_eq!(roberts_edges(&c, 10.0).count(), 0);

        let step = NormImage::new(
            6,
            4,
            (0..24)
                .map(|i| if i % 6 >= 3 { 100.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let e = roberts_edges(&step, 10.0);
        assert_eq!(e, Mask::from_fn(6, 4, |x, y| x == 2 && y < 3));

        // Alternating columns: both diagonal differences are +-100 everywhere.
        let stripes = NormImage::new(
            6,
            6,
            (0..36)
                .map(|i| if i % 2 == 0 { 100.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        assert_eq!(
            roberts_edges(&stripes, 10.0),
            Mask::from_fn(6, 6, |x, y| x < 5 && y < 5)
        );
        assert_eq!(roberts_edges(&stripes, 141.0).count(), 25);
        assert_eq!(roberts_edges(&stripes, 142.0).count(), 0);

        // A one-pixel checkerboard has equal diagonal neighbours.
        let checker = NormImage::new(
            6,
            6,
            (0..36)
                .map(|i| if (i % 6 + i / 6) % 2 == 0 { 100.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        assert_eq!(roberts_edges(&checker, 10.0).count(), 0);
    }

    #[test]
    fn overlay_cases() {
        let img = Image::from_fn(4, 2, |x, y| (x + 4 * y + 1) as u8).unwrap();
        assert_eq!(overlay(&img, &Mask::full(4, 2)).unwrap(), img);
        assert_eq!(overlay(&img, &Mask::empty(4, 2)).unwrap().pixels(), &[0; 8]);
        let half = overlay(&img, &Mask::from_fn(4, 2, |x, _| x < 2)).unwrap();
        assert_eq!(half.pixels(), &[1, 2, 0, 0, 5, 6, 0, 0]);
        assert!(overlay(&img, &Mask::full(2, 4)).is_err());
    }

    #[test]
    fn extract_empty_mask_is_black() {
        let img = Image::filled(32, 32, 200).unwrap();
        let out = extract_lungs(&img, &Mask::empty(32, 32), &ExtractParams::default()).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn extract_drops_border_artifact() {
        let lung = disk_mask(64, 64, 32.0, 32.0, 14.0);
        let artifact = Mask::from_fn(64, 64, |x, y| x < 6 && y < 6);
        let img = Image::filled(64, 64, 50).unwrap();
        let out = extract_lungs(
            &img,
            &lung.union(&artifact).unwrap(),
            &ExtractParams::default(),
        )
        .unwrap();
        assert!(out.pixels()[..6].iter().all(|&p| p == 0));
        assert!(out.get(32, 32) > 0);
    }

    fn arb_mask(side: usize) -> impl Strategy<Value = Mask> {
        proptest::collection::vec(any::<bool>(), side * side)
            .prop_map(move |bits| Mask::new(side, side, bits).unwrap())
    }

    proptest! {
        #[test]
        fn close_is_extensive_and_idempotent_at_edges(m in arb_mask(12), r in 1usize..4) {
            let d = Disk::new(r).unwrap();
            let c = close(&m, d);
            prop_assert!(m.is_subset_of(&c));
            prop_assert_eq!(close(&c, d), c);
        }

        #[test]
        fn erode_dilate_duality_inside_frame(m in arb_mask(16), r in 1usize..3) {
            let d = Disk::new(r).unwrap();
            let framed = Mask::from_fn(16, 16, |x, y| {
                let inner = (2 * r..16 - 2 * r).contains(&x) && (2 * r..16 - 2 * r).contains(&y);
                inner && m.get(x, y)
            });
            let comp = framed.complement();
            let dual = dilate(&comp, d).complement();
            prop_assert_eq!(erode(&framed, d), dual);
        }
    }
}
