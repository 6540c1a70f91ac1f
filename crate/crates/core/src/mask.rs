//! Binary masks, polygons and COCO-style uncompressed run-length encoding.
//!
//! Coordinates follow the image convention: `x` grows to the right, `y` grows
//! downward, and pixel `(x, y)` covers the unit square whose center is
//! `(x + 0.5, y + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A simple (possibly self-intersecting) polygon in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, y) in &vertices {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidPolygon(format!("non-finite vertex ({x}, {y})")));
            }
            if x < 0.0 || y < 0.0 {
                return Err(Error::InvalidPolygon(format!("negative vertex ({x}, {y})")));
            }
        }
        Ok(Polygon { vertices })
    }

    /// Builds a polygon from the COCO flat layout `[x1, y1, x2, y2, ...]`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidPolygon(format!(
                "odd number of coordinates ({})",
                coords.len()
            )));
        }
        Polygon::new(coords.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|&(x, y)| [x, y]).collect()
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Fewer than three vertices enclose nothing.
    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3
    }
}

/// Row-major binary occupancy grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for RasterMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl RasterMask {
    pub fn empty(width: u32, height: u32) -> Self {
        RasterMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        RasterMask {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidRle(format!(
                "{} bits for a {width}x{height} canvas",
                bits.len()
            )));
        }
        Ok(RasterMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        RasterMask {
            width,
            height,
            bits,
        }
    }

    /// Axis-aligned block covering `[left, right) x [top, bottom)`, clipped to the canvas.
    pub fn from_rect(width: u32, height: u32, left: u32, top: u32, right: u32, bottom: u32) -> Self {
        RasterMask::from_fn(width, height, |x, y| x >= left && x < right && y >= top && y < bottom)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    fn index(&self, x: u32, y: u32) -> usize {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) outside canvas");
        y as usize * self.width as usize + x as usize
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn complement(&self) -> RasterMask {
        RasterMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn same_dims(&self, other: &RasterMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected_width: self.width,
                expected_height: self.height,
                found_width: other.width,
                found_height: other.height,
            });
        }
        Ok(())
    }

    /// `(|a ∩ b|, |a ∪ b|)` in pixels.
    pub fn overlap_counts(&self, other: &RasterMask) -> Result<(u64, u64)> {
        self.same_dims(other)?;
        let mut inter = 0u64;
        let mut union = 0u64;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
        Ok((inter, union))
    }

    fn or_assign(&mut self, other: &RasterMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }
}

/// Tight pixel bounds. `right` and `bottom` are exclusive edges, so a single
/// pixel at `(3, 4)` has bounds `[3, 4, 4, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.right - self.left
    }

    pub fn height(&self) -> u32 {
        self.bottom - self.top
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.left && x <= self.right && y >= self.top && y <= self.bottom
    }
}

/// Uncompressed COCO run-length encoding: column-major runs, zeros first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rle {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl Rle {
    /// Validates that the runs tile the canvas exactly and that only the
    /// leading zero-run may be empty.
    pub fn new(width: u32, height: u32, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(Error::InvalidRle(format!(
                "run lengths sum to {total}, canvas {width}x{height} has {expected} pixels"
            )));
        }
        if let Some(pos) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::InvalidRle(format!("zero-length run at index {}", pos + 1)));
        }
        Ok(Rle {
            width,
            height,
            counts,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground area without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn rle_encode(mask: &RasterMask) -> Rle {
    let (w, h) = (mask.width, mask.height);
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.bits[y as usize * w as usize + x as usize];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    if run > 0 || counts.is_empty() {
        counts.push(run);
    }
    Rle {
        width: w,
        height: h,
        counts,
    }
}

pub fn rle_decode(rle: &Rle) -> RasterMask {
    let (w, h) = (rle.width as usize, rle.height as usize);
    let mut bits = vec![false; w * h];
    let mut pos = 0usize;
    let mut value = false;
    for &run in &rle.counts {
        if value {
            for i in pos..pos + run as usize {
                // column-major index i -> (x, y)
                let (x, y) = (i / h, i % h);
                bits[y * w + x] = true;
            }
        }
        pos += run as usize;
        value = !value;
    }
    RasterMask {
        width: rle.width,
        height: rle.height,
        bits,
    }
}

/// Pixel-center sampling with the even-odd rule. Degenerate polygons and
/// empty canvases yield an empty mask; geometry outside the canvas is clipped.
pub fn rasterize(poly: &Polygon, width: u32, height: u32) -> RasterMask {
    let mut mask = RasterMask::empty(width, height);
    let verts = &poly.vertices;
    if verts.len() < 3 || width == 0 || height == 0 {
        return mask;
    }
    let (min_y, max_y) = verts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));

    let mut crossings: Vec<f64> = Vec::with_capacity(verts.len());
    for row in 0..height {
        let cy = row as f64 + 0.5;
        if cy < min_y || cy >= max_y {
            continue;
        }
        crossings.clear();
        let mut prev = verts.len() - 1;
        for cur in 0..verts.len() {
            let (xi, yi) = verts[cur];
            let (xj, yj) = verts[prev];
            if (yi > cy) != (yj > cy) {
                crossings.push((xj - xi) * (cy - yi) / (yj - yi) + xi);
            }
            prev = cur;
        }
        crossings.sort_by(f64::total_cmp);
        // A center is inside iff an odd number of crossings lie at or left of it.
        for span in crossings.chunks_exact(2) {
            let (enter, leave) = (span[0], span[1]);
            let start = (enter - 0.5).floor().max(0.0);
            if start >= width as f64 {
                continue;
            }
            for x in start as u32..width {
                let cx = x as f64 + 0.5;
                if cx >= leave {
                    break;
                }
                if cx >= enter {
                    mask.set(x, row, true);
                }
            }
        }
    }
    mask
}

/// Union of several polygons rasterized onto one canvas (COCO multi-part objects).
pub fn rasterize_all(polys: &[Polygon], width: u32, height: u32) -> RasterMask {
    let mut mask = RasterMask::empty(width, height);
    for p in polys {
        mask.or_assign(&rasterize(p, width, height));
    }
    mask
}

/// Object geometry as stored in COCO-style files.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// One or more parts; the object is their union.
    Polygons(Vec<Polygon>),
    Rle(Rle),
}

impl Geometry {
    /// Rasterizes onto a `width x height` canvas. RLE geometry must already
    /// have exactly that size.
    pub fn to_mask(&self, width: u32, height: u32) -> Result<RasterMask> {
        match self {
            Geometry::Polygons(polys) => Ok(rasterize_all(polys, width, height)),
            Geometry::Rle(rle) => {
                if rle.width != width || rle.height != height {
                    return Err(Error::DimensionMismatch {
                        expected_width: width,
                        expected_height: height,
                        found_width: rle.width,
                        found_height: rle.height,
                    });
                }
                Ok(rle_decode(rle))
            }
        }
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both masks are empty.
pub fn mask_iou(a: &RasterMask, b: &RasterMask) -> Result<f64> {
    let (inter, union) = a.overlap_counts(b)?;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Dice coefficient `2|a ∩ b| / (|a| + |b|)`, 0 when both masks are empty.
pub fn mask_dice(a: &RasterMask, b: &RasterMask) -> Result<f64> {
    let (inter, _) = a.overlap_counts(b)?;
    let total = a.area() + b.area();
    Ok(if total == 0 {
        0.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

pub fn mask_union(masks: &[RasterMask]) -> Result<RasterMask> {
    let (first, rest) = masks.split_first().ok_or(Error::EmptyInput("mask list"))?;
    let mut out = first.clone();
    for m in rest {
        first.same_dims(m)?;
        out.or_assign(m);
    }
    Ok(out)
}

pub fn area(mask: &RasterMask) -> u64 {
    mask.area()
}

pub fn bbox_of(mask: &RasterMask) -> Option<BBox> {
    let mut bounds: Option<BBox> = None;
    for y in 0..mask.height {
        let row = &mask.bits[y as usize * mask.width as usize..(y as usize + 1) * mask.width as usize];
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        let (first, last) = (first as u32, last as u32);
        bounds = Some(match bounds {
            None => BBox {
                left: first,
                top: y,
                right: last + 1,
                bottom: y + 1,
            },
            Some(b) => BBox {
                left: b.left.min(first),
                top: b.top,
                right: b.right.max(last + 1),
                bottom: y + 1,
            },
        });
    }
    bounds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(l: f64, t: f64, r: f64, b: f64) -> Polygon {
        Polygon::new(vec![(l, t), (r, t), (r, b), (l, b)]).unwrap()
    }

    #[test]
    fn rasterize_square_covers_interior_centers() {
        let m = rasterize(&square(1.0, 1.0, 4.0, 4.0), 6, 6);
        assert_eq!(m.area(), 9);
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(m.get(x, y), (1..=3).contains(&x) && (1..=3).contains(&y), "({x},{y})");
            }
        }
    }

    #[test]
    fn rasterize_degenerate_is_empty() {
        let p = Polygon::new(vec![(0.0, 0.0), (5.0, 5.0)]).unwrap();
        assert!(p.is_degenerate());
        assert_eq!(rasterize(&p, 8, 8).area(), 0);
    }

    #[test]
    fn rasterize_full_canvas() {
        let m = rasterize(&square(0.0, 0.0, 7.0, 5.0), 7, 5);
        assert_eq!(m, RasterMask::full(7, 5));
    }

    #[test]
    fn rasterize_clips_outside_canvas() {
        let m = rasterize(&square(2.0, 2.0, 100.0, 100.0), 4, 4);
        assert_eq!(m.area(), 4);
        assert!(m.get(3, 3));
    }

    #[test]
    fn polygon_rejects_negative_and_nan() {
        assert!(Polygon::new(vec![(-1.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(Polygon::new(vec![(f64::NAN, 0.0), (1.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(Polygon::from_flat(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn rle_known_encodings() {
        assert_eq!(rle_encode(&RasterMask::empty(2, 2)).counts(), &[4]);
        assert_eq!(rle_encode(&RasterMask::full(2, 2)).counts(), &[0, 4]);
        // (0,0) and (1,1) set; column-major scan reads 1,0 | 0,1
        let checker = RasterMask::from_fn(2, 2, |x, y| x == y);
        assert_eq!(rle_encode(&checker).counts(), &[0, 1, 2, 1]);
        assert_eq!(rle_decode(&rle_encode(&checker)), checker);
    }

    #[test]
    fn rle_rejects_bad_counts() {
        assert!(Rle::new(2, 2, vec![3]).is_err());
        assert!(Rle::new(2, 2, vec![1, 0, 3]).is_err());
        assert!(Rle::new(2, 2, vec![0, 4]).is_ok());
        assert_eq!(Rle::new(2, 2, vec![1, 2, 1]).unwrap().area(), 2);
    }

    #[test]
    fn iou_cases() {
        let a = RasterMask::from_rect(8, 8, 0, 0, 3, 3);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let far = RasterMask::from_rect(8, 8, 5, 5, 8, 8);
        assert_eq!(mask_iou(&a, &far).unwrap(), 0.0);
        // 2 wide x 4 tall vs 4 wide x 2 tall, sharing a 2x2 block
        let tall = RasterMask::from_rect(8, 8, 2, 2, 4, 6);
        let wide = RasterMask::from_rect(8, 8, 2, 2, 6, 4);
        assert_eq!(mask_iou(&tall, &wide).unwrap(), 4.0 / 12.0);
        let empty = RasterMask::empty(8, 8);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        assert!(mask_iou(&a, &RasterMask::empty(4, 4)).is_err());
    }

    #[test]
    fn dice_matches_definition() {
        let tall = RasterMask::from_rect(8, 8, 2, 2, 4, 6);
        let wide = RasterMask::from_rect(8, 8, 2, 2, 6, 4);
        assert_eq!(mask_dice(&tall, &wide).unwrap(), 0.5);
    }

    #[test]
    fn union_cases() {
        let a = RasterMask::from_rect(10, 10, 0, 0, 5, 5);
        assert_eq!(mask_union(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(mask_union(&[a.clone(), a.complement()]).unwrap(), RasterMask::full(10, 10));
        assert!(mask_union(&[]).is_err());
        // |A|=25, |B|=25, |C|=25; A∩B=10, A∩C=5, B∩C=10, A∩B∩C=2  => 25*3-25+2=52
        let b = RasterMask::from_rect(10, 10, 3, 0, 8, 5);
        let c = RasterMask::from_rect(10, 10, 3, 3, 8, 8);
        let counted = |m: &RasterMask, n: &RasterMask| m.overlap_counts(n).unwrap().0;
        let abc = RasterMask::from_fn(10, 10, |x, y| a.get(x, y) && b.get(x, y) && c.get(x, y)).area();
        let expected = 75 - counted(&a, &b) - counted(&a, &c) - counted(&b, &c) + abc;
        assert_eq!(mask_union(&[a, b, c]).unwrap().area(), expected);
    }

    #[test]
    fn area_and_bbox() {
        let empty = RasterMask::empty(30, 30);
        assert_eq!(area(&empty), 0);
        assert_eq!(bbox_of(&empty), None);
        let block = RasterMask::from_rect(40, 40, 5, 5, 25, 25);
        assert_eq!(area(&block), 400);
        // L: vertical arm x=2..4, y=1..9 plus horizontal arm x=2..9, y=7..9
        let l = RasterMask::from_fn(12, 12, |x, y| {
            ((2..4).contains(&x) && (1..9).contains(&y)) || ((2..9).contains(&x) && (7..9).contains(&y))
        });
        assert_eq!(
            bbox_of(&l),
            Some(BBox {
                left: 2,
                top: 1,
                right: 9,
                bottom: 9
            })
        );
    }
}
