//! Axis-aligned box arithmetic and coordinate-space conversion.
//!
//! Every [`BBox`] carries the [`CoordSpace`] its coordinates live in. Binary
//! operations refuse to mix spaces; use [`convert`] first.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of a normalized range that construction silently clamps away.
/// Anything further outside the range is treated as corrupt input.
pub const CLAMP_SLACK: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("coordinate space mismatch: {0} vs {1}")]
    SpaceMismatch(CoordSpace, CoordSpace),
    #[error("non-finite coordinate in box")]
    NonFinite,
    #[error("coordinate {value} outside {space} range [0, {max}]")]
    OutOfRange {
        value: f64,
        space: CoordSpace,
        max: f64,
    },
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDims { width: i64, height: i64 },
}

/// The coordinate system a box is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordSpace {
    /// Pixel coordinates of the source image.
    AbsolutePixels,
    /// Ratios in `[0, 1]`.
    NormalizedUnit,
    /// Integers-ish in `[0, 1000]`.
    Normalized1000,
    /// Integers-ish in `[0, 999]`.
    Normalized999,
}

impl CoordSpace {
    /// Upper end of the nominal range, `None` for pixel space.
    pub fn scale(self) -> Option<f64> {
        match self {
            CoordSpace::AbsolutePixels => None,
            CoordSpace::NormalizedUnit => Some(1.0),
            CoordSpace::Normalized1000 => Some(1000.0),
            CoordSpace::Normalized999 => Some(999.0),
        }
    }

    pub fn is_normalized(self) -> bool {
        self.scale().is_some()
    }
}

impl fmt::Display for CoordSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CoordSpace::AbsolutePixels => "absolute-pixels",
            CoordSpace::NormalizedUnit => "normalized-unit",
            CoordSpace::Normalized1000 => "normalized-1000",
            CoordSpace::Normalized999 => "normalized-999",
        };
        f.write_str(name)
    }
}

/// Pixel dimensions of an image. Both sides are at least one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageDims {
    width: u32,
    height: u32,
}

impl ImageDims {
    pub fn new(width: i64, height: i64) -> Result<Self, GeometryError> {
        if width < 1 || height < 1 || width > u32::MAX as i64 || height > u32::MAX as i64 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        Ok(Self {
            width: width as u32,
            height: height as u32,
        })
    }

    pub fn width(self) -> u32 {
        self.width
    }

    pub fn height(self) -> u32 {
        self.height
    }

    /// Image area in square pixels.
    pub fn area(self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

/// An axis-aligned rectangle `[x1, y1, x2, y2]` with `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    space: CoordSpace,
}

impl BBox {
    /// Builds a box, swapping reversed corners.
    ///
    /// Normalized coordinates that overshoot their range by at most
    /// [`CLAMP_SLACK`] of the range are clamped; larger overshoots are an
    /// error. Negative pixel coordinates are clamped to zero.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, space: CoordSpace) -> Result<Self, GeometryError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let fix = |v: f64| -> Result<f64, GeometryError> {
            match space.scale() {
                None => Ok(v.max(0.0)),
                Some(max) => {
                    let slack = max * CLAMP_SLACK;
                    if v < -slack || v > max + slack {
                        Err(GeometryError::OutOfRange { value: v, space, max })
                    } else {
                        Ok(v.clamp(0.0, max))
                    }
                }
            }
        };
        let (x1, x2) = (fix(x1.min(x2))?, fix(x1.max(x2))?);
        let (y1, y2) = (fix(y1.min(y2))?, fix(y1.max(y2))?);
        Ok(Self { x1, y1, x2, y2, space })
    }

    /// Pixel-space box from known-good coordinates.
    ///
    /// # Panics
    /// Panics if any coordinate is NaN or infinite.
    pub fn abs(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(x1, y1, x2, y2, CoordSpace::AbsolutePixels).expect("finite pixel coordinates")
    }

    pub fn from_array(c: [f64; 4], space: CoordSpace) -> Result<Self, GeometryError> {
        Self::new(c[0], c[1], c[2], c[3], space)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }
    pub fn space(&self) -> CoordSpace {
        self.space
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Overlapping region, `None` when the boxes do not touch.
    /// Touching edges yield a zero-area intersection.
    pub fn intersection(&self, other: &BBox) -> Result<Option<BBox>, GeometryError> {
        same_space(self, other)?;
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        if x1 > x2 || y1 > y2 {
            return Ok(None);
        }
        Ok(Some(BBox {
            x1,
            y1,
            x2,
            y2,
            space: self.space,
        }))
    }

    fn intersection_area(&self, other: &BBox) -> Result<f64, GeometryError> {
        Ok(self.intersection(other)?.map_or(0.0, |b| b.area()))
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}] ({})", self.x1, self.y1, self.x2, self.y2, self.space)
    }
}

fn same_space(a: &BBox, b: &BBox) -> Result<(), GeometryError> {
    if a.space != b.space {
        return Err(GeometryError::SpaceMismatch(a.space, b.space));
    }
    Ok(())
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union; zero when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok(inter / union)
}

/// Fraction of `inner` covered by `outer`; zero for a degenerate `inner`.
pub fn overlap_ratio(inner: &BBox, outer: &BBox) -> Result<f64, GeometryError> {
    let inter = inner.intersection_area(outer)?;
    let denom = inner.area();
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok(inter / denom)
}

/// Smallest box enclosing both.
pub fn union_box(a: &BBox, b: &BBox) -> Result<BBox, GeometryError> {
    same_space(a, b)?;
    Ok(BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
        space: a.space,
    })
}

/// Rescales `b` into `target`, clamping to the target range.
///
/// Pixel targets clamp to the image rectangle given by `dims`.
pub fn convert(b: &BBox, target: CoordSpace, dims: ImageDims) -> BBox {
    if b.space == target {
        return *b;
    }
    let (w, h) = (dims.width as f64, dims.height as f64);
    // to pixels first
    let [mut x1, mut y1, mut x2, mut y2] = b.coords();
    if let Some(k) = b.space.scale() {
        x1 = x1 / k * w;
        x2 = x2 / k * w;
        y1 = y1 / k * h;
        y2 = y2 / k * h;
    }
    let (xmax, ymax) = match target.scale() {
        None => (w, h),
        Some(k) => {
            x1 = x1 / w * k;
            x2 = x2 / w * k;
            y1 = y1 / h * k;
            y2 = y2 / h * k;
            (k, k)
        }
    };
    BBox {
        x1: x1.clamp(0.0, xmax),
        y1: y1.clamp(0.0, ymax),
        x2: x2.clamp(0.0, xmax),
        y2: y2.clamp(0.0, ymax),
        space: target,
    }
}
