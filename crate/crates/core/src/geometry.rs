//! Axis-aligned box algebra and affine box transforms.
//!
//! Boxes are `(x, y, w, h)` with a top-left origin and continuous (real)
//! coordinates. Nothing in here rounds to the pixel grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Validated constructor.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x, y, w, h })
        }
    }

    /// Box spanning `[x0, x1] × [y0, y1]`. The caller guarantees `x0 <= x1`, `y0 <= y1`.
    pub fn from_extent(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        area(self)
    }

    pub fn center(&self) -> Point {
        Point { x: self.x + 0.5 * self.w, y: self.y + 0.5 * self.h }
    }

    /// The four corners, clockwise from the top-left.
    pub fn corners(&self) -> [Point; 4] {
        let (x1, y1) = (self.right(), self.bottom());
        [Point { x: self.x, y: self.y }, Point { x: x1, y: self.y }, Point { x: x1, y: y1 }, Point { x: self.x, y: y1 }]
    }

    /// True when `other` lies inside `self` (closed containment).
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    fn lerp(self, to: Point, t: f64) -> Point {
        Point { x: self.x + (to.x - self.x) * t, y: self.y + (to.y - self.y) * t }
    }
}

/// Planar affine map `x' = a·x + b·y + c`, `y' = d·x + e·y + f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Affine::IDENTITY
    }
}

impl Affine {
    pub const IDENTITY: Affine = Affine { a: 1.0, b: 0.0, c: 0.0, d: 0.0, e: 1.0, f: 0.0 };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine { c: tx, f: ty, ..Affine::IDENTITY }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Affine { a: sx, e: sy, ..Affine::IDENTITY }
    }

    /// Rotation about the origin. Positive angles turn +x towards +y.
    pub fn rotation_deg(angle_deg: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        Affine { a: c, b: -s, c: 0.0, d: s, e: c, f: 0.0 }
    }

    /// Horizontal shear `x' = x + tan(angle)·y`.
    pub fn shear_x_deg(angle_deg: f64) -> Self {
        Affine { b: angle_deg.to_radians().tan(), ..Affine::IDENTITY }
    }

    /// Mirror about the vertical center line of a canvas `width` wide.
    pub fn hflip(width: f64) -> Self {
        Affine { a: -1.0, c: width, ..Affine::IDENTITY }
    }

    /// Conjugates `self` so that it acts about `(cx, cy)` instead of the origin.
    pub fn about(self, cx: f64, cy: f64) -> Self {
        Affine::translation(-cx, -cy).then(&self).then(&Affine::translation(cx, cy))
    }

    pub fn rotation_about_deg(angle_deg: f64, cx: f64, cy: f64) -> Self {
        Affine::rotation_deg(angle_deg).about(cx, cy)
    }

    /// `next ∘ self`: apply `self` first, then `next`.
    pub fn then(&self, next: &Affine) -> Affine {
        let n = next;
        Affine {
            a: n.a * self.a + n.b * self.d,
            b: n.a * self.b + n.b * self.e,
            c: n.a * self.c + n.b * self.f + n.c,
            d: n.d * self.a + n.e * self.d,
            e: n.d * self.b + n.e * self.e,
            f: n.d * self.c + n.e * self.f + n.f,
        }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        Point { x: self.a * p.x + self.b * p.y + self.c, y: self.d * p.x + self.e * p.y + self.f }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    /// `None` for singular maps.
    pub fn inverse(&self) -> Option<Affine> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        let a = self.e * inv;
        let b = -self.b * inv;
        let d = -self.d * inv;
        let e = self.a * inv;
        Some(Affine { a, b, c: -(a * self.c + b * self.f), d, e, f: -(d * self.c + e * self.f) })
    }

    /// Linear part is the identity (pure translation, including zero).
    pub fn is_translation(&self) -> bool {
        self.a == 1.0 && self.b == 0.0 && self.d == 0.0 && self.e == 1.0
    }

    pub fn is_identity(&self) -> bool {
        self.is_translation() && self.c == 0.0 && self.f == 0.0
    }

    pub fn is_finite(&self) -> bool {
        [self.a, self.b, self.c, self.d, self.e, self.f].iter().all(|v| v.is_finite())
    }
}

pub fn area(b: &BBox) -> f64 {
    b.w * b.h
}

/// Overlap length of `[a0, a0 + aw]` and `[b0, b0 + bw]`. When one interval
/// contains the other the result is that interval's own length, so a box
/// intersected with itself yields exactly its area.
#[inline]
fn overlap_1d(a0: f64, aw: f64, b0: f64, bw: f64) -> f64 {
    let (a1, b1) = (a0 + aw, b0 + bw);
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    let a_inside = lo == a0 && hi == a1;
    let b_inside = lo == b0 && hi == b1;
    let len = match (a_inside, b_inside) {
        (true, true) => aw.min(bw),
        (true, false) => aw,
        (false, true) => bw,
        (false, false) => hi - lo,
    };
    len.max(0.0)
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = overlap_1d(a.x, a.w, b.x, b.w);
    if iw == 0.0 {
        return 0.0;
    }
    iw * overlap_1d(a.y, a.h, b.y, b.h)
}

/// Intersection over union. Zero when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn bounds_of(points: &[Point]) -> BBox {
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for p in points {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    BBox::from_extent(x0, y0, x1, y1)
}

/// A pure translation moves the box without touching its size.
fn translate(b: &BBox, t: &Affine) -> BBox {
    BBox { x: b.x + t.c, y: b.y + t.f, w: b.w, h: b.h }
}

/// Axis-aligned bounds of the four transformed corners.
pub fn transform_box_corners(b: &BBox, t: &Affine) -> BBox {
    if t.is_translation() {
        return translate(b, t);
    }
    let corners = b.corners().map(|p| t.apply(p));
    bounds_of(&corners)
}

/// Axis-aligned bounds of eight transformed edge points, two per edge at 1/3
/// and 2/3 of its length.
///
/// Affine maps preserve ratios along a line, so the edge points are
/// interpolated between the transformed corners. The interpolation keeps each
/// point inside its transformed edge in floating point too, so the result is
/// always contained in [`transform_box_corners`] for the same inputs.
pub fn transform_box_custom(b: &BBox, t: &Affine) -> BBox {
    if t.is_translation() {
        return translate(b, t);
    }
    let c = b.corners().map(|p| t.apply(p));
    let mut pts = [Point::new(0.0, 0.0); 8];
    for i in 0..4 {
        let (from, to) = (c[i], c[(i + 1) % 4]);
        pts[2 * i] = from.lerp(to, 1.0 / 3.0);
        pts[2 * i + 1] = from.lerp(to, 2.0 / 3.0);
    }
    bounds_of(&pts)
}

/// Intersection of `b` with the canvas `[0, width] × [0, height]`; `None` when
/// that intersection has zero area.
pub fn clip_box(b: &BBox, width: f64, height: f64) -> Option<BBox> {
    if b.x >= 0.0 && b.y >= 0.0 && b.right() <= width && b.bottom() <= height {
        return (area(b) > 0.0).then_some(*b);
    }
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(width);
    let y1 = b.bottom().min(height);
    if x1 > x0 && y1 > y0 {
        Some(BBox::from_extent(x0, y0, x1, y1))
    } else {
        None
    }
}
