//! Axis-aligned rectangles shared by the mesh and the random field.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) || ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "rect",
                reason: format!("degenerate rectangle [{x0},{x1}]x[{y0},{y1}]"),
            });
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    /// The channel `[0,12] x [-1,1]`.
    pub fn channel() -> Self {
        Self {
            x0: 0.0,
            x1: 12.0,
            y0: -1.0,
            y1: 1.0,
        }
    }

    /// The square obstacle centred at `(2, 0)` with side `0.25`.
    pub fn obstacle() -> Self {
        Self {
            x0: 1.875,
            x1: 2.125,
            y0: -0.125,
            y1: 0.125,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// `true` when `(x, y)` lies strictly inside.
    pub fn interior(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    pub fn inside(&self, other: &Rect) -> bool {
        self.x0 >= other.x0 && self.x1 <= other.x1 && self.y0 >= other.y0 && self.y1 <= other.y1
    }
}
