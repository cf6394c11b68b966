//! Spatial rectangles, evaluation grids and discrete distributions over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned spatial domain `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let r = Rect { x0, x1, y0, y1 };
        r.validate()?;
        Ok(r)
    }

    pub fn unit() -> Self {
        Rect {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.x1, self.y0, self.y1].iter().all(|v| v.is_finite());
        if !finite || self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::invalid(format!("invalid spatial domain {self:?}")));
        }
        Ok(())
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
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    /// Smallest rectangle holding all points, widened by `margin` of its extent on each side.
    pub fn bounding(points: impl IntoIterator<Item = (f64, f64)>, margin: f64) -> Result<Self> {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return Err(Error::invalid("cannot bound an empty point set"));
        }
        let mx = ((x1 - x0) * margin).max(1e-6);
        let my = ((y1 - y0) * margin).max(1e-6);
        Rect::new(x0 - mx, x1 + mx, y0 - my, y1 + my)
    }
}

/// `nx × ny` nodes spanning a rectangle including its edges. Points are
/// ordered x-major: index `i * ny + j` is `(xs[i], ys[j])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl SpatialGrid {
    pub fn new(rect: Rect, nx: usize, ny: usize) -> Result<Self> {
        rect.validate()?;
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 nodes per axis, got {nx}×{ny}")));
        }
        Ok(SpatialGrid { rect, nx, ny })
    }

    /// The default `k × k` evaluation grid.
    pub fn square(rect: Rect, k: usize) -> Result<Self> {
        Self::new(rect, k, k)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn xs(&self) -> Vec<f64> {
        linspace(self.rect.x0, self.rect.x1, self.nx)
    }

    pub fn ys(&self) -> Vec<f64> {
        linspace(self.rect.y0, self.rect.y1, self.ny)
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let ys = self.ys();
        self.xs().into_iter().flat_map(|x| ys.iter().map(move |&y| (x, y))).collect()
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Probabilities over the points of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDist {
    probs: Vec<f64>,
}

impl GridDist {
    /// Validates nonnegativity and unit mass (within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("distribution has negative or non-finite mass"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("distribution sums to {total}, not 1")));
        }
        Ok(GridDist { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("weights have zero total mass"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}
