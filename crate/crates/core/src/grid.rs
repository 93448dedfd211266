//! One-dimensional domain `(a, b)`, its interior nodes and the boundary
//! distance field.
//!
//! Unknowns live on interior nodes only: every discrete field is zero at the
//! endpoints and on the exterior of the interval. Besides the uniform mesh an
//! optional symmetric power grading clusters nodes towards both endpoints,
//! which is what the boundary-layer studies use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mesh of `(a, b)` with `n` interior nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    a: f64,
    b: f64,
    n: usize,
    /// Nominal spacing `(b - a) / (n + 1)`; the actual spacing when `grading == 1`.
    h: f64,
    grading: f64,
    /// All mesh vertices including both endpoints, length `n + 2`.
    vertices: Vec<f64>,
}

impl Grid {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn is_uniform(&self) -> bool {
        self.grading == 1.0
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> &[f64] {
        &self.vertices[1..=self.n]
    }

    /// Vertices including both endpoints.
    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    /// Number of elements (`n + 1`).
    pub fn num_elements(&self) -> usize {
        self.n + 1
    }

    /// Length of element `k`, i.e. of `[vertices[k], vertices[k + 1]]`.
    pub fn element_size(&self, k: usize) -> f64 {
        self.vertices[k + 1] - self.vertices[k]
    }

    /// Lumped quadrature weights: half the length of the two elements touching each node.
    pub fn lumped_weights(&self) -> Vec<f64> {
        if self.is_uniform() {
            return vec![self.h; self.n];
        }
        (1..=self.n)
            .map(|i| 0.5 * (self.vertices[i + 1] - self.vertices[i - 1]))
            .collect()
    }
}

/// Uniform mesh with `n` interior nodes `a + i h`, `h = (b - a) / (n + 1)`.
pub fn build_grid(a: f64, b: f64, n: usize) -> Result<Grid> {
    build_graded_grid(a, b, n, 1.0)
}

/// Symmetric power-graded mesh. The reference coordinate `t = i / (n + 1)` is
/// mapped to `a + (b - a)/2 * (2t)^grading` on the left half and mirrored on
/// the right half; `grading == 1` reproduces the uniform mesh exactly.
pub fn build_graded_grid(a: f64, b: f64, n: usize, grading: f64) -> Result<Grid> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::NonFinite(format!("interval ({a}, {b})")));
    }
    if a >= b {
        return Err(Error::param(format!("interval requires a < b, got a = {a}, b = {b}")));
    }
    if n < 2 {
        return Err(Error::param(format!("at least 2 interior nodes required, got {n}")));
    }
    if !(1.0..=4.0).contains(&grading) {
        return Err(Error::param(format!("grading exponent must lie in [1, 4], got {grading}")));
    }
    let h = (b - a) / (n + 1) as f64;
    let mut vertices = Vec::with_capacity(n + 2);
    vertices.push(a);
    if grading == 1.0 {
        vertices.extend((1..=n).map(|i| a + i as f64 * h));
    } else {
        let half = 0.5 * (b - a);
        let m = (n + 1) as f64;
        for i in 1..=n {
            let t = i as f64 / m;
            let x = if 2 * i <= n + 1 {
                a + half * (2.0 * t).powf(grading)
            } else {
                b - half * (2.0 * (1.0 - t)).powf(grading)
            };
            vertices.push(x);
        }
    }
    vertices.push(b);
    Ok(Grid { a, b, n, h, grading, vertices })
}

/// Distance of every interior node to the boundary `{a, b}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceField {
    pub values: Vec<f64>,
}

pub fn boundary_distance(grid: &Grid) -> DistanceField {
    let values = grid
        .nodes()
        .iter()
        .map(|&x| (x - grid.a).min(grid.b - x))
        .collect();
    DistanceField { values }
}
