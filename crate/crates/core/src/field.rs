//! Nodal fields on a [`Grid`](crate::grid::Grid), implicitly zero outside the interval.

use std::ops::{Deref, DerefMut};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Nodal values at the interior nodes of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Field(pub DVector<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(DVector::zeros(n))
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Field(DVector::from_element(n, value))
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        let mut f = f;
        Field(DVector::from_fn(n, |i, _| f(i)))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Field(DVector::from_column_slice(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Nodewise `self <= other + slack`; on failure returns the worst node and violation.
    pub fn below(&self, other: &Field, slack: f64) -> Result<(), (usize, f64)> {
        let (node, excess) = self
            .0
            .iter()
            .zip(other.0.iter())
            .enumerate()
            .map(|(i, (a, b))| (i, a - b))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if excess <= slack {
            Ok(())
        } else {
            Err((node, excess))
        }
    }

    /// Nodewise maximum with `floor`.
    pub fn max_with(&self, floor: &Field) -> Field {
        Field(self.0.zip_map(&floor.0, f64::max))
    }
}

impl From<DVector<f64>> for Field {
    fn from(v: DVector<f64>) -> Self {
        Field(v)
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(DVector::from_vec(v))
    }
}

impl From<Field> for Vec<f64> {
    fn from(f: Field) -> Self {
        f.0.as_slice().to_vec()
    }
}

impl Deref for Field {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }
}
