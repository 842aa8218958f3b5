//! Discrete time grids over the budget axis.

use crate::error::{Error, Result};
use crate::float::Float;

/// How the grid points were constructed. Kept for provenance in exports;
/// the points themselves are authoritative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    Logarithmic,
    Explicit,
}

/// Strictly increasing timepoints t_1 < ... < t_T over the budget axis
/// (function evaluations or seconds; the unit is abstract).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<F> {
    points: Vec<F>,
    spacing: Spacing,
}

impl<F: Float> TimeGrid<F> {
    pub fn new(points: Vec<F>, spacing: Spacing) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Grid(format!(
                "need at least 2 timepoints, got {}",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Grid(format!(
                    "timepoints must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::Grid("timepoints must be finite".into()));
        }
        if spacing == Spacing::Logarithmic && points[0] <= F::zero() {
            return Err(Error::Grid(
                "logarithmic spacing requires all points > 0".into(),
            ));
        }
        Ok(Self { points, spacing })
    }

    /// T equally spaced points on [start, end].
    pub fn uniform(start: F, end: F, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Grid("need at least 2 timepoints".into()));
        }
        let step = (end - start) / F::from_usize_(len - 1);
        let points = (0..len)
            .map(|i| start + step * F::from_usize_(i))
            .collect();
        Self::new(points, Spacing::Uniform)
    }

    /// T log-spaced points on [start, end]; start must be positive.
    pub fn logarithmic(start: F, end: F, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::Grid("need at least 2 timepoints".into()));
        }
        if start <= F::zero() {
            return Err(Error::Grid(
                "logarithmic spacing requires all points > 0".into(),
            ));
        }
        let (a, b) = (start.ln(), end.ln());
        let step = (b - a) / F::from_usize_(len - 1);
        let points = (0..len)
            .map(|i| (a + step * F::from_usize_(i)).exp())
            .collect();
        Self::new(points, Spacing::Logarithmic)
    }

    pub fn points(&self) -> &[F] {
        &self.points
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> F {
        self.points[0]
    }

    pub fn last(&self) -> F {
        *self.points.last().unwrap()
    }

    /// Index of the largest grid point `<= t`, if any.
    pub fn index_at_or_before(&self, t: F) -> Option<usize> {
        if t < self.points[0] {
            return None;
        }
        let mut idx = 0;
        for (i, &p) in self.points.iter().enumerate() {
            if p <= t {
                idx = i;
            } else {
                break;
            }
        }
        Some(idx)
    }
}
