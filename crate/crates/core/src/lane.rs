//! Lane ground truth: an ordered 2-D polyline with strictly increasing y.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    /// (x, y) in pixel coordinates, strictly increasing y.
    pub points: Vec<(f64, f64)>,
}

impl Lane {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Dim(format!(
                "lane needs at least 2 points, got {}",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if !(w[1].1 > w[0].1) {
                return Err(Error::Dim(format!(
                    "lane y coordinates must strictly increase: {} then {}",
                    w[0].1, w[1].1
                )));
            }
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::Dim("lane has non-finite coordinates".into()));
        }
        Ok(Lane { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
