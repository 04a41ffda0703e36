//! Tracking-error statistics.

use nalgebra::Vector2;
use serde::Serialize;

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Shortest distance from `p` to a polyline. A single-point polyline
/// degenerates to the point distance; an empty one is infinitely far.
pub fn polyline_distance(p: &Vector2<f64>, polyline: &[Vector2<f64>]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [only] => (p - only).norm(),
        _ => polyline
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub max_error: f64,
    pub avg_error: f64,
    pub samples: usize,
}

impl ErrorStats {
    /// `None` for an empty sample.
    pub fn from_distances<I: IntoIterator<Item = f64>>(distances: I) -> Option<Self> {
        let mut max = 0.0f64;
        let mut sum = 0.0;
        let mut n = 0usize;
        for d in distances {
            max = max.max(d);
            sum += d;
            n += 1;
        }
        (n > 0).then(|| Self {
            max_error: max,
            avg_error: sum / n as f64,
            samples: n,
        })
    }
}
