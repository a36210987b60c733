use serde::{Deserialize, Serialize};

/// Distance used for retrieval and for the neighborhood loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    #[default]
    SquaredEuclidean,
    Cosine,
}

impl DistanceKind {
    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::SquaredEuclidean => "squared-euclidean",
            DistanceKind::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "squared-euclidean" | "sqeuclidean" => Ok(DistanceKind::SquaredEuclidean),
            "cosine" => Ok(DistanceKind::Cosine),
            other => Err(format!("unknown distance `{other}` (expected squared-euclidean or cosine)")),
        }
    }
}

/// Sum of squared coordinate differences, accumulated left to right.
#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `1 - cos(a, b)`. A zero vector has no direction; its distance to anything is 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot(a, b) / (na * nb)
}

pub fn distance(kind: DistanceKind, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        DistanceKind::SquaredEuclidean => squared_euclidean(a, b),
        DistanceKind::Cosine => cosine_distance(a, b),
    }
}
