use ndarray::{Array2, ArrayView2};

use crate::distance::{self, DistanceKind};

/// Value of the soft nearest neighbor loss on one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnnlValue {
    pub loss: f64,
    /// Anchors without a same-class partner in the batch.
    pub skipped: usize,
    /// Set when every anchor was skipped (the loss is then 0).
    pub degenerate: bool,
}

/// `log(sum(exp(v)))` over the selected entries, as `max + ln_1p(rest)`.
/// Returns `None` when nothing is selected.
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.clone().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (arg, max) = best?;
    let rest: f64 = values.enumerate().filter(|&(i, _)| i != arg).map(|(_, v)| (v - max).exp()).sum();
    Some(max + rest.ln_1p())
}

fn pairwise(z: ArrayView2<f64>, kind: DistanceKind) -> Array2<f64> {
    let b = z.nrows();
    let rows: Vec<Vec<f64>> = z.outer_iter().map(|r| r.to_vec()).collect();
    let mut d = Array2::zeros((b, b));
    for i in 0..b {
        for k in (i + 1)..b {
            let v = distance::distance(kind, &rows[i], &rows[k]);
            d[[i, k]] = v;
            d[[k, i]] = v;
        }
    }
    d
}

struct Pass {
    value: SnnlValue,
    /// dL/d(distance) for each ordered pair, when requested.
    d_dist: Option<Array2<f64>>,
}

fn run(z: ArrayView2<f64>, y: &[usize], temperature: f64, kind: DistanceKind, want_grad: bool) -> Pass {
    let b = z.nrows();
    assert_eq!(b, y.len(), "batch and label lengths differ");
    assert!(temperature > 0.0, "temperature must be positive");
    let dist = pairwise(z, kind);
    let mut per_anchor: Vec<Option<(f64, f64)>> = Vec::with_capacity(b);
    let mut total = 0.0;
    let mut used = 0usize;
    for i in 0..b {
        let s = |k: usize| -dist[[i, k]] / temperature;
        let others = (0..b).filter(move |&k| k != i).map(s);
        let same = (0..b).filter(move |&k| k != i && y[k] == y[i]).map(s);
        match log_sum_exp(same) {
            Some(log_num) => {
                let log_den = log_sum_exp(others).expect("b >= 2");
                total += log_den - log_num;
                used += 1;
                per_anchor.push(Some((log_num, log_den)));
            }
            None => per_anchor.push(None),
        }
    }
    let value =
        SnnlValue { loss: if used == 0 { 0.0 } else { total / used as f64 }, skipped: b - used, degenerate: used == 0 };
    let d_dist = (want_grad && used > 0).then(|| {
        let mut g = Array2::zeros((b, b));
        let scale = 1.0 / used as f64;
        for (i, anchor) in per_anchor.iter().enumerate() {
            let Some((log_num, log_den)) = *anchor else { continue };
            for k in 0..b {
                if k == i {
                    continue;
                }
                let s = -dist[[i, k]] / temperature;
                let p = (s - log_den).exp();
                let q = if y[k] == y[i] { (s - log_num).exp() } else { 0.0 };
                // dL/ds = p - q and ds/dd = -1/T
                g[[i, k]] = -(p - q) * scale / temperature;
            }
        }
        g
    });
    Pass { value, d_dist }
}

/// Soft nearest neighbor loss of a batch of embeddings.
///
/// For each anchor `i`, the log-ratio of the summed similarities
/// `exp(-d(z_i, z_j) / T)` over same-class partners `j != i` to those over
/// all `k != i`, negated and averaged. Each log-sum is stabilized by its own
/// maximum exponent. Anchors with no same-class partner are left out of the
/// mean; if none remains the loss is 0 and `degenerate` is set.
///
/// # Panics
/// If the batch has fewer than two rows, labels and rows disagree in length,
/// or `temperature <= 0`.
pub fn snnl(z: ArrayView2<f64>, y: &[usize], temperature: f64, kind: DistanceKind) -> SnnlValue {
    assert!(z.nrows() >= 2, "batch needs at least two rows");
    run(z, y, temperature, kind, false).value
}

/// Loss and exact gradient with respect to every embedding coordinate.
///
/// Skipped anchors contribute nothing as anchors but still receive gradient
/// as neighbors of other anchors.
pub fn snnl_grad(z: ArrayView2<f64>, y: &[usize], temperature: f64, kind: DistanceKind) -> (SnnlValue, Array2<f64>) {
    assert!(z.nrows() >= 2, "batch needs at least two rows");
    let pass = run(z, y, temperature, kind, true);
    let (b, m) = z.dim();
    let mut grad = Array2::zeros((b, m));
    let Some(g) = pass.d_dist else { return (pass.value, grad) };
    match kind {
        DistanceKind::SquaredEuclidean => {
            for i in 0..b {
                for k in 0..b {
                    let w = g[[i, k]];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..m {
                        let diff = 2.0 * (z[[i, c]] - z[[k, c]]) * w;
                        grad[[i, c]] += diff;
                        grad[[k, c]] -= diff;
                    }
                }
            }
        }
        DistanceKind::Cosine => {
            let norms: Vec<f64> = z.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
            for i in 0..b {
                for k in 0..b {
                    let w = g[[i, k]];
                    if w == 0.0 || norms[i] == 0.0 || norms[k] == 0.0 {
                        continue;
                    }
                    let cos = z.row(i).dot(&z.row(k)) / (norms[i] * norms[k]);
                    // d = 1 - cos; d(cos)/dz_i = z_k/(|z_i||z_k|) - cos z_i/|z_i|^2
                    for c in 0..m {
                        let dci = z[[k, c]] / (norms[i] * norms[k]) - cos * z[[i, c]] / (norms[i] * norms[i]);
                        let dck = z[[i, c]] / (norms[i] * norms[k]) - cos * z[[k, c]] / (norms[k] * norms[k]);
                        grad[[i, c]] -= w * dci;
                        grad[[k, c]] -= w * dck;
                    }
                }
            }
        }
    }
    (pass.value, grad)
}
