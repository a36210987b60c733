/// Half-open observation window `[start, end)` on the timestamp axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Summarizes each variable's in-window observations as
/// `(mean, min, max, std)` with the population (1/N) standard deviation.
///
/// `series[v]` holds `(timestamp, value)` pairs for variable `v`. The output
/// has four entries per variable; a variable without in-window observations
/// yields four NaN (missing) entries.
pub fn aggregate_series(series: &[Vec<(f64, f64)>], window: Window) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len() * 4);
    for var in series {
        let vals: Vec<f64> = var.iter().filter(|(t, v)| window.contains(*t) && !v.is_nan()).map(|&(_, v)| v).collect();
        if vals.is_empty() {
            out.extend([f64::NAN; 4]);
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out.extend([mean, min, max, var.sqrt()]);
    }
    out
}
