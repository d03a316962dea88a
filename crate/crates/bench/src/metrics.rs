//! The three comparison metrics and order statistics.

/// `(t3_variant − t3_baseline) / t3_baseline × 100`.
pub fn perf_penalty(t3_variant: f64, t3_baseline: f64) -> f64 {
    (t3_variant - t3_baseline) / t3_baseline * 100.0
}

/// `t3_baseline / t3_agnostic`, clamped to at most 1.
pub fn portability_score(t3_baseline: f64, t3_agnostic: f64) -> f64 {
    (t3_baseline / t3_agnostic).min(1.0)
}

/// `t1 / t4 × 100`.
pub fn overhead_ratio(t1: f64, t4: f64) -> f64 {
    t1 / t4 * 100.0
}

/// Median of `xs`; the mean of the middle pair for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}
