//! Reference tissue labels: support by Otsu thresholding, then 1-D k-means.

use rand::Rng;

use super::LabelMap;
use crate::error::{Error, Result};
use crate::mrisim::{seeded_rng, streams};

const OTSU_BINS: usize = 256;
const MAX_LLOYD: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

/// Otsu threshold of `values` (maximises between-class variance over a
/// 256-bin histogram). Returns a value strictly inside the data range.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0usize; OTSU_BINS];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(OTSU_BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let center = |b: usize| lo + (b as f64 + 0.5) * width;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &n)| n as f64 * center(b)).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let (mut best, mut best_b) = (-1.0, 0);
    for (b, &n) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += n as f64;
        s0 += n as f64 * center(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let d = s0 / w0 - (sum_all - s0) / w1;
        let var = w0 * w1 * d * d;
        if var > best {
            best = var;
            best_b = b;
        }
    }
    Some(lo + (best_b + 1) as f64 * width)
}

/// k-means++ seeding then Lloyd iterations on scalars; centroids ascending.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::DegenerateInput(format!(
            "{} distinct intensities, need at least {k}",
            distinct.len()
        )));
    }
    let mut rng = seeded_rng(seed, streams::KMEANS);
    let mut cent = vec![values[rng.gen_range(0..values.len())]];
    while cent.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|v| cent.iter().map(|c| (v - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let mut r = rng.gen_range(0.0..total);
        let mut pick = d2.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if r < *d {
                pick = i;
                break;
            }
            r -= d;
        }
        cent.push(values[pick]);
    }

    for _ in 0..MAX_LLOYD {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for &v in values {
            let j = nearest(&cent, v);
            sum[j] += v;
            cnt[j] += 1;
        }
        let mut next = cent.clone();
        for j in 0..k {
            if cnt[j] > 0 {
                next[j] = sum[j] / cnt[j] as f64;
            } else {
                // Revive an empty cluster at the worst-served point.
                let far = values
                    .iter()
                    .copied()
                    .max_by(|a, b| {
                        let da = (a - cent[nearest(&cent, *a)]).abs();
                        let db = (b - cent[nearest(&cent, *b)]).abs();
                        da.total_cmp(&db)
                    })
                    .expect("non-empty");
                next[j] = far;
            }
        }
        let scale = next.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(f64::MIN_POSITIVE);
        let shift = cent.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        cent = next;
        if shift / scale < SHIFT_TOL {
            break;
        }
    }
    cent.sort_by(f64::total_cmp);
    Ok(cent)
}

fn nearest(cent: &[f64], v: f64) -> usize {
    let mut best = 0;
    for j in 1..cent.len() {
        if (v - cent[j]).abs() < (v - cent[best]).abs() {
            best = j;
        }
    }
    best
}

/// Background, CSF, GM and WM labels of a magnitude image. The support
/// threshold is found by Otsu on `ln(I + 1e-3 max I)`, which separates the
/// near-zero background from the darkest tissue instead of splitting tissues.
pub fn kmeans_labels(sos: &[f64], rows: usize, cols: usize, seed: u64) -> Result<LabelMap> {
    if sos.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} intensities for a {rows}x{cols} grid",
            sos.len()
        )));
    }
    if sos.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("intensities must be finite and >= 0".into()));
    }
    let max = sos.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateInput("image is identically zero".into()));
    }
    let logs: Vec<f64> = sos.iter().map(|v| (v + 1e-3 * max).ln()).collect();
    let support: Vec<bool> = match otsu_threshold(&logs) {
        Some(t) => logs.iter().map(|&l| l >= t).collect(),
        None => vec![true; sos.len()],
    };
    let inside: Vec<f64> = sos.iter().zip(&support).filter(|p| *p.1).map(|p| *p.0).collect();
    let cent = kmeans_1d(&inside, 3, seed)?;
    let labels = sos
        .iter()
        .zip(&support)
        .map(|(&v, &s)| if s { nearest(&cent, v) as u8 + 1 } else { 0 })
        .collect();
    LabelMap::new(rows, cols, labels)
}
