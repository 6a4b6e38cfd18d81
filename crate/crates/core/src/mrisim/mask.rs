use rand::Rng;

use super::{seeded_rng, streams};
use crate::error::{Error, Result};
use crate::numkernel::{ComplexImage, C64};

/// Binary Cartesian sampling pattern; whole rows (phase-encode lines) are
/// either acquired or skipped, the readout runs along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    rows: usize,
    cols: usize,
    grid: Vec<u8>,
    acceleration: f64,
}

impl SamplingMask {
    pub fn from_grid(rows: usize, cols: usize, grid: Vec<u8>, acceleration: f64) -> Result<Self> {
        if grid.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} mask entries for {rows}x{cols}",
                grid.len()
            )));
        }
        if grid.iter().any(|&g| g > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            rows,
            cols,
            grid,
            acceleration,
        })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            grid: vec![1; rows * cols],
            acceleration: 1.0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    #[inline]
    pub fn is_sampled(&self, r: usize, c: usize) -> bool {
        self.grid[r * self.cols + c] == 1
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        self.grid[idx] as f64
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.grid.iter().map(|&g| g as usize).sum::<usize>() as f64 / self.grid.len() as f64
    }

    /// Zeroes unsampled entries in place.
    pub fn apply(&self, k: &mut ComplexImage) {
        debug_assert_eq!(k.shape(), self.shape());
        for (z, &g) in k.data_mut().iter_mut().zip(&self.grid) {
            if g == 0 {
                *z = C64::new(0.0, 0.0);
            }
        }
    }
}

pub fn default_center_lines(rows: usize) -> usize {
    (rows / 16).max(4).min(rows)
}

/// Variable-density line mask.
///
/// The central `center_lines` rows are always acquired. Other lines are
/// drawn independently with probability `min(1, c (1 + |k|/k0)^-2)`, `c`
/// chosen so the expected line count is `rows / acceleration`. If the draw
/// lands outside `[0.8, 1.25] * rows / acceleration` lines, the count is
/// pulled back in by adding the most probable missing lines (or dropping the
/// least probable acquired ones).
pub fn make_vd_mask(
    rows: usize,
    cols: usize,
    acceleration: f64,
    center_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "acceleration {acceleration} must be >= 1"
        )));
    }
    if center_lines > rows {
        return Err(Error::InvalidArgument(format!(
            "{center_lines} center lines exceed {rows} rows"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    if acceleration == 1.0 {
        return Ok(SamplingMask::full(rows, cols));
    }

    let c0 = rows / 2 - center_lines / 2;
    let center = c0..c0 + center_lines;
    let k0 = (rows as f64 / 16.0).max(1.0);
    let weight = |r: usize| (1.0 + (r as f64 - (rows / 2) as f64).abs() / k0).powi(-2);

    let target = rows as f64 / acceleration;
    let lo = (0.8 * target).ceil() as usize;
    let hi = (1.25 * target).floor() as usize;
    let remaining = (target - center_lines as f64).max(0.0);

    let outer: Vec<usize> = (0..rows).filter(|r| !center.contains(r)).collect();
    let prob_at = |scale: f64, r: usize| (scale * weight(r)).min(1.0);
    let expected = |scale: f64| outer.iter().map(|&r| prob_at(scale, r)).sum::<f64>();
    let (mut a, mut b) = (0.0, 1.0);
    while expected(b) < remaining && b < 1e12 {
        b *= 2.0;
    }
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if expected(m) < remaining {
            a = m;
        } else {
            b = m;
        }
    }
    let scale = 0.5 * (a + b);

    let mut rng = seeded_rng(seed, streams::MASK);
    let mut lines = vec![false; rows];
    for r in center.clone() {
        lines[r] = true;
    }
    for &r in &outer {
        let u: f64 = rng.gen();
        if u < prob_at(scale, r) {
            lines[r] = true;
        }
    }

    // outer lines sorted by decreasing probability, ties broken toward the center
    let mut by_prob = outer.clone();
    by_prob.sort_by(|&x, &y| weight(y).total_cmp(&weight(x)).then(x.cmp(&y)));
    let mut count = lines.iter().filter(|&&l| l).count();
    for &r in &by_prob {
        if count >= lo {
            break;
        }
        if !lines[r] {
            lines[r] = true;
            count += 1;
        }
    }
    for &r in by_prob.iter().rev() {
        if count <= hi.max(center_lines) {
            break;
        }
        if lines[r] {
            lines[r] = false;
            count -= 1;
        }
    }

    let mut grid = vec![0u8; rows * cols];
    for (r, &on) in lines.iter().enumerate() {
        if on {
            grid[r * cols..(r + 1) * cols].fill(1);
        }
    }
    Ok(SamplingMask {
        rows,
        cols,
        grid,
        acceleration,
    })
}
