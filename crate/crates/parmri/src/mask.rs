//! Cartesian undersampling masks with an optional autocalibration region.

use crate::error::{Error, Result};
use crate::rng;
use rand::seq::index::sample;

/// Autocalibration region descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcsRegion {
    None,
    /// Fully sampled central columns (1D Cartesian patterns).
    Lines { count: usize },
    /// Fully sampled central square (2D random patterns).
    Block { count: usize },
}

impl AcsRegion {
    pub fn count(&self) -> usize {
        match self {
            AcsRegion::None => 0,
            AcsRegion::Lines { count } | AcsRegion::Block { count } => *count,
        }
    }
}

/// Boolean acquisition pattern over an `h`x`w` k-space grid (true = acquired).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    omega: Vec<bool>,
    acs: AcsRegion,
    af_nominal: f64,
    seed: u64,
}

/// Central index range of length `count` on an axis of length `len`,
/// positioned so it contains the centered-DC index `len/2`.
pub fn center_range(len: usize, count: usize) -> std::ops::Range<usize> {
    let start = len / 2 - count / 2;
    start..start + count
}

impl SamplingMask {
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn omega(&self) -> &[bool] {
        &self.omega
    }
    pub fn acs(&self) -> AcsRegion {
        self.acs
    }
    pub fn af_nominal(&self) -> f64 {
        self.af_nominal
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_sampled(&self, i: usize, j: usize) -> bool {
        self.omega[i * self.width + j]
    }

    pub fn acquired_count(&self) -> usize {
        self.omega.iter().filter(|&&b| b).count()
    }

    pub fn af_actual(&self) -> f64 {
        (self.height * self.width) as f64 / self.acquired_count().max(1) as f64
    }

    /// Rebuild from raw parts (container I/O). Validates the ACS region is
    /// inside omega.
    pub fn from_parts(
        height: usize,
        width: usize,
        omega: Vec<bool>,
        acs: AcsRegion,
        af_nominal: f64,
        seed: u64,
    ) -> Result<Self> {
        if omega.len() != height * width {
            return Err(Error::ShapeMismatch("mask omega length".into()));
        }
        let m = Self { height, width, omega, acs, af_nominal, seed };
        m.check_acs_inside()?;
        Ok(m)
    }

    fn check_acs_inside(&self) -> Result<()> {
        match self.acs {
            AcsRegion::None => Ok(()),
            AcsRegion::Lines { count } => {
                for j in center_range(self.width, count) {
                    for i in 0..self.height {
                        if !self.is_sampled(i, j) {
                            return Err(Error::InvalidInput("ACS lines not inside omega".into()));
                        }
                    }
                }
                Ok(())
            }
            AcsRegion::Block { count } => {
                for i in center_range(self.height, count) {
                    for j in center_range(self.width, count) {
                        if !self.is_sampled(i, j) {
                            return Err(Error::InvalidInput("ACS block not inside omega".into()));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// 1D Cartesian pattern: `round(width/af)` fully sampled columns. The central
/// `acs_lines` columns are always included, the rest are drawn uniformly at
/// random without replacement from the remaining columns.
pub fn make_mask_1d(
    width: usize,
    height: usize,
    af: f64,
    acs_lines: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if !(af >= 1.0) {
        return Err(Error::Parameter(format!("acceleration factor {af} must be >= 1")));
    }
    let budget = (width as f64 / af).round() as usize;
    if budget == 0 {
        return Err(Error::Parameter("mask budget is zero".into()));
    }
    if acs_lines > budget {
        return Err(Error::Parameter(format!(
            "acs_lines {acs_lines} exceeds column budget {budget} (width {width} / af {af})"
        )));
    }
    if acs_lines > width {
        return Err(Error::Parameter("acs_lines exceeds width".into()));
    }
    let mut col_on = vec![false; width];
    let acs_range = center_range(width, acs_lines);
    for j in acs_range.clone() {
        col_on[j] = true;
    }
    let candidates: Vec<usize> = (0..width).filter(|j| !acs_range.contains(j)).collect();
    let extra = budget - acs_lines;
    let mut rng = rng::stream(seed, "mask-1d", (width as u64) << 32 | height as u64);
    for idx in sample(&mut rng, candidates.len(), extra) {
        col_on[candidates[idx]] = true;
    }
    let mut omega = vec![false; height * width];
    for i in 0..height {
        for j in 0..width {
            omega[i * width + j] = col_on[j];
        }
    }
    let acs = if acs_lines > 0 { AcsRegion::Lines { count: acs_lines } } else { AcsRegion::None };
    Ok(SamplingMask { height, width, omega, acs, af_nominal: af, seed })
}

/// 2D random pattern: `round(h*w/af)` points drawn uniformly, always
/// including a central `acs_block`x`acs_block` square when `acs_block > 0`.
pub fn make_mask_2d(
    width: usize,
    height: usize,
    af: f64,
    acs_block: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if !(af >= 1.0) {
        return Err(Error::Parameter(format!("acceleration factor {af} must be >= 1")));
    }
    let total = height * width;
    let budget = (total as f64 / af).round() as usize;
    if acs_block * acs_block > budget {
        return Err(Error::Parameter(format!(
            "acs block {acs_block}x{acs_block} exceeds point budget {budget}"
        )));
    }
    if acs_block > height.min(width) {
        return Err(Error::Parameter("acs block exceeds grid".into()));
    }
    let mut omega = vec![false; total];
    let rows = center_range(height, acs_block);
    let cols = center_range(width, acs_block);
    for i in rows.clone() {
        for j in cols.clone() {
            omega[i * width + j] = true;
        }
    }
    let candidates: Vec<usize> = (0..total)
        .filter(|p| {
            let (i, j) = (p / width, p % width);
            !(rows.contains(&i) && cols.contains(&j))
        })
        .collect();
    let extra = budget - acs_block * acs_block;
    let mut rng = rng::stream(seed, "mask-2d", (width as u64) << 32 | height as u64);
    for idx in sample(&mut rng, candidates.len(), extra) {
        omega[candidates[idx]] = true;
    }
    let acs = if acs_block > 0 { AcsRegion::Block { count: acs_block } } else { AcsRegion::None };
    Ok(SamplingMask { height, width, omega, acs, af_nominal: af, seed })
}
