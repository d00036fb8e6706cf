use serde::Serialize;

use super::WalkTrace;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CutTimeOptions {
    /// A candidate at step `n` is confirmed only if `horizon - n >= window`;
    /// later candidates are counted in `censored_tail`.
    pub window: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CutTimeRecord {
    pub cut_times: Vec<u64>,
    /// Number of completed failed excursions `[A_i, B_i)` before the first
    /// confirmed cut; `None` when no cut is confirmed.
    pub theta: Option<u64>,
    pub censored_tail: u64,
}

impl CutTimeRecord {
    pub fn first(&self) -> Option<u64> {
        self.cut_times.first().copied()
    }
}

/// Cut times of a recorded trace.
pub fn detect_cut_times(trace: &WalkTrace, options: CutTimeOptions) -> Result<CutTimeRecord> {
    let heights = trace.heights.as_deref().ok_or(Error::HeightsNotRecorded)?;
    let first_visit = trace.first_visit.as_deref().ok_or(Error::HeightsNotRecorded)?;
    Ok(detect_cut_times_in(heights, first_visit, options))
}

/// Cut times from a height sequence `h[0..=T]` and first-visit flags.
///
/// Step `n > 0` is a cut if it visits a new vertex and `h[m] >= h[n]` for all
/// `n <= m <= T`.
pub fn detect_cut_times_in(heights: &[u32], first_visit: &[bool], options: CutTimeOptions) -> CutTimeRecord {
    assert_eq!(heights.len(), first_visit.len());
    let mut record = CutTimeRecord::default();
    if heights.len() <= 1 {
        return record;
    }
    let horizon = (heights.len() - 1) as u64;
    let mut suffix_min = vec![0u32; heights.len()];
    let mut running = u32::MAX;
    for n in (0..heights.len()).rev() {
        running = running.min(heights[n]);
        suffix_min[n] = running;
    }
    for n in 1..heights.len() {
        if first_visit[n] && suffix_min[n] >= heights[n] {
            if horizon - n as u64 >= options.window {
                record.cut_times.push(n as u64);
            } else {
                record.censored_tail += 1;
            }
        }
    }
    if let Some(c1) = record.first() {
        record.theta = Some(failed_excursions_before(heights, first_visit, c1 as usize));
    }
    record
}

/// Scans the interlaced times `A_i` (new vertex after `B_{i-1}`) and `B_i`
/// (first drop below `|S_{A_i}|`), counting completed pairs before `c1`.
fn failed_excursions_before(heights: &[u32], first_visit: &[bool], c1: usize) -> u64 {
    let mut completed = 0;
    let mut n = 1;
    while n < c1 {
        if first_visit[n] {
            let level = heights[n];
            let mut m = n + 1;
            while m < heights.len() && heights[m] >= level {
                m += 1;
            }
            debug_assert!(m < heights.len(), "excursion before the first cut must end");
            completed += 1;
            n = m + 1;
        } else {
            n += 1;
        }
    }
    completed
}
