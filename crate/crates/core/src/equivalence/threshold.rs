//! Generic search for the smallest threshold at which a test rejects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Absolute width of the final bracket.
    pub tol: f64,
    pub max_doublings: u32,
    /// Points above the result re-checked for rejection.
    pub post_checks: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { tol: 1e-4, max_doublings: 60, post_checks: 8 }
    }
}

/// Smallest threshold in `[lower, inf)` at which `reject` holds, assuming the
/// rejection region is an upper interval. `reject(lower)` true returns
/// `lower`. The result is the upper end of the final bracket, so the test
/// rejects there and fails to reject `tol` below it. Points between the
/// result and the initial rejecting bracket end are re-checked and an
/// accepting one is reported as [`Error::NonMonotone`].
pub fn bisect_minimal_threshold<F>(reject: F, lower: f64, start: f64, cfg: &SearchConfig) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    search(reject, lower, start, cfg, false)
}

/// Like [`bisect_minimal_threshold`], but when a re-check above the bracket
/// accepts, the search restarts from that point. The result is the lower
/// end of the last rejecting interval found among the evaluated points,
/// which is the conservative reading of a rejection region that is an
/// upper interval only up to Monte-Carlo noise.
pub fn upper_interval_threshold<F>(reject: F, lower: f64, start: f64, cfg: &SearchConfig) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    search(reject, lower, start, cfg, true)
}

fn search<F>(mut reject: F, lower: f64, start: f64, cfg: &SearchConfig, restart: bool) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    if !(cfg.tol > 0.0) {
        return Err(Error::validation("search tolerance must be positive"));
    }
    if reject(lower)? {
        return Ok(lower);
    }
    let mut lo = lower;
    let mut hi = start.max(lower + cfg.tol);
    let mut doublings = 0;
    while !reject(hi)? {
        lo = hi;
        hi = lower + 2.0 * (hi - lower);
        doublings += 1;
        if doublings > cfg.max_doublings {
            return Err(Error::Numerical(format!("no rejecting threshold found below {hi}")));
        }
    }
    let top = hi;
    'outer: loop {
        while hi - lo > cfg.tol {
            let mid = 0.5 * (lo + hi);
            if reject(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        for k in 1..=cfg.post_checks {
            let x = hi + (top - hi) * k as f64 / cfg.post_checks as f64;
            if x < top && !reject(x)? {
                if !restart {
                    return Err(Error::NonMonotone {
                        at: x,
                        hint: "the test accepts above the bracketed threshold; reuse the same seed for every threshold (common random numbers)".into(),
                    });
                }
                lo = x;
                hi = top;
                continue 'outer;
            }
        }
        return Ok(hi);
    }
}
