//! Folded-normal probabilities and Monte-Carlo quantiles of the pivotal
//! self-normalized limit `W = B(1) / (int (B(l)/l - B(1))^2 nu(dl))^(1/2)`.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::panel::validate_grid;

/// Two-sided 5% critical value of the standard normal.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `P(|N(mu, sigma^2)| <= x)`.
pub fn folded_normal_cdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
    }
    if !(x >= 0.0) {
        return Err(Error::validation(format!("folded normal support is x >= 0, got {x}")));
    }
    Ok(folded_cdf_unchecked(x, mu, sigma))
}

/// The law is symmetric in `mu`, so work with `|mu|` and pick the form of
/// `Phi(a) - Phi(-b)` that avoids subtracting numbers close to one.
fn folded_cdf_unchecked(x: f64, mu: f64, sigma: f64) -> f64 {
    let m = mu.abs();
    let a = (x - m) / sigma;
    let b = (x + m) / sigma;
    let p = if a < 0.0 { normal_cdf(a) - normal_cdf(-b) } else { 1.0 - normal_sf(a) - normal_sf(b) };
    p.clamp(0.0, 1.0)
}

/// Smallest `x >= 0` with `P(|N(mu, sigma^2)| <= x) >= alpha`, by bisection.
pub fn folded_normal_quantile(mu: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::validation(format!("need finite mu and sigma > 0, got ({mu}, {sigma})")));
    }
    let cdf = |x: f64| folded_cdf_unchecked(x, mu, sigma);
    let mut lo = 0.0;
    let mut hi = mu.abs() + sigma;
    while cdf(hi) < alpha {
        lo = hi;
        hi = mu.abs() + 2.0 * (hi - mu.abs());
    }
    let tol = 1e-10 * sigma.min(1.0);
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if cdf(mid) >= alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Rejection probability of the single-coefficient test
/// `|beta_hat| < Q_{N_F(delta, se^2)}(alpha)` when `beta_hat ~ N(beta1, se^2)`.
pub fn folded_test_power(beta1: f64, se: f64, delta: f64, alpha: f64) -> Result<f64> {
    let f = folded_normal_quantile(delta, se, alpha)?;
    folded_normal_cdf(f, beta1, se)
}

/// Smallest `delta >= 0` with `|b| < Q_{N_F(delta, se^2)}(alpha)` for every
/// larger `delta`, i.e. the root of `P(|N(delta, se^2)| <= |b|) = alpha`.
/// With `se = 0` the test degenerates to `|b| < delta`.
pub fn folded_minimal_threshold(b: f64, se: f64, alpha: f64) -> Result<f64> {
    let x = b.abs();
    if se == 0.0 {
        return Ok(x);
    }
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::Numerical(format!("invalid standard error {se}")));
    }
    let f = |d: f64| folded_cdf_unchecked(x, d, se) - alpha;
    if f(0.0) < 0.0 {
        return Ok(0.0);
    }
    // The folded cdf at x is decreasing in delta.
    let mut lo = 0.0;
    let mut hi = x + se;
    while f(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let tol = 1e-12 * (x + se);
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Monte-Carlo quantiles of `W` for one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WQuantileTable {
    pub format_version: u32,
    pub grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
}

pub const W_TABLE_FORMAT: u32 = 1;
pub const DEFAULT_W_REPS: usize = 1_000_000;
pub const DEFAULT_W_SEED: u64 = 2024;
const MIN_W_REPS: usize = 1_000;
const CHUNK: usize = 8_192;

/// Probability levels 0.001, 0.002, ..., 0.999.
pub fn default_levels() -> Vec<f64> {
    (1..1000).map(|k| k as f64 / 1000.0).collect()
}

/// One draw of `W` on `grid` (last point 1): Brownian motion from
/// independent Gaussian increments, discrete uniform measure over the
/// points below 1.
pub fn draw_w<R: Rng + ?Sized>(grid: &[f64], path: &mut [f64], rng: &mut R) -> f64 {
    let mut level = 0.0;
    let mut prev = 0.0;
    for (slot, &l) in path.iter_mut().zip(grid) {
        let z: f64 = rng.sample(StandardNormal);
        level += z * (l - prev).sqrt();
        prev = l;
        *slot = level;
    }
    let k = grid.len() - 1;
    let b1 = path[k];
    let denom = (0..k).map(|j| (path[j] / grid[j] - b1).powi(2)).sum::<f64>() / k as f64;
    b1 / denom.sqrt()
}

/// Simulate `reps` draws of `W` and extract empirical quantiles.
///
/// Draws are generated in fixed-size chunks, each from its own RNG stream,
/// and sorted before the order statistics are taken, so the table depends
/// only on `(grid, reps, seed, levels)`.
pub fn simulate_w_quantile(
    grid: &[f64],
    levels: &[f64],
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<WQuantileTable> {
    validate_grid(grid)?;
    if reps < MIN_W_REPS {
        return Err(Error::validation(format!(
            "{reps} replications are too few for stable tail quantiles; use at least {MIN_W_REPS} (10^5 or more recommended)"
        )));
    }
    if levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("levels must be strictly increasing in (0, 1)"));
    }
    let chunks = reps.div_ceil(CHUNK);
    let mut draws: Vec<f64> = exec
        .map(chunks, |c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(reps - c * CHUNK);
            let mut path = vec![0.0; grid.len()];
            (0..len).map(|_| draw_w(grid, &mut path, &mut rng)).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    draws.sort_unstable_by(f64::total_cmp);
    let quantiles = levels.iter().map(|&p| empirical_quantile(&draws, p)).collect();
    Ok(WQuantileTable {
        format_version: W_TABLE_FORMAT,
        grid: grid.to_vec(),
        reps,
        seed,
        levels: levels.to_vec(),
        quantiles,
    })
}

/// Order statistic `ceil(p N)` (1-based) of sorted data.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

impl WQuantileTable {
    /// Quantile at `level`; linear interpolation between tabulated levels.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        let (first, last) = (self.levels[0], *self.levels.last().expect("non-empty table"));
        if !(level >= first - 1e-12 && level <= last + 1e-12) {
            return Err(Error::validation(format!("level {level} is outside the tabulated range [{first}, {last}]")));
        }
        let j = self.levels.partition_point(|&l| l < level - 1e-12);
        if j < self.levels.len() && (self.levels[j] - level).abs() <= 1e-12 {
            return Ok(self.quantiles[j]);
        }
        let (l0, l1) = (self.levels[j - 1], self.levels[j]);
        let (q0, q1) = (self.quantiles[j - 1], self.quantiles[j]);
        Ok(q0 + (q1 - q0) * (level - l0) / (l1 - l0))
    }

    /// Error unless the table was simulated for `grid`.
    pub fn check_grid(&self, grid: &[f64]) -> Result<()> {
        let same = self.grid.len() == grid.len() && self.grid.iter().zip(grid).all(|(a, b)| (a - b).abs() <= 1e-12);
        if same {
            Ok(())
        } else {
            Err(Error::validation(format!("quantile table grid {:?} does not match path grid {:?}", self.grid, grid)))
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("table serializes");
        hex(&Sha256::digest(bytes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let table: WQuantileTable = serde_json::from_slice(&std::fs::read(path)?)?;
        if table.format_version != W_TABLE_FORMAT {
            return Err(Error::validation(format!(
                "quantile cache {} has format version {}, expected {W_TABLE_FORMAT}",
                path.display(),
                table.format_version
            )));
        }
        if table.levels.len() != table.quantiles.len() || table.levels.is_empty() {
            return Err(Error::validation(format!("quantile cache {} is corrupt", path.display())));
        }
        Ok(table)
    }

    /// Cache file name identifying `(grid, reps, seed)`.
    pub fn cache_file_name(grid: &[f64], reps: usize, seed: u64) -> String {
        let key = format!("{grid:?}|{reps}|{seed}|v{W_TABLE_FORMAT}");
        let digest = hex(&Sha256::digest(key.as_bytes()));
        format!("wquantiles-{}.json", &digest[..16])
    }

    /// Load the table for `(grid, reps, seed)` from `dir`, simulating and
    /// storing it on a miss. Returns the table and the cache path.
    pub fn load_or_simulate(
        dir: &Path,
        grid: &[f64],
        reps: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<(Self, PathBuf)> {
        let path = dir.join(Self::cache_file_name(grid, reps, seed));
        if path.exists() {
            let table = Self::load(&path)?;
            if table.reps == reps && table.seed == seed && table.check_grid(grid).is_ok() {
                return Ok((table, path));
            }
        }
        let table = simulate_w_quantile(grid, &default_levels(), reps, seed, exec)?;
        table.save(&path)?;
        Ok((table, path))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
