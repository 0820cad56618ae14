// SPDX-License-Identifier: Apache-2.0

//! View-generation throughput: nanoseconds per input point, per stage.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::augment::AugmentParams;
use crate::cloud::PointCloud;
use crate::error::{MscError, Result};
use crate::rng::Rng;
use crate::viewgen::{self, Role, StageTimings};

/// Surface density of the benchmark clouds, points per square meter.
pub const BENCH_DENSITY: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub photometric: f64,
    pub spatial: f64,
    pub crop: f64,
    pub grid_sample: f64,
    /// Wall time of the whole call, measured outside the stages.
    pub total: f64,
    pub repeats: usize,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "size,photometric_ns,spatial_ns,crop_ns,grid_sample_ns,stages_ns,total_ns,repeats";

    pub fn stages(&self) -> f64 {
        self.photometric + self.spatial + self.crop + self.grid_sample
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
            self.size,
            self.photometric,
            self.spatial,
            self.crop,
            self.grid_sample,
            self.stages(),
            self.total,
            self.repeats
        )
    }
}

/// A floor patch of `n` points at [`BENCH_DENSITY`] with mild height noise,
/// so the number of occupied voxels grows linearly with `n`.
pub fn bench_cloud(n: usize, rng: &mut Rng) -> Result<PointCloud> {
    let side = (n as f64 / BENCH_DENSITY).sqrt();
    let positions = (0..n)
        .map(|_| [rng.uniform(0.0, side), rng.uniform(0.0, side), 0.01 * rng.normal()])
        .collect();
    let colors = (0..n).map(|_| [rng.unit(), rng.unit(), rng.unit()]).collect();
    PointCloud::new(positions, colors, None)
}

fn per_point(d: Duration, n: usize) -> f64 {
    d.as_nanos() as f64 / n as f64
}

/// Augmentation draws per size. Every size replays the same draws, so sizes
/// differ only in point count.
pub const BENCH_DRAWS: u64 = 8;

/// Times view generation of one `size`-point cloud. Each of `draws` seeded
/// parameter draws is run `repeats` times and its fastest run kept; the row
/// is the mean over draws.
pub fn bench_size(size: usize, draws: u64, repeats: usize, params: &AugmentParams, seed: u64) -> Result<BenchRow> {
    if size == 0 || draws == 0 || repeats == 0 {
        return Err(MscError::invalid("bench size, draws and repeats must be positive"));
    }
    let cloud = bench_cloud(size, &mut Rng::derive(seed, size as u64))?;
    let mut sum = BenchRow {
        size,
        photometric: 0.0,
        spatial: 0.0,
        crop: 0.0,
        grid_sample: 0.0,
        total: 0.0,
        repeats,
    };
    for d in 0..draws {
        let mut best: Option<BenchRow> = None;
        for _ in 0..repeats {
            let mut rng = Rng::derive(seed ^ 0x5eed, d);
            let mut t = StageTimings::default();
            let start = Instant::now();
            let view = viewgen::generate_view_timed(&cloud, params, Role::Query, &mut rng, &mut t)?;
            let total = start.elapsed();
            std::hint::black_box(view);
            let row = BenchRow {
                size,
                photometric: per_point(t.photometric, size),
                spatial: per_point(t.spatial, size),
                crop: per_point(t.crop, size),
                grid_sample: per_point(t.grid_sample, size),
                total: per_point(total, size),
                repeats,
            };
            if best.is_none_or(|b| row.total < b.total) {
                best = Some(row);
            }
        }
        let b = best.expect("repeats > 0");
        sum.photometric += b.photometric;
        sum.spatial += b.spatial;
        sum.crop += b.crop;
        sum.grid_sample += b.grid_sample;
        sum.total += b.total;
    }
    let k = draws as f64;
    Ok(BenchRow {
        photometric: sum.photometric / k,
        spatial: sum.spatial / k,
        crop: sum.crop / k,
        grid_sample: sum.grid_sample / k,
        total: sum.total / k,
        ..sum
    })
}

/// Repeats per draw giving every size roughly the same total work.
pub fn default_repeats(size: usize) -> usize {
    (400_000 / size.max(1)).clamp(2, 20)
}

pub fn run_bench(sizes: &[usize], params: &AugmentParams, seed: u64) -> Result<Vec<BenchRow>> {
    sizes
        .iter()
        .map(|&n| bench_size(n, BENCH_DRAWS, default_repeats(n), params, seed))
        .collect()
}

pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BenchRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// `(max - min) / min` of the per-point total cost across rows.
pub fn scaling_spread(rows: &[BenchRow]) -> f64 {
    let costs: Vec<f64> = rows.iter().map(|r| r.total).collect();
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = costs.iter().copied().fold(0.0, f64::max);
    (hi - lo) / lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_size() {
        let rows = run_bench(&[500, 1000], &AugmentParams::default(), 1).unwrap();
        let csv = render_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("size,"));
        for r in &rows {
            assert!(r.stages() <= r.total * 1.05 + 1.0);
        }
    }
}
