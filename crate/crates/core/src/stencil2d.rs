//! Shared-memory 2D Jacobi sweeps.
//!
//! Two interchangeable kernels update the same field: a scalar row loop the
//! compiler may auto-vectorize, and a packed kernel over [`PackedGrid`]. Both
//! evaluate `(((left + right) + up) + down) * 0.25` per cell, so after
//! unpacking they agree bit for bit. Each timestep runs one task per
//! interior row followed by a barrier; buffers flip by index.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{BestOf, MetricUnit, RunRecord};
use crate::scalar::{checksum, Precision, Real};
use crate::simd::{validate_layout, HaloShuffle, Pack, PackedGrid, PackedRow};
use crate::tasking::{Clock, Executor, Stopwatch};

/// Five-point Jacobi update with a fixed association order.
#[inline(always)]
pub fn jacobi_update_cell<S: Real>(up: S, down: S, left: S, right: S) -> S {
    (((left + right) + up) + down) * S::QUARTER
}

/// Double-buffered row-major field; the outer ring of cells is Dirichlet.
#[derive(Debug, Clone)]
pub struct Grid2D<S> {
    width: usize,
    height: usize,
    buffers: [Vec<S>; 2],
    current: usize,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < 3 || height < 3 {
        return Err(Error::config(format!("grid {width}x{height} is smaller than 3x3")));
    }
    Ok(())
}

/// Boundary 1, interior 0.
pub fn default_initial<S: Real>(width: usize, height: usize, row: usize, col: usize) -> S {
    if row == 0 || col == 0 || row == height - 1 || col == width - 1 {
        S::ONE
    } else {
        S::ZERO
    }
}

impl<S: Real> Grid2D<S> {
    /// Grid with boundary 1 and interior 0, each row first-touched by the
    /// worker that will update it.
    pub fn new(width: usize, height: usize, exec: &Executor) -> Result<Self> {
        Self::first_touch_with(width, height, exec, |r, c| default_initial(width, height, r, c))
    }

    pub fn first_touch_with<F>(width: usize, height: usize, exec: &Executor, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> S + Sync,
    {
        check_dims(width, height)?;
        let fill = |_, i: usize| f(i / width, i % width);
        let a = exec.first_touch_init(height, width, 1..height - 1, fill)?;
        let b = exec.first_touch_init(height, width, 1..height - 1, fill)?;
        Ok(Self {
            width,
            height,
            buffers: [a, b],
            current: 0,
        })
    }

    pub fn from_values(values: &[S], width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::config(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            buffers: [values.to_vec(), values.to_vec()],
            current: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Current buffer, row-major.
    pub fn values(&self) -> &[S] {
        &self.buffers[self.current]
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.values()[row * self.width + col]
    }

    pub fn swap(&mut self) {
        self.current ^= 1;
    }

    fn split_buffers(&mut self) -> (&[S], &mut [S]) {
        let [a, b] = &mut self.buffers;
        if self.current == 0 {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// One scalar sweep over all interior cells, then a buffer flip.
pub fn sweep_scalar<S: Real>(g: &mut Grid2D<S>, exec: &Executor) -> Result<()> {
    let (w, h) = (g.width, g.height);
    let (cur, next) = g.split_buffers();
    exec.for_each_chunk_mut(&mut next[w..(h - 1) * w], w, |i, out| {
        let r = i + 1;
        let up = &cur[(r - 1) * w..r * w];
        let mid = &cur[r * w..(r + 1) * w];
        let down = &cur[(r + 1) * w..(r + 2) * w];
        for c in 1..w - 1 {
            out[c] = jacobi_update_cell(up[c], down[c], mid[c - 1], mid[c + 1]);
        }
    })?;
    g.swap();
    Ok(())
}

type RowKernel<S> = fn(&PackedRow<S>, &PackedRow<S>, &PackedRow<S>, &mut PackedRow<S>, HaloShuffle);

fn update_packed_row<S: Real, const N: usize>(
    above: &PackedRow<S>,
    row: &PackedRow<S>,
    below: &PackedRow<S>,
    out: &mut PackedRow<S>,
    shuffle: HaloShuffle,
) {
    let c = row.chunk_len();
    let (a, m, b) = (above.as_slice(), row.as_slice(), below.as_slice());
    let o = out.as_mut_slice();
    for j in 1..=c {
        let left = Pack::<S, N>::load(&m[(j - 1) * N..]);
        let right = Pack::<S, N>::load(&m[(j + 1) * N..]);
        let up = Pack::<S, N>::load(&a[j * N..]);
        let down = Pack::<S, N>::load(&b[j * N..]);
        ((((left + right) + up) + down) * S::QUARTER).store(&mut o[j * N..]);
    }
    // the grid's own boundary columns sit inside the first and last chunk
    let w = row.width();
    out.set(0, row.get(0));
    out.set(w - 1, row.get(w - 1));
    out.shuffle_halo_with(shuffle);
}

fn row_kernel<S: Real>(lanes: usize) -> RowKernel<S> {
    match lanes {
        1 => update_packed_row::<S, 1>,
        2 => update_packed_row::<S, 2>,
        4 => update_packed_row::<S, 4>,
        8 => update_packed_row::<S, 8>,
        16 => update_packed_row::<S, 16>,
        32 => update_packed_row::<S, 32>,
        64 => update_packed_row::<S, 64>,
        // validate_lanes admits only the powers of two above
        other => unreachable!("unsupported lane count {other}"),
    }
}

/// One packed sweep: every interior row is updated, its Dirichlet columns
/// restored and its halo rebuilt; then the buffers flip.
pub fn sweep_packed<S: Real>(g: &mut PackedGrid<S>, exec: &Executor) -> Result<()> {
    sweep_packed_with(g, exec, HaloShuffle::Rotate)
}

/// [`sweep_packed`] with a selectable halo maintenance step.
pub fn sweep_packed_with<S: Real>(g: &mut PackedGrid<S>, exec: &Executor, shuffle: HaloShuffle) -> Result<()> {
    let h = g.height();
    let kernel = row_kernel::<S>(g.lanes());
    let (cur, next) = g.split_buffers();
    exec.for_each_chunk_mut(&mut next[1..h - 1], 1, |i, out| {
        let r = i + 1;
        kernel(&cur[r - 1], &cur[r], &cur[r + 1], &mut out[0], shuffle);
    })?;
    g.swap();
    Ok(())
}

/// Packs a field built by `f(row, col)`, each row packed (and so touched)
/// by the worker that will update it.
pub fn packed_first_touch<S, F>(width: usize, height: usize, lanes: usize, exec: &Executor, f: F) -> Result<PackedGrid<S>>
where
    S: Real,
    F: Fn(usize, usize) -> S + Sync,
{
    check_dims(width, height)?;
    validate_layout(width, lanes)?;
    let make = |_, r: usize| {
        let scalars: Vec<S> = (0..width).map(|c| f(r, c)).collect();
        PackedRow::pack(&scalars, lanes, scalars[0], scalars[width - 1])
    };
    let collect = |rows: Vec<Result<PackedRow<S>, _>>| rows.into_iter().collect::<Result<Vec<_>, _>>();
    let a = collect(exec.first_touch_init(height, 1, 1..height - 1, make)?)?;
    let b = collect(exec.first_touch_init(height, 1, 1..height - 1, make)?)?;
    Ok(PackedGrid::from_buffers(a, b, width, lanes)?)
}

/// Interior lattice updates of `steps` sweeps.
pub fn lattice_updates(width: usize, height: usize, steps: usize) -> f64 {
    (width.saturating_sub(2) as f64) * (height.saturating_sub(2) as f64) * steps as f64
}

/// Throughput of one timed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LupReport {
    pub updates: f64,
    pub seconds: f64,
    pub glups: f64,
}

impl LupReport {
    pub fn new(updates: f64, seconds: f64) -> Self {
        Self {
            updates,
            seconds,
            glups: updates / seconds / 1e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Scalar,
    Packed,
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scalar" => Ok(Kernel::Scalar),
            "packed" | "simd" => Ok(Kernel::Packed),
            o => Err(format!("unknown kernel `{o}` (expected scalar or packed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Run2dConfig {
    pub width: usize,
    pub height: usize,
    pub steps: usize,
    pub workers: usize,
    pub precision: Precision,
    pub kernel: Kernel,
    pub lanes: usize,
    pub runs: usize,
}

impl Default for Run2dConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 1024,
            steps: 100,
            workers: 1,
            precision: Precision::F64,
            kernel: Kernel::Scalar,
            lanes: 4,
            runs: 5,
        }
    }
}

impl Run2dConfig {
    pub fn validate(&self) -> Result<()> {
        check_dims(self.width, self.height)?;
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.kernel == Kernel::Packed {
            validate_layout(self.width, self.lanes)?;
        }
        Ok(())
    }

    pub fn updates(&self) -> f64 {
        lattice_updates(self.width, self.height, self.steps)
    }
}

/// Final field of one solve, widened to f64, plus the timed seconds.
pub fn solve_2d<S: Real>(cfg: &Run2dConfig, exec: &Executor, clock: &dyn Clock) -> Result<(Vec<S>, f64)> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    match cfg.kernel {
        Kernel::Scalar => {
            let mut g = Grid2D::<S>::new(w, h, exec)?;
            let watch = Stopwatch::start(clock);
            for _ in 0..cfg.steps {
                sweep_scalar(&mut g, exec)?;
            }
            let secs = watch.elapsed();
            Ok((g.values().to_vec(), secs))
        }
        Kernel::Packed => {
            let mut g = packed_first_touch(w, h, cfg.lanes, exec, |r, c| default_initial::<S>(w, h, r, c))?;
            let watch = Stopwatch::start(clock);
            for _ in 0..cfg.steps {
                sweep_packed(&mut g, exec)?;
            }
            let secs = watch.elapsed();
            Ok((g.unpack(), secs))
        }
    }
}

fn run_typed<S: Real>(cfg: &Run2dConfig, clock: &dyn Clock) -> Result<RunRecord> {
    let exec = Executor::with_workers(cfg.workers)?;
    let mut seconds = Vec::with_capacity(cfg.runs);
    let mut sum = 0.0;
    for _ in 0..cfg.runs {
        let (field, secs) = solve_2d::<S>(cfg, &exec, clock)?;
        sum = checksum(&field);
        seconds.push(secs);
    }
    Ok(RunRecord::from_runs(
        "stencil2d",
        serde_json::to_value(cfg)?,
        BestOf::MaxThroughput,
        cfg.updates(),
        MetricUnit::GlupPerSecond,
        seconds,
    )?
    .with_placement(cfg.workers, 1)
    .with_checksum(sum))
}

/// Runs `cfg.runs` timed solves and keeps the highest GLUP/s.
pub fn run_2d(cfg: &Run2dConfig, clock: &dyn Clock) -> Result<RunRecord> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, clock),
        Precision::F64 => run_typed::<f64>(cfg, clock),
    }
}

/// Naive serial Jacobi on a row-major field, independent of the kernels
/// above.
pub fn jacobi_reference<S: Real>(values: &[S], width: usize, height: usize, steps: usize) -> Vec<S> {
    let mut cur = values.to_vec();
    let mut next = values.to_vec();
    for _ in 0..steps {
        for r in 1..height - 1 {
            for c in 1..width - 1 {
                let at = |rr: usize, cc: usize| cur[rr * width + cc];
                next[r * width + c] = (((at(r, c - 1) + at(r, c + 1)) + at(r - 1, c)) + at(r + 1, c)) * S::QUARTER;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::bit_identical;
    use crate::tasking::FakeClock;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cell_examples() {
        assert_eq!(jacobi_update_cell(1.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(jacobi_update_cell(1.0, 2.0, 3.0, 4.0), 2.5);
        assert_eq!(jacobi_update_cell(0.0f32, 0.0, 0.0, 4.0), 1.0);
    }

    #[test]
    fn four_by_four_one_sweep() {
        // Every interior cell of a 4x4 grid touches exactly two boundary
        // cells (value 1) and two interior cells (value 0): (1+1+0+0)/4.
        let exec = Executor::with_workers(2).unwrap();
        let mut g = Grid2D::<f64>::new(4, 4, &exec).unwrap();
        sweep_scalar(&mut g, &exec).unwrap();
        for (r, c) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert_eq!(g.get(r, c), 0.5);
        }
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(3, 2), 1.0);
    }

    #[test]
    fn uniform_grid_is_fixed_point() {
        let exec = Executor::with_workers(3).unwrap();
        let mut g = Grid2D::first_touch_with(16, 9, &exec, |_, _| 2.0f64).unwrap();
        let mut p = packed_first_touch(16, 9, 4, &exec, |_, _| 2.0f64).unwrap();
        for _ in 0..5 {
            sweep_scalar(&mut g, &exec).unwrap();
            sweep_packed(&mut p, &exec).unwrap();
        }
        assert!(g.values().iter().all(|&v| v == 2.0));
        assert!(p.unpack().iter().all(|&v| v == 2.0));
    }

    fn random_field<S: Real>(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<S> {
        (0..w * h).map(|_| S::from_f64(rng.gen_range(-1.0..1.0))).collect()
    }

    fn packed_matches_scalar<S: Real>(lanes: usize, seed: u64) {
        let (w, h) = (128, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = random_field::<S>(&mut rng, w, h);
        let exec = Executor::with_workers(3).unwrap();
        let mut g = Grid2D::from_values(&values, w, h).unwrap();
        let mut p = PackedGrid::pack(&values, w, h, lanes).unwrap();
        for _ in 0..10 {
            sweep_scalar(&mut g, &exec).unwrap();
            sweep_packed(&mut p, &exec).unwrap();
        }
        assert!(bit_identical(g.values(), &p.unpack()), "lanes {lanes}");
        assert!(bit_identical(g.values(), &jacobi_reference(&values, w, h, 10)));
    }

    #[test]
    fn packed_equals_scalar_all_lanes() {
        for lanes in [1, 2, 4, 8, 16, 32] {
            packed_matches_scalar::<f64>(lanes, lanes as u64);
            packed_matches_scalar::<f32>(lanes, 100 + lanes as u64);
        }
    }

    #[test]
    fn unrotated_halo_breaks_equivalence() {
        let (w, h) = (32, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values = random_field::<f64>(&mut rng, w, h);
        let exec = Executor::with_workers(1).unwrap();
        let mut p = PackedGrid::pack(&values, w, h, 4).unwrap();
        sweep_packed_with(&mut p, &exec, HaloShuffle::Unrotated).unwrap();
        sweep_packed_with(&mut p, &exec, HaloShuffle::Unrotated).unwrap();
        assert!(!bit_identical(&p.unpack(), &jacobi_reference(&values, w, h, 2)));
    }

    #[test]
    fn worker_count_invariance() {
        let cfg = Run2dConfig {
            width: 64,
            height: 48,
            steps: 20,
            ..Run2dConfig::default()
        };
        let clock = FakeClock::with_tick(1.0);
        let fields: Vec<Vec<f64>> = [1, 2, 4, 7]
            .iter()
            .map(|&w| solve_2d::<f64>(&cfg, &Executor::with_workers(w).unwrap(), &clock).unwrap().0)
            .collect();
        for f in &fields[1..] {
            assert!(bit_identical(&fields[0], f));
        }
    }

    #[test]
    fn interior_minimum_never_decreases() {
        let exec = Executor::with_workers(2).unwrap();
        let mut g = Grid2D::<f64>::new(20, 12, &exec).unwrap();
        let interior_min = |g: &Grid2D<f64>| {
            (1..11)
                .flat_map(|r| (1..19).map(move |c| (r, c)))
                .map(|(r, c)| g.get(r, c))
                .fold(f64::INFINITY, f64::min)
        };
        let mut last = interior_min(&g);
        for _ in 0..50 {
            sweep_scalar(&mut g, &exec).unwrap();
            let m = interior_min(&g);
            assert!(m >= last);
            last = m;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn throughput_formulas() {
        assert_eq!(LupReport::new(1e9, 1.0).glups, 1.0);
        assert_eq!(lattice_updates(8192, 131072, 100), 8190.0 * 131070.0 * 100.0);
        assert!((lattice_updates(8192, 131072, 100) - 1.0735e11).abs() / 1.0735e11 < 1e-4);
    }

    #[test]
    fn run_with_fake_clock() {
        let cfg = Run2dConfig {
            width: 16,
            height: 16,
            steps: 2,
            runs: 5,
            kernel: Kernel::Packed,
            lanes: 4,
            precision: Precision::F32,
            ..Run2dConfig::default()
        };
        let rec = run_2d(&cfg, &FakeClock::with_tick(0.25)).unwrap();
        assert_eq!(rec.all_seconds.len(), 5);
        assert_eq!(rec.metric, 14.0 * 14.0 * 2.0 / 0.25 / 1e9);
        assert_eq!(rec.best_of, BestOf::MaxThroughput);
    }

    #[test]
    fn config_errors() {
        let bad_lanes = Run2dConfig {
            width: 30,
            kernel: Kernel::Packed,
            lanes: 4,
            ..Run2dConfig::default()
        };
        assert!(bad_lanes.validate().is_err());
        let tiny = Run2dConfig {
            width: 2,
            ..Run2dConfig::default()
        };
        assert!(tiny.validate().is_err());
        assert!(Grid2D::<f64>::from_values(&[0.0; 8], 3, 3).is_err());
    }
}
