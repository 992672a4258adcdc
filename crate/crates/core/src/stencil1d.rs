//! Distributed explicit solver for the 1D heat equation.
//!
//! The global domain is cut into `L` localities of `nlp` partitions each,
//! every partition holding `local_nx` cells. Each step a locality sends its
//! two edge cells to its neighbours, requests the two matching ghosts as
//! futures, and then runs one task per partition. Partitions away from the
//! locality edges never wait; the first and last partition compute their
//! local cells before awaiting the ghost they need. The two global end
//! cells are Dirichlet and never change.

use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locality::{in_process_cluster, tcp_loopback_cluster, Locality, Tag, TransportError};
use crate::record::{BestOf, MetricUnit, RunRecord};
use crate::scalar::ExactSum;
use crate::tasking::{Clock, Executor, Future, Stopwatch};

const TAG_TO_LEFT: Tag = 1;
const TAG_TO_RIGHT: Tag = 2;
const TAG_BARRIER: Tag = 3;
const TAG_CHECKSUM: Tag = 4;

/// Explicit scheme coefficients. `k = alpha * dt / dx^2` must not exceed
/// 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatParams {
    pub alpha: f64,
    pub dt: f64,
    pub dx: f64,
}

impl HeatParams {
    pub fn new(alpha: f64, dt: f64, dx: f64) -> Result<Self> {
        let p = Self { alpha, dt, dx };
        p.validate()?;
        Ok(p)
    }

    /// Unit spacing and time step with diffusion constant `k`.
    pub fn from_k(k: f64) -> Result<Self> {
        Self::new(k, 1.0, 1.0)
    }

    pub fn k(&self) -> f64 {
        self.alpha * self.dt / (self.dx * self.dx)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.alpha, self.dt, self.dx].iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(Error::config("alpha, dt and dx must be positive"));
        }
        if self.k() > 0.5 {
            return Err(Error::config(format!(
                "k = alpha*dt/dx^2 = {} exceeds the stability limit 0.5",
                self.k()
            )));
        }
        Ok(())
    }
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            dt: 1.0,
            dx: 1.0,
        }
    }
}

/// Three-point explicit update.
#[inline(always)]
pub fn heat_update_cell(left: f64, center: f64, right: f64, k: f64) -> f64 {
    center + k * (left - 2.0 * center + right)
}

/// Initial field, as a function of the global cell index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `u[i] = i mod 1000`.
    Sawtooth,
    Uniform(f64),
    /// Pseudo-random values in `[0, 1)` hashed from the index.
    Hashed(u64),
}

impl InitialCondition {
    pub fn value(&self, i: u64) -> f64 {
        match *self {
            InitialCondition::Sawtooth => (i % 1000) as f64,
            InitialCondition::Uniform(v) => v,
            InitialCondition::Hashed(seed) => {
                (splitmix64(seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15)) >> 11) as f64
                    / (1u64 << 53) as f64
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed total (`Strong`) or fixed points per locality (`Weak`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    Strong,
    Weak,
}

impl ScalingMode {
    /// Global problem size for `points` at `localities`.
    pub fn total_points(self, points: u64, localities: usize) -> u64 {
        match self {
            ScalingMode::Strong => points,
            ScalingMode::Weak => points * localities as u64,
        }
    }
}

impl std::str::FromStr for ScalingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strong" => Ok(ScalingMode::Strong),
            "weak" => Ok(ScalingMode::Weak),
            o => Err(format!("unknown scaling mode `{o}` (expected strong or weak)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "tcp" => Ok(TransportKind::Tcp),
            o => Err(format!("unknown transport `{o}` (expected inproc or tcp)")),
        }
    }
}

/// How the global domain is split over localities and partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total_points: u64,
    pub localities: usize,
    pub partitions: usize,
    pub local_nx: usize,
}

impl Decomposition {
    pub fn new(total_points: u64, localities: usize, partitions: usize) -> Result<Self> {
        if localities == 0 || partitions == 0 {
            return Err(Error::config("need at least one locality and one partition"));
        }
        let pieces = (localities * partitions) as u64;
        if total_points % pieces != 0 {
            return Err(Error::config(format!(
                "{total_points} points do not split evenly over {localities} localities x {partitions} partitions"
            )));
        }
        let local_nx = usize::try_from(total_points / pieces)
            .map_err(|_| Error::config("partition too large for this platform"))?;
        if local_nx < 2 {
            return Err(Error::config(format!("partitions of {local_nx} cells; need at least 2")));
        }
        Ok(Self {
            total_points,
            localities,
            partitions,
            local_nx,
        })
    }

    pub fn cells_per_locality(&self) -> usize {
        self.local_nx * self.partitions
    }

    pub fn global_offset(&self, rank: usize) -> u64 {
        (rank * self.cells_per_locality()) as u64
    }
}

/// Plain serial solver used as the reference.
pub fn solve_serial(initial: &[f64], k: f64, steps: usize) -> Vec<f64> {
    let n = initial.len();
    let mut cur = initial.to_vec();
    let mut next = initial.to_vec();
    for _ in 0..steps {
        if n >= 3 {
            for i in 1..n - 1 {
                next[i] = heat_update_cell(cur[i - 1], cur[i], cur[i + 1], k);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// One locality's slice of the global domain, double-buffered.
#[derive(Debug, Clone)]
pub struct Partition1D {
    pub global_offset: u64,
    pub local_nx: usize,
    pub nlp: usize,
    buffers: [Vec<f64>; 2],
    current: usize,
    is_first: bool,
    is_last: bool,
}

/// Ghost futures for one step; `None` at a global domain end.
pub struct Ghosts {
    pub left: Option<Future<Result<f64, TransportError>>>,
    pub right: Option<Future<Result<f64, TransportError>>>,
}

impl Partition1D {
    /// Allocates the slice owned by `rank`, each worker first-touching the
    /// partitions it will update.
    pub fn new(
        decomp: &Decomposition,
        rank: usize,
        init: InitialCondition,
        exec: &Executor,
    ) -> Result<Self> {
        let offset = decomp.global_offset(rank);
        let nlp = decomp.partitions;
        let fill = |_, i: usize| init.value(offset + i as u64);
        let a = exec.first_touch_init(nlp, decomp.local_nx, 0..nlp, fill)?;
        let b = exec.first_touch_init(nlp, decomp.local_nx, 0..nlp, fill)?;
        Ok(Self {
            global_offset: offset,
            local_nx: decomp.local_nx,
            nlp,
            buffers: [a, b],
            current: 0,
            is_first: rank == 0,
            is_last: rank + 1 == decomp.localities,
        })
    }

    pub fn cells(&self) -> &[f64] {
        &self.buffers[self.current]
    }

    pub fn into_cells(mut self) -> Vec<f64> {
        std::mem::take(&mut self.buffers[self.current])
    }

    /// Advances one step, writing into the next buffer and flipping.
    pub fn step(&mut self, k: f64, ghosts: &Ghosts, exec: &Executor) -> Result<()> {
        let nx = self.local_nx;
        let last_part = self.nlp - 1;
        let (is_first, is_last) = (self.is_first, self.is_last);
        let [a, b] = &mut self.buffers;
        let (cur, next): (&[f64], &mut [f64]) = if self.current == 0 { (a, b) } else { (b, a) };
        let n = cur.len();
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let fail = |e: Error| {
            failure.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
        };
        let await_ghost = |g: &Option<Future<Result<f64, TransportError>>>| -> Option<f64> {
            match g.as_ref().map(|f| f.wait()) {
                Some(Ok(Ok(v))) => Some(v),
                Some(Ok(Err(e))) => {
                    fail(e.into());
                    None
                }
                Some(Err(e)) => {
                    fail(e.into());
                    None
                }
                None => None,
            }
        };

        exec.for_each_chunk_mut(next, nx, |part, out| {
            let base = part * nx;
            let lo = if part == 0 { 1 } else { 0 };
            let hi = if part == last_part { nx - 1 } else { nx };
            for j in lo..hi {
                let g = base + j;
                out[j] = heat_update_cell(cur[g - 1], cur[g], cur[g + 1], k);
            }
            if part == 0 {
                out[0] = if is_first {
                    cur[0]
                } else {
                    match await_ghost(&ghosts.left) {
                        Some(left) => heat_update_cell(left, cur[0], cur[1], k),
                        None => cur[0],
                    }
                };
            }
            if part == last_part {
                out[nx - 1] = if is_last {
                    cur[n - 1]
                } else {
                    match await_ghost(&ghosts.right) {
                        Some(right) => heat_update_cell(cur[n - 2], cur[n - 1], right, k),
                        None => cur[n - 1],
                    }
                };
            }
        })?;
        if let Some(e) = failure.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(e);
        }
        self.current ^= 1;
        Ok(())
    }
}

/// Sends the edge cells of step `step` and requests the matching ghosts.
fn exchange(loc: &Locality, cells: &[f64], step: u64) -> Result<Ghosts> {
    let (rank, count) = (loc.rank(), loc.count());
    if rank > 0 {
        loc.send(rank - 1, TAG_TO_LEFT, step, &cells[0])?;
    }
    if rank + 1 < count {
        loc.send(rank + 1, TAG_TO_RIGHT, step, &cells[cells.len() - 1])?;
    }
    Ok(Ghosts {
        left: (rank > 0).then(|| loc.recv(rank - 1, TAG_TO_RIGHT, step)),
        right: (rank + 1 < count).then(|| loc.recv(rank + 1, TAG_TO_LEFT, step)),
    })
}

/// Rank 0 gathers one message from everybody, then releases them.
pub fn barrier(loc: &Locality, epoch: u64) -> Result<()> {
    let (rank, count) = (loc.rank(), loc.count());
    if rank == 0 {
        let arrivals: Vec<_> = (1..count).map(|p| loc.recv::<f64>(p, TAG_BARRIER, epoch)).collect();
        for f in arrivals {
            f.wait()??;
        }
        for p in 1..count {
            loc.send(p, TAG_BARRIER, epoch, &0.0f64)?;
        }
    } else {
        let release = loc.recv::<f64>(0, TAG_BARRIER, epoch);
        loc.send(0, TAG_BARRIER, epoch, &0.0f64)?;
        release.wait()??;
    }
    Ok(())
}

/// Order-independent global checksum, valid on rank 0 only.
fn reduce_checksum(loc: &Locality, cells: &[f64], epoch: u64) -> Result<Option<f64>> {
    let mut local: ExactSum = cells.iter().copied().collect();
    if loc.rank() == 0 {
        for p in 1..loc.count() {
            let partials = loc.recv::<Vec<f64>>(p, TAG_CHECKSUM, epoch).wait()??;
            local.merge(&ExactSum::from_partials(partials));
        }
        Ok(Some(local.value()))
    } else {
        loc.send(0, TAG_CHECKSUM, epoch, &local.partials().to_vec())?;
        Ok(None)
    }
}

/// Solver settings shared by every locality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solve1d {
    pub decomposition: Decomposition,
    pub steps: usize,
    pub params: HeatParams,
    pub init: InitialCondition,
    pub repetitions: usize,
}

/// What one locality produced.
#[derive(Debug, Clone)]
pub struct LocalityOutcome {
    pub rank: usize,
    /// Final local cells of the last repetition.
    pub cells: Vec<f64>,
    /// Rank 0 only: wall seconds of every repetition.
    pub seconds: Vec<f64>,
    /// Rank 0 only.
    pub checksum: Option<f64>,
}

/// Runs every repetition of the solver on one locality.
pub fn run_locality(loc: &Locality, cfg: &Solve1d, exec: &Executor, clock: &dyn Clock) -> Result<LocalityOutcome> {
    if loc.count() != cfg.decomposition.localities {
        return Err(Error::config(format!(
            "locality count {} does not match decomposition {}",
            loc.count(),
            cfg.decomposition.localities
        )));
    }
    cfg.params.validate()?;
    let k = cfg.params.k();
    let mut seconds = Vec::new();
    let mut cells = Vec::new();
    let mut checksum = None;
    let stride = cfg.steps as u64 + 1;
    for rep in 0..cfg.repetitions.max(1) {
        let epoch = rep as u64 * stride;
        barrier(loc, 2 * rep as u64)?;
        let watch = (loc.rank() == 0).then(|| Stopwatch::start(clock));
        let mut part = Partition1D::new(&cfg.decomposition, loc.rank(), cfg.init, exec)?;
        for t in 0..cfg.steps as u64 {
            let ghosts = exchange(loc, part.cells(), epoch + t)?;
            part.step(k, &ghosts, exec)?;
        }
        barrier(loc, 2 * rep as u64 + 1)?;
        if let Some(watch) = watch {
            seconds.push(watch.elapsed());
        }
        checksum = reduce_checksum(loc, part.cells(), rep as u64)?;
        cells = part.into_cells();
    }
    Ok(LocalityOutcome {
        rank: loc.rank(),
        cells,
        seconds,
        checksum,
    })
}

/// Result of driving a whole cluster from one process.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub seconds: Vec<f64>,
    pub checksum: f64,
    /// Concatenated global field, when requested.
    pub field: Option<Vec<f64>>,
}

/// Runs one thread per locality and joins them.
pub fn drive_cluster(
    cluster: Vec<Locality>,
    cfg: &Solve1d,
    workers: usize,
    clock: Arc<dyn Clock>,
    keep_field: bool,
) -> Result<ClusterOutcome> {
    let handles: Vec<_> = cluster
        .into_iter()
        .map(|loc| {
            let cfg = *cfg;
            let clock = Arc::clone(&clock);
            thread::Builder::new()
                .name(format!("locality-{}", loc.rank()))
                .spawn(move || -> Result<LocalityOutcome> {
                    let exec = Executor::with_workers(workers)?;
                    run_locality(&loc, &cfg, &exec, clock.as_ref())
                })
                .map_err(|e| Error::config(format!("cannot spawn locality thread: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut outcomes = Vec::new();
    let mut first_err = None;
    for h in handles {
        match h.join() {
            Ok(Ok(o)) => outcomes.push(o),
            Ok(Err(e)) => {
                first_err.get_or_insert(e);
            }
            Err(_) => {
                first_err.get_or_insert(Error::config("locality thread panicked"));
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    outcomes.sort_by_key(|o| o.rank);
    let root = &outcomes[0];
    let seconds = root.seconds.clone();
    let checksum = root
        .checksum
        .ok_or_else(|| Error::config("rank 0 produced no checksum"))?;
    let field = keep_field.then(|| outcomes.into_iter().flat_map(|o| o.cells).collect());
    Ok(ClusterOutcome {
        seconds,
        checksum,
        field,
    })
}

/// User-facing configuration of a 1D run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Run1dConfig {
    /// Global points (strong) or points per locality (weak).
    pub points: u64,
    pub steps: usize,
    pub localities: usize,
    pub partitions: usize,
    pub workers: usize,
    pub k: f64,
    pub mode: ScalingMode,
    pub transport: TransportKind,
    pub repetitions: usize,
    pub init: InitialCondition,
}

impl Default for Run1dConfig {
    fn default() -> Self {
        Self {
            points: 1_000_000,
            steps: 100,
            localities: 1,
            partitions: 4,
            workers: 1,
            k: 0.25,
            mode: ScalingMode::Strong,
            transport: TransportKind::Inproc,
            repetitions: 3,
            init: InitialCondition::Sawtooth,
        }
    }
}

impl Run1dConfig {
    pub fn solve(&self) -> Result<Solve1d> {
        let total = self.mode.total_points(self.points, self.localities);
        Ok(Solve1d {
            decomposition: Decomposition::new(total, self.localities, self.partitions)?,
            steps: self.steps,
            params: HeatParams::from_k(self.k)?,
            init: self.init,
            repetitions: self.repetitions,
        })
    }

    /// Wraps rank 0's timings into a record (minimum time wins).
    pub fn record(&self, seconds: Vec<f64>, checksum: f64) -> Result<RunRecord> {
        let solve = self.solve()?;
        let cell_updates = solve.decomposition.total_points as f64 * self.steps as f64;
        let mut rec = RunRecord::from_runs(
            "stencil1d",
            serde_json::to_value(self)?,
            BestOf::MinTime,
            cell_updates,
            MetricUnit::Seconds,
            seconds,
        )?;
        rec = rec.with_placement(self.workers, self.localities).with_checksum(checksum);
        Ok(rec)
    }
}

/// Runs the whole cluster in this process over the configured transport.
pub fn run_1d_with(cfg: &Run1dConfig, clock: Arc<dyn Clock>, keep_field: bool) -> Result<(RunRecord, ClusterOutcome)> {
    let solve = cfg.solve()?;
    let cluster = match cfg.transport {
        TransportKind::Inproc => in_process_cluster(cfg.localities)?,
        TransportKind::Tcp => tcp_loopback_cluster(cfg.localities)?,
    };
    let outcome = drive_cluster(cluster, &solve, cfg.workers, clock, keep_field)?;
    let rec = cfg.record(outcome.seconds.clone(), outcome.checksum)?;
    Ok((rec, outcome))
}

pub fn run_1d(cfg: &Run1dConfig, clock: Arc<dyn Clock>) -> Result<RunRecord> {
    run_1d_with(cfg, clock, false).map(|(rec, _)| rec)
}

/// Formats a checksum to 15 significant digits.
pub fn format_checksum(v: f64) -> String {
    format!("{v:.14e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasking::{FakeClock, MonotonicClock};
    use proptest::prelude::*;

    fn field(init: InitialCondition, n: usize) -> Vec<f64> {
        (0..n as u64).map(|i| init.value(i)).collect()
    }

    fn distributed(n: u64, l: usize, nlp: usize, steps: usize, init: InitialCondition) -> Vec<f64> {
        let cfg = Solve1d {
            decomposition: Decomposition::new(n, l, nlp).unwrap(),
            steps,
            params: HeatParams::default(),
            init,
            repetitions: 1,
        };
        drive_cluster(
            in_process_cluster(l).unwrap(),
            &cfg,
            2,
            Arc::new(MonotonicClock::default()),
            true,
        )
        .unwrap()
        .field
        .unwrap()
    }

    #[test]
    fn cell_update_examples() {
        assert_eq!(heat_update_cell(0.0, 1.0, 0.0, 0.5), 0.0);
        assert_eq!(heat_update_cell(5.0, 5.0, 5.0, 0.3), 5.0);
        assert_eq!(heat_update_cell(1.0, 2.0, 4.0, 0.25), 2.25);
    }

    #[test]
    fn params_validation() {
        assert_eq!(HeatParams::default().k(), 0.25);
        assert!(HeatParams::new(1.0, 1.0, 1.0).is_err());
        assert!(HeatParams::new(-1.0, 0.1, 1.0).is_err());
        assert!(HeatParams::new(0.5, 0.1, 0.5).is_ok());
    }

    #[test]
    fn decomposition_rules() {
        let d = Decomposition::new(1_200_000_000, 8, 1).unwrap();
        assert_eq!(d.cells_per_locality(), 150_000_000);
        assert_eq!(ScalingMode::Weak.total_points(480_000_000, 3), 1_440_000_000);
        assert_eq!(ScalingMode::Strong.total_points(480_000_000, 3), 480_000_000);
        assert!(Decomposition::new(10, 3, 1).is_err());
        assert!(Decomposition::new(4, 2, 2).is_err());
        assert!(Decomposition::new(8, 0, 2).is_err());
    }

    #[test]
    fn serial_oracle_hand_steps() {
        // [0, 4, 0, 0] with k = 0.25: cell 1 -> 4 + 0.25*(0-8+0) = 2, cell 2 -> 0 + 0.25*4 = 1
        assert_eq!(solve_serial(&[0.0, 4.0, 0.0, 0.0], 0.25, 1), vec![0.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn single_locality_matches_serial() {
        let init = InitialCondition::Hashed(5);
        let got = distributed(10, 1, 1, 3, init);
        let want = solve_serial(&field(init, 10), 0.25, 3);
        assert!(crate::scalar::bit_identical(&got, &want));
    }

    #[test]
    fn uniform_field_is_fixed_point() {
        for l in [1, 2, 4] {
            let got = distributed(64, l, 2, 20, InitialCondition::Uniform(3.5));
            assert!(got.iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn four_localities_match_one() {
        let init = InitialCondition::Sawtooth;
        let one = distributed(1024, 1, 1, 100, init);
        let four = distributed(1024, 4, 1, 100, init);
        assert!(crate::scalar::bit_identical(&one, &four));
        let want = solve_serial(&field(init, 1024), 0.25, 100);
        assert!(crate::scalar::bit_identical(&one, &want));
    }

    #[test]
    fn ghost_step_mismatch_is_an_error() {
        let cluster = in_process_cluster(2).unwrap();
        let exec = Executor::with_workers(1).unwrap();
        let d = Decomposition::new(8, 2, 1).unwrap();
        let mut part = Partition1D::new(&d, 0, InitialCondition::Sawtooth, &exec).unwrap();
        cluster[1].send(0, TAG_TO_LEFT, 7, &1.0f64).unwrap();
        let ghosts = Ghosts {
            left: None,
            right: Some(cluster[0].recv(1, TAG_TO_LEFT, 0)),
        };
        let err = part.step(0.25, &ghosts, &exec).unwrap_err();
        assert!(matches!(
            err,
            Error::Transport(TransportError::StepMismatch { expected: 0, got: 7, .. })
        ));
    }

    #[test]
    fn interior_partitions_do_not_wait_for_ghosts() {
        // Ghosts are never sent: edge partitions block, interior ones finish.
        let cluster = in_process_cluster(3).unwrap();
        let d = Decomposition::new(3 * 4 * 3, 3, 3).unwrap();
        let exec = Arc::new(Executor::with_workers(3).unwrap());
        let mut part = Partition1D::new(&d, 1, InitialCondition::Sawtooth, &exec).unwrap();
        let cur = part.cells().to_vec();
        let left = cluster[1].recv(0, TAG_TO_RIGHT, 0);
        let right = cluster[1].recv(2, TAG_TO_LEFT, 0);
        let ghosts = Ghosts {
            left: Some(left),
            right: Some(right),
        };
        let sender = {
            let (l0, l2) = (cluster[0].clone(), cluster[2].clone());
            thread::spawn(move || {
                thread::sleep(std::time::Duration::from_millis(50));
                l0.send(1, TAG_TO_RIGHT, 0, &100.0f64).unwrap();
                l2.send(1, TAG_TO_LEFT, 0, &200.0f64).unwrap();
            })
        };
        part.step(0.25, &ghosts, &exec).unwrap();
        sender.join().unwrap();
        let next = part.cells();
        assert_eq!(next[0], heat_update_cell(100.0, cur[0], cur[1], 0.25));
        assert_eq!(next[11], heat_update_cell(cur[10], cur[11], 200.0, 0.25));
        assert_eq!(next[5], heat_update_cell(cur[4], cur[5], cur[6], 0.25));
    }

    #[test]
    fn desk_scale_inproc_checksum_matches_single() {
        let clock: Arc<dyn Clock> = Arc::new(MonotonicClock::default());
        let base = Run1dConfig {
            points: 1_000_000,
            steps: 100,
            localities: 1,
            partitions: 2,
            workers: 1,
            repetitions: 1,
            ..Run1dConfig::default()
        };
        let one = run_1d(&base, Arc::clone(&clock)).unwrap();
        let two = run_1d(&Run1dConfig { localities: 2, ..base }, clock).unwrap();
        assert_eq!(one.checksum.unwrap().to_bits(), two.checksum.unwrap().to_bits());
    }

    #[test]
    fn record_reports_fastest_repetition() {
        let cfg = Run1dConfig {
            points: 64,
            steps: 2,
            localities: 2,
            partitions: 2,
            repetitions: 3,
            ..Run1dConfig::default()
        };
        let clock: Arc<dyn Clock> = Arc::new(FakeClock::with_tick(0.5));
        let rec = run_1d(&cfg, clock).unwrap();
        assert_eq!(rec.all_seconds, vec![0.5, 0.5, 0.5]);
        assert_eq!(rec.metric, 0.5);
        assert_eq!(rec.best_of, BestOf::MinTime);
        assert_eq!(rec.localities, 2);
        let want = crate::scalar::checksum(&solve_serial(&field(InitialCondition::Sawtooth, 64), 0.25, 2));
        assert_eq!(rec.checksum, Some(want));
    }

    #[test]
    fn checksum_formatting() {
        assert_eq!(format_checksum(123.456), "1.23456000000000e2");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn maximum_principle(values in proptest::collection::vec(-50.0f64..50.0, 3..40), k in 0.01f64..=0.5, steps in 0usize..30) {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = solve_serial(&values, k, steps);
            prop_assert_eq!(out[0], values[0]);
            prop_assert_eq!(out[values.len() - 1], values[values.len() - 1]);
            for v in out {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn partition_invariance(seed in any::<u64>(), l in prop::sample::select(vec![1usize, 2, 4]), nlp in prop::sample::select(vec![1usize, 4])) {
            let init = InitialCondition::Hashed(seed);
            let got = distributed(256, l, nlp, 15, init);
            let want = solve_serial(&field(init, 256), 0.25, 15);
            prop_assert!(crate::scalar::bit_identical(&got, &want));
        }
    }
}
