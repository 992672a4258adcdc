//! Execution substrate shared by every benchmark.
//!
//! An [`Executor`] owns a fixed pool of workers. Index ranges are split into
//! one contiguous block per worker (the `schedule(static)` idea) so that the
//! worker that first-touches a block is also the worker that later computes
//! on it. One-shot [`Future`]s carry ghost values between localities, and a
//! [`Clock`] abstraction lets throughput formulas be tested with a fake time
//! source.

use std::any::Any;
use std::mem::MaybeUninit;
use std::num::NonZeroUsize;
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("worker count must be at least 1")]
    ZeroWorkers,
    #[error("invalid index range {lo}..{hi}")]
    InvalidRange { lo: usize, hi: usize },
    #[error("slice of length {len} is not a whole number of chunks of {chunk_len}")]
    RaggedChunks { len: usize, chunk_len: usize },
    #[error("worker {worker} panicked: {message}")]
    WorkerPanicked { worker: usize, message: String },
    #[error("allocation of {elements} elements failed; try a smaller problem size")]
    Allocation { elements: usize },
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

/// How index ranges are distributed over workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockPolicy {
    /// `worker_count` contiguous blocks, block `b` runs on worker `b`.
    #[default]
    StaticBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutorConfig {
    worker_count: NonZeroUsize,
    pub block_policy: BlockPolicy,
}

impl ExecutorConfig {
    pub fn new(worker_count: usize) -> Result<Self, TaskError> {
        let worker_count = NonZeroUsize::new(worker_count).ok_or(TaskError::ZeroWorkers)?;
        Ok(Self {
            worker_count,
            block_policy: BlockPolicy::StaticBlock,
        })
    }

    pub fn worker_count(&self) -> usize {
        self.worker_count.get()
    }
}

/// Splits `range` into `workers` contiguous blocks.
///
/// The first `len % workers` blocks get `ceil(len / workers)` indices, the
/// remaining ones `floor(len / workers)`. Blocks may be empty when the range
/// is shorter than the worker count.
pub fn block_split(range: Range<usize>, workers: usize) -> Vec<Range<usize>> {
    assert!(workers >= 1, "block_split needs at least one worker");
    (0..workers).map(|b| block_of(range.clone(), workers, b)).collect()
}

/// Block owned by `worker` under [`block_split`].
pub fn block_of(range: Range<usize>, workers: usize, worker: usize) -> Range<usize> {
    let len = range.end.saturating_sub(range.start);
    let base = len / workers;
    let extra = len % workers;
    let start = range.start + worker * base + worker.min(extra);
    let size = base + usize::from(worker < extra);
    start..start + size
}

/// Fixed pool of workers with static block scheduling.
///
/// `parallel_for_each` and friends are meant to be driven from one
/// coordinating thread at a time.
pub struct Executor {
    cfg: ExecutorConfig,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("cfg", &self.cfg).finish()
    }
}

impl Executor {
    pub fn new(cfg: ExecutorConfig) -> Result<Self, TaskError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.worker_count())
            .thread_name(|i| format!("stencil-worker-{i}"))
            .build()
            .map_err(|e| TaskError::Pool(e.to_string()))?;
        Ok(Self { cfg, pool })
    }

    pub fn with_workers(worker_count: usize) -> Result<Self, TaskError> {
        Self::new(ExecutorConfig::new(worker_count)?)
    }

    pub fn config(&self) -> ExecutorConfig {
        self.cfg
    }

    pub fn workers(&self) -> usize {
        self.cfg.worker_count()
    }

    /// Runs `body(worker)` once on every worker and waits for all of them.
    ///
    /// A panicking worker does not stop the others; the first panic is
    /// reported once every worker has returned.
    fn broadcast<F>(&self, body: F) -> Result<(), TaskError>
    where
        F: Fn(usize) + Sync,
    {
        let outcomes = self.pool.broadcast(|ctx| {
            let worker = ctx.index();
            catch_unwind(AssertUnwindSafe(|| body(worker)))
                .map_err(|payload| (worker, panic_message(payload)))
        });
        match outcomes.into_iter().find_map(Result::err) {
            Some((worker, message)) => Err(TaskError::WorkerPanicked { worker, message }),
            None => Ok(()),
        }
    }

    /// Invokes `body` once per index of `range`, worker `b` taking block `b`.
    pub fn parallel_for_each<F>(&self, range: Range<usize>, body: F) -> Result<(), TaskError>
    where
        F: Fn(usize) + Sync,
    {
        if range.start > range.end {
            return Err(TaskError::InvalidRange {
                lo: range.start,
                hi: range.end,
            });
        }
        if range.is_empty() {
            return Ok(());
        }
        let workers = self.workers();
        self.broadcast(|worker| {
            for i in block_of(range.clone(), workers, worker) {
                body(i);
            }
        })
    }

    /// Like [`Executor::parallel_for_each`] but hands each chunk of `data`
    /// to `body` as an exclusive slice. Chunk `i` covers
    /// `data[i * chunk_len..(i + 1) * chunk_len]`.
    pub fn for_each_chunk_mut<T, F>(
        &self,
        data: &mut [T],
        chunk_len: usize,
        body: F,
    ) -> Result<(), TaskError>
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync,
    {
        if chunk_len == 0 || data.len() % chunk_len != 0 {
            return Err(TaskError::RaggedChunks {
                len: data.len(),
                chunk_len,
            });
        }
        let chunks = data.len() / chunk_len;
        if chunks == 0 {
            return Ok(());
        }
        let workers = self.workers();
        let mut rest = data;
        let mut owned = Vec::with_capacity(workers);
        for block in block_split(0..chunks, workers) {
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(block.len() * chunk_len);
            owned.push(Mutex::new(Some((block.start, head))));
            rest = tail;
        }
        self.broadcast(|worker| {
            let taken = owned[worker].lock().unwrap_or_else(|e| e.into_inner()).take();
            if let Some((first, slice)) = taken {
                for (k, chunk) in slice.chunks_mut(chunk_len).enumerate() {
                    body(first + k, chunk);
                }
            }
        })
    }

    /// Splits `data` into one static block per worker and hands worker `b`
    /// its block together with the block's index range.
    pub fn for_each_block_mut<T, F>(&self, data: &mut [T], body: F) -> Result<(), TaskError>
    where
        T: Send,
        F: Fn(Range<usize>, &mut [T]) + Sync,
    {
        let mut rest = data;
        let mut owned = Vec::with_capacity(self.workers());
        for block in block_split(0..rest.len(), self.workers()) {
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(block.len());
            owned.push(Mutex::new(Some((block, head))));
            rest = tail;
        }
        self.broadcast(|worker| {
            let taken = owned[worker].lock().unwrap_or_else(|e| e.into_inner()).take();
            if let Some((range, slice)) = taken {
                body(range, slice);
            }
        })
    }

    /// Allocates `chunks * chunk_len` elements and lets each worker write the
    /// chunks it will later compute on.
    ///
    /// `compute` is the chunk range that will be passed to the compute loop;
    /// chunks before it are written by worker 0 and chunks after it by the
    /// last worker. `init(worker, index)` produces the element at `index`.
    /// If a worker panics, already written elements are leaked.
    pub fn first_touch_init<T, F>(
        &self,
        chunks: usize,
        chunk_len: usize,
        compute: Range<usize>,
        init: F,
    ) -> Result<Vec<T>, TaskError>
    where
        T: Send,
        F: Fn(usize, usize) -> T + Sync,
    {
        if compute.start > compute.end || compute.end > chunks {
            return Err(TaskError::InvalidRange {
                lo: compute.start,
                hi: compute.end,
            });
        }
        let len = chunks * chunk_len;
        let mut buffer: Vec<T> = Vec::new();
        buffer
            .try_reserve_exact(len)
            .map_err(|_| TaskError::Allocation { elements: len })?;
        let workers = self.workers();
        let blocks = touch_blocks(chunks, compute, workers);
        {
            let mut rest = &mut buffer.spare_capacity_mut()[..len];
            // (first element index, uninitialized block) claimed by one worker
            type Slot<'a, T> = Mutex<Option<(usize, &'a mut [MaybeUninit<T>])>>;
            let mut owned: Vec<Slot<T>> = Vec::with_capacity(workers);
            for block in &blocks {
                let (head, tail) = std::mem::take(&mut rest).split_at_mut(block.len() * chunk_len);
                owned.push(Mutex::new(Some((block.start * chunk_len, head))));
                rest = tail;
            }
            self.broadcast(|worker| {
                let taken = owned[worker].lock().unwrap_or_else(|e| e.into_inner()).take();
                if let Some((first, slice)) = taken {
                    for (k, slot) in slice.iter_mut().enumerate() {
                        slot.write(init(worker, first + k));
                    }
                }
            })?;
        }
        // SAFETY: the blocks tile 0..chunks and every worker returned without
        // panicking, so all `len` slots were written.
        unsafe { buffer.set_len(len) };
        Ok(buffer)
    }
}

/// Chunk blocks used by [`Executor::first_touch_init`]: the compute split,
/// with the leading and trailing chunks folded into the first and last
/// worker.
pub fn touch_blocks(chunks: usize, compute: Range<usize>, workers: usize) -> Vec<Range<usize>> {
    let mut blocks = block_split(compute, workers);
    blocks[0].start = 0;
    blocks[workers - 1].end = chunks;
    blocks
}

fn panic_message(payload: Box<dyn Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FutureError {
    #[error("promise dropped before a value was set")]
    Broken,
}

enum State<T> {
    Pending,
    Ready(T),
    Broken,
}

struct Shared<T> {
    state: Mutex<State<T>>,
    ready: Condvar,
}

/// Write side of a one-shot [`Future`].
pub struct Promise<T> {
    shared: Arc<Shared<T>>,
}

/// One-shot value that becomes ready at most once.
///
/// Clones share the same slot, so several tasks may await the same ghost.
pub struct Future<T> {
    shared: Arc<Shared<T>>,
}

impl<T> Clone for Future<T> {
    fn clone(&self) -> Self {
        Self {
            shared: Arc::clone(&self.shared),
        }
    }
}

impl<T> std::fmt::Debug for Future<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Future")
            .field("ready", &self.is_ready())
            .finish()
    }
}

/// Creates a connected promise/future pair.
pub fn promise<T>() -> (Promise<T>, Future<T>) {
    let shared = Arc::new(Shared {
        state: Mutex::new(State::Pending),
        ready: Condvar::new(),
    });
    (
        Promise {
            shared: Arc::clone(&shared),
        },
        Future { shared },
    )
}

impl<T> Promise<T> {
    pub fn set(self, value: T) {
        self.complete(State::Ready(value));
    }

    fn complete(&self, next: State<T>) {
        let mut state = self.shared.state.lock().unwrap_or_else(|e| e.into_inner());
        if matches!(*state, State::Pending) {
            *state = next;
            self.shared.ready.notify_all();
        }
    }
}

impl<T> Drop for Promise<T> {
    fn drop(&mut self) {
        self.complete(State::Broken);
    }
}

impl<T> Future<T> {
    /// A future that is already ready.
    pub fn ready(value: T) -> Self {
        Self {
            shared: Arc::new(Shared {
                state: Mutex::new(State::Ready(value)),
                ready: Condvar::new(),
            }),
        }
    }

    pub fn is_ready(&self) -> bool {
        !matches!(
            *self.shared.state.lock().unwrap_or_else(|e| e.into_inner()),
            State::Pending
        )
    }
}

impl<T: Clone> Future<T> {
    /// Blocks until the value is available.
    pub fn wait(&self) -> Result<T, FutureError> {
        let mut state = self.shared.state.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            match &*state {
                State::Ready(v) => return Ok(v.clone()),
                State::Broken => return Err(FutureError::Broken),
                State::Pending => {
                    state = self
                        .shared
                        .ready
                        .wait(state)
                        .unwrap_or_else(|e| e.into_inner());
                }
            }
        }
    }

    /// Returns the value if the future is ready, without blocking.
    pub fn try_get(&self) -> Option<Result<T, FutureError>> {
        match &*self.shared.state.lock().unwrap_or_else(|e| e.into_inner()) {
            State::Pending => None,
            State::Ready(v) => Some(Ok(v.clone())),
            State::Broken => Some(Err(FutureError::Broken)),
        }
    }
}

/// Monotonic time source in fractional seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

/// Wall clock backed by [`Instant`].
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Deterministic clock for tests: every call to `now` returns the current
/// reading and then advances it by `tick`.
#[derive(Debug)]
pub struct FakeClock {
    reading: Mutex<f64>,
    tick: f64,
}

impl FakeClock {
    pub fn with_tick(tick: f64) -> Self {
        Self {
            reading: Mutex::new(0.0),
            tick,
        }
    }

    pub fn advance(&self, seconds: f64) {
        *self.reading.lock().unwrap_or_else(|e| e.into_inner()) += seconds;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> f64 {
        let mut reading = self.reading.lock().unwrap_or_else(|e| e.into_inner());
        let t = *reading;
        *reading += self.tick;
        t
    }
}

/// Process-wide monotonic seconds.
pub fn timer() -> f64 {
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    ORIGIN.get_or_init(Instant::now).elapsed().as_secs_f64()
}

/// Measures an interval against a [`Clock`].
pub struct Stopwatch<'c> {
    clock: &'c dyn Clock,
    start: f64,
}

impl<'c> Stopwatch<'c> {
    pub fn start(clock: &'c dyn Clock) -> Self {
        Self {
            clock,
            start: clock.now(),
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.clock.now() - self.start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn assignment(range: Range<usize>, workers: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; range.len()];
        for (b, block) in block_split(range.clone(), workers).into_iter().enumerate() {
            for i in block {
                assert_eq!(owner[i - range.start], usize::MAX, "index {i} assigned twice");
                owner[i - range.start] = b;
            }
        }
        owner
    }

    #[test]
    fn eight_over_two_workers() {
        assert_eq!(block_split(0..8, 2), vec![0..4, 4..8]);
    }

    #[test]
    fn seven_over_three_workers() {
        // Enumerated by hand: 7 = 3 + 2 + 2, larger blocks first.
        let sizes: Vec<usize> = block_split(0..7, 3).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert_eq!(block_split(0..7, 3), vec![0..3, 3..5, 5..7]);
    }

    #[test]
    fn more_workers_than_indices() {
        assert_eq!(block_split(2..4, 4), vec![2..3, 3..4, 4..4, 4..4]);
    }

    #[test]
    fn zero_workers_rejected() {
        assert_eq!(ExecutorConfig::new(0), Err(TaskError::ZeroWorkers));
    }

    #[test]
    fn empty_range_runs_nothing() {
        let exec = Executor::with_workers(3).unwrap();
        let calls = AtomicUsize::new(0);
        exec.parallel_for_each(0..0, |_| {
            calls.fetch_add(1, Ordering::Relaxed);
        })
        .unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn inverted_range_rejected() {
        let exec = Executor::with_workers(1).unwrap();
        #[allow(clippy::reversed_empty_ranges)]
        let err = exec.parallel_for_each(5..2, |_| {}).unwrap_err();
        assert_eq!(err, TaskError::InvalidRange { lo: 5, hi: 2 });
    }

    #[test]
    fn every_index_visited_once() {
        let exec = Executor::with_workers(3).unwrap();
        let hits: Vec<AtomicUsize> = (0..100).map(|_| AtomicUsize::new(0)).collect();
        exec.parallel_for_each(0..100, |i| {
            hits[i].fetch_add(1, Ordering::Relaxed);
        })
        .unwrap();
        assert!(hits.iter().all(|h| h.load(Ordering::Relaxed) == 1));
    }

    #[test]
    fn worker_sees_its_own_block() {
        let exec = Executor::with_workers(2).unwrap();
        let owner: Vec<AtomicUsize> = (0..8).map(|_| AtomicUsize::new(usize::MAX)).collect();
        exec.parallel_for_each(0..8, |i| {
            owner[i].store(rayon::current_thread_index().unwrap(), Ordering::Relaxed);
        })
        .unwrap();
        let got: Vec<usize> = owner.iter().map(|o| o.load(Ordering::Relaxed)).collect();
        assert_eq!(got, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn panic_reported_after_all_workers_finish() {
        let exec = Executor::with_workers(4).unwrap();
        let done = AtomicUsize::new(0);
        let err = exec
            .parallel_for_each(0..40, |i| {
                if i == 5 {
                    panic!("boom at {i}");
                }
                done.fetch_add(1, Ordering::Relaxed);
            })
            .unwrap_err();
        match err {
            TaskError::WorkerPanicked { worker, message } => {
                assert_eq!(worker, 0);
                assert!(message.contains("boom at 5"));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Worker 0 stops at index 5; the other three blocks run to completion.
        assert_eq!(done.load(Ordering::Relaxed), 5 + 30);
    }

    #[test]
    fn chunks_are_exclusive_and_complete() {
        let exec = Executor::with_workers(3).unwrap();
        let mut data = vec![0usize; 7 * 4];
        exec.for_each_chunk_mut(&mut data, 4, |c, chunk| {
            for x in chunk.iter_mut() {
                *x = c + 1;
            }
        })
        .unwrap();
        let expect: Vec<usize> = (0..28).map(|i| i / 4 + 1).collect();
        assert_eq!(data, expect);
        assert!(matches!(
            exec.for_each_chunk_mut(&mut data, 5, |_, _| {}),
            Err(TaskError::RaggedChunks { .. })
        ));
    }

    #[test]
    fn first_touch_zero_fill() {
        let exec = Executor::with_workers(2).unwrap();
        let buf: Vec<f64> = exec.first_touch_init(8, 1, 0..8, |_, _| 0.0).unwrap();
        assert_eq!(buf, vec![0.0; 8]);
        let writers: Vec<usize> = exec.first_touch_init(8, 1, 0..8, |w, _| w).unwrap();
        assert_eq!(writers, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn first_touch_single_worker_is_serial() {
        let exec = Executor::with_workers(1).unwrap();
        let buf: Vec<usize> = exec.first_touch_init(5, 3, 1..4, |w, i| w * 1000 + i).unwrap();
        assert_eq!(buf, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn first_touch_matches_compute_split() {
        for n in 0..20 {
            for w in 1..6 {
                let exec = Executor::with_workers(w).unwrap();
                let writers: Vec<usize> = exec.first_touch_init(n, 1, 0..n, |w, _| w).unwrap();
                assert_eq!(writers, assignment(0..n, w), "n={n} w={w}");
                let computers: Vec<AtomicUsize> =
                    (0..n).map(|_| AtomicUsize::new(usize::MAX)).collect();
                exec.parallel_for_each(0..n, |i| {
                    computers[i]
                        .store(rayon::current_thread_index().unwrap(), Ordering::Relaxed);
                })
                .unwrap();
                let computers: Vec<usize> =
                    computers.iter().map(|c| c.load(Ordering::Relaxed)).collect();
                assert_eq!(writers, computers, "n={n} w={w}");
            }
        }
    }

    #[test]
    fn first_touch_folds_boundary_chunks() {
        // rows 0 and 5 sit outside the compute range 1..5
        let exec = Executor::with_workers(2).unwrap();
        let writers: Vec<usize> = exec.first_touch_init(6, 2, 1..5, |w, _| w).unwrap();
        assert_eq!(writers, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn future_ready_and_pending() {
        let ready = Future::ready(7);
        assert!(ready.is_ready());
        assert_eq!(ready.wait(), Ok(7));

        let (p, f) = promise::<u32>();
        assert!(!f.is_ready());
        assert_eq!(f.try_get(), None);
        let waiter = {
            let f = f.clone();
            std::thread::spawn(move || f.wait())
        };
        p.set(42);
        assert_eq!(waiter.join().unwrap(), Ok(42));
        assert_eq!(f.wait(), Ok(42));
    }

    #[test]
    fn dropped_promise_breaks_future() {
        let (p, f) = promise::<u32>();
        drop(p);
        assert_eq!(f.wait(), Err(FutureError::Broken));
    }

    #[test]
    fn timer_is_monotonic() {
        let t1 = timer();
        let t2 = timer();
        assert!(t2 >= t1);
    }

    #[test]
    fn fake_clock_elapsed() {
        let clock = FakeClock::with_tick(0.5);
        let sw = Stopwatch::start(&clock);
        assert_eq!(sw.elapsed(), 0.5);
    }

    #[test]
    fn busy_loop_is_measured() {
        let clock = MonotonicClock::default();
        let sw = Stopwatch::start(&clock);
        let start = Instant::now();
        while start.elapsed().as_millis() < 10 {
            std::hint::spin_loop();
        }
        let e = sw.elapsed();
        assert!((0.005..=1.0).contains(&e), "elapsed {e}");
    }
}
