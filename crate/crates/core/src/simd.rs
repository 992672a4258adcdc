//! Fixed-lane packs and the Virtual Node Scheme row layout.
//!
//! A row of `W` scalars is cut into `VL` contiguous chunks of `C = W / VL`
//! columns; lane `l` of the packed row owns chunk `l`. Column `c` therefore
//! lives in pack `1 + c % C`, lane `c / C`. Horizontal neighbours of pack `j`
//! are the whole packs `j - 1` and `j + 1`, so the stencil never needs an
//! unaligned load. The price is two halo packs per row (index `0` and
//! `C + 1`) that must be rebuilt after every update by rotating the edge
//! packs one lane and injecting the Dirichlet boundary values.
//!
//! The lane count is chosen at run time but fixed for the lifetime of a row;
//! compute kernels dispatch on it once and then work with [`Pack<S, N>`],
//! a plain array the compiler is free to vectorize.

use std::ops::{Add, Mul};

use thiserror::Error;

use crate::scalar::Real;

/// Largest supported lane count (a 4096-bit vector of binary64).
pub const MAX_LANES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimdError {
    #[error("lane count {0} is not a power of two in 1..={MAX_LANES}")]
    InvalidLanes(usize),
    #[error("row width {width} is not a multiple of {lanes} lanes")]
    WidthNotMultiple { width: usize, lanes: usize },
    #[error("row width {width} is narrower than two chunks of {lanes} lanes")]
    TooNarrow { width: usize, lanes: usize },
    #[error("pack index {index} outside interior 1..={chunks}")]
    PackIndex { index: usize, chunks: usize },
    #[error("rows disagree on layout")]
    LayoutMismatch,
    #[error("expected {expected} scalars, got {got}")]
    Length { expected: usize, got: usize },
}

pub fn validate_lanes(lanes: usize) -> Result<(), SimdError> {
    if lanes == 0 || lanes > MAX_LANES || !lanes.is_power_of_two() {
        return Err(SimdError::InvalidLanes(lanes));
    }
    Ok(())
}

/// Checks that a row of `width` scalars can be packed into `lanes` lanes.
pub fn validate_layout(width: usize, lanes: usize) -> Result<(), SimdError> {
    validate_lanes(lanes)?;
    if width < 2 * lanes {
        return Err(SimdError::TooNarrow { width, lanes });
    }
    if width % lanes != 0 {
        return Err(SimdError::WidthNotMultiple { width, lanes });
    }
    Ok(())
}

/// `(pack, lane)` holding scalar column `col` of a row with chunk length `chunk_len`.
#[inline]
pub fn locate(col: usize, chunk_len: usize) -> (usize, usize) {
    (1 + col % chunk_len, col / chunk_len)
}

/// `N` scalars processed in lockstep.
#[derive(Debug, Clone, Copy, PartialEq)]
#[repr(transparent)]
pub struct Pack<S, const N: usize>(pub [S; N]);

impl<S: Real, const N: usize> Pack<S, N> {
    pub fn splat(v: S) -> Self {
        Self([v; N])
    }

    #[inline(always)]
    pub fn load(src: &[S]) -> Self {
        let mut lanes = [S::ZERO; N];
        lanes.copy_from_slice(&src[..N]);
        Self(lanes)
    }

    #[inline(always)]
    pub fn store(self, dst: &mut [S]) {
        dst[..N].copy_from_slice(&self.0);
    }

    pub fn lanes(&self) -> &[S; N] {
        &self.0
    }

    /// Lane `l` takes lane `l - 1`; lane 0 takes lane `N - 1`.
    pub fn rotate_up(self) -> Self {
        let mut out = self.0;
        out.rotate_right(1);
        Self(out)
    }

    /// Lane `l` takes lane `l + 1`; lane `N - 1` takes lane 0.
    pub fn rotate_down(self) -> Self {
        let mut out = self.0;
        out.rotate_left(1);
        Self(out)
    }

    pub fn with_lane(mut self, lane: usize, v: S) -> Self {
        self.0[lane] = v;
        self
    }
}

impl<S: Real, const N: usize> Add for Pack<S, N> {
    type Output = Self;

    #[inline(always)]
    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o = *o + r;
        }
        Self(out)
    }
}

impl<S: Real, const N: usize> Mul<S> for Pack<S, N> {
    type Output = Self;

    #[inline(always)]
    fn mul(self, rhs: S) -> Self {
        let mut out = self.0;
        for o in out.iter_mut() {
            *o = *o * rhs;
        }
        Self(out)
    }
}

/// How halo packs are rebuilt. `Unrotated` is a deliberately wrong variant
/// used to check that the equivalence oracle catches a broken shuffle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HaloShuffle {
    #[default]
    Rotate,
    Unrotated,
}

/// One row in Virtual Node Scheme layout: `C + 2` packs of `VL` lanes,
/// stored lane-contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRow<S> {
    lanes: usize,
    chunk_len: usize,
    data: Vec<S>,
    left_boundary: S,
    right_boundary: S,
}

impl<S: Real> PackedRow<S> {
    /// Packs `scalars` and fills both halos.
    pub fn pack(scalars: &[S], lanes: usize, left_boundary: S, right_boundary: S) -> Result<Self, SimdError> {
        validate_layout(scalars.len(), lanes)?;
        let chunk_len = scalars.len() / lanes;
        let mut data = vec![S::ZERO; (chunk_len + 2) * lanes];
        for (col, &v) in scalars.iter().enumerate() {
            let (pack, lane) = locate(col, chunk_len);
            data[pack * lanes + lane] = v;
        }
        let mut row = Self {
            lanes,
            chunk_len,
            data,
            left_boundary,
            right_boundary,
        };
        row.shuffle_halo();
        Ok(row)
    }

    /// Inverse of [`PackedRow::pack`] on the interior packs.
    pub fn unpack(&self) -> Vec<S> {
        (0..self.width()).map(|c| self.get(c)).collect()
    }

    /// Writes the interior back into `out`, which must hold `width` scalars.
    pub fn unpack_into(&self, out: &mut [S]) {
        for (c, o) in out.iter_mut().enumerate().take(self.width()) {
            *o = self.get(c);
        }
    }

    pub fn width(&self) -> usize {
        self.chunk_len * self.lanes
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    /// Interior pack count `C`.
    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn left_boundary(&self) -> S {
        self.left_boundary
    }

    pub fn right_boundary(&self) -> S {
        self.right_boundary
    }

    pub fn get(&self, col: usize) -> S {
        let (pack, lane) = locate(col, self.chunk_len);
        self.data[pack * self.lanes + lane]
    }

    pub fn set(&mut self, col: usize, v: S) {
        let (pack, lane) = locate(col, self.chunk_len);
        self.data[pack * self.lanes + lane] = v;
    }

    /// Lanes of pack `j`, halos included (`0..=C + 1`).
    pub fn pack_lanes(&self, j: usize) -> &[S] {
        &self.data[j * self.lanes..(j + 1) * self.lanes]
    }

    pub fn pack_as<const N: usize>(&self, j: usize) -> Pack<S, N> {
        assert_eq!(N, self.lanes, "pack width does not match row lanes");
        Pack::load(self.pack_lanes(j))
    }

    /// Raw lane-contiguous storage, halos included.
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.lanes == other.lanes && self.chunk_len == other.chunk_len
    }

    /// Rebuilds both halo packs from the interior.
    pub fn shuffle_halo(&mut self) {
        self.shuffle_halo_with(HaloShuffle::Rotate);
    }

    pub fn shuffle_halo_with(&mut self, mode: HaloShuffle) {
        let (vl, c) = (self.lanes, self.chunk_len);
        let (left, rest) = self.data.split_at_mut(vl);
        let (interior, right) = rest.split_at_mut(c * vl);
        let first = &interior[..vl];
        let last = &interior[(c - 1) * vl..];
        match mode {
            HaloShuffle::Rotate => {
                // left lane l = column l*C - 1 = last pack, lane l - 1
                left[1..].copy_from_slice(&last[..vl - 1]);
                // right lane l = column (l+1)*C = first pack, lane l + 1
                right[..vl - 1].copy_from_slice(&first[1..]);
            }
            HaloShuffle::Unrotated => {
                left.copy_from_slice(last);
                right.copy_from_slice(first);
            }
        }
        left[0] = self.left_boundary;
        right[vl - 1] = self.right_boundary;
    }
}

/// The four neighbour packs of an interior pack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbors<S, const N: usize> {
    pub left: Pack<S, N>,
    pub right: Pack<S, N>,
    pub up: Pack<S, N>,
    pub down: Pack<S, N>,
}

/// Gathers the neighbours of pack `j` of `row`. `above` is the row with the
/// smaller row index.
pub fn packed_neighbors<S: Real, const N: usize>(
    above: &PackedRow<S>,
    row: &PackedRow<S>,
    below: &PackedRow<S>,
    j: usize,
) -> Result<Neighbors<S, N>, SimdError> {
    if N != row.lanes || !row.same_layout(above) || !row.same_layout(below) {
        return Err(SimdError::LayoutMismatch);
    }
    if j == 0 || j > row.chunk_len {
        return Err(SimdError::PackIndex {
            index: j,
            chunks: row.chunk_len,
        });
    }
    Ok(Neighbors {
        left: row.pack_as(j - 1),
        right: row.pack_as(j + 1),
        up: above.pack_as(j),
        down: below.pack_as(j),
    })
}

/// Double-buffered grid of packed rows.
///
/// Each row packs the full grid row, boundary columns included; row `r`'s
/// halo boundaries are its own first and last column.
#[derive(Debug, Clone)]
pub struct PackedGrid<S> {
    width: usize,
    height: usize,
    lanes: usize,
    buffers: [Vec<PackedRow<S>>; 2],
    current: usize,
}

impl<S: Real> PackedGrid<S> {
    /// Packs a row-major `width x height` field into both buffers.
    pub fn pack(values: &[S], width: usize, height: usize, lanes: usize) -> Result<Self, SimdError> {
        if values.len() != width * height {
            return Err(SimdError::Length {
                expected: width * height,
                got: values.len(),
            });
        }
        let rows = values
            .chunks(width)
            .map(|r| PackedRow::pack(r, lanes, r[0], r[width - 1]))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(rows, width, lanes)
    }

    /// Builds a grid from already packed rows; both buffers start equal.
    pub fn from_rows(rows: Vec<PackedRow<S>>, width: usize, lanes: usize) -> Result<Self, SimdError> {
        validate_layout(width, lanes)?;
        if rows.iter().any(|r| r.width() != width || r.lanes() != lanes) {
            return Err(SimdError::LayoutMismatch);
        }
        let height = rows.len();
        Ok(Self {
            width,
            height,
            lanes,
            buffers: [rows.clone(), rows],
            current: 0,
        })
    }

    /// Builds a grid from separately allocated current and next buffers,
    /// which must hold identical values.
    pub fn from_buffers(
        current: Vec<PackedRow<S>>,
        next: Vec<PackedRow<S>>,
        width: usize,
        lanes: usize,
    ) -> Result<Self, SimdError> {
        validate_layout(width, lanes)?;
        if current.len() != next.len()
            || current
                .iter()
                .chain(&next)
                .any(|r| r.width() != width || r.lanes() != lanes)
        {
            return Err(SimdError::LayoutMismatch);
        }
        Ok(Self {
            width,
            height: current.len(),
            lanes,
            buffers: [current, next],
            current: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn rows(&self) -> &[PackedRow<S>] {
        &self.buffers[self.current]
    }

    /// Current rows (read) and next rows (write).
    pub fn split_buffers(&mut self) -> (&[PackedRow<S>], &mut [PackedRow<S>]) {
        let [a, b] = &mut self.buffers;
        if self.current == 0 {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Flips current and next.
    pub fn swap(&mut self) {
        self.current ^= 1;
    }

    /// Row-major copy of the current buffer.
    pub fn unpack(&self) -> Vec<S> {
        let mut out = vec![S::ZERO; self.width * self.height];
        for (row, dst) in self.rows().iter().zip(out.chunks_mut(self.width)) {
            row.unpack_into(dst);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar column whose value lane `lane` of pack `j` must expose, or
    /// `None` for a boundary injection.
    fn expected_column(j: usize, lane: usize, chunk_len: usize, lanes: usize) -> Option<usize> {
        if j == 0 {
            (lane > 0).then(|| lane * chunk_len - 1)
        } else if j == chunk_len + 1 {
            (lane < lanes - 1).then(|| (lane + 1) * chunk_len)
        } else {
            Some(lane * chunk_len + (j - 1))
        }
    }

    /// Checks every lane of every pack against the unpacked row.
    fn halo_oracle(row: &PackedRow<f64>) {
        let scalars = row.unpack();
        let (c, vl) = (row.chunk_len(), row.lanes());
        for j in 0..=c + 1 {
            for lane in 0..vl {
                let got = row.pack_lanes(j)[lane];
                let want = match expected_column(j, lane, c, vl) {
                    Some(col) => scalars[col],
                    None if j == 0 => row.left_boundary(),
                    None => row.right_boundary(),
                };
                assert_eq!(got.to_bits(), want.to_bits(), "pack {j} lane {lane}");
            }
        }
    }

    #[test]
    fn eight_wide_two_lanes() {
        let a: Vec<f64> = (0..8).map(|i| i as f64 + 10.0).collect();
        let row = PackedRow::pack(&a, 2, -1.0, -2.0).unwrap();
        assert_eq!(row.chunk_len(), 4);
        assert_eq!(row.pack_lanes(1), &[a[0], a[4]]);
        assert_eq!(row.pack_lanes(2), &[a[1], a[5]]);
        assert_eq!(row.pack_lanes(3), &[a[2], a[6]]);
        assert_eq!(row.pack_lanes(4), &[a[3], a[7]]);
        assert_eq!(row.pack_lanes(0), &[-1.0, a[3]]);
        assert_eq!(row.pack_lanes(5), &[a[4], -2.0]);
        assert_eq!(row.unpack(), a);
    }

    #[test]
    fn single_lane_is_scalar_row() {
        let a = [1.0, 2.0, 3.0];
        let row = PackedRow::pack(&a, 1, 7.0, 9.0).unwrap();
        assert_eq!(row.as_slice(), &[7.0, 1.0, 2.0, 3.0, 9.0]);
        assert_eq!(row.unpack(), a);
    }

    #[test]
    fn layout_errors() {
        let a = [0.0f64; 8];
        assert_eq!(
            PackedRow::pack(&a[..6], 4, 0.0, 0.0),
            Err(SimdError::TooNarrow { width: 6, lanes: 4 })
        );
        assert_eq!(
            PackedRow::pack(&a[..4], 4, 0.0, 0.0),
            Err(SimdError::TooNarrow { width: 4, lanes: 4 })
        );
        assert_eq!(
            PackedRow::pack(&a[..7], 2, 0.0, 0.0),
            Err(SimdError::WidthNotMultiple { width: 7, lanes: 2 })
        );
        assert_eq!(PackedRow::pack(&a, 3, 0.0, 0.0), Err(SimdError::InvalidLanes(3)));
        assert_eq!(PackedRow::pack(&a, 0, 0.0, 0.0), Err(SimdError::InvalidLanes(0)));
    }

    #[test]
    fn layout_map_is_bijective() {
        for lanes in [1usize, 2, 4, 8] {
            for width in [16usize, 64] {
                let c = width / lanes;
                let mut seen = vec![false; (c + 2) * lanes];
                for col in 0..width {
                    let (p, l) = locate(col, c);
                    assert!((1..=c).contains(&p));
                    assert!(!std::mem::replace(&mut seen[p * lanes + l], true));
                }
                assert_eq!(seen.iter().filter(|s| **s).count(), width);
            }
        }
    }

    #[test]
    fn shuffle_after_interior_write() {
        let mut row = PackedRow::pack(&[0.0; 8], 2, -1.0, -2.0).unwrap();
        let fresh: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        for (c, &v) in fresh.iter().enumerate() {
            row.set(c, v);
        }
        row.shuffle_halo();
        assert_eq!(row.pack_lanes(0), &[-1.0, fresh[3]]);
        assert_eq!(row.pack_lanes(5), &[fresh[4], -2.0]);
        halo_oracle(&row);
    }

    #[test]
    fn single_lane_halo_ignores_interior() {
        let mut row = PackedRow::pack(&[5.0, 6.0], 1, 1.0, 2.0).unwrap();
        row.set(0, 50.0);
        row.shuffle_halo();
        assert_eq!(row.pack_lanes(0), &[1.0]);
        assert_eq!(row.pack_lanes(3), &[2.0]);
    }

    #[test]
    fn unrotated_shuffle_breaks_oracle_for_wide_packs() {
        let a: Vec<f64> = (0..8).map(f64::from).collect();
        let mut row = PackedRow::pack(&a, 2, -1.0, -2.0).unwrap();
        row.shuffle_halo_with(HaloShuffle::Unrotated);
        assert_ne!(row.pack_lanes(0), &[-1.0, a[3]]);
    }

    #[test]
    fn neighbors_at_edges() {
        let mk = |off: f64| {
            let a: Vec<f64> = (0..8).map(|i| i as f64 + off).collect();
            PackedRow::pack(&a, 2, -1.0, -2.0).unwrap()
        };
        let (above, row, below) = (mk(100.0), mk(0.0), mk(200.0));
        let n = packed_neighbors::<f64, 2>(&above, &row, &below, 1).unwrap();
        assert_eq!(n.left, row.pack_as::<2>(0));
        assert_eq!(n.up.0, [100.0, 104.0]);
        assert_eq!(n.down.0, [200.0, 204.0]);
        let n = packed_neighbors::<f64, 2>(&above, &row, &below, 4).unwrap();
        assert_eq!(n.right, row.pack_as::<2>(5));
        assert_eq!(
            packed_neighbors::<f64, 2>(&above, &row, &below, 0),
            Err(SimdError::PackIndex { index: 0, chunks: 4 })
        );
        assert_eq!(
            packed_neighbors::<f64, 2>(&above, &row, &below, 5),
            Err(SimdError::PackIndex { index: 5, chunks: 4 })
        );
        assert_eq!(
            packed_neighbors::<f64, 4>(&above, &row, &below, 1),
            Err(SimdError::LayoutMismatch)
        );
    }

    fn neighbor_oracle<const N: usize>(rng: &mut ChaCha8Rng, width: usize) {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let packed: Vec<PackedRow<f64>> = rows
            .iter()
            .map(|r| PackedRow::pack(r, N, 11.0, 22.0).unwrap())
            .collect();
        let c = width / N;
        for j in 1..=c {
            let n = packed_neighbors::<f64, N>(&packed[0], &packed[1], &packed[2], j).unwrap();
            for lane in 0..N {
                let col = lane * c + j - 1;
                let left = if col == 0 { 11.0 } else { rows[1][col - 1] };
                let right = if col == width - 1 { 22.0 } else { rows[1][col + 1] };
                assert_eq!(n.left.0[lane], left);
                assert_eq!(n.right.0[lane], right);
                assert_eq!(n.up.0[lane], rows[0][col]);
                assert_eq!(n.down.0[lane], rows[2][col]);
            }
        }
    }

    #[test]
    fn neighbors_match_scalar_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for width in [8, 16, 64] {
            neighbor_oracle::<1>(&mut rng, width);
            neighbor_oracle::<2>(&mut rng, width);
            neighbor_oracle::<4>(&mut rng, width);
        }
        neighbor_oracle::<8>(&mut rng, 16);
        neighbor_oracle::<8>(&mut rng, 64);
    }

    #[test]
    fn round_trip_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let width = [8usize, 16, 64][rng.gen_range(0..3)];
            let lanes = [1usize, 2, 4, 8][rng.gen_range(0..4)];
            if width < 2 * lanes {
                continue;
            }
            let r: Vec<f64> = (0..width).map(|_| rng.gen()).collect();
            let row = PackedRow::pack(&r, lanes, rng.gen(), rng.gen()).unwrap();
            assert_eq!(row.unpack(), r);
            halo_oracle(&row);
        }
    }

    #[test]
    fn pack_arithmetic_is_lanewise() {
        let a = Pack::<f32, 4>([1.0, 2.0, 3.0, 4.0]);
        let b = Pack::<f32, 4>::splat(0.5);
        assert_eq!((a + b).0, [1.5, 2.5, 3.5, 4.5]);
        assert_eq!((a * 0.25).0, [0.25, 0.5, 0.75, 1.0]);
        assert_eq!(a.rotate_up().0, [4.0, 1.0, 2.0, 3.0]);
        assert_eq!(a.rotate_down().0, [2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn grid_round_trip() {
        let values: Vec<f32> = (0..6 * 8).map(|i| i as f32).collect();
        let grid = PackedGrid::pack(&values, 8, 6, 4).unwrap();
        assert_eq!(grid.unpack(), values);
        assert!(PackedGrid::pack(&values[1..], 8, 6, 4).is_err());
    }

    proptest! {
        #[test]
        fn shuffle_is_idempotent(
            values in proptest::collection::vec(-1e3f64..1e3, 64),
            lanes_exp in 0u32..4,
            lb in -10.0f64..10.0,
            rb in -10.0f64..10.0,
        ) {
            let lanes = 1usize << lanes_exp;
            let mut row = PackedRow::pack(&values, lanes, lb, rb).unwrap();
            row.as_mut_slice()[0] = f64::NAN;
            row.shuffle_halo();
            let once = row.clone();
            row.shuffle_halo();
            prop_assert_eq!(&once, &row);
            halo_oracle(&row);
        }

        #[test]
        fn pack_unpack_identity(
            values in proptest::collection::vec(proptest::num::f64::ANY, 16),
            lanes_exp in 0u32..4,
        ) {
            let lanes = 1usize << lanes_exp;
            let row = PackedRow::pack(&values, lanes, 0.0, 0.0).unwrap();
            let back = row.unpack();
            prop_assert!(crate::scalar::bit_identical(&back, &values));
        }
    }
}
