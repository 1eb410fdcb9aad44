//! Balanced incomplete block designs as dense zero-one incidence matrices.
//!
//! Rows index blocks and columns index points: `A[i][j] == 1` iff point `j`
//! lies in block `i`. All design arithmetic is exact integer arithmetic.

use std::collections::HashMap;
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of blocks a constructor may materialise.
pub const DEFAULT_ROW_LIMIT: usize = 1_000_000;
/// Default cap on `b * v`, the number of stored incidence cells.
pub const DEFAULT_CELL_LIMIT: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DesignError {
    #[error("incidence matrix has no rows or no columns")]
    Empty,
    #[error("row {row} has {len} entries, expected {expected}")]
    RaggedRows { row: usize, len: usize, expected: usize },
    #[error("entry ({row}, {col}) is {value}, expected 0 or 1")]
    NonBinaryEntry { row: usize, col: usize, value: i64 },
    #[error("rows {first} and {second} are identical")]
    DuplicateRows { first: usize, second: usize },
    #[error("a design needs at least 2 points, got v = {v}")]
    TooFewPoints { v: usize },
    #[error("blocks are empty (k = 0)")]
    EmptyBlocks,
    #[error("row {row} has {found} points, row 0 has {expected}")]
    NonConstantRowSum { row: usize, expected: usize, found: usize },
    #[error("point {col} lies in {found} blocks, point 0 lies in {expected}")]
    NonConstantColumnSum { col: usize, expected: usize, found: usize },
    #[error("points {first} and {second} share {count} blocks, expected lambda = {expected}")]
    UnbalancedPairs { first: usize, second: usize, count: usize, expected: usize },
    #[error("counting identities fail for {0}")]
    CountingIdentity(DesignParams),
    #[error("Fisher's inequality fails: b = {b} < v = {v} with lambda = {lambda}")]
    FisherViolation { b: usize, v: usize, lambda: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{p} is not prime")]
    NotPrime { p: u64 },
    #[error("{p} is a prime power; projective designs are only built over prime fields")]
    PrimePower { p: u64 },
    #[error(
        "construction needs {rows} blocks x {cols} points, over the limit of {limit_rows} blocks / {limit_cells} cells"
    )]
    TooLarge { rows: u128, cols: u128, limit_rows: usize, limit_cells: usize },
    #[error("block {block} contains point {point}, outside 0..{v}")]
    PointOutOfRange { block: usize, point: usize, v: usize },
    #[error("block {block} lists point {point} twice")]
    DuplicatePoint { block: usize, point: usize },
    #[error("blocks {first} and {second} are identical")]
    DuplicateBlocks { first: usize, second: usize },
}

/// The `(v, b, r, k, lambda)` parameters of a block design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesignParams {
    pub v: usize,
    pub b: usize,
    pub r: usize,
    pub k: usize,
    pub lambda: usize,
}

impl DesignParams {
    /// `b k = v r` and `r (k - 1) = lambda (v - 1)`.
    pub fn identities_hold(&self) -> bool {
        self.b * self.k == self.v * self.r && self.r * self.k.saturating_sub(1) == self.lambda * (self.v - 1)
    }

    /// Symmetric design (`b = v`, hence `r = k`).
    pub fn is_symmetric(&self) -> bool {
        self.b == self.v
    }

    /// Bits a user sends to name one block: `ceil(log2 b)`.
    pub fn comm_bits(&self) -> u32 {
        ceil_log2(self.b)
    }
}

impl fmt::Display for DesignParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.v, self.b, self.r, self.k, self.lambda)
    }
}

pub(crate) fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Resource guard for the constructors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_rows: usize,
    pub max_cells: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_rows: DEFAULT_ROW_LIMIT, max_cells: DEFAULT_CELL_LIMIT }
    }
}

impl Limits {
    pub fn with_max_rows(max_rows: usize) -> Self {
        Limits { max_rows, ..Limits::default() }
    }

    fn check(&self, rows: u128, cols: u128) -> Result<(), DesignError> {
        if rows > self.max_rows as u128 || rows.saturating_mul(cols) > self.max_cells as u128 {
            return Err(DesignError::TooLarge { rows, cols, limit_rows: self.max_rows, limit_cells: self.max_cells });
        }
        Ok(())
    }
}

/// A `b x v` zero-one matrix with pairwise distinct rows.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct IncidenceMatrix {
    b: usize,
    v: usize,
    cells: Vec<u8>,
}

impl fmt::Debug for IncidenceMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncidenceMatrix")
            .field("b", &self.b)
            .field("v", &self.v)
            .field(
                "rows",
                &self.rows().map(|r| r.iter().map(|&c| char::from(b'0' + c)).collect::<String>()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl IncidenceMatrix {
    /// Builds the matrix from explicit rows, checking shape, entries, and
    /// row distinctness.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, DesignError> {
        let b = rows.len();
        let v = rows.first().map_or(0, |r| r.as_ref().len());
        if b == 0 || v == 0 {
            return Err(DesignError::Empty);
        }
        let mut cells = Vec::with_capacity(b * v);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != v {
                return Err(DesignError::RaggedRows { row: i, len: row.len(), expected: v });
            }
            for (j, &x) in row.iter().enumerate() {
                if x > 1 {
                    return Err(DesignError::NonBinaryEntry { row: i, col: j, value: x as i64 });
                }
            }
            cells.extend_from_slice(row);
        }
        Self::from_cells(b, v, cells)
    }

    pub(crate) fn from_cells(b: usize, v: usize, cells: Vec<u8>) -> Result<Self, DesignError> {
        debug_assert_eq!(cells.len(), b * v);
        let m = IncidenceMatrix { b, v, cells };
        let mut seen: HashMap<&[u8], usize> = HashMap::with_capacity(b);
        for (i, row) in m.rows().enumerate() {
            if let Some(&first) = seen.get(row) {
                return Err(DesignError::DuplicateRows { first, second: i });
            }
            seen.insert(row, i);
        }
        Ok(m)
    }

    /// Number of blocks (rows).
    pub fn b(&self) -> usize {
        self.b
    }

    /// Number of points (columns).
    pub fn v(&self) -> usize {
        self.v
    }

    pub fn get(&self, block: usize, point: usize) -> u8 {
        self.cells[block * self.v + point]
    }

    pub fn row(&self, block: usize) -> &[u8] {
        &self.cells[block * self.v..(block + 1) * self.v]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.cells.chunks_exact(self.v)
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.rows().map(|r| r.iter().map(|&x| x as usize).sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.v];
        for row in self.rows() {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += x as usize;
            }
        }
        sums
    }

    /// Dense `A'A` (order `v`, row-major): entry `(i, j)` counts the blocks
    /// containing both points.
    pub fn gram(&self) -> Vec<usize> {
        let v = self.v;
        let mut g = vec![0usize; v * v];
        for row in self.rows() {
            let ones: Vec<usize> = row.iter().positions(|&x| x == 1).collect();
            for &i in &ones {
                for &j in &ones {
                    g[i * v + j] += 1;
                }
            }
        }
        g
    }
}

/// Checks that `a` is the incidence matrix of a block design and returns its
/// parameters. Equivalent to constant row sums plus `A'A = (r - lambda) I + lambda J`.
pub fn verify_design(a: &IncidenceMatrix) -> Result<DesignParams, DesignError> {
    let (b, v) = (a.b(), a.v());
    if v < 2 {
        return Err(DesignError::TooFewPoints { v });
    }

    let row_sums = a.row_sums();
    let k = row_sums[0];
    if let Some((row, &found)) = row_sums.iter().enumerate().find(|(_, &s)| s != k) {
        return Err(DesignError::NonConstantRowSum { row, expected: k, found });
    }
    if k == 0 {
        return Err(DesignError::EmptyBlocks);
    }

    let col_sums = a.column_sums();
    let r = col_sums[0];
    if let Some((col, &found)) = col_sums.iter().enumerate().find(|(_, &s)| s != r) {
        return Err(DesignError::NonConstantColumnSum { col, expected: r, found });
    }

    let g = a.gram();
    let lambda = g[1];
    for i in 0..v {
        for j in i + 1..v {
            let count = g[i * v + j];
            if count != lambda {
                return Err(DesignError::UnbalancedPairs { first: i, second: j, count, expected: lambda });
            }
        }
    }

    let params = DesignParams { v, b, r, k, lambda };
    if !params.identities_hold() {
        return Err(DesignError::CountingIdentity(params));
    }
    if lambda >= 1 && b < v {
        return Err(DesignError::FisherViolation { b, v, lambda });
    }
    Ok(params)
}

/// The identity design of order `v`: every block is a single point.
pub fn trivial_design(v: usize) -> Result<IncidenceMatrix, DesignError> {
    if v < 2 {
        return Err(DesignError::InvalidArgument(format!("trivial design needs v >= 2, got {v}")));
    }
    let mut cells = vec![0u8; v * v];
    for i in 0..v {
        cells[i * v + i] = 1;
    }
    IncidenceMatrix::from_cells(v, v, cells)
}

/// Every `k`-subset of `v` points as a block, in lexicographic order.
pub fn complete_design(v: usize, k: usize) -> Result<IncidenceMatrix, DesignError> {
    complete_design_with_limits(v, k, &Limits::default())
}

pub fn complete_design_with_limits(v: usize, k: usize, limits: &Limits) -> Result<IncidenceMatrix, DesignError> {
    if v < 2 || k < 1 || k >= v {
        return Err(DesignError::InvalidArgument(format!(
            "complete design needs 1 <= k <= v - 1, got v = {v}, k = {k}"
        )));
    }
    let b = binomial(v as u64, k as u64);
    limits.check(b, v as u128)?;
    let b = b as usize;
    let mut cells = vec![0u8; b * v];
    for (i, subset) in (0..v).combinations(k).enumerate() {
        for j in subset {
            cells[i * v + j] = 1;
        }
    }
    IncidenceMatrix::from_cells(b, v, cells)
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub(crate) fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(x) => x / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Which sign of the Sylvester-Hadamard matrix marks incidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Plus,
    Minus,
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plus" | "+" => Ok(Polarity::Plus),
            "minus" | "-" => Ok(Polarity::Minus),
            other => Err(format!("unknown polarity {other:?}, expected plus or minus")),
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Plus => "plus",
            Polarity::Minus => "minus",
        })
    }
}

/// Hadamard configuration from the Sylvester matrix of order `2^t` with its
/// first row and column removed.
///
/// Entry `(i, j)` of the Sylvester matrix is `(-1)^popcount(i & j)`. `Minus`
/// gives a `(2^t - 1, 2^t - 1, 2^(t-1), 2^(t-1), 2^(t-2))` design and `Plus`
/// its row-wise complement.
pub fn hadamard_design(t: u32, polarity: Polarity) -> Result<IncidenceMatrix, DesignError> {
    hadamard_design_with_limits(t, polarity, &Limits::default())
}

pub fn hadamard_design_with_limits(
    t: u32,
    polarity: Polarity,
    limits: &Limits,
) -> Result<IncidenceMatrix, DesignError> {
    if t < 2 {
        return Err(DesignError::InvalidArgument(format!("hadamard design needs t >= 2, got {t}")));
    }
    if t >= 64 {
        return Err(DesignError::TooLarge {
            rows: u128::MAX,
            cols: u128::MAX,
            limit_rows: limits.max_rows,
            limit_cells: limits.max_cells,
        });
    }
    let m = (1u128 << t) - 1;
    limits.check(m, m)?;
    let m = m as usize;
    let want_odd = polarity == Polarity::Minus;
    let mut cells = vec![0u8; m * m];
    for i in 1..=m {
        for j in 1..=m {
            let odd = (i & j).count_ones() % 2 == 1;
            cells[(i - 1) * m + (j - 1)] = u8::from(odd == want_odd);
        }
    }
    IncidenceMatrix::from_cells(m, m, cells)
}

/// Point-hyperplane design of the projective space of dimension `t - 1` over
/// the prime field `F_p`.
///
/// Points and blocks are both indexed by the canonical representatives of the
/// one-dimensional subspaces (first nonzero coordinate equal to 1) in
/// lexicographic order; block `i` contains point `j` iff their dot product
/// vanishes mod `p`.
pub fn projective_design(p: u64, t: u32) -> Result<IncidenceMatrix, DesignError> {
    projective_design_with_limits(p, t, &Limits::default())
}

pub fn projective_design_with_limits(p: u64, t: u32, limits: &Limits) -> Result<IncidenceMatrix, DesignError> {
    if !is_prime(p) {
        return Err(if is_prime_power(p) { DesignError::PrimePower { p } } else { DesignError::NotPrime { p } });
    }
    if t < 2 {
        return Err(DesignError::InvalidArgument(format!("projective design needs t >= 2, got {t}")));
    }
    let too_large = || DesignError::TooLarge {
        rows: u128::MAX,
        cols: u128::MAX,
        limit_rows: limits.max_rows,
        limit_cells: limits.max_cells,
    };
    let space = (p as u128).checked_pow(t).ok_or_else(too_large)?;
    let n = (space - 1) / (p as u128 - 1);
    limits.check(n, n)?;

    let t = t as usize;
    let p_us = p as usize;
    let mut reps: Vec<Vec<usize>> = Vec::with_capacity(n as usize);
    for index in 0..space as usize {
        let mut coords = vec![0usize; t];
        let mut rest = index;
        for c in coords.iter_mut().rev() {
            *c = rest % p_us;
            rest /= p_us;
        }
        if coords.iter().find(|&&c| c != 0) == Some(&1) {
            reps.push(coords);
        }
    }
    debug_assert_eq!(reps.len() as u128, n);

    let n = reps.len();
    let mut cells = vec![0u8; n * n];
    for (i, h) in reps.iter().enumerate() {
        for (j, x) in reps.iter().enumerate() {
            let dot = h.iter().zip(x).fold(0usize, |acc, (a, b)| (acc + a * b) % p_us);
            cells[i * n + j] = u8::from(dot == 0);
        }
    }
    IncidenceMatrix::from_cells(n, n, cells)
}

/// The Fano plane: blocks `{1, 2, 4} + i mod 7`.
pub fn fano_design() -> IncidenceMatrix {
    let blocks: Vec<Vec<usize>> = (0..7).map(|i| vec![(i + 1) % 7, (i + 2) % 7, (i + 4) % 7]).collect();
    incidence_from_blocks(&blocks, 7).expect("Fano blocks are well formed")
}

pub(crate) fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn is_prime_power(n: u64) -> bool {
    if n < 4 {
        return is_prime(n);
    }
    let mut d = 2u64;
    while d.saturating_mul(d) <= n {
        if n % d == 0 {
            let mut m = n;
            while m % d == 0 {
                m /= d;
            }
            return m == 1;
        }
        d += 1;
    }
    true
}

/// Blocks as sorted lists of point indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockList {
    pub v: usize,
    pub blocks: Vec<Vec<usize>>,
}

pub fn blocks_from_incidence(a: &IncidenceMatrix) -> BlockList {
    let blocks = a.rows().map(|row| row.iter().positions(|&x| x == 1).collect()).collect();
    BlockList { v: a.v(), blocks }
}

/// Inverse of [`blocks_from_incidence`]. Block members may be given in any
/// order.
pub fn incidence_from_blocks<B: AsRef<[usize]>>(blocks: &[B], v: usize) -> Result<IncidenceMatrix, DesignError> {
    if blocks.is_empty() || v == 0 {
        return Err(DesignError::Empty);
    }
    let b = blocks.len();
    let mut cells = vec![0u8; b * v];
    for (i, block) in blocks.iter().enumerate() {
        for &point in block.as_ref() {
            if point >= v {
                return Err(DesignError::PointOutOfRange { block: i, point, v });
            }
            let cell = &mut cells[i * v + point];
            if *cell == 1 {
                return Err(DesignError::DuplicatePoint { block: i, point });
            }
            *cell = 1;
        }
    }
    IncidenceMatrix::from_cells(b, v, cells).map_err(|e| match e {
        DesignError::DuplicateRows { first, second } => DesignError::DuplicateBlocks { first, second },
        other => other,
    })
}

impl BlockList {
    pub fn to_incidence(&self) -> Result<IncidenceMatrix, DesignError> {
        incidence_from_blocks(&self.blocks, self.v)
    }
}
