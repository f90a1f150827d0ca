//! Prime-field arithmetic and dense matrices over `F_q`.
//!
//! Elements are stored as canonical `u64` representatives in `[0, q)`. Products go through a
//! 128-bit intermediate, so any prime modulus that fits in a machine word is supported.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("operands belong to different fields (F_{left} vs F_{right})")]
    FieldMismatch { left: u64, right: u64 },
    #[error("division by zero in F_{0}")]
    DivisionByZero(u64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("entry {value} is not a canonical element of F_{modulus}")]
    NonCanonical { value: u64, modulus: u64 },
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime strictly greater than `n`, or `None` if it does not fit in a `u64`.
pub fn next_prime(n: u64) -> Option<u64> {
    let mut c = n.checked_add(1)?;
    while !is_prime(c) {
        c = c.checked_add(1)?;
    }
    Some(c)
}

#[inline]
fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// The prime field `F_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimeField {
    q: u64,
}

impl PrimeField {
    pub fn new(q: u64) -> Result<Self, FieldError> {
        if is_prime(q) {
            Ok(Self { q })
        } else {
            Err(FieldError::NotPrime(q))
        }
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    /// Reduces an arbitrary integer into the field.
    pub fn element(&self, value: u64) -> FieldElement {
        FieldElement { value: value % self.q, field: *self }
    }

    pub fn from_i64(&self, value: i64) -> u64 {
        value.rem_euclid(self.q as i64) as u64
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a as u128 + b as u128;
        (s % self.q as u128) as u64
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            self.q - (b - a)
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        mul_mod(a, b, self.q)
    }

    pub fn inv(&self, a: u64) -> Result<u64, FieldError> {
        if a.is_multiple_of(self.q) {
            return Err(FieldError::DivisionByZero(self.q));
        }
        // Fermat: a^(q-2) = a^-1 for prime q.
        Ok(pow_mod(a, self.q - 2, self.q))
    }

    pub fn check_canonical(&self, value: u64) -> Result<u64, FieldError> {
        if value < self.q {
            Ok(value)
        } else {
            Err(FieldError::NonCanonical { value, modulus: self.q })
        }
    }

    /// Symbol-wise sum of two equal-length vectors.
    pub fn add_vec(&self, a: &[u64], b: &[u64]) -> Result<Vec<u64>, FieldError> {
        if a.len() != b.len() {
            return Err(FieldError::DimensionMismatch { expected: a.len(), actual: b.len() });
        }
        Ok(a.iter().zip(b).map(|(&x, &y)| self.add(x, y)).collect())
    }

    pub fn dot(&self, a: &[u64], b: &[u64]) -> Result<u64, FieldError> {
        if a.len() != b.len() {
            return Err(FieldError::DimensionMismatch { expected: a.len(), actual: b.len() });
        }
        Ok(a.iter().zip(b).fold(0, |acc, (&x, &y)| self.add(acc, self.mul(x, y))))
    }
}

impl fmt::Display for PrimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F_{}", self.q)
    }
}

/// A single element of a prime field, always in canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u64,
    field: PrimeField,
}

impl FieldElement {
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    fn same_field(&self, other: &Self) -> Result<PrimeField, FieldError> {
        if self.field == other.field {
            Ok(self.field)
        } else {
            Err(FieldError::FieldMismatch { left: self.field.q, right: other.field.q })
        }
    }

    pub fn add(self, other: Self) -> Result<Self, FieldError> {
        let f = self.same_field(&other)?;
        Ok(FieldElement { value: f.add(self.value, other.value), field: f })
    }

    pub fn sub(self, other: Self) -> Result<Self, FieldError> {
        let f = self.same_field(&other)?;
        Ok(FieldElement { value: f.sub(self.value, other.value), field: f })
    }

    pub fn mul(self, other: Self) -> Result<Self, FieldError> {
        let f = self.same_field(&other)?;
        Ok(FieldElement { value: f.mul(self.value, other.value), field: f })
    }

    pub fn neg(self) -> Self {
        FieldElement { value: self.field.neg(self.value), field: self.field }
    }

    pub fn inv(self) -> Result<Self, FieldError> {
        Ok(FieldElement { value: self.field.inv(self.value)?, field: self.field })
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// Dense row-major matrix over a prime field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldMatrix {
    field: PrimeField,
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl FieldMatrix {
    pub fn zeros(field: PrimeField, rows: usize, cols: usize) -> Self {
        Self { field, rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(field: PrimeField, n: usize) -> Self {
        let mut m = Self::zeros(field, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    /// Builds a matrix from rows, reducing every entry modulo `q`.
    pub fn from_rows<R: AsRef<[u64]>>(
        field: PrimeField,
        cols: usize,
        rows: &[R],
    ) -> Result<Self, FieldError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(FieldError::DimensionMismatch { expected: cols, actual: r.len() });
            }
            data.extend(r.iter().map(|&v| v % field.q));
        }
        Ok(Self { field, rows: rows.len(), cols, data })
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: u64) {
        self.data[r * self.cols + c] = value % self.field.q;
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[u64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.field, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    /// Entry-wise sum.
    pub fn add(&self, other: &Self) -> Result<Self, FieldError> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| self.field.add(a, b)).collect();
        Ok(Self { field: self.field, rows: self.rows, cols: self.cols, data })
    }

    /// Entry-wise difference.
    pub fn sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| self.field.sub(a, b)).collect();
        Ok(Self { field: self.field, rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, k: u64) -> Self {
        let k = k % self.field.q;
        let data = self.data.iter().map(|&a| self.field.mul(a, k)).collect();
        Self { field: self.field, rows: self.rows, cols: self.cols, data }
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), FieldError> {
        if self.field != other.field {
            return Err(FieldError::FieldMismatch { left: self.field.q, right: other.field.q });
        }
        if self.rows != other.rows {
            return Err(FieldError::DimensionMismatch { expected: self.rows, actual: other.rows });
        }
        if self.cols != other.cols {
            return Err(FieldError::DimensionMismatch { expected: self.cols, actual: other.cols });
        }
        Ok(())
    }

    /// Vertical concatenation. `width` fixes the column count so an empty list still has a shape.
    pub fn stack(field: PrimeField, width: usize, parts: &[&FieldMatrix]) -> Result<Self, FieldError> {
        let total: usize = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(total * width);
        for m in parts {
            if m.field != field {
                return Err(FieldError::FieldMismatch { left: field.q, right: m.field.q });
            }
            if m.cols != width {
                return Err(FieldError::DimensionMismatch { expected: width, actual: m.cols });
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Self { field, rows: total, cols: width, data })
    }

    pub fn mul_vec(&self, v: &[u64]) -> Result<Vec<u64>, FieldError> {
        if v.len() != self.cols {
            return Err(FieldError::DimensionMismatch { expected: self.cols, actual: v.len() });
        }
        self.row_iter().map(|r| self.field.dot(r, v)).collect()
    }

    pub fn mul(&self, other: &Self) -> Result<Self, FieldError> {
        if self.field != other.field {
            return Err(FieldError::FieldMismatch { left: self.field.q, right: other.field.q });
        }
        if self.cols != other.rows {
            return Err(FieldError::DimensionMismatch { expected: self.cols, actual: other.rows });
        }
        let f = self.field;
        let mut out = Self::zeros(f, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    let idx = i * other.cols + j;
                    out.data[idx] = f.add(out.data[idx], f.mul(a, other.get(k, j)));
                }
            }
        }
        Ok(out)
    }

    /// Dimension of the row space.
    ///
    /// Fraction-free elimination: the pivot is the first row (lowest index) with a nonzero entry in
    /// the current column, and rows below are updated as `p * row - a * pivot_row`, so no inverses
    /// are taken.
    pub fn rank(&self) -> usize {
        let f = self.field;
        let mut m = self.data.clone();
        let (rows, cols) = (self.rows, self.cols);
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let Some(p) = (rank..rows).find(|&r| m[r * cols + c] != 0) else {
                continue;
            };
            if p != rank {
                for j in c..cols {
                    m.swap(p * cols + j, rank * cols + j);
                }
            }
            let piv = m[rank * cols + c];
            for r in rank + 1..rows {
                let a = m[r * cols + c];
                if a == 0 {
                    continue;
                }
                for j in c..cols {
                    let lhs = f.mul(piv, m[r * cols + j]);
                    let rhs = f.mul(a, m[rank * cols + j]);
                    m[r * cols + j] = f.sub(lhs, rhs);
                }
            }
            rank += 1;
        }
        rank
    }

    /// Reduced row echelon form (pivots normalised to 1, zero rows last).
    pub fn row_reduce(&self) -> Self {
        let f = self.field;
        let mut out = self.clone();
        let (rows, cols) = (self.rows, self.cols);
        let mut lead = 0;
        for c in 0..cols {
            if lead == rows {
                break;
            }
            let Some(p) = (lead..rows).find(|&r| out.get(r, c) != 0) else {
                continue;
            };
            if p != lead {
                for j in 0..cols {
                    out.data.swap(p * cols + j, lead * cols + j);
                }
            }
            let inv = f.inv(out.get(lead, c)).expect("pivot is nonzero");
            for j in 0..cols {
                let v = f.mul(out.get(lead, j), inv);
                out.data[lead * cols + j] = v;
            }
            for r in 0..rows {
                let a = out.get(r, c);
                if r == lead || a == 0 {
                    continue;
                }
                for j in 0..cols {
                    let v = f.sub(out.get(r, j), f.mul(a, out.get(lead, j)));
                    out.data[r * cols + j] = v;
                }
            }
            lead += 1;
        }
        out
    }
}

impl fmt::Display for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in self.row_iter() {
            let cells: Vec<String> = r.iter().map(u64::to_string).collect();
            writeln!(f, "[{}]", cells.join(" "))?;
        }
        Ok(())
    }
}
