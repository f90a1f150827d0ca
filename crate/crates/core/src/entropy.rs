//! Entropy calculus for linear functions of i.i.d. uniform field symbols.
//!
//! Every random variable of the scheme is a linear map applied to one global source vector made
//! of all user inputs followed by all source-key symbols. For such variables the joint entropy in
//! `log q` units is the rank of the stacked maps, and conditional entropies and mutual
//! informations are rank differences.

use thiserror::Error;

use crate::field::{FieldError, FieldMatrix, PrimeField};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntropyError {
    #[error("variable `{label}` uses a different source layout or field")]
    LayoutMismatch { label: String },
    #[error("map has {actual} columns but the layout has {expected} source coordinates")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("source coordinate {index} is outside the layout (total {total})")]
    CoordinateOutOfRange { index: usize, total: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Column layout of the global source vector: the input block `[0, num_inputs)` followed by the
/// source-key block `[num_inputs, total)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SourceLayout {
    field: PrimeField,
    num_inputs: usize,
    num_key_symbols: usize,
}

impl SourceLayout {
    pub fn new(field: PrimeField, num_inputs: usize, num_key_symbols: usize) -> Self {
        Self { field, num_inputs, num_key_symbols }
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_key_symbols(&self) -> usize {
        self.num_key_symbols
    }

    pub fn total(&self) -> usize {
        self.num_inputs + self.num_key_symbols
    }

    pub fn input_column(&self, i: usize) -> usize {
        assert!(i < self.num_inputs, "input index {i} out of range");
        i
    }

    pub fn key_column(&self, i: usize) -> usize {
        assert!(i < self.num_key_symbols, "key symbol index {i} out of range");
        self.num_inputs + i
    }
}

/// A protocol variable: `map * source`, one row per emitted symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearVariable {
    label: String,
    layout: SourceLayout,
    map: FieldMatrix,
}

impl LinearVariable {
    pub fn new(
        label: impl Into<String>,
        layout: SourceLayout,
        map: FieldMatrix,
    ) -> Result<Self, EntropyError> {
        let label = label.into();
        if map.field() != layout.field() {
            return Err(EntropyError::LayoutMismatch { label });
        }
        if map.cols() != layout.total() {
            return Err(EntropyError::WidthMismatch { expected: layout.total(), actual: map.cols() });
        }
        Ok(Self { label, layout, map })
    }

    /// One symbol that reads a single source coordinate.
    pub fn selector(
        label: impl Into<String>,
        layout: SourceLayout,
        index: usize,
    ) -> Result<Self, EntropyError> {
        if index >= layout.total() {
            return Err(EntropyError::CoordinateOutOfRange { index, total: layout.total() });
        }
        let mut map = FieldMatrix::zeros(layout.field(), 1, layout.total());
        map.set(0, index, 1);
        Self::new(label, layout, map)
    }

    /// One symbol given by an explicit coefficient row.
    pub fn from_row(
        label: impl Into<String>,
        layout: SourceLayout,
        row: &[u64],
    ) -> Result<Self, EntropyError> {
        let map = FieldMatrix::from_rows(layout.field(), layout.total(), &[row])?;
        Self::new(label, layout, map)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn layout(&self) -> SourceLayout {
        self.layout
    }

    pub fn map(&self) -> &FieldMatrix {
        &self.map
    }

    pub fn symbols(&self) -> usize {
        self.map.rows()
    }

    /// Symbol-wise sum of variables that emit the same number of symbols.
    pub fn sum<'a>(
        label: impl Into<String>,
        layout: SourceLayout,
        symbols: usize,
        parts: impl IntoIterator<Item = &'a LinearVariable>,
    ) -> Result<Self, EntropyError> {
        let mut acc = FieldMatrix::zeros(layout.field(), symbols, layout.total());
        for p in parts {
            if p.layout != layout {
                return Err(EntropyError::LayoutMismatch { label: p.label.clone() });
            }
            acc = acc.add(&p.map)?;
        }
        Self::new(label, layout, acc)
    }

    pub fn plus(&self, other: &Self, label: impl Into<String>) -> Result<Self, EntropyError> {
        Self::sum(label, self.layout, self.symbols(), [self, other])
    }

    pub fn minus(&self, other: &Self, label: impl Into<String>) -> Result<Self, EntropyError> {
        if other.layout != self.layout {
            return Err(EntropyError::LayoutMismatch { label: other.label.clone() });
        }
        Self::new(label, self.layout, self.map.sub(&other.map)?)
    }

    pub fn is_zero(&self) -> bool {
        self.map.is_zero()
    }
}

fn stacked_rank(vars: &[&LinearVariable], layout: Option<SourceLayout>) -> Result<usize, EntropyError> {
    let Some(layout) = layout.or_else(|| vars.first().map(|v| v.layout)) else {
        return Ok(0);
    };
    let mut maps = Vec::with_capacity(vars.len());
    for v in vars {
        if v.layout != layout {
            return Err(EntropyError::LayoutMismatch { label: v.label.clone() });
        }
        maps.push(&v.map);
    }
    Ok(FieldMatrix::stack(layout.field(), layout.total(), &maps)?.rank())
}

fn common_layout(groups: &[&[&LinearVariable]]) -> Option<SourceLayout> {
    groups.iter().flat_map(|g| g.iter()).map(|v| v.layout).next()
}

/// `H(vars)` in `log q` units.
pub fn entropy(vars: &[&LinearVariable]) -> Result<usize, EntropyError> {
    stacked_rank(vars, None)
}

/// `H(a | given)`.
pub fn conditional_entropy(
    a: &[&LinearVariable],
    given: &[&LinearVariable],
) -> Result<usize, EntropyError> {
    let layout = common_layout(&[a, given]);
    let joint: Vec<&LinearVariable> = a.iter().chain(given).copied().collect();
    let h_joint = stacked_rank(&joint, layout)?;
    let h_given = stacked_rank(given, layout)?;
    Ok(h_joint - h_given)
}

/// `I(a; b | given)`.
pub fn mutual_information(
    a: &[&LinearVariable],
    b: &[&LinearVariable],
    given: &[&LinearVariable],
) -> Result<usize, EntropyError> {
    let layout = common_layout(&[a, b, given]);
    let ag: Vec<&LinearVariable> = a.iter().chain(given).copied().collect();
    let bg: Vec<&LinearVariable> = b.iter().chain(given).copied().collect();
    let abg: Vec<&LinearVariable> = a.iter().chain(b).chain(given).copied().collect();
    let h_ag = stacked_rank(&ag, layout)?;
    let h_bg = stacked_rank(&bg, layout)?;
    let h_abg = stacked_rank(&abg, layout)?;
    let h_g = stacked_rank(given, layout)?;
    // Submodularity of rank keeps this non-negative.
    Ok(h_ag + h_bg - h_abg - h_g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(q: u64, inputs: usize, keys: usize) -> SourceLayout {
        SourceLayout::new(PrimeField::new(q).unwrap(), inputs, keys)
    }

    #[test]
    fn independent_symbols() {
        let l = layout(11, 0, 3);
        let n: Vec<_> = (0..3)
            .map(|i| LinearVariable::selector(format!("N{}", i + 1), l, l.key_column(i)).unwrap())
            .collect();
        assert_eq!(entropy(&[&n[0], &n[1], &n[2]]).unwrap(), 3);
        assert_eq!(entropy(&[&n[0], &n[0]]).unwrap(), entropy(&[&n[0]]).unwrap());
        assert_eq!(conditional_entropy(&[&n[0]], &[&n[0]]).unwrap(), 0);
        assert_eq!(conditional_entropy(&[&n[0]], &[&n[1]]).unwrap(), 1);
        assert_eq!(mutual_information(&[&n[0]], &[&n[1]], &[]).unwrap(), 0);
        assert_eq!(mutual_information(&[&n[0]], &[&n[0]], &[]).unwrap(), 1);
        assert_eq!(entropy(&[]).unwrap(), 0);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let a = LinearVariable::selector("a", layout(11, 1, 1), 0).unwrap();
        let b = LinearVariable::selector("b", layout(11, 2, 1), 0).unwrap();
        assert!(matches!(entropy(&[&a, &b]), Err(EntropyError::LayoutMismatch { .. })));
        assert!(matches!(
            mutual_information(&[&a], &[], &[&b]),
            Err(EntropyError::LayoutMismatch { .. })
        ));
        assert!(LinearVariable::selector("c", layout(11, 1, 1), 2).is_err());
    }

    #[test]
    fn sums_and_differences() {
        let l = layout(5, 2, 0);
        let w0 = LinearVariable::selector("w0", l, 0).unwrap();
        let w1 = LinearVariable::selector("w1", l, 1).unwrap();
        let s = w0.plus(&w1, "s").unwrap();
        assert_eq!(s.map().row(0), &[1, 1]);
        assert!(s.minus(&w0, "d").unwrap().minus(&w1, "z").unwrap().is_zero());
        assert_eq!(entropy(&[&s, &w0, &w1]).unwrap(), 2);
        assert_eq!(conditional_entropy(&[&w1], &[&s, &w0]).unwrap(), 0);
    }
}
