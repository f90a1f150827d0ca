//! Source-key sizing, coefficient tables and individual-key variables.
//!
//! Every individual key is `Z_{u,v} = h_{u,v} . N` for a coefficient row `h_{u,v}` over the source
//! key `N = (N_1, ..., N_r)`. All rows except the last are drawn uniformly; the last is the negated
//! sum of the others, so the keys cancel in the global sum.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collusion::{all_cases, binomial, partition_colluders, ColludingSet, Combinations};
use crate::entropy::{LinearVariable, SourceLayout};
use crate::field::{next_prime, FieldError, FieldMatrix, PrimeField};
use crate::params::{check_shape, source_key_length_unchecked, ParamsError, SystemParams, UserId};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyPlanError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(
        "no valid coefficient table over F_{q} after {attempts} attempts; \
         the field is probably too small, try q = {suggested}"
    )]
    GenerationFailed { q: u64, attempts: usize, suggested: u64 },
    #[error("default field size r*C(UV, r) does not fit in 64 bits")]
    FieldTooLarge,
    #[error("table has {actual} rows, expected UV = {expected}")]
    RowCount { expected: usize, actual: usize },
    #[error("table declares r_star = {declared}, but min{{U+V+T-2, UV-1}} = {expected}")]
    SourceKeyLength { declared: usize, expected: usize },
    #[error("user {0} is outside the table")]
    UserOutOfRange(UserId),
    #[error("layout has {actual} key symbols, table needs {expected}")]
    LayoutMismatch { expected: usize, actual: usize },
    #[error("malformed table document: {0}")]
    Document(String),
}

/// `min{U+V+T-2, UV-1}`.
pub fn optimal_source_key_length(u: usize, v: usize, t: usize) -> Result<usize, KeyPlanError> {
    check_shape(u, v, t)?;
    Ok(source_key_length_unchecked(u, v, t))
}

/// Smallest prime above `r * C(UV, r)`, the degree bound of the product of all `r x r` minors.
pub fn default_modulus(u: usize, v: usize, t: usize) -> Result<u64, KeyPlanError> {
    let r = optimal_source_key_length(u, v, t)?;
    let bound = binomial(u * v, r)
        .and_then(|c| c.checked_mul(r as u128))
        .and_then(|b| u64::try_from(b).ok())
        .ok_or(KeyPlanError::FieldTooLarge)?;
    next_prime(bound).ok_or(KeyPlanError::FieldTooLarge)
}

/// The `UV` coefficient rows `h_{u,v}`, in `(u, v)` lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientTable {
    params: SystemParams,
    r_star: usize,
    rows: FieldMatrix,
}

impl CoefficientTable {
    /// Wraps explicit rows. Entries must already be canonical. The zero-sum property is not
    /// enforced here; [`validate_table`] reports it.
    pub fn from_rows<R: AsRef<[u64]>>(params: SystemParams, rows: &[R]) -> Result<Self, KeyPlanError> {
        let r_star = params.source_key_length();
        if rows.len() != params.num_users() {
            return Err(KeyPlanError::RowCount { expected: params.num_users(), actual: rows.len() });
        }
        let field = params.field();
        for row in rows {
            for &x in row.as_ref() {
                field.check_canonical(x)?;
            }
        }
        let rows = FieldMatrix::from_rows(field, r_star, rows)?;
        Ok(Self { params, r_star, rows })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn field(&self) -> PrimeField {
        self.rows.field()
    }

    pub fn r_star(&self) -> usize {
        self.r_star
    }

    pub fn matrix(&self) -> &FieldMatrix {
        &self.rows
    }

    pub fn h(&self, user: UserId) -> &[u64] {
        self.rows.row(self.params.user_index(user))
    }

    /// `s_u = sum_v h_{u,v}`.
    pub fn row_sum(&self, server: usize) -> Vec<u64> {
        let f = self.field();
        let mut acc = vec![0; self.r_star];
        for slot in 0..self.params.users_per_server() {
            let h = self.h(UserId::new(server, slot));
            for (a, &x) in acc.iter_mut().zip(h) {
                *a = f.add(*a, x);
            }
        }
        acc
    }

    /// `sum_{(u,v)} h_{u,v}`; all zero for a well-formed table.
    pub fn total_sum(&self) -> Vec<u64> {
        let f = self.field();
        let mut acc = vec![0; self.r_star];
        for row in self.rows.row_iter() {
            for (a, &x) in acc.iter_mut().zip(row) {
                *a = f.add(*a, x);
            }
        }
        acc
    }

    pub fn is_zero_sum(&self) -> bool {
        self.total_sum().iter().all(|&x| x == 0)
    }

    /// Copy with one entry replaced. Used for mutation testing.
    pub fn with_entry(&self, user: UserId, coord: usize, value: u64) -> Self {
        let mut out = self.clone();
        let r = self.params.user_index(user);
        out.rows.set(r, coord, value);
        out
    }

    /// Copy with one coefficient row replaced.
    pub fn with_row(&self, user: UserId, row: &[u64]) -> Self {
        let mut out = self.clone();
        let r = self.params.user_index(user);
        for (c, &x) in row.iter().enumerate() {
            out.rows.set(r, c, x);
        }
        out
    }

    pub fn to_document(&self) -> TableDocument {
        TableDocument {
            u: self.params.servers(),
            v: self.params.users_per_server(),
            t: self.params.max_colluders(),
            q: self.params.modulus(),
            r_star: self.r_star,
            rows: self.rows.row_iter().map(<[u64]>::to_vec).collect(),
        }
    }

    pub fn from_document(doc: &TableDocument, seed: u64) -> Result<Self, KeyPlanError> {
        let params = SystemParams::new(doc.u, doc.v, doc.t, doc.q, seed)?;
        if doc.r_star != params.source_key_length() {
            return Err(KeyPlanError::SourceKeyLength {
                declared: doc.r_star,
                expected: params.source_key_length(),
            });
        }
        Self::from_rows(params, &doc.rows)
    }

    /// Canonical JSON encoding.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("plain data");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, seed: u64) -> Result<Self, KeyPlanError> {
        let doc: TableDocument =
            serde_json::from_str(text).map_err(|e| KeyPlanError::Document(e.to_string()))?;
        Self::from_document(&doc, seed)
    }
}

/// On-disk form of a table: `{U, V, T, q, r_star, rows}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableDocument {
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "V")]
    pub v: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub q: u64,
    pub r_star: usize,
    pub rows: Vec<Vec<u64>>,
}

/// Outcome of [`generate_table`].
#[derive(Debug, Clone)]
pub struct GeneratedTable {
    pub table: CoefficientTable,
    pub attempts: usize,
}

/// Rejection-samples a table from the keygen stream of `params.seed()`.
pub fn generate_table(params: &SystemParams, max_attempts: usize) -> Result<GeneratedTable, KeyPlanError> {
    let field = params.field();
    let q = field.modulus();
    let r = params.source_key_length();
    let n = params.num_users();
    let mut rng = stream_rng(params.seed(), Stream::Keygen);
    for attempt in 1..=max_attempts {
        let mut rows: Vec<Vec<u64>> = (0..n - 1)
            .map(|_| (0..r).map(|_| rng.gen_range(0..q)).collect())
            .collect();
        let mut last = vec![0; r];
        for row in &rows {
            for (acc, &x) in last.iter_mut().zip(row) {
                *acc = field.sub(*acc, x);
            }
        }
        rows.push(last);
        let table = CoefficientTable::from_rows(*params, &rows)?;
        if validate_table(&table).is_ok() {
            return Ok(GeneratedTable { table, attempts: attempt });
        }
    }
    let suggested = default_modulus(params.servers(), params.users_per_server(), params.max_colluders())
        .unwrap_or(u64::MAX);
    Err(KeyPlanError::GenerationFailed { q, attempts: max_attempts, suggested })
}

/// First prime in `candidates` for which [`generate_table`] succeeds within `max_attempts`.
pub fn smallest_valid_modulus(
    u: usize,
    v: usize,
    t: usize,
    candidates: &[u64],
    seed: u64,
    max_attempts: usize,
) -> Result<Option<GeneratedTable>, KeyPlanError> {
    for &q in candidates {
        let params = SystemParams::new(u, v, t, q, seed)?;
        match generate_table(&params, max_attempts) {
            Ok(g) => return Ok(Some(g)),
            Err(KeyPlanError::GenerationFailed { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// A vector taking part in an independence check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyVector {
    /// `h_{u,v}`.
    Key(UserId),
    /// `s_u`, one-based server index when serialised.
    RowSum(#[serde(serialize_with = "one_based")] usize),
}

fn one_based<S: serde::Serializer>(i: &usize, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(*i as u64 + 1)
}

impl fmt::Display for KeyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyVector::Key(u) => write!(f, "h{u}"),
            KeyVector::RowSum(s) => write!(f, "s{}", s + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationFailure {
    #[error("coefficient rows do not sum to zero (residual {residual:?})")]
    ZeroSum { residual: Vec<u64> },
    #[error(
        "server {} with colluders {colluders}: key set has rank {actual}, needs {expected}; \
         dependent vectors {}",
        server + 1,
        fmt_vectors(witness)
    )]
    Dependent {
        #[serde(serialize_with = "one_based")]
        server: usize,
        colluders: ColludingSet,
        expected: usize,
        actual: usize,
        witness: Vec<KeyVector>,
    },
}

fn fmt_vectors(v: &[KeyVector]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("{{{}}}", parts.join(", "))
}

/// The key vectors that server `k` must not be able to resolve when `set` colludes:
/// row sums of the other non-fully-colluding servers, all of server `k`'s keys, and the keys of
/// the remaining colluders. Exactly one linear relation (the zero sum) is allowed among them.
pub fn protected_key_set(params: &SystemParams, k: usize, set: &ColludingSet) -> Vec<KeyVector> {
    let part = partition_colluders(params, set, k);
    let mut out: Vec<KeyVector> = (0..params.servers())
        .filter(|&u| u != k && !part.u2.contains(&u))
        .map(KeyVector::RowSum)
        .collect();
    out.extend((0..params.users_per_server()).map(|s| KeyVector::Key(UserId::new(k, s))));
    out.extend(set.iter().filter(|u| u.server != k).map(KeyVector::Key));
    out
}

fn vector_of(table: &CoefficientTable, v: KeyVector) -> Vec<u64> {
    match v {
        KeyVector::Key(u) => table.h(u).to_vec(),
        KeyVector::RowSum(s) => table.row_sum(s),
    }
}

// Large prime for rank computations on the structural (generic) vectors.
const FORMAL_PRIME: u64 = (1 << 61) - 1;

/// Vector in the free model: `h_{u,v}` for all users but the last are unit vectors in
/// `F^{UV-1}`, and the last is their negated sum.
fn formal_vector(params: &SystemParams, v: KeyVector) -> Vec<u64> {
    let n = params.num_users() - 1;
    let key = |u: UserId| {
        let i = params.user_index(u);
        if i < n {
            (0..n).map(|j| u64::from(j == i)).collect::<Vec<_>>()
        } else {
            vec![FORMAL_PRIME - 1; n]
        }
    };
    match v {
        KeyVector::Key(u) => key(u),
        KeyVector::RowSum(s) => {
            let mut acc = vec![0u64; n];
            for slot in 0..params.users_per_server() {
                for (a, x) in acc.iter_mut().zip(key(UserId::new(s, slot))) {
                    *a = (*a + x) % FORMAL_PRIME;
                }
            }
            acc
        }
    }
}

fn rank_of(field: PrimeField, width: usize, rows: &[Vec<u64>]) -> usize {
    FieldMatrix::from_rows(field, width, rows).expect("consistent widths").rank()
}

/// Smallest subset of `set` whose rank falls below the rank it has for generic coefficients.
fn minimal_witness(table: &CoefficientTable, set: &[KeyVector]) -> Vec<KeyVector> {
    const MAX_SEARCH: usize = 16;
    if set.len() > MAX_SEARCH {
        return set.to_vec();
    }
    let formal_field = PrimeField::new(FORMAL_PRIME).expect("Mersenne prime");
    let formal_width = table.params.num_users() - 1;
    for size in 1..=set.len() {
        for idx in Combinations::new(set.len(), size) {
            let pick: Vec<KeyVector> = idx.iter().map(|&i| set[i]).collect();
            let actual: Vec<Vec<u64>> = pick.iter().map(|&v| vector_of(table, v)).collect();
            let formal: Vec<Vec<u64>> = pick.iter().map(|&v| formal_vector(&table.params, v)).collect();
            if rank_of(table.field(), table.r_star, &actual) < rank_of(formal_field, formal_width, &formal) {
                let mut pick = pick;
                pick.sort();
                return pick;
            }
        }
    }
    set.to_vec()
}

/// Checks the zero-sum property and, for every server `k` and colluding set `|T| <= T`, that the
/// protected key set has rank exactly one less than its size. On failure the witness is a
/// smallest set of vectors that is dependent although generic coefficients would make it
/// independent.
pub fn validate_table(table: &CoefficientTable) -> Result<(), ValidationFailure> {
    if !table.is_zero_sum() {
        return Err(ValidationFailure::ZeroSum { residual: table.total_sum() });
    }
    let params = table.params;
    let n = params.num_users();
    let cases: Vec<(usize, ColludingSet)> =
        all_cases(&params).into_iter().filter(|(_, s)| s.len() < n).collect();
    match cases.par_iter().find_first(|(k, set)| !case_rank_ok(table, *k, set)) {
        None => Ok(()),
        Some((k, set)) => check_case(table, *k, set),
    }
}

fn case_rank(table: &CoefficientTable, vectors: &[KeyVector]) -> usize {
    let rows: Vec<Vec<u64>> = vectors.iter().map(|&v| vector_of(table, v)).collect();
    rank_of(table.field(), table.r_star, &rows)
}

fn case_rank_ok(table: &CoefficientTable, k: usize, set: &ColludingSet) -> bool {
    let vectors = protected_key_set(&table.params, k, set);
    case_rank(table, &vectors) + 1 == vectors.len()
}

/// The rank condition for one server and one colluding set, with a minimal witness on failure.
/// Assumes the zero-sum property.
pub fn check_case(table: &CoefficientTable, k: usize, set: &ColludingSet) -> Result<(), ValidationFailure> {
    let vectors = protected_key_set(&table.params, k, set);
    let actual = case_rank(table, &vectors);
    let expected = vectors.len() - 1;
    if actual == expected || set.len() >= table.params.num_users() {
        return Ok(());
    }
    Err(ValidationFailure::Dependent {
        server: k,
        colluders: set.clone(),
        expected,
        actual,
        witness: minimal_witness(table, &vectors),
    })
}

fn example_table(u: usize, v: usize, t: usize, q: u64, rows: &[&[i64]]) -> CoefficientTable {
    let params = SystemParams::new(u, v, t, q, 0).expect("fixed parameters");
    let field = params.field();
    let rows: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|&x| field.from_i64(x)).collect()).collect();
    CoefficientTable::from_rows(params, &rows).expect("fixed table")
}

/// The `(U, V, T) = (3, 2, 0)` table over `F_11`.
pub fn example1_table() -> CoefficientTable {
    example_table(
        3,
        2,
        0,
        11,
        &[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1], &[1, 2, 3], &[1, 3, 4], &[-3, -6, -8]],
    )
}

/// The `(U, V, T) = (3, 3, 2)` table over `F_17`.
pub fn example2_table() -> CoefficientTable {
    example_table(
        3,
        3,
        2,
        17,
        &[
            &[1, 0, 0, 0, 0, 0],
            &[0, 1, 0, 0, 0, 0],
            &[0, 0, 1, 0, 0, 0],
            &[0, 0, 0, 1, 0, 0],
            &[0, 0, 0, 0, 1, 0],
            &[0, 0, 0, 0, 0, 1],
            &[1, 2, 3, 4, 5, 6],
            &[1, 3, 4, 5, 6, 7],
            &[-3, -6, -8, -10, -12, -14],
        ],
    )
}

/// `Z_{u,v}` as a linear map: `h_{u,v}` against the key block, zero against the inputs.
pub fn key_variable(
    table: &CoefficientTable,
    user: UserId,
    layout: SourceLayout,
) -> Result<LinearVariable, KeyPlanError> {
    if !table.params.contains(user) {
        return Err(KeyPlanError::UserOutOfRange(user));
    }
    if layout.num_key_symbols() != table.r_star || layout.field() != table.field() {
        return Err(KeyPlanError::LayoutMismatch {
            expected: table.r_star,
            actual: layout.num_key_symbols(),
        });
    }
    let mut row = vec![0; layout.total()];
    for (i, &x) in table.h(user).iter().enumerate() {
        row[layout.key_column(i)] = x;
    }
    LinearVariable::from_row(format!("Z{user}"), layout, &row)
        .map_err(|e| KeyPlanError::Document(e.to_string()))
}
