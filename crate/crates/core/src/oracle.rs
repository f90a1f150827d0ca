//! Ground truth by exhaustive enumeration of the source space.
//!
//! Nothing here uses rank. Entropies come from counting the exact output distribution of a
//! linear map over every source vector; security comes from comparing conditional view
//! distributions directly.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::collusion::{all_cases, ColludingSet};
use crate::entropy::{EntropyError, LinearVariable, SourceLayout};
use crate::field::{FieldMatrix, PrimeField};
use crate::keyplan::CoefficientTable;
use crate::protocol::{distribute_keys, server_aggregate, user_encode, ProtocolError, SourceKeySample};

pub const DEFAULT_MAX_STATES: u128 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OracleBudget {
    pub max_states: u128,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self { max_states: DEFAULT_MAX_STATES }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("enumeration needs {required} states, budget is {max}")]
    OverBudget { required: String, max: u128 },
    #[error("output of {rows} symbols over F_{q} does not fit a 128-bit code")]
    OutputTooWide { rows: usize, q: u64 },
    #[error("output distribution is not uniform on its support")]
    NonUniform,
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// `q^n`, or `None` past `u128`.
pub fn state_count(q: u64, n: usize) -> Option<u128> {
    (q as u128).checked_pow(u32::try_from(n).ok()?)
}

fn check_budget(q: u64, n: usize, budget: &OracleBudget) -> Result<u128, OracleError> {
    match state_count(q, n) {
        Some(s) if s <= budget.max_states => Ok(s),
        Some(s) => Err(OracleError::OverBudget { required: s.to_string(), max: budget.max_states }),
        None => Err(OracleError::OverBudget { required: format!("{q}^{n}"), max: budget.max_states }),
    }
}

fn check_code_width(q: u64, rows: usize) -> Result<(), OracleError> {
    state_count(q, rows).map(|_| ()).ok_or(OracleError::OutputTooWide { rows, q })
}

fn encode(q: u64, symbols: impl Iterator<Item = u64>) -> u128 {
    symbols.fold(0u128, |acc, s| acc * q as u128 + s as u128)
}

type Counts = HashMap<u128, u64>;

/// Output distributions of several row groups of `map`, over every source vector.
///
/// The source space is split on its top coordinates into chunks handled in parallel. Inside a
/// chunk an odometer walks the remaining coordinates, adding one column of `map` per step, so
/// each state costs `O(rows)`.
fn enumerate_groups(map: &FieldMatrix, groups: &[Vec<usize>]) -> Vec<Counts> {
    let field = map.field();
    let q = field.modulus();
    let n = map.cols();
    let cols: Vec<Vec<u64>> = (0..n).map(|j| (0..map.rows()).map(|r| map.get(r, j)).collect()).collect();

    let mut high = 0;
    while high < n && state_count(q, high).is_some_and(|c| c < 64) {
        high += 1;
    }
    let low = n - high;
    let chunks = state_count(q, high).expect("small") as u64;

    let merge = |mut a: Vec<Counts>, b: Vec<Counts>| {
        for (x, y) in a.iter_mut().zip(b) {
            for (k, c) in y {
                *x.entry(k).or_insert(0) += c;
            }
        }
        a
    };

    (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut counts: Vec<Counts> = vec![HashMap::new(); groups.len()];
            let mut y = vec![0u64; map.rows()];
            let mut c = chunk;
            for col in &cols[low..] {
                let digit = c % q;
                c /= q;
                for (acc, &a) in y.iter_mut().zip(col) {
                    *acc = field.add(*acc, field.mul(a, digit));
                }
            }
            let mut digits = vec![0u64; low];
            loop {
                for (g, rows) in groups.iter().enumerate() {
                    *counts[g].entry(encode(q, rows.iter().map(|&r| y[r]))).or_insert(0) += 1;
                }
                let mut j = 0;
                loop {
                    if j == low {
                        return counts;
                    }
                    for (acc, &a) in y.iter_mut().zip(&cols[j]) {
                        *acc = field.add(*acc, a);
                    }
                    digits[j] += 1;
                    if digits[j] == q {
                        digits[j] = 0;
                        j += 1;
                    } else {
                        break;
                    }
                }
            }
        })
        .reduce(|| vec![HashMap::new(); groups.len()], merge)
}

/// Entropy in `log q` units of a distribution over `total` equally likely states.
fn uniform_entropy(q: u64, total: u128, counts: &Counts) -> Result<usize, OracleError> {
    let support = counts.len() as u128;
    if support == 0 || !total.is_multiple_of(support) {
        return Err(OracleError::NonUniform);
    }
    let each = (total / support) as u64;
    if counts.values().any(|&c| c != each) {
        return Err(OracleError::NonUniform);
    }
    let mut h = 0;
    let mut s = 1u128;
    while s < support {
        s *= q as u128;
        h += 1;
    }
    if s != support {
        return Err(OracleError::NonUniform);
    }
    Ok(h)
}

fn stack(vars: &[&[&LinearVariable]]) -> Result<(SourceLayout, FieldMatrix, Vec<Vec<usize>>), OracleError> {
    let layout = vars
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.layout())
        .next()
        .unwrap_or_else(|| SourceLayout::new(PrimeField::new(2).expect("prime"), 0, 0));
    let mut maps = Vec::new();
    let mut ranges = Vec::new();
    let mut row = 0;
    for group in vars {
        let mut rows = Vec::new();
        for v in group.iter() {
            if v.layout() != layout {
                return Err(EntropyError::LayoutMismatch { label: v.label().to_string() }.into());
            }
            maps.push(v.map());
            rows.extend(row..row + v.symbols());
            row += v.symbols();
        }
        ranges.push(rows);
    }
    let m = FieldMatrix::stack(layout.field(), layout.total(), &maps).map_err(EntropyError::from)?;
    Ok((layout, m, ranges))
}

/// `H(vars)` in `log q` units, by counting.
pub fn brute_entropy(vars: &[&LinearVariable], budget: &OracleBudget) -> Result<usize, OracleError> {
    let (layout, map, groups) = stack(&[vars])?;
    let q = layout.field().modulus();
    let total = check_budget(q, layout.total(), budget)?;
    check_code_width(q, map.rows())?;
    let counts = enumerate_groups(&map, &groups);
    uniform_entropy(q, total, &counts[0])
}

/// `I(a; b | given)` in `log q` units, from one enumeration pass.
pub fn brute_mi(
    a: &[&LinearVariable],
    b: &[&LinearVariable],
    given: &[&LinearVariable],
    budget: &OracleBudget,
) -> Result<usize, OracleError> {
    let (layout, map, parts) = stack(&[a, b, given])?;
    let q = layout.field().modulus();
    let total = check_budget(q, layout.total(), budget)?;
    check_code_width(q, map.rows())?;
    let (ra, rb, rg) = (&parts[0], &parts[1], &parts[2]);
    let join = |xs: &[&Vec<usize>]| xs.iter().flat_map(|x| x.iter().copied()).collect::<Vec<_>>();
    let groups = vec![join(&[ra, rg]), join(&[rb, rg]), join(&[ra, rb, rg]), rg.clone()];
    let counts = enumerate_groups(&map, &groups);
    let h: Vec<usize> =
        counts.iter().map(|c| uniform_entropy(q, total, c)).collect::<Result<_, _>>()?;
    Ok(h[0] + h[1] - h[2] - h[3])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleSecurity {
    pub secure: bool,
    pub cases: usize,
    pub states_per_case: u128,
    /// First `(server, colluders)` pair whose conditional view distribution depends on the inputs.
    pub first_failure: Option<(usize, ColludingSet)>,
}

fn digits(q: u64, mut index: u64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|_| {
            let d = index % q;
            index /= q;
            d
        })
        .collect()
}

/// Checks security by definition: for every server `k` and colluding set, the joint distribution
/// of (colluder keys, server view) must be the same for all inputs that agree on the sum and on
/// the colluders' inputs. Views are produced by the protocol functions themselves.
pub fn brute_security_check(table: &CoefficientTable, budget: &OracleBudget) -> Result<OracleSecurity, OracleError> {
    let params = *table.params();
    let field = table.field();
    let q = field.modulus();
    let n_users = params.num_users();
    let r = table.r_star();
    let states = check_budget(q, n_users + r, budget)?;
    let v = params.users_per_server();

    let key_states = state_count(q, r).expect("in budget") as u64;
    let keys: Vec<Vec<Vec<u64>>> = (0..key_states)
        .map(|i| {
            let sample = SourceKeySample::new(field, r, digits(q, i, r))?;
            distribute_keys(table, &sample)
        })
        .collect::<Result<_, _>>()?;

    let cases = all_cases(&params);
    let input_states = state_count(q, n_users).expect("in budget") as u64;

    // Per input vector and per case: sorted histogram of (colluder keys, view).
    let per_input: Vec<Vec<Vec<(u128, u64)>>> = (0..input_states)
        .into_par_iter()
        .map(|wi| -> Result<_, OracleError> {
            let w = digits(q, wi, n_users);
            let mut hists: Vec<BTreeMap<u128, u64>> = vec![BTreeMap::new(); cases.len()];
            for z in &keys {
                let x: Vec<Vec<u64>> = (0..n_users)
                    .map(|i| user_encode(field, &w[i..=i], &z[i]))
                    .collect::<Result<_, _>>()?;
                let y: Vec<Vec<u64>> = (0..params.servers())
                    .map(|u| server_aggregate(field, &x[u * v..(u + 1) * v]))
                    .collect::<Result<_, _>>()?;
                for (c, (k, set)) in cases.iter().enumerate() {
                    let zt = set.iter().map(|t| z[params.user_index(t)][0]);
                    let own = (0..v).map(|s| x[k * v + s][0]);
                    let others = (0..params.servers()).filter(|u| u != k).map(|u| y[u][0]);
                    let code = encode(q, zt.chain(own).chain(others));
                    *hists[c].entry(code).or_insert(0) += 1;
                }
            }
            Ok(hists.into_iter().map(|h| h.into_iter().collect()).collect())
        })
        .collect::<Result<_, _>>()?;

    let first_failure = cases.iter().enumerate().find_map(|(c, (k, set))| {
        let mut seen: HashMap<u128, &Vec<(u128, u64)>> = HashMap::new();
        for (wi, hists) in per_input.iter().enumerate() {
            let w = digits(q, wi as u64, n_users);
            let total = w.iter().fold(0, |acc, &x| field.add(acc, x));
            let group = encode(q, std::iter::once(total).chain(set.iter().map(|t| w[params.user_index(t)])));
            let h = &hists[c];
            match seen.get(&group) {
                Some(prev) if *prev != h => return Some((*k, set.clone())),
                Some(_) => {}
                None => {
                    seen.insert(group, h);
                }
            }
        }
        None
    });

    Ok(OracleSecurity {
        secure: first_failure.is_none(),
        cases: cases.len(),
        states_per_case: states,
        first_failure,
    })
}
