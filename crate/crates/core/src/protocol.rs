//! Concrete two-hop protocol runs.
//!
//! Hop 1: user `(u,v)` sends `X_{u,v} = W_{u,v} + Z_{u,v}` to server `u`.
//! Hop 2: server `u` broadcasts `Y_u = sum_v X_{u,v}` to every other server.
//! Server `k` then outputs `sum_v X_{k,v} + sum_{u != k} Y_u`.
//!
//! Vectors of length `L > 1` are `L` independent symbol-wise runs sharing the coefficient table,
//! each with its own slice of source-key symbols.

use rand::Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::field::{FieldError, PrimeField};
use crate::keyplan::CoefficientTable;
use crate::params::{SystemParams, UserId};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("server_aggregate needs at least one message")]
    NoMessages,
    #[error("expected {expected} {what}, got {actual}")]
    CountMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("symbol length L must be at least 1")]
    ZeroLength,
    #[error("table parameters do not match the run parameters")]
    TableMismatch,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// `W_{u,v}` for all users, each of length `L`, in `(u, v)` lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inputs {
    params: SystemParams,
    len: usize,
    w: Vec<Vec<u64>>,
}

impl Inputs {
    pub fn new(params: SystemParams, w: Vec<Vec<u64>>) -> Result<Self, ProtocolError> {
        if w.len() != params.num_users() {
            return Err(ProtocolError::CountMismatch {
                what: "input vectors",
                expected: params.num_users(),
                actual: w.len(),
            });
        }
        let len = w.first().map_or(0, Vec::len);
        if len == 0 {
            return Err(ProtocolError::ZeroLength);
        }
        let field = params.field();
        for row in &w {
            if row.len() != len {
                return Err(ProtocolError::LengthMismatch { left: len, right: row.len() });
            }
            for &x in row {
                field.check_canonical(x)?;
            }
        }
        Ok(Self { params, len, w })
    }

    pub fn zeros(params: SystemParams, len: usize) -> Result<Self, ProtocolError> {
        Self::new(params, vec![vec![0; len]; params.num_users()])
    }

    /// Uniform inputs from the `inputs` stream of `seed`.
    pub fn random(params: SystemParams, len: usize, seed: u64) -> Result<Self, ProtocolError> {
        let mut rng = stream_rng(seed, Stream::Inputs);
        Self::sample(params, len, &mut rng)
    }

    pub fn sample<R: Rng>(params: SystemParams, len: usize, rng: &mut R) -> Result<Self, ProtocolError> {
        let q = params.modulus();
        let w = (0..params.num_users())
            .map(|_| (0..len).map(|_| rng.gen_range(0..q)).collect())
            .collect();
        Self::new(params, w)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, user: UserId) -> &[u64] {
        &self.w[self.params.user_index(user)]
    }

    /// `sum_{(u,v)} W_{u,v}`.
    pub fn total(&self) -> Vec<u64> {
        let f = self.params.field();
        let mut acc = vec![0; self.len];
        for row in &self.w {
            add_into(f, &mut acc, row);
        }
        acc
    }
}

impl Serialize for Inputs {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        grid(&self.params, &self.w).serialize(s)
    }
}

fn grid<'a>(params: &SystemParams, flat: &'a [Vec<u64>]) -> Vec<&'a [Vec<u64>]> {
    flat.chunks(params.users_per_server()).collect()
}

/// `L` independent draws of `(N_1, ..., N_r)`, stored slice by slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct SourceKeySample {
    #[serde(skip)]
    r_star: usize,
    n: Vec<u64>,
}

impl SourceKeySample {
    pub fn new(field: PrimeField, r_star: usize, n: Vec<u64>) -> Result<Self, ProtocolError> {
        if r_star == 0 || n.is_empty() || !n.len().is_multiple_of(r_star) {
            return Err(ProtocolError::CountMismatch {
                what: "source-key symbols (a positive multiple of r_star)",
                expected: r_star,
                actual: n.len(),
            });
        }
        for &x in &n {
            field.check_canonical(x)?;
        }
        Ok(Self { r_star, n })
    }

    /// Uniform symbols from the `source-key` stream of `seed`.
    pub fn random(params: &SystemParams, len: usize, seed: u64) -> Result<Self, ProtocolError> {
        let mut rng = stream_rng(seed, Stream::SourceKey);
        Self::sample(params, len, &mut rng)
    }

    pub fn sample<R: Rng>(params: &SystemParams, len: usize, rng: &mut R) -> Result<Self, ProtocolError> {
        let r = params.source_key_length();
        let q = params.modulus();
        let n = (0..r * len).map(|_| rng.gen_range(0..q)).collect();
        Self::new(params.field(), r, n)
    }

    pub fn r_star(&self) -> usize {
        self.r_star
    }

    /// Number of repetitions `L`.
    pub fn len(&self) -> usize {
        self.n.len() / self.r_star
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    pub fn slice(&self, i: usize) -> &[u64] {
        &self.n[i * self.r_star..(i + 1) * self.r_star]
    }

    pub fn symbols(&self) -> &[u64] {
        &self.n
    }
}

fn add_into(f: PrimeField, acc: &mut [u64], x: &[u64]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a = f.add(*a, b);
    }
}

/// Dealer: `Z_{u,v}` for every user, each of length `L`.
pub fn distribute_keys(
    table: &CoefficientTable,
    sample: &SourceKeySample,
) -> Result<Vec<Vec<u64>>, ProtocolError> {
    if sample.r_star() != table.r_star() {
        return Err(ProtocolError::CountMismatch {
            what: "source-key symbols per slice",
            expected: table.r_star(),
            actual: sample.r_star(),
        });
    }
    let f = table.field();
    let params = table.params();
    Ok(params
        .users()
        .map(|u| {
            let h = table.h(u);
            (0..sample.len()).map(|i| f.dot(h, sample.slice(i)).expect("equal widths")).collect()
        })
        .collect())
}

/// `X = W + Z`, symbol-wise.
pub fn user_encode(field: PrimeField, w: &[u64], z: &[u64]) -> Result<Vec<u64>, ProtocolError> {
    if w.len() != z.len() {
        return Err(ProtocolError::LengthMismatch { left: w.len(), right: z.len() });
    }
    Ok(w.iter().zip(z).map(|(&a, &b)| field.add(a, b)).collect())
}

/// `Y = sum of the messages`.
pub fn server_aggregate<R: AsRef<[u64]>>(field: PrimeField, xs: &[R]) -> Result<Vec<u64>, ProtocolError> {
    let first = xs.first().ok_or(ProtocolError::NoMessages)?.as_ref();
    let mut acc = first.to_vec();
    for x in &xs[1..] {
        let x = x.as_ref();
        if x.len() != acc.len() {
            return Err(ProtocolError::LengthMismatch { left: acc.len(), right: x.len() });
        }
        add_into(field, &mut acc, x);
    }
    Ok(acc)
}

/// Sum of the server's own first-hop messages and the other servers' broadcasts.
pub fn server_decode<A: AsRef<[u64]>, B: AsRef<[u64]>>(
    params: &SystemParams,
    own_xs: &[A],
    others_ys: &[B],
) -> Result<Vec<u64>, ProtocolError> {
    if own_xs.len() != params.users_per_server() {
        return Err(ProtocolError::CountMismatch {
            what: "own messages",
            expected: params.users_per_server(),
            actual: own_xs.len(),
        });
    }
    if others_ys.len() != params.servers() - 1 {
        return Err(ProtocolError::CountMismatch {
            what: "broadcasts",
            expected: params.servers() - 1,
            actual: others_ys.len(),
        });
    }
    let all: Vec<&[u64]> =
        own_xs.iter().map(AsRef::as_ref).chain(others_ys.iter().map(AsRef::as_ref)).collect();
    server_aggregate(params.field(), &all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    User(UserId),
    Server(#[serde(serialize_with = "one_based")] usize),
}

fn one_based<S: Serializer>(i: &usize, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(*i as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub hop: u8,
    pub from: Endpoint,
    pub to: Vec<Endpoint>,
    pub payload: Vec<u64>,
}

/// Every message of one run. Immutable once produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    params: SystemParams,
    inputs: Inputs,
    n: SourceKeySample,
    x: Vec<Vec<u64>>,
    y: Vec<Vec<u64>>,
    decoded: Vec<Vec<u64>>,
    events: Vec<Event>,
}

impl Transcript {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    pub fn source_key(&self) -> &SourceKeySample {
        &self.n
    }

    pub fn x(&self, user: UserId) -> &[u64] {
        &self.x[self.params.user_index(user)]
    }

    pub fn y(&self, server: usize) -> &[u64] {
        &self.y[server]
    }

    pub fn decoded(&self) -> &[Vec<u64>] {
        &self.decoded
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// All servers decoded the same value.
    pub fn servers_agree(&self) -> bool {
        self.decoded.windows(2).all(|w| w[0] == w[1])
    }

    /// All servers decoded `sum W`.
    pub fn is_correct(&self) -> bool {
        let total = self.inputs.total();
        self.decoded.iter().all(|d| *d == total)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }
}

impl Serialize for Transcript {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Transcript", 7)?;
        st.serialize_field("params", &self.params)?;
        st.serialize_field("inputs", &self.inputs)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("x", &grid(&self.params, &self.x))?;
        st.serialize_field("y", &self.y)?;
        st.serialize_field("decoded", &self.decoded)?;
        st.serialize_field("events", &self.events)?;
        st.end()
    }
}

pub fn run_protocol(
    params: &SystemParams,
    table: &CoefficientTable,
    inputs: &Inputs,
    sample: &SourceKeySample,
) -> Result<Transcript, ProtocolError> {
    let tp = table.params();
    if (tp.servers(), tp.users_per_server(), tp.max_colluders(), tp.modulus())
        != (params.servers(), params.users_per_server(), params.max_colluders(), params.modulus())
        || inputs.params.num_users() != params.num_users()
        || inputs.params.modulus() != params.modulus()
    {
        return Err(ProtocolError::TableMismatch);
    }
    if inputs.len() != sample.len() {
        return Err(ProtocolError::LengthMismatch { left: inputs.len(), right: sample.len() });
    }
    let f = params.field();
    let keys = distribute_keys(table, sample)?;
    let mut events = Vec::new();

    let mut x = Vec::with_capacity(params.num_users());
    for (i, user) in params.users().enumerate() {
        let msg = user_encode(f, &inputs.w[i], &keys[i])?;
        events.push(Event {
            hop: 1,
            from: Endpoint::User(user),
            to: vec![Endpoint::Server(user.server)],
            payload: msg.clone(),
        });
        x.push(msg);
    }

    let v = params.users_per_server();
    let mut y = Vec::with_capacity(params.servers());
    for u in 0..params.servers() {
        let msg = server_aggregate(f, &x[u * v..(u + 1) * v])?;
        events.push(Event {
            hop: 2,
            from: Endpoint::Server(u),
            to: (0..params.servers()).filter(|&k| k != u).map(Endpoint::Server).collect(),
            payload: msg.clone(),
        });
        y.push(msg);
    }

    let decoded = (0..params.servers())
        .map(|k| {
            let others: Vec<&Vec<u64>> = (0..params.servers()).filter(|&u| u != k).map(|u| &y[u]).collect();
            server_decode(params, &x[k * v..(k + 1) * v], &others)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Transcript {
        params: *params,
        inputs: inputs.clone(),
        n: sample.clone(),
        x,
        y,
        decoded,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyplan::{example1_table, example2_table};

    fn f(q: u64) -> PrimeField {
        PrimeField::new(q).unwrap()
    }

    #[test]
    fn encode() {
        assert_eq!(user_encode(f(11), &[4], &[9]).unwrap(), vec![2]);
        assert_eq!(user_encode(f(11), &[4, 5], &[0, 0]).unwrap(), vec![4, 5]);
        assert!(matches!(user_encode(f(11), &[1], &[1, 2]), Err(ProtocolError::LengthMismatch { .. })));
    }

    #[test]
    fn aggregate() {
        assert_eq!(server_aggregate(f(11), &[[7u64, 3]]).unwrap(), vec![7, 3]);
        assert_eq!(server_aggregate(f(11), &[[0u64], [0]]).unwrap(), vec![0]);
        assert_eq!(server_aggregate(f(11), &[[10u64], [5]]).unwrap(), vec![4]);
        let empty: [[u64; 1]; 0] = [];
        assert_eq!(server_aggregate(f(11), &empty), Err(ProtocolError::NoMessages));
    }

    #[test]
    fn decode_counts() {
        let p = SystemParams::new(3, 2, 0, 11, 0).unwrap();
        assert!(server_decode(&p, &[[1u64]], &[[1u64], [1]]).is_err());
        assert!(server_decode(&p, &[[1u64], [1]], &[[1u64]]).is_err());
        assert_eq!(server_decode(&p, &[[1u64], [2]], &[[3u64], [4]]).unwrap(), vec![10]);
    }

    #[test]
    fn example1_zero_inputs() {
        let t = example1_table();
        let p = *t.params();
        let inputs = Inputs::zeros(p, 1).unwrap();
        let n = SourceKeySample::new(p.field(), 3, vec![1, 2, 3]).unwrap();
        let tr = run_protocol(&p, &t, &inputs, &n).unwrap();
        // Keys h.(1,2,3) mod 11: 1, 2, 3, 14, 19, -39.
        let x: Vec<u64> = p.users().map(|u| tr.x(u)[0]).collect();
        assert_eq!(x, vec![1, 2, 3, 3, 8, 5]);
        assert_eq!(tr.y(0), &[3]);
        assert_eq!(tr.decoded(), &[vec![0], vec![0], vec![0]]);
        assert!(tr.servers_agree() && tr.is_correct());
    }

    #[test]
    fn example1_y1_is_n1_plus_n2() {
        let t = example1_table();
        let p = *t.params();
        let n = SourceKeySample::random(&p, 1, 5).unwrap();
        let tr = run_protocol(&p, &t, &Inputs::zeros(p, 1).unwrap(), &n).unwrap();
        assert_eq!(tr.y(0), &[p.field().add(n.symbols()[0], n.symbols()[1])]);
    }

    #[test]
    fn example2_random_runs_decode_the_sum() {
        let t = example2_table();
        let p = *t.params();
        for seed in 0..20 {
            let inputs = Inputs::random(p, 3, seed).unwrap();
            let n = SourceKeySample::random(&p, 3, seed).unwrap();
            let tr = run_protocol(&p, &t, &inputs, &n).unwrap();
            let mut direct = vec![0u64; 3];
            for u in p.users() {
                for (d, &w) in direct.iter_mut().zip(inputs.get(u)) {
                    *d = (*d + w) % 17;
                }
            }
            assert_eq!(tr.decoded()[1], direct);
            assert!(tr.is_correct());
        }
    }

    #[test]
    fn repetition_is_slice_wise() {
        let t = example2_table();
        let p = *t.params();
        let inputs = Inputs::random(p, 4, 9).unwrap();
        let n = SourceKeySample::random(&p, 4, 9).unwrap();
        let full = run_protocol(&p, &t, &inputs, &n).unwrap();
        for i in 0..4 {
            let w: Vec<Vec<u64>> = p.users().map(|u| vec![inputs.get(u)[i]]).collect();
            let one = run_protocol(
                &p,
                &t,
                &Inputs::new(p, w).unwrap(),
                &SourceKeySample::new(p.field(), 6, n.slice(i).to_vec()).unwrap(),
            )
            .unwrap();
            for u in p.users() {
                assert_eq!(one.x(u)[0], full.x(u)[i]);
            }
            assert_eq!(one.decoded()[0][0], full.decoded()[0][i]);
        }
    }

    #[test]
    fn events_are_ordered() {
        let t = example1_table();
        let p = *t.params();
        let tr = run_protocol(&p, &t, &Inputs::random(p, 1, 1).unwrap(), &SourceKeySample::random(&p, 1, 1).unwrap())
            .unwrap();
        let ev = tr.events();
        assert_eq!(ev.len(), 9);
        assert!(ev[..6].iter().all(|e| e.hop == 1));
        assert_eq!(ev[3].from, Endpoint::User(UserId::new(1, 1)));
        assert_eq!(ev[7].from, Endpoint::Server(1));
        assert_eq!(ev[7].to, vec![Endpoint::Server(0), Endpoint::Server(2)]);
        let json = tr.to_json();
        let keys: Vec<usize> = ["\"params\"", "\"inputs\"", "\"n\"", "\"x\"", "\"y\"", "\"decoded\"", "\"events\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(json.contains("\"from\": {\n        \"user\": [\n          2,\n          2\n        ]"));
    }

    #[test]
    fn masking_is_a_bijection() {
        let t = example2_table();
        let p = *t.params();
        let n = SourceKeySample::random(&p, 1, 3).unwrap();
        let z = distribute_keys(&t, &n).unwrap();
        let user = UserId::new(1, 2);
        let mut seen: Vec<u64> =
            (0..17).map(|w| user_encode(p.field(), &[w], &z[p.user_index(user)]).unwrap()[0]).collect();
        seen.sort();
        assert_eq!(seen, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_shapes() {
        let t = example1_table();
        let p = *t.params();
        assert!(Inputs::new(p, vec![vec![1]; 5]).is_err());
        assert!(Inputs::new(p, vec![vec![11]; 6]).is_err());
        assert!(SourceKeySample::new(p.field(), 3, vec![1, 2]).is_err());
        let inputs = Inputs::zeros(p, 2).unwrap();
        let n = SourceKeySample::random(&p, 1, 0).unwrap();
        assert!(run_protocol(&p, &t, &inputs, &n).is_err());
        let other = SystemParams::new(3, 3, 2, 17, 0).unwrap();
        let n = SourceKeySample::random(&p, 2, 0).unwrap();
        assert_eq!(run_protocol(&other, &t, &inputs, &n), Err(ProtocolError::TableMismatch));
    }
}
