//! Machine checks of correctness, collusion security, the converse lemma bounds and the rates
//! for one coefficient table, all through the rank calculus.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::collusion::{all_cases, binomial, count_sets, ColludingSet};
use crate::entropy::{conditional_entropy, entropy, mutual_information, EntropyError, LinearVariable, SourceLayout};
use crate::keyplan::{key_variable, validate_table, CoefficientTable, KeyPlanError, TableDocument, ValidationFailure};
use crate::oracle::{brute_security_check, OracleBudget, OracleError, OracleSecurity};
use crate::params::{SystemParams, UserId};
use crate::protocol::{run_protocol, Inputs, SourceKeySample};
use crate::rng::{stream_rng, Stream};

pub const SCHEMA_VERSION: u32 = 1;
pub const CORRECTNESS_TRIALS: usize = 1000;
pub const LEMMA_SAMPLES: usize = 100;
/// Above this many MI evaluations the exhaustive policy falls back to sampling.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;
pub const FALLBACK_SAMPLES: usize = 10_000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SECURITY: i32 = 2;
pub const EXIT_CORRECTNESS: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssuranceError {
    #[error("server {0} is out of range")]
    ServerOutOfRange(usize),
    #[error("colluding set {0} is not admissible")]
    BadColludingSet(ColludingSet),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    KeyPlan(#[from] KeyPlanError),
}

/// Every protocol variable as a linear map over `[W_{1,1} .. W_{U,V} | N_1 .. N_r]`.
#[derive(Debug, Clone)]
pub struct SchemeModel {
    table: CoefficientTable,
    layout: SourceLayout,
    w: Vec<LinearVariable>,
    z: Vec<LinearVariable>,
    x: Vec<LinearVariable>,
    y: Vec<LinearVariable>,
    sum_w: LinearVariable,
    source_key: Vec<LinearVariable>,
}

impl SchemeModel {
    pub fn new(table: &CoefficientTable) -> Result<Self, AssuranceError> {
        let params = *table.params();
        let layout = SourceLayout::new(table.field(), params.num_users(), table.r_star());
        let mut w = Vec::new();
        let mut z = Vec::new();
        let mut x = Vec::new();
        for (i, user) in params.users().enumerate() {
            let wi = LinearVariable::selector(format!("W{user}"), layout, layout.input_column(i))?;
            let zi = key_variable(table, user, layout)?;
            x.push(wi.plus(&zi, format!("X{user}"))?);
            w.push(wi);
            z.push(zi);
        }
        let v = params.users_per_server();
        let y = (0..params.servers())
            .map(|u| LinearVariable::sum(format!("Y{}", u + 1), layout, 1, &x[u * v..(u + 1) * v]))
            .collect::<Result<Vec<_>, _>>()?;
        let sum_w = LinearVariable::sum("sumW", layout, 1, &w)?;
        let source_key = (0..table.r_star())
            .map(|i| LinearVariable::selector(format!("N{}", i + 1), layout, layout.key_column(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { table: table.clone(), layout, w, z, x, y, sum_w, source_key })
    }

    pub fn params(&self) -> &SystemParams {
        self.table.params()
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.table
    }

    pub fn layout(&self) -> SourceLayout {
        self.layout
    }

    fn idx(&self, user: UserId) -> usize {
        self.params().user_index(user)
    }

    pub fn w(&self, user: UserId) -> &LinearVariable {
        &self.w[self.idx(user)]
    }

    pub fn z(&self, user: UserId) -> &LinearVariable {
        &self.z[self.idx(user)]
    }

    pub fn x(&self, user: UserId) -> &LinearVariable {
        &self.x[self.idx(user)]
    }

    pub fn y(&self, server: usize) -> &LinearVariable {
        &self.y[server]
    }

    pub fn sum_w(&self) -> &LinearVariable {
        &self.sum_w
    }

    pub fn all_w(&self) -> Vec<&LinearVariable> {
        self.w.iter().collect()
    }

    pub fn all_z(&self) -> Vec<&LinearVariable> {
        self.z.iter().collect()
    }

    /// `N_1, ..., N_r`.
    pub fn source_key(&self) -> Vec<&LinearVariable> {
        self.source_key.iter().collect()
    }

    /// `{X_{k,v}}_v` followed by `{Y_u}_{u != k}`.
    pub fn server_view(&self, k: usize) -> Result<Vec<&LinearVariable>, AssuranceError> {
        let p = self.params();
        if k >= p.servers() {
            return Err(AssuranceError::ServerOutOfRange(k));
        }
        let own = (0..p.users_per_server()).map(|s| self.x(UserId::new(k, s)));
        let others = (0..p.servers()).filter(|&u| u != k).map(|u| self.y(u));
        Ok(own.chain(others).collect())
    }

    /// `{W_t, Z_t}` for `t` in the set.
    pub fn revealed(&self, users: impl IntoIterator<Item = UserId>) -> Vec<&LinearVariable> {
        users.into_iter().flat_map(|u| [self.w(u), self.z(u)]).collect()
    }

    /// What server `k` decodes, as a linear map.
    pub fn decoder(&self, k: usize) -> Result<LinearVariable, AssuranceError> {
        let view = self.server_view(k)?;
        Ok(LinearVariable::sum(format!("decoded{}", k + 1), self.layout, 1, view)?)
    }

    /// `I(view_k; W_all | sum W, {W, Z}_T)`.
    pub fn security_mi(&self, k: usize, set: &ColludingSet) -> Result<usize, AssuranceError> {
        if !set.iter().all(|u| self.params().contains(u)) {
            return Err(AssuranceError::BadColludingSet(set.clone()));
        }
        let view = self.server_view(k)?;
        let mut given = vec![&self.sum_w];
        given.extend(self.revealed(set.iter()));
        Ok(mutual_information(&view, &self.all_w(), &given)?)
    }
}

/// `server_view` without building a model by hand.
pub fn server_view(table: &CoefficientTable, k: usize) -> Result<Vec<LinearVariable>, AssuranceError> {
    let model = SchemeModel::new(table)?;
    Ok(model.server_view(k)?.into_iter().cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrectnessReport {
    /// One-based servers whose decoder is not exactly `sum W`.
    pub symbolic_failures: Vec<usize>,
    pub trials: usize,
    pub trials_passed: usize,
    pub ok: bool,
}

/// Symbolic identity `decoder_k - sum W = 0` for every `k`, plus seeded concrete runs.
pub fn verify_correctness(model: &SchemeModel, trials: usize, seed: u64) -> Result<CorrectnessReport, AssuranceError> {
    let params = *model.params();
    let mut symbolic_failures = Vec::new();
    for k in 0..params.servers() {
        if !model.decoder(k)?.minus(model.sum_w(), "residual")?.is_zero() {
            symbolic_failures.push(k + 1);
        }
    }
    let mut rng = stream_rng(seed, Stream::Trials);
    let mut passed = 0;
    for _ in 0..trials {
        let inputs = Inputs::sample(params, 1, &mut rng).expect("valid shape");
        let n = SourceKeySample::sample(&params, 1, &mut rng).expect("valid shape");
        let tr = run_protocol(&params, model.table(), &inputs, &n).expect("consistent dimensions");
        if tr.is_correct() {
            passed += 1;
        }
    }
    Ok(CorrectnessReport {
        ok: symbolic_failures.is_empty() && passed == trials,
        symbolic_failures,
        trials,
        trials_passed: passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Every `(k, T)`, unless that exceeds [`EXHAUSTIVE_LIMIT`].
    Exhaustive,
    /// This many seeded uniform draws of `(k, T)`.
    Sample(usize),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Exhaustive => write!(f, "exhaustive"),
            Policy::Sample(n) => write!(f, "sample:{n}"),
        }
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "exhaustive" {
            return Ok(Policy::Exhaustive);
        }
        match s.strip_prefix("sample:").map(str::parse::<usize>) {
            Some(Ok(n)) if n > 0 => Ok(Policy::Sample(n)),
            _ => Err(format!("invalid policy `{s}`, expected `exhaustive` or `sample:N` with N > 0")),
        }
    }
}

impl Serialize for Policy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailingCase {
    #[serde(serialize_with = "one_based")]
    pub server: usize,
    pub colluders: ColludingSet,
    pub mi: usize,
}

fn one_based<S: Serializer>(i: &usize, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(*i as u64 + 1)
}

fn u128_str<S: Serializer>(n: &u128, s: S) -> Result<S::Ok, S::Error> {
    match u64::try_from(*n) {
        Ok(n) => s.serialize_u64(n),
        Err(_) => s.collect_str(n),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecurityReport {
    pub policy: Policy,
    /// `U * sum_{t <= T} C(UV, t)`.
    #[serde(serialize_with = "u128_str")]
    pub total_cases: u128,
    pub evaluations: usize,
    pub distinct_cases: usize,
    /// Every case was evaluated.
    pub complete: bool,
    pub failing_cases: Vec<FailingCase>,
    pub ok: bool,
}

impl SecurityReport {
    pub fn coverage(&self) -> f64 {
        self.distinct_cases as f64 / self.total_cases as f64
    }
}

fn sample_case<R: Rng>(params: &SystemParams, rng: &mut R) -> (usize, ColludingSet) {
    let n = params.num_users();
    let k = rng.gen_range(0..params.servers());
    // Size with probability proportional to the number of sets of that size.
    let weights: Vec<u128> = (0..=params.max_colluders()).map(|t| binomial(n, t).unwrap_or(u128::MAX)).collect();
    let total: u128 = weights.iter().fold(0u128, |a, &w| a.saturating_add(w));
    let mut pick = rng.gen_range(0..total);
    let mut size = 0;
    for (t, &w) in weights.iter().enumerate() {
        if pick < w {
            size = t;
            break;
        }
        pick -= w;
    }
    let idx: Vec<usize> = sample_indices(rng, n, size).into_vec();
    (k, ColludingSet::from_indices(params, &idx))
}

/// `I(view_k; W_all | sum W, {W,Z}_T) = 0` over the cases selected by `policy`.
pub fn verify_security(model: &SchemeModel, policy: Policy, seed: u64) -> Result<SecurityReport, AssuranceError> {
    let params = *model.params();
    let total_cases = count_sets(params.num_users(), params.max_colluders())
        .and_then(|c| c.checked_mul(params.servers() as u128))
        .unwrap_or(u128::MAX);
    let cases: Vec<(usize, ColludingSet)> = match policy {
        Policy::Exhaustive if total_cases <= EXHAUSTIVE_LIMIT => all_cases(&params),
        Policy::Exhaustive => draw_cases(&params, FALLBACK_SAMPLES, seed),
        Policy::Sample(n) => draw_cases(&params, n, seed),
    };
    let distinct: BTreeSet<&(usize, ColludingSet)> = cases.iter().collect();
    let distinct_cases = distinct.len();

    let values: Vec<usize> = cases
        .par_iter()
        .map(|(k, set)| model.security_mi(*k, set))
        .collect::<Result<_, _>>()?;
    let mut failing_cases: Vec<FailingCase> = Vec::new();
    let mut reported = BTreeSet::new();
    for ((k, set), mi) in cases.iter().zip(values) {
        if mi != 0 && reported.insert((*k, set.clone())) {
            failing_cases.push(FailingCase { server: *k, colluders: set.clone(), mi });
        }
    }
    Ok(SecurityReport {
        policy,
        total_cases,
        evaluations: cases.len(),
        distinct_cases,
        complete: distinct_cases as u128 == total_cases,
        ok: failing_cases.is_empty(),
        failing_cases,
    })
}

fn draw_cases(params: &SystemParams, n: usize, seed: u64) -> Vec<(usize, ColludingSet)> {
    let mut rng = stream_rng(seed, Stream::Sampling);
    (0..n).map(|_| sample_case(params, &mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaKind {
    /// Per-message bounds; a failure means a message cannot carry the sum.
    MessageSize,
    /// Collection and key-independence bounds; a failure means some key correlation is exposed.
    KeyIndependence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LemmaCheck {
    pub name: String,
    pub kind: LemmaKind,
    pub detail: String,
    pub bound: usize,
    pub achieved: usize,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
    /// Collection and key bounds need `T <= (U-1)(V-1)`.
    pub sampled_bounds_skipped: bool,
    pub ok: bool,
}

impl LemmaReport {
    pub fn failures(&self, kind: LemmaKind) -> usize {
        self.checks.iter().filter(|c| c.kind == kind && !c.satisfied).count()
    }
}

fn fmt_users(users: &[UserId]) -> String {
    ColludingSet::new(users.iter().copied()).to_string()
}

fn fmt_servers(servers: &[usize]) -> String {
    let parts: Vec<String> = servers.iter().map(|s| (s + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

fn check(name: &str, kind: LemmaKind, detail: String, bound: usize, achieved: usize) -> LemmaCheck {
    LemmaCheck { name: name.to_string(), kind, detail, bound, achieved, satisfied: achieved >= bound }
}

fn random_subset<R: Rng>(rng: &mut R, from: &[usize]) -> Vec<usize> {
    loop {
        let s: Vec<usize> = from.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

/// Lower bounds from the converse, evaluated on this scheme:
/// per-message bounds for every index, collection and key bounds on seeded samples, and the
/// source-key bound on the joint entropy of all individual keys.
pub fn verify_lemma_bounds(model: &SchemeModel, samples: usize, seed: u64) -> Result<LemmaReport, AssuranceError> {
    let params = *model.params();
    let (u_count, v_count) = (params.servers(), params.users_per_server());
    let mut checks = Vec::new();

    for user in params.users() {
        let others = model.revealed(params.users().filter(|&o| o != user));
        let h = conditional_entropy(&[model.x(user)], &others)?;
        checks.push(check("message_x", LemmaKind::MessageSize, format!("X{user}"), 1, h));
    }
    for user in params.users() {
        let others = model.revealed(params.users().filter(|&o| o != user));
        let h = conditional_entropy(&[model.y(user.server)], &others)?;
        checks.push(check(
            "message_y",
            LemmaKind::MessageSize,
            format!("Y{} given all but {user}", user.server + 1),
            1,
            h,
        ));
    }

    let all_z = model.all_z();
    let bound = params.source_key_length();
    checks.push(check("source_key", LemmaKind::KeyIndependence, "H(Z_all)".into(), bound, entropy(&all_z)?));

    let sampled = params.small_collusion();
    if sampled {
        let mut rng = stream_rng(seed, Stream::Lemmas);
        let slots: Vec<usize> = (0..v_count).collect();
        for _ in 0..samples {
            let up = rng.gen_range(0..u_count);
            let vp = rng.gen_range(0..v_count);
            let region: Vec<UserId> = params.users().filter(|u| u.server != up && u.slot != vp).collect();
            let size = rng.gen_range(0..=params.max_colluders().min(region.len()));
            let colluders: Vec<UserId> =
                sample_indices(&mut rng, region.len(), size).into_iter().map(|i| region[i]).collect();
            let slots_v = random_subset(&mut rng, &slots);
            let other_servers: Vec<usize> = (0..u_count).filter(|&u| u != up).collect();
            let servers_u = random_subset(&mut rng, &other_servers);

            let revealed = model.revealed(colluders.iter().copied());
            let tag = format!("u'={}, T={}", up + 1, fmt_users(&colluders));

            let xs: Vec<&LinearVariable> = slots_v.iter().map(|&v| model.x(UserId::new(up, v))).collect();
            checks.push(check(
                "collection_x",
                LemmaKind::KeyIndependence,
                format!("{tag}, V={}", fmt_servers(&slots_v)),
                slots_v.len(),
                conditional_entropy(&xs, &revealed)?,
            ));

            let ys: Vec<&LinearVariable> = servers_u.iter().map(|&u| model.y(u)).collect();
            let mut given: Vec<&LinearVariable> = (0..v_count).map(|v| model.x(UserId::new(up, v))).collect();
            given.extend(revealed.iter().copied());
            checks.push(check(
                "collection_y",
                LemmaKind::KeyIndependence,
                format!("{tag}, U={}", fmt_servers(&servers_u)),
                servers_u.len(),
                conditional_entropy(&ys, &given)?,
            ));

            let zs: Vec<&LinearVariable> = slots_v.iter().map(|&v| model.z(UserId::new(up, v))).collect();
            let zt: Vec<&LinearVariable> = colluders.iter().map(|&u| model.z(u)).collect();
            checks.push(check(
                "keys_given_colluders",
                LemmaKind::KeyIndependence,
                format!("{tag}, V={}", fmt_servers(&slots_v)),
                slots_v.len(),
                conditional_entropy(&zs, &zt)?,
            ));
            checks.push(check("colluder_keys", LemmaKind::KeyIndependence, tag, colluders.len(), entropy(&zt)?));
        }
    }

    Ok(LemmaReport { ok: checks.iter().all(|c| c.satisfied), checks, sampled_bounds_skipped: !sampled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rates {
    #[serde(rename = "R_X")]
    pub x: usize,
    #[serde(rename = "R_Y")]
    pub y: usize,
    #[serde(rename = "R_Z")]
    pub z: usize,
    #[serde(rename = "R_ZSigma")]
    pub source_key: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RateReport {
    pub achieved: Rates,
    pub lower_bound: Rates,
    pub optimal: bool,
}

/// Symbols per input symbol of each message and key, against `(1, 1, 1, min{U+V+T-2, UV-1})`.
pub fn rate_report(model: &SchemeModel) -> RateReport {
    let p = *model.params();
    let first = UserId::new(0, 0);
    let achieved = Rates {
        x: model.x(first).symbols(),
        y: model.y(0).symbols(),
        z: model.z(first).symbols(),
        source_key: model.layout().num_key_symbols(),
    };
    let lower_bound = Rates { x: 1, y: 1, z: 1, source_key: p.source_key_length() };
    RateReport { achieved, lower_bound, optimal: achieved == lower_bound }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OracleCrossCheck {
    Skipped { reason: String },
    Ran { secure: bool, agrees_with_rank: bool, cases: usize, states_per_case: String },
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub policy: Policy,
    pub seed: u64,
    pub trials: usize,
    pub lemma_samples: usize,
    pub oracle: Option<OracleBudget>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            policy: Policy::Exhaustive,
            seed: 0,
            trials: CORRECTNESS_TRIALS,
            lemma_samples: LEMMA_SAMPLES,
            oracle: Some(OracleBudget::default()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssuranceReport {
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub table: TableDocument,
    pub table_validation: Option<ValidationFailure>,
    pub correctness_ok: bool,
    pub security_ok: bool,
    pub correctness: CorrectnessReport,
    pub security: SecurityReport,
    pub lemma_checks: LemmaReport,
    pub rates: RateReport,
    pub oracle: OracleCrossCheck,
    pub exit_code: i32,
}

impl AssuranceReport {
    /// Security problems outrank correctness problems, which outrank partial coverage.
    pub fn exit_code(&self) -> i32 {
        self.exit_code
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data");
        s.push('\n');
        s
    }
}

fn exit_code_for(
    validation: &Option<ValidationFailure>,
    correctness: &CorrectnessReport,
    security: &SecurityReport,
    lemmas: &LemmaReport,
    oracle: &OracleCrossCheck,
) -> i32 {
    let oracle_insecure = matches!(oracle, OracleCrossCheck::Ran { secure: false, .. });
    let dependent = matches!(validation, Some(ValidationFailure::Dependent { .. }));
    let zero_sum = matches!(validation, Some(ValidationFailure::ZeroSum { .. }));
    if !security.ok || dependent || oracle_insecure || lemmas.failures(LemmaKind::KeyIndependence) > 0 {
        EXIT_SECURITY
    } else if !correctness.ok || zero_sum || lemmas.failures(LemmaKind::MessageSize) > 0 {
        EXIT_CORRECTNESS
    } else if !security.complete {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

/// The full suite: table validation, correctness, security, lemma bounds, rates and, when the
/// enumeration fits the budget, the exhaustive oracle.
pub fn verify(table: &CoefficientTable, config: serde_json::Value, opts: &VerifyOptions) -> Result<AssuranceReport, AssuranceError> {
    let model = SchemeModel::new(table)?;
    let table_validation = validate_table(table).err();
    let correctness = verify_correctness(&model, opts.trials, opts.seed)?;
    let security = verify_security(&model, opts.policy, opts.seed)?;
    let lemma_checks = verify_lemma_bounds(&model, opts.lemma_samples, opts.seed)?;
    let rates = rate_report(&model);
    let oracle = match opts.oracle {
        None => OracleCrossCheck::Skipped { reason: "disabled".into() },
        Some(budget) => match brute_security_check(table, &budget) {
            Ok(OracleSecurity { secure, cases, states_per_case, .. }) => OracleCrossCheck::Ran {
                secure,
                agrees_with_rank: secure == security.ok,
                cases,
                states_per_case: states_per_case.to_string(),
            },
            Err(e @ OracleError::OverBudget { .. }) => OracleCrossCheck::Skipped { reason: e.to_string() },
            Err(e) => OracleCrossCheck::Skipped { reason: format!("oracle error: {e}") },
        },
    };
    let exit_code = exit_code_for(&table_validation, &correctness, &security, &lemma_checks, &oracle);
    Ok(AssuranceReport {
        schema_version: SCHEMA_VERSION,
        config,
        table: table.to_document(),
        table_validation,
        correctness_ok: correctness.ok,
        security_ok: security.ok,
        correctness,
        security,
        lemma_checks,
        rates,
        oracle,
        exit_code,
    })
}
