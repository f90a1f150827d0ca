use proptest::prelude::*;

use secagg::assurance::{verify_correctness, verify_security, Policy, SchemeModel};
use secagg::collusion::{partition_colluders, ColludingSet};
use secagg::entropy::{conditional_entropy, entropy, mutual_information, LinearVariable, SourceLayout};
use secagg::field::{FieldMatrix, PrimeField};
use secagg::keyplan::{generate_table, validate_table, CoefficientTable};
use secagg::oracle::{brute_entropy, brute_mi, OracleBudget};
use secagg::params::{SystemParams, UserId};
use secagg::protocol::{run_protocol, Inputs, SourceKeySample};

const PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];

fn matrix(q: u64, rows: usize, cols: usize) -> impl Strategy<Value = FieldMatrix> {
    prop::collection::vec(prop::collection::vec(0..q, cols), rows)
        .prop_map(move |r| FieldMatrix::from_rows(PrimeField::new(q).unwrap(), cols, &r).unwrap())
}

/// A layout plus three random collections of one-symbol variables on it.
fn triple(qs: &'static [u64], max_cols: usize) -> impl Strategy<Value = (SourceLayout, Vec<Vec<LinearVariable>>)> {
    (prop::sample::select(qs), 1..=max_cols).prop_flat_map(|(q, cols)| {
        let row = prop::collection::vec(0..q, cols);
        let group = prop::collection::vec(row, 0..4);
        prop::collection::vec(group, 3).prop_map(move |groups| {
            let layout = SourceLayout::new(PrimeField::new(q).unwrap(), cols / 2, cols - cols / 2);
            let vars = groups
                .into_iter()
                .enumerate()
                .map(|(g, rows)| {
                    rows.into_iter()
                        .enumerate()
                        .map(|(i, r)| LinearVariable::from_row(format!("v{g}.{i}"), layout, &r).unwrap())
                        .collect()
                })
                .collect();
            (layout, vars)
        })
    })
}

fn refs(v: &[LinearVariable]) -> Vec<&LinearVariable> {
    v.iter().collect()
}

proptest! {
    #[test]
    fn field_inverse_and_negation(q in prop::sample::select(&PRIMES[..]), a in 0u64..13, b in 0u64..13) {
        let f = PrimeField::new(q).unwrap();
        let (a, b) = (a % q, b % q);
        prop_assert_eq!(f.sub(f.add(a, b), b), a);
        prop_assert_eq!(f.add(a, f.neg(a)), 0);
        if a != 0 {
            prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
        }
    }

    #[test]
    fn rank_equals_transpose_rank(
        m in prop::sample::select(&PRIMES[..]).prop_flat_map(|q| (1usize..7, 1usize..7).prop_flat_map(move |(r, c)| matrix(q, r, c)))
    ) {
        prop_assert_eq!(m.rank(), m.transpose().rank());
        prop_assert!(m.rank() <= m.rows().min(m.cols()));
        prop_assert_eq!(m.row_reduce().rank(), m.rank());
    }

    #[test]
    fn entropy_identities((_, g) in triple(&PRIMES, 8)) {
        let (a, b, c) = (refs(&g[0]), refs(&g[1]), refs(&g[2]));
        let ab: Vec<&LinearVariable> = a.iter().chain(&b).copied().collect();
        let bc: Vec<&LinearVariable> = b.iter().chain(&c).copied().collect();
        // Chain rule.
        prop_assert_eq!(entropy(&ab).unwrap(), entropy(&a).unwrap() + conditional_entropy(&b, &a).unwrap());
        // Monotonicity.
        prop_assert!(conditional_entropy(&a, &bc).unwrap() <= conditional_entropy(&a, &b).unwrap());
        // Submodularity: computing the MI never underflows, and it is symmetric.
        let mi = mutual_information(&a, &b, &c).unwrap();
        prop_assert_eq!(mi, mutual_information(&b, &a, &c).unwrap());
        prop_assert!(mi <= conditional_entropy(&a, &c).unwrap());
        // Subadditivity.
        prop_assert!(entropy(&ab).unwrap() <= entropy(&a).unwrap() + entropy(&b).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_matches_rank((layout, g) in triple(&[2, 3, 5], 10)) {
        let budget = OracleBudget { max_states: 10_000_000 };
        prop_assume!(layout.total() <= 10);
        let (a, b, c) = (refs(&g[0]), refs(&g[1]), refs(&g[2]));
        prop_assert_eq!(brute_entropy(&a, &budget).unwrap(), entropy(&a).unwrap());
        prop_assert_eq!(brute_mi(&a, &b, &c, &budget).unwrap(), mutual_information(&a, &b, &c).unwrap());
    }
}

fn shape() -> impl Strategy<Value = (usize, usize, usize)> {
    (3usize..=4, 1usize..=3).prop_flat_map(|(u, v)| (Just(u), Just(v), 0..=((u - 1) * (v - 1)).min(3)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_reproducible_and_tight((u, v, t) in shape(), seed in any::<u64>()) {
        let p = SystemParams::new(u, v, t, 257, seed).unwrap();
        let a = generate_table(&p, 1000).unwrap();
        let b = generate_table(&p, 1000).unwrap();
        prop_assert_eq!(&a.table, &b.table);
        prop_assert!(a.table.is_zero_sum());
        prop_assert!(validate_table(&a.table).is_ok());
        // Key entropy meets the source-key bound with equality.
        let m = SchemeModel::new(&a.table).unwrap();
        prop_assert_eq!(entropy(&m.all_z()).unwrap(), u + v + t - 2);
        prop_assert_eq!(CoefficientTable::from_json(&a.table.to_json(), seed).unwrap(), a.table);
    }

    #[test]
    fn runs_decode_the_sum((u, v, t) in shape(), seed in any::<u64>(), len in 1usize..5) {
        let p = SystemParams::new(u, v, t, 101, seed).unwrap();
        let table = generate_table(&p, 1000).unwrap().table;
        let inputs = Inputs::random(p, len, seed).unwrap();
        let n = SourceKeySample::random(&p, len, seed).unwrap();
        let tr = run_protocol(&p, &table, &inputs, &n).unwrap();
        prop_assert!(tr.is_correct() && tr.servers_agree());
        for s in 0..u {
            let mut y = vec![0u64; len];
            for slot in 0..v {
                for (acc, &x) in y.iter_mut().zip(tr.x(UserId::new(s, slot))) {
                    *acc = (*acc + x) % 101;
                }
            }
            prop_assert_eq!(tr.y(s), &y[..]);
        }
    }

    #[test]
    fn mutations_are_valid_or_flagged(
        (u, v, t) in shape(),
        seed in any::<u64>(),
        user in any::<prop::sample::Index>(),
        coord in any::<prop::sample::Index>(),
        value in 0u64..31,
    ) {
        let p = SystemParams::new(u, v, t, 31, seed).unwrap();
        let table = generate_table(&p, 1000).unwrap().table;
        let who = p.user_at(user.index(p.num_users()));
        let mutant = table.with_entry(who, coord.index(table.r_star()), value);
        let m = SchemeModel::new(&mutant).unwrap();
        let correct = verify_correctness(&m, 5, seed).unwrap().ok;
        let secure = verify_security(&m, Policy::Exhaustive, seed).unwrap().ok;
        if correct && secure {
            prop_assert!(validate_table(&mutant).is_ok());
        } else {
            prop_assert!(validate_table(&mutant).is_err());
        }
    }

    /// The table check and the MI check agree on arbitrary zero-sum tables over small fields.
    #[test]
    fn validation_matches_security(
        (u, v, t) in (Just(3usize), 1usize..=3).prop_flat_map(|(u, v)| (Just(u), Just(v), 0..=(u * v - 1).min(3))),
        q in prop::sample::select(&[2u64, 3, 5][..]),
        entries in prop::collection::vec(0u64..5, 64),
    ) {
        let p = SystemParams::new(u, v, t, q, 0).unwrap();
        let r = p.source_key_length();
        let f = p.field();
        let mut rows: Vec<Vec<u64>> = (0..p.num_users() - 1)
            .map(|i| (0..r).map(|j| entries[(i * r + j) % entries.len()] % q).collect())
            .collect();
        let last = (0..r).map(|j| rows.iter().fold(0, |acc, row| f.sub(acc, row[j]))).collect();
        rows.push(last);
        let table = CoefficientTable::from_rows(p, &rows).unwrap();
        let secure = verify_security(&SchemeModel::new(&table).unwrap(), Policy::Exhaustive, 0).unwrap().ok;
        prop_assert_eq!(validate_table(&table).is_ok(), secure);
    }

    #[test]
    fn partitions_cover_the_set(
        (u, v) in (3usize..=5, 1usize..=4),
        picks in prop::collection::btree_set(0usize..20, 0..8),
        k in 0usize..5,
    ) {
        let p = SystemParams::new(u, v, u * v, 11, 0).unwrap();
        let set = ColludingSet::new(picks.into_iter().filter(|&i| i < u * v).map(|i| p.user_at(i)));
        let part = partition_colluders(&p, &set, k % u);
        prop_assert_eq!(part.t1.len() + part.t2.len() + part.t3.len(), set.len());
        prop_assert!(!part.u2.contains(&(k % u)));
        prop_assert!(part.t2.iter().all(|t| part.u2.contains(&t.server)));
    }
}
