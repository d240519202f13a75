use dslda::datagen::{generate_shard, synthetic_model};
use dslda::ingest::{
    kfold_tune, preprocess, split_train_test, Cell, ColumnKind, ColumnSchema, RawTable, Schema, SiteTable,
};
use dslda::linalg::DenseMatrix;
use dslda::metrics::Class;
use proptest::prelude::*;

fn column() -> impl Strategy<Value = ColumnSchema> {
    prop_oneof![
        Just(ColumnSchema::numeric("")),
        (2usize..5).prop_map(|k| {
            let levels: Vec<String> = (0..k).map(|i| format!("L{i}")).collect();
            let refs: Vec<&str> = levels.iter().map(String::as_str).collect();
            ColumnSchema::categorical("", &refs)
        }),
    ]
}

fn table() -> impl Strategy<Value = (Schema, RawTable)> {
    (proptest::collection::vec(column(), 1..6), 1usize..15, any::<u64>()).prop_map(|(mut cols, n, seed)| {
        for (i, c) in cols.iter_mut().enumerate() {
            c.name = format!("c{i}");
        }
        cols.push(ColumnSchema::label("y", None));
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        let rows = (0..n)
            .map(|i| {
                cols.iter()
                    .map(|c| match c.kind {
                        // row 0 always observed so no column is entirely missing
                        ColumnKind::Numeric if i > 0 && next() % 3 == 0 => Cell::Missing,
                        ColumnKind::Numeric => Cell::Number((next() % 1000) as f64 / 10.0),
                        ColumnKind::Categorical => {
                            Cell::Level(next() as usize % c.categories.as_ref().unwrap().len())
                        }
                        ColumnKind::Label => Cell::Label(if next() % 2 == 0 { Class::One } else { Class::Two }),
                    })
                    .collect()
            })
            .collect();
        (Schema::new(cols).unwrap(), RawTable { rows })
    })
}

fn site(seed: u64, n1: usize, n2: usize) -> SiteTable {
    let n = n1 + n2;
    let data = (0..n).flat_map(|i| [i as f64, (seed % 7) as f64]).collect();
    SiteTable {
        site_id: (seed % 4) as usize,
        features: DenseMatrix::new(n, 2, data).unwrap(),
        labels: (0..n).map(|i| if i < n1 { Class::One } else { Class::Two }).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocess_width_and_completeness((schema, raw) in table()) {
        let (x, y) = preprocess(&raw, &schema).unwrap();
        let expected: usize = schema.columns().iter().map(|c| match c.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical => c.categories.as_ref().unwrap().len() - 1,
            ColumnKind::Label => 0,
        }).sum();
        prop_assert_eq!(x.cols(), expected);
        prop_assert_eq!(x.rows(), raw.len());
        prop_assert_eq!(y.len(), raw.len());
        prop_assert!(x.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn split_is_a_seeded_partition(seed in any::<u64>(), n1 in 4usize..20, n2 in 4usize..20, frac in 0.5f64..0.75) {
        let s = site(seed, n1, n2);
        let (train, test) = split_train_test(&s, frac, seed).unwrap();
        prop_assert_eq!(train.n1(), (frac * n1 as f64).floor() as usize);
        prop_assert_eq!(train.n2(), (frac * n2 as f64).floor() as usize);
        prop_assert_eq!(train.n1() + test.x.rows(), n1);
        prop_assert_eq!(train.n2() + test.y.rows(), n2);
        let mut ids: Vec<usize> = [train.x(), train.y(), &test.x, &test.y]
            .iter()
            .flat_map(|m| (0..m.rows()).map(|i| m.get(i, 0) as usize).collect::<Vec<_>>())
            .collect();
        ids.sort();
        prop_assert_eq!(ids, (0..n1 + n2).collect::<Vec<_>>());
        let again = split_train_test(&s, frac, seed).unwrap();
        prop_assert_eq!(again.0, train);
        prop_assert_eq!(again.1, test);
    }
}

fn training_sites() -> Vec<dslda::worker::DataShard> {
    let model = synthetic_model(11, 0.5).unwrap();
    (0..3).map(|l| generate_shard(&model, 25, 25, 77, l).unwrap()).collect()
}

#[test]
fn singleton_grid_returns_its_pair() {
    let r = kfold_tune(&training_sites(), &[0.7], &[1.3], 5, 1).unwrap();
    assert_eq!((r.lambda_c, r.t_c), (0.7, 1.3));
    assert!((0.0..=1.0).contains(&r.cv_misclass));
}

#[test]
fn tuned_pair_is_the_grid_minimum() {
    let sites = training_sites();
    let c_grid = [0.3, 0.8, 1.5];
    let t_grid = [0.0, 1.0, 2.0];
    let best = kfold_tune(&sites, &c_grid, &t_grid, 4, 9).unwrap();
    let mut cells = Vec::new();
    for &c in &c_grid {
        for &t in &t_grid {
            cells.push((c, t, kfold_tune(&sites, &[c], &[t], 4, 9).unwrap().cv_misclass));
        }
    }
    let min = cells.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let first = cells.iter().find(|c| c.2 == min).unwrap();
    assert_eq!((best.lambda_c, best.t_c, best.cv_misclass), *first);
}

#[test]
fn tuning_is_deterministic() {
    let sites = training_sites();
    let a = kfold_tune(&sites, &[0.5, 1.0], &[0.0, 1.0], 3, 4).unwrap();
    let b = kfold_tune(&sites, &[0.5, 1.0], &[0.0, 1.0], 3, 4).unwrap();
    assert_eq!(a, b);
}
