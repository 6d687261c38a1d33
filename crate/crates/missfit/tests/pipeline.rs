use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::PathBuf;

use missfit::bench::{self, Loaded, Replication};
use missfit::config::{CsvSource, ExperimentConfig, Source};
use missfit_core::cv::{kfold_cv, CvMetric};
use missfit_core::methods::{Grids, Method};
use missfit_core::{seed, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dataset whose first feature is the row id (never missing).
fn tagged_csv(dir: &std::path::Path, n: usize) -> PathBuf {
    let mut rng = seed::rng(3);
    let mut body = String::from("id,a,b,y\n");
    for i in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let y = a - b + 0.1 * rng.sample::<f64, _>(StandardNormal);
        let cell = |v: f64, miss: bool| if miss { String::new() } else { v.to_string() };
        body.push_str(&format!("{i},{},{},{y}\n", cell(a, rng.random_bool(0.3)), cell(b, a > 0.8)));
    }
    let path = dir.join("tagged.csv");
    std::fs::write(&path, body).unwrap();
    path
}

fn config(path: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        name: "tagged".into(),
        source: Source::Csv(CsvSource { path, target: "y".into() }),
        methods: vec![],
        replications: 3,
        test_fraction: 0.3,
        folds: 4,
        grids: Grids {
            n_lambda: 3,
            forest_trees: 5,
            ..Grids::default()
        },
        seed: 8,
    }
}

fn ids(x: &Matrix) -> Vec<usize> {
    x.column(0).into_iter().map(|v| v as usize).collect()
}

#[test]
fn splits_are_disjoint_and_cv_only_reads_training_rows() {
    let dir = tempfile::tempdir().unwrap();
    let n = 150;
    let cfg = config(tagged_csv(dir.path(), n));
    let loaded = bench::load(&cfg).unwrap();
    for rep in 0..cfg.replications {
        let data = bench::prepare(&cfg, &loaded, rep).unwrap();
        let train: BTreeSet<usize> = ids(data.train.x()).into_iter().collect();
        let test: BTreeSet<usize> = ids(data.test.x()).into_iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), n);
        assert_eq!(test.len(), 45);

        let touched = RefCell::new(BTreeSet::new());
        let validated = RefCell::new(Vec::new());
        kfold_cv(&data.train, &[0usize, 1], cfg.folds, 5, CvMetric::NegMse, |_, fit, val| {
            touched.borrow_mut().extend(ids(fit.x()));
            touched.borrow_mut().extend(ids(val.x()));
            validated.borrow_mut().extend(ids(val.x()));
            Ok(vec![0.0; val.n()])
        })
        .unwrap();
        assert!(touched.borrow().is_subset(&train));
        let mut v = validated.into_inner();
        v.sort();
        let mut expected: Vec<usize> = train.iter().flat_map(|&i| [i, i]).collect();
        expected.sort();
        assert_eq!(v, expected, "each training row is validated once per grid point");
    }
}

#[test]
fn training_side_ignores_test_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(tagged_csv(dir.path(), 120));
    let loaded = bench::load(&cfg).unwrap();
    let data = bench::prepare(&cfg, &loaded, 0).unwrap();

    // corrupt every test row; anything fitted on training data must not notice
    let mut x = data.test.x().clone();
    for v in x.as_mut_slice() {
        *v = *v * 1e3 + 7.0;
    }
    let y: Vec<f64> = data.test.y().iter().map(|v| v + 1e6).collect();
    let poisoned = Replication {
        train: data.train.clone(),
        test: data.test.with_x(x).unwrap().with_y(y).unwrap(),
        x_full_train: None,
        x_full_test: None,
    };
    for name in ["static", "affine_intercept", "finite", "joint_linear", "mean_best", "cart_mia", "rf_mia", "complete_features"] {
        let method = Method::parse(name).unwrap();
        let a = bench::evaluate(&cfg, method, 0, &data, false).unwrap();
        let b = bench::evaluate(&cfg, method, 0, &poisoned, false).unwrap();
        assert_eq!(a[1].to_bits(), b[1].to_bits(), "{name}: training score moved");
        assert_ne!(a[0].to_bits(), b[0].to_bits(), "{name}: test score ignored the test rows");
    }
    assert!(matches!(loaded, Loaded::Fixed { .. }));
}
