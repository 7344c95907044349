mod common;

use std::fs;

use common::beta_cdf;
use penalized_sampler::data::{dirichlet_oracle, gen_linear, load_csv, save_csv};
use penalized_sampler::diagnostics::{ks_statistic, mean, variance};
use penalized_sampler::Error;

#[test]
fn noiseless_rows_are_exact() {
    let d = gen_linear(100, &[1.0, 1.0], 0.0, 3).unwrap();
    for (a, y) in d.features().iter().zip(d.responses()) {
        assert_eq!(*y, a[0] + a[1]);
    }
}

#[test]
fn response_variance_and_ols() {
    let d = gen_linear(10_000, &[1.0, 1.0], 0.25, 0).unwrap();
    assert!((variance(d.responses()) - 2.25).abs() < 0.1);
    let ols = d.ols().unwrap();
    assert!(common::dist(&ols, &[1.0, 1.0]) <= 0.05);
    assert_eq!(d, gen_linear(10_000, &[1.0, 1.0], 0.25, 0).unwrap());
    assert_ne!(d, gen_linear(10_000, &[1.0, 1.0], 0.25, 1).unwrap());
}

#[test]
fn standardization() {
    let d = gen_linear(1000, &[2.0, -1.0, 0.5], 0.1, 8).unwrap();
    let s = d.standardize(true).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = s.features().iter().map(|r| r[j]).collect();
        assert!(mean(&col).abs() < 1e-12);
        let pop = variance(&col) * 999.0 / 1000.0;
        assert!((pop - 1.0).abs() < 1e-12);
    }
    assert!(mean(s.responses()).abs() < 1e-12);
    assert!(s.provenance.contains("standardized"));
}

#[test]
fn csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let d = gen_linear(50, &[0.1, 3.0], 1.0, 2).unwrap();
    save_csv(&d, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.features(), d.features());
    assert_eq!(back.responses(), d.responses());

    fs::write(&path, "a_0,a_1,y\n").unwrap();
    assert!(load_csv(&path).unwrap().is_empty());

    fs::write(&path, "a_0,a_1,y\n1,2,3\n1,oops,3\n").unwrap();
    match load_csv(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    fs::write(&path, "a_0,a_1,y\n1,2,3\n1,2\n").unwrap();
    assert!(matches!(load_csv(&path), Err(Error::Schema(_))));
    fs::write(&path, "x,y\n1,2\n").unwrap();
    assert!(matches!(load_csv(&path), Err(Error::Schema(_))));
}

#[test]
fn dirichlet_reference_sampler() {
    let draws = dirichlet_oracle(&[1.0, 2.0, 2.0], 10_000, 5).unwrap();
    for x in &draws {
        assert!(x.iter().all(|&v| v >= 0.0));
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for (j, want) in [0.2, 0.4, 0.4].iter().enumerate() {
        let col: Vec<f64> = draws.iter().map(|x| x[j]).collect();
        assert!((mean(&col) - want).abs() < 0.02);
    }
    let first: Vec<f64> = draws.iter().map(|x| x[0]).collect();
    let ks = ks_statistic(&first, |t| beta_cdf(t, 1.0, 4.0)).unwrap();
    assert!(ks <= 0.02, "KS = {ks}");

    let uniform = dirichlet_oracle(&[1.0, 1.0, 1.0], 10_000, 6).unwrap();
    for j in 0..3 {
        let col: Vec<f64> = uniform.iter().map(|x| x[j]).collect();
        assert!((mean(&col) - 1.0 / 3.0).abs() < 0.02);
    }
    assert_eq!(draws, dirichlet_oracle(&[1.0, 2.0, 2.0], 10_000, 5).unwrap());
}
