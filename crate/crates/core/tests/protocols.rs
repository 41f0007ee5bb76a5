use std::path::PathBuf;

use fldp::catalog;
use fldp::protocol::DEFAULT_VALIDATION_GRID;
use fldp::{Error, RateProtocol};

fn file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../protocols").join(name)
}

#[test]
fn shipped_files_match_catalog() {
    let pairs = [
        ("p1.json", catalog::p1()),
        ("p2.json", catalog::p2()),
        ("p3.json", catalog::p3()),
        ("p3_sine.json", catalog::p3_sine()),
        ("piecewise.json", catalog::piecewise_three_state()),
    ];
    for (name, expected) in pairs {
        let loaded = RateProtocol::load(file(name)).unwrap();
        assert_eq!(&loaded, expected.protocol(), "{name}");
    }
    let shutdown = RateProtocol::load(file("shutdown.json")).unwrap();
    assert_eq!(shutdown, catalog::half_period_shutdown());
}

#[test]
fn one_sided_file_fails_ergodic_consistency() {
    let p = RateProtocol::load(file("one_sided.json")).unwrap();
    let report = p.validate(DEFAULT_VALIDATION_GRID).unwrap();
    assert!(!report.passed);
    let hits = report
        .violations
        .iter()
        .filter(|v| v.check == "ergodic_consistency")
        .count();
    assert_eq!(hits, report.grid_points);
    assert!(matches!(
        p.into_validated(DEFAULT_VALIDATION_GRID),
        Err(Error::ErgodicConsistency { .. })
    ));
}

#[test]
fn shutdown_file_is_irreducible_only_late() {
    let p = RateProtocol::load(file("shutdown.json")).unwrap();
    let report = p.validate(DEFAULT_VALIDATION_GRID).unwrap();
    assert!(report.passed);
    assert!(!report.irreducible_times.is_empty());
    assert!(report.irreducible_times.iter().all(|&t| t > 0.5 && t < 1.0));
}

#[test]
fn json_round_trip() {
    let p = catalog::piecewise_three_state();
    let text = serde_json::to_string(&p.protocol().to_file()).unwrap();
    assert_eq!(&RateProtocol::from_json(&text).unwrap(), p.protocol());
}
