use std::collections::BTreeMap;

use cylfin::catalog::{catalog, catalog_instance, catalog_verify, verify_instance, Expectation, VerifyOptions};

fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

#[test]
fn every_entry_verifies_with_defaults() {
    for e in catalog() {
        let inst = catalog_instance(e.id, &BTreeMap::new(), 3).unwrap();
        let rep = verify_instance(&inst, &VerifyOptions { samples: 25, reference_points: 10, seed: 3 });
        let failed: Vec<_> = rep.checks.iter().filter(|c| !c.passed).collect();
        assert!(rep.passed, "{}: {failed:?}", e.id);
        assert_eq!(e.douglas, Expectation::Yes);
    }
}

#[test]
fn euclidean_report() {
    let rep = catalog_verify("euclidean", &BTreeMap::new(), 1).unwrap();
    assert!(rep.passed);
    assert_eq!(rep.projectively_flat, Some(true));
    assert_eq!(rep.check("douglas vanishing").unwrap().max_abs, 0.0);
    assert!(rep.discrepancies.is_empty());
}

#[test]
fn exponential_family_is_douglas_but_not_flat() {
    let rep = catalog_verify("ex4.3", &params(&[("g", "exp(r^2/2)"), ("h", "1/2")]), 2).unwrap();
    assert!(rep.passed);
    assert!(rep.check("douglas vanishing").unwrap().max_abs < 1e-9);
    assert_eq!(rep.projectively_flat, Some(false));
}

#[test]
fn last_family_matches_its_reference_u() {
    let rep = catalog_verify("ex4.6", &params(&[("g", "1+r^2"), ("h", "1/2"), ("f", "2+sin(x0)")]), 4).unwrap();
    assert!(rep.passed);
    let u = rep.check("reference U").unwrap();
    assert!(u.passed && u.max_abs < 1e-8);
}

#[test]
fn sign_error_in_reference_is_reported_not_failed() {
    let rep = catalog_verify("ex4.2", &BTreeMap::new(), 5).unwrap();
    assert!(rep.passed);
    let d = rep.discrepancies.iter().find(|d| d.field == "U").expect("U discrepancy");
    assert!((d.computed + d.expected).abs() < 1e-12 * d.expected.abs().max(1.0));
    assert!(d.max_abs_diff > 1e-3);
    assert!(rep.check("reference T").unwrap().passed);
}

#[test]
fn first_family_references_agree() {
    let rep = catalog_verify("ex4.1", &params(&[("k", "1")]), 6).unwrap();
    assert!(rep.discrepancies.is_empty(), "{:?}", rep.discrepancies);
    for f in ["U", "R", "T"] {
        assert!(rep.check(&format!("reference {f}")).unwrap().passed);
    }
}
