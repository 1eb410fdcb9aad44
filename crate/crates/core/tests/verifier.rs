//! Forward and converse properties of the optimality verifier.

use ldpbd::designs::{
    complete_design, fano_design, hadamard_design, projective_design, trivial_design, IncidenceMatrix, Polarity,
};
use ldpbd::formats::{tpm_from_csv, write_matrix_csv};
use ldpbd::mechanism::{build_mechanism, optimal_subset_size, PrivacyParam, TransitionMatrix};
use ldpbd::optimality::{check_binary_structure, extract_design, verify_optimal, Failure};
use proptest::prelude::*;

fn constructed() -> Vec<(String, IncidenceMatrix)> {
    let mut out = vec![("fano".to_string(), fano_design())];
    for v in 3..=9 {
        out.push((format!("trivial({v})"), trivial_design(v).unwrap()));
        for k in 1..v {
            out.push((format!("complete({v},{k})"), complete_design(v, k).unwrap()));
        }
    }
    for t in 2..=5 {
        out.push((format!("hadamard({t},plus)"), hadamard_design(t, Polarity::Plus).unwrap()));
        out.push((format!("hadamard({t},minus)"), hadamard_design(t, Polarity::Minus).unwrap()));
    }
    for (p, t) in [(2, 2), (2, 3), (3, 2), (3, 3), (2, 4), (5, 3), (7, 3)] {
        out.push((format!("projective({p},{t})"), projective_design(p, t).unwrap()));
    }
    out
}

fn epsilon_grid() -> Vec<PrivacyParam> {
    (1..=40)
        .map(|i| PrivacyParam::new(0.075 * i as f64).unwrap())
        .chain([PrivacyParam::from_exp(4.0 / 3.0).unwrap()])
        .collect()
}

#[test]
fn accepts_exactly_the_optimal_block_size() {
    let mut accepted = 0;
    for (name, a) in constructed() {
        for eps in epsilon_grid() {
            let (q, spec) = build_mechanism(&a, eps).unwrap();
            let report = verify_optimal(&q, eps);
            let optimal = optimal_subset_size(a.v(), eps).unwrap();
            if spec.design.k == optimal {
                assert!(report.is_minimax_optimal, "{name} at {}: {:?}", eps.epsilon(), report.failures);
                accepted += 1;
            } else {
                assert!(!report.is_minimax_optimal, "{name} at {}", eps.epsilon());
                assert_eq!(
                    report.failures,
                    vec![Failure::SubsetSize { row_weight: spec.design.k, optimal }],
                    "{name} at {}",
                    eps.epsilon()
                );
            }
        }
    }
    assert!(accepted > 100, "only {accepted} accepted cases");
}

#[test]
fn two_inputs_are_never_accepted() {
    let eps = PrivacyParam::new(1.0).unwrap();
    let (q, _) = build_mechanism(&trivial_design(2).unwrap(), eps).unwrap();
    let report = verify_optimal(&q, eps);
    assert!(!report.is_minimax_optimal);
    assert!(report.failures.contains(&Failure::TooFewInputs { v: 2 }));
}

#[test]
fn accepted_mechanisms_yield_certified_designs() {
    for (name, a) in constructed() {
        for eps in epsilon_grid() {
            let (q, spec) = build_mechanism(&a, eps).unwrap();
            let report = verify_optimal(&q, eps);
            if !report.is_minimax_optimal {
                continue;
            }
            let positions = check_binary_structure(&q, 1e-9).unwrap().positions;
            let ext = extract_design(&positions).unwrap();
            let p = ext.params;
            assert_eq!(p, spec.design, "{name}");
            assert_eq!(report.design, Some(p));
            let g = ext.incidence.gram();
            for i in 0..p.v {
                for j in 0..p.v {
                    let want = if i == j { p.r } else { p.lambda };
                    assert_eq!(g[i * p.v + j], want, "{name}: A'A({i},{j})");
                }
            }
            assert_eq!(report.c1, Some((p.r - p.lambda) as f64));
            assert_eq!(report.c2, Some(p.lambda as f64));
            assert_eq!(report.reconstructs, Some(true));
        }
    }
}

#[test]
fn reconstruction_is_exact_to_round_off() {
    for (name, a) in constructed() {
        let eps = PrivacyParam::new(0.6).unwrap();
        let (q, spec) = build_mechanism(&a, eps).unwrap();
        let small = spec.small;
        for i in 0..q.outputs() {
            for j in 0..q.inputs() {
                let want = small * (f64::from(a.get(i, j)) * eps.e_eps_m1() + 1.0);
                assert!((q.get(i, j) - want).abs() <= 1e-12, "{name} ({i},{j})");
            }
        }
    }
}

#[test]
fn csv_round_trip_keeps_the_verdict() {
    for (name, a) in constructed() {
        let eps = PrivacyParam::new(0.45).unwrap();
        let (q, _) = build_mechanism(&a, eps).unwrap();
        let back = tpm_from_csv(&write_matrix_csv(&q.to_rows()), 1e-9).unwrap();
        let direct = verify_optimal(&q, eps);
        let reread = verify_optimal(&back, eps);
        assert_eq!(direct.is_minimax_optimal, reread.is_minimax_optimal, "{name}");
        assert_eq!(direct.failures, reread.failures, "{name}");
    }
}

#[test]
fn report_is_deterministic() {
    let eps = PrivacyParam::from_exp(2.0).unwrap();
    let (q, _) = build_mechanism(&fano_design(), eps).unwrap();
    let text = write_matrix_csv(&q.to_rows());
    let first = serde_json::to_string(&verify_optimal(&tpm_from_csv(&text, 1e-9).unwrap(), eps)).unwrap();
    for _ in 0..5 {
        let again = serde_json::to_string(&verify_optimal(&tpm_from_csv(&text, 1e-9).unwrap(), eps)).unwrap();
        assert_eq!(first, again);
    }
}

fn accepted_cases() -> Vec<(TransitionMatrix, PrivacyParam)> {
    let ln43 = PrivacyParam::from_exp(4.0 / 3.0).unwrap();
    let ln2 = PrivacyParam::from_exp(2.0).unwrap();
    let mut out = vec![
        (build_mechanism(&fano_design(), ln43).unwrap().0, ln43),
        (build_mechanism(&complete_design(7, 2).unwrap(), ln2).unwrap().0, ln2),
    ];
    // (13, 13, 4, 4, 1): q = 4 needs 13 / (e^eps + 1) = 4
    let eps = PrivacyParam::from_exp(2.25).unwrap();
    out.push((build_mechanism(&projective_design(3, 3).unwrap(), eps).unwrap().0, eps));
    let eps = PrivacyParam::new(1.0).unwrap();
    out.push((
        build_mechanism(&complete_design(9, optimal_subset_size(9, eps).unwrap()).unwrap(), eps).unwrap().0,
        eps,
    ));
    for (q, eps) in &out {
        assert!(verify_optimal(q, *eps).is_minimax_optimal);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn single_entry_perturbations_are_rejected(
        case in 0usize..4,
        row in 0usize..1000,
        col in 0usize..1000,
        magnitude in 1e-6f64..1e-2,
        negative in any::<bool>(),
    ) {
        let (q, eps) = accepted_cases().swap_remove(case);
        let (i, j) = (row % q.outputs(), col % q.inputs());
        let mut m = q.as_matrix().clone();
        m[(i, j)] += if negative { -magnitude } else { magnitude };
        prop_assume!(m[(i, j)] > 0.0);
        let perturbed = TransitionMatrix::with_tolerance(m, 0.1).unwrap();
        let report = verify_optimal(&perturbed, eps);
        prop_assert!(!report.is_minimax_optimal);
        prop_assert!(!report.is_binary || !report.ratio_ok || !report.gram_ok || !report.subset_size_ok);
    }
}
