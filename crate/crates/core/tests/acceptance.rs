//! Acceptance suite. Every criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.
//!
//! Built without the libtest harness so the report always prints:
//! `cargo test -p ldpbd --test acceptance`.

use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ldpbd::designs::{
    blocks_from_incidence, complete_design, fano_design, hadamard_design, incidence_from_blocks, projective_design,
    trivial_design, verify_design, IncidenceMatrix, Polarity,
};
use ldpbd::estimation::{debias_with_weights, minimax_bound, trace_inverse_gram, trace_inverse_gram_dense};
use ldpbd::mechanism::{
    binary_randomiser, build_mechanism, gram_matrix, induced_distribution, optimal_subset_size, Distribution,
    PrivacyParam, TransitionMatrix,
};
use ldpbd::optimality::{extract_design, verify_optimal, Failure};
use ldpbd::simulation::{run_experiment, DesignSpec, SimConfig};
use ldpbd::DesignParams;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ln43() -> PrivacyParam {
    PrivacyParam::from_exp(4.0 / 3.0).unwrap()
}

fn ln2() -> PrivacyParam {
    PrivacyParam::from_exp(2.0).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_dev(m: &DMatrix<f64>, expected: impl Fn(usize, usize) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - expected(i, j)).abs());
        }
    }
    worst
}

/// Brute-force pair count straight from the block list.
fn pair_count_params(a: &IncidenceMatrix) -> Option<DesignParams> {
    let blocks = blocks_from_incidence(a).blocks;
    let v = a.v();
    let k = blocks[0].len();
    if blocks.iter().any(|b| b.len() != k) {
        return None;
    }
    let r = blocks.iter().filter(|b| b.contains(&0)).count();
    if (0..v).any(|p| blocks.iter().filter(|b| b.contains(&p)).count() != r) {
        return None;
    }
    let lambda = blocks.iter().filter(|b| b.contains(&0) && b.contains(&1)).count();
    for i in 0..v {
        for j in i + 1..v {
            if blocks.iter().filter(|b| b.contains(&i) && b.contains(&j)).count() != lambda {
                return None;
            }
        }
    }
    Some(DesignParams { v, b: blocks.len(), r, k, lambda })
}

fn criterion_1_gram_structure() -> Outcome {
    let (q, _) = build_mechanism(&fano_design(), ln43()).unwrap();
    let nu = Distribution::uniform(7);
    let mut best = Duration::MAX;
    let mut g = gram_matrix(&q, &nu).unwrap();
    for _ in 0..20 {
        let start = Instant::now();
        g = gram_matrix(&q, &nu).unwrap();
        best = best.min(start.elapsed());
    }
    let dev = max_dev(&g, |i, j| if i == j { 7.0 / 288.0 + 287.0 / 288.0 } else { 287.0 / 288.0 });
    ensure(dev <= 1e-12, || format!("max deviation {dev:e}"))?;
    ensure(best < Duration::from_millis(1), || format!("took {best:?}"))?;
    Ok(format!("max deviation {dev:e}, {best:?}"))
}

fn criterion_2_trace_inverse() -> Outcome {
    let (q, _) = build_mechanism(&fano_design(), ln43()).unwrap();
    let nu = Distribution::uniform(7);
    let closed = trace_inverse_gram(&q, &nu).unwrap();
    let dense = trace_inverse_gram_dense(&q, &nu).unwrap();
    let target = 1729.0 / 7.0;
    ensure((closed - target).abs() <= 1e-9, || format!("closed form {closed}"))?;
    ensure((dense - target).abs() <= 1e-9, || format!("dense {dense}"))?;
    Ok(format!("closed {closed}, dense {dense}"))
}

fn criterion_3_minimax_bound() -> Outcome {
    let u = Distribution::uniform(7);
    let b3 = minimax_bound(7, 3, ln43(), &u).unwrap();
    let b1 = minimax_bound(7, 1, ln43(), &u).unwrap();
    ensure((b3 - 1728.0 / 7.0).abs() <= 1e-9, || format!("k=3 bound {b3}"))?;
    ensure((b1 - 8712.0 / 21.0).abs() <= 1e-9, || format!("k=1 bound {b1}"))?;
    Ok(format!("k=3 {b3}, k=1 {b1}"))
}

fn criterion_4_monte_carlo() -> Outcome {
    let eps = (4f64 / 3.0).ln();
    let start = Instant::now();
    let mut notes = Vec::new();
    for (spec, target) in [(DesignSpec::Fano, 1728.0 / 7.0), (DesignSpec::Trivial { v: 7 }, 8712.0 / 21.0)] {
        let cfg = SimConfig::new(spec.clone(), eps, 10_000, 2000, 20_251_015);
        let (summary, _) = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let se = summary.std_error.ok_or("missing standard error")?;
        let gap = (summary.mean_n_risk - target).abs();
        ensure(gap <= 5.0 * se, || format!("{spec}: mean {} vs {target}, se {se}", summary.mean_n_risk))?;
        notes.push(format!("{spec}: {:.3} (target {target:.3}, se {se:.3})", summary.mean_n_risk));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{}; {elapsed:.1?}", notes.join("; ")))
}

fn accepted(a: &IncidenceMatrix, eps: PrivacyParam) -> Result<(), String> {
    let (q, _) = build_mechanism(a, eps).map_err(|e| e.to_string())?;
    let report = verify_optimal(&q, eps);
    ensure(report.is_minimax_optimal, || format!("rejected: {:?}", report.failures))?;
    let ext = extract_design(&q_positions(&q)).map_err(|e| e.to_string())?;
    let p = ext.params;
    let g = ext.incidence.gram();
    for i in 0..p.v {
        for j in 0..p.v {
            let c1 = if i == j { p.r - p.lambda } else { 0 };
            ensure(g[i * p.v + j] == c1 + p.lambda, || format!("A'A({i},{j}) = {}", g[i * p.v + j]))?;
        }
    }
    let (c1, c2) = (report.c1.unwrap(), report.c2.unwrap());
    ensure((c1 - (p.r - p.lambda) as f64).abs() <= 1e-9 && (c2 - p.lambda as f64).abs() <= 1e-9, || {
        format!("fitted ({c1}, {c2}) vs {p}")
    })
}

fn q_positions(q: &TransitionMatrix) -> Vec<Vec<u8>> {
    ldpbd::optimality::check_binary_structure(q, 1e-9).unwrap().positions
}

fn criterion_5_converse() -> Outcome {
    let mut accepted_count = 0;
    accepted(&projective_design(2, 3).unwrap(), ln43())?;
    accepted(&hadamard_design(3, Polarity::Plus).unwrap(), ln43())?;
    accepted(&complete_design(7, 2).unwrap(), ln2())?;
    accepted_count += 3;
    for v in 4..=10 {
        for e in [0.25, 0.5, (4f64 / 3.0).ln(), 1.0, 2f64.ln(), 2.0] {
            let eps = PrivacyParam::new(e).unwrap();
            let q = optimal_subset_size(v, eps).unwrap();
            accepted(&complete_design(v, q).unwrap(), eps).map_err(|m| format!("complete({v},{q}) eps {e}: {m}"))?;
            accepted_count += 1;
        }
    }

    let blocks: Vec<Vec<usize>> = (0..7).map(|i| vec![i, (i + 1) % 7, (i + 2) % 7]).collect();
    let cyclic = binary_randomiser(&incidence_from_blocks(&blocks, 7).unwrap(), ln43()).unwrap();
    let r = verify_optimal(&cyclic, ln43());
    ensure(!r.is_minimax_optimal && !r.gram_ok, || "cyclic shift accepted".into())?;
    ensure(r.failures.iter().any(|f| matches!(f, Failure::Gram { structural: false, .. })), || {
        format!("cyclic shift failures {:?}", r.failures)
    })?;

    let (fano2, _) = build_mechanism(&fano_design(), ln2()).unwrap();
    let r = verify_optimal(&fano2, ln2());
    ensure(!r.is_minimax_optimal && r.ratio_ok && r.gram_ok && r.is_bibd, || format!("fano@ln2 {r:?}"))?;
    ensure(r.failures == vec![Failure::SubsetSize { row_weight: 3, optimal: 2 }], || {
        format!("fano@ln2 {:?}", r.failures)
    })?;

    let (fano, _) = build_mechanism(&fano_design(), ln43()).unwrap();
    let mut perturbed = 0;
    for i in 0..7 {
        for j in 0..7 {
            for delta in [1e-3, -1e-3] {
                let mut m = fano.as_matrix().clone();
                m[(i, j)] += delta;
                let q = TransitionMatrix::with_tolerance(m, 1e-2).unwrap();
                let r = verify_optimal(&q, ln43());
                ensure(!r.is_binary && !r.is_minimax_optimal, || format!("perturbation at ({i},{j}) accepted"))?;
                ensure(matches!(r.failures[..], [Failure::MoreThanTwoValues { .. }]), || format!("{:?}", r.failures))?;
                perturbed += 1;
            }
        }
    }
    Ok(format!("{accepted_count} accepted, 2 named rejections, {perturbed} perturbations rejected"))
}

fn criterion_6_designs() -> Outcome {
    let cases = [
        ("projective(2,3)", projective_design(2, 3).unwrap(), (7, 7, 3, 3, 1)),
        ("hadamard(3,plus)", hadamard_design(3, Polarity::Plus).unwrap(), (7, 7, 3, 3, 1)),
        ("hadamard(3,minus)", hadamard_design(3, Polarity::Minus).unwrap(), (7, 7, 4, 4, 2)),
        ("complete(7,2)", complete_design(7, 2).unwrap(), (7, 21, 6, 2, 1)),
    ];
    for (name, a, (v, b, r, k, lambda)) in cases {
        let expected = DesignParams { v, b, r, k, lambda };
        let verified = verify_design(&a).map_err(|e| format!("{name}: {e}"))?;
        ensure(verified == expected, || format!("{name}: verify gives {verified}"))?;
        ensure(pair_count_params(&a) == Some(expected), || format!("{name}: pair count disagrees"))?;
    }
    Ok("4 designs certified".into())
}

fn all_mechanisms() -> Vec<(String, IncidenceMatrix, PrivacyParam)> {
    let mut designs: Vec<(String, IncidenceMatrix)> = vec![("fano".into(), fano_design())];
    for v in [2, 3, 7, 10] {
        designs.push((format!("trivial({v})"), trivial_design(v).unwrap()));
    }
    for (v, k) in [(3, 2), (4, 2), (7, 2), (7, 3), (8, 3)] {
        designs.push((format!("complete({v},{k})"), complete_design(v, k).unwrap()));
    }
    for t in [2, 3, 4] {
        designs.push((format!("hadamard({t},plus)"), hadamard_design(t, Polarity::Plus).unwrap()));
        designs.push((format!("hadamard({t},minus)"), hadamard_design(t, Polarity::Minus).unwrap()));
    }
    for (p, t) in [(2, 2), (2, 3), (3, 3), (2, 4)] {
        designs.push((format!("projective({p},{t})"), projective_design(p, t).unwrap()));
    }
    let mut out = Vec::new();
    for (name, a) in designs {
        for e in [0.3, (4f64 / 3.0).ln(), 1.0, 2.5] {
            out.push((name.clone(), a.clone(), PrivacyParam::new(e).unwrap()));
        }
    }
    out
}

fn criterion_7_unbiasedness() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (name, a, eps) in all_mechanisms() {
        let (q, _) = build_mechanism(&a, eps).unwrap();
        for _ in 0..3 {
            let weights: Vec<f64> = (0..q.outputs()).map(|_| rng.gen_range(0.01..100.0)).collect();
            let l = debias_with_weights(&q, &weights).map_err(|e| format!("{name}: {e}"))?;
            let dev = max_dev(&(l.as_matrix() * q.as_matrix()), |i, j| if i == j { 1.0 } else { 0.0 });
            worst = worst.max(dev);
            ensure(dev <= 1e-10, || format!("{name} eps {}: |LQ - I| = {dev:e}", eps.epsilon()))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} weightings, worst {worst:e}"))
}

fn criterion_8_subset_size() -> Outcome {
    let mut checked = 0;
    for v in 3..=12usize {
        for e in [0.1, 0.25, 0.5, (4f64 / 3.0).ln(), 1.0, 2f64.ln(), 2.0] {
            let eps = PrivacyParam::new(e).unwrap();
            let mut best_k = 0;
            let mut best = f64::NEG_INFINITY;
            for k in 1..v {
                let (q, _) = build_mechanism(&complete_design(v, k).unwrap(), eps).unwrap();
                let nu = induced_distribution(&q, &Distribution::uniform(v)).unwrap();
                let tr = gram_matrix(&q, &nu).unwrap().trace();
                if tr > best * (1.0 + 1e-12) {
                    best = tr;
                    best_k = k;
                }
            }
            let q = optimal_subset_size(v, eps).unwrap();
            ensure(q == best_k, || format!("v={v} eps={e}: formula {q}, brute force {best_k}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (v, eps) pairs agree"))
}

fn criterion_9_gram_invariance() -> Outcome {
    for e in [0.2, (4f64 / 3.0).ln(), 1.0, 2.0] {
        let eps = PrivacyParam::new(e).unwrap();
        let (fano, fs) = build_mechanism(&fano_design(), eps).unwrap();
        let (comp, cs) = build_mechanism(&complete_design(7, 3).unwrap(), eps).unwrap();
        let gf = gram_matrix(&fano, &Distribution::uniform(7)).unwrap();
        let gc = gram_matrix(&comp, &Distribution::uniform(35)).unwrap();
        let dev = (&gf - &gc).abs().max();
        ensure(dev <= 1e-12, || format!("eps {e}: Gram deviation {dev:e}"))?;
        let u = Distribution::uniform(7);
        let bf = minimax_bound(7, fs.design.k, eps, &u).unwrap();
        let bc = minimax_bound(7, cs.design.k, eps, &u).unwrap();
        ensure(bf == bc, || format!("eps {e}: bounds {bf} vs {bc}"))?;
        let tf = trace_inverse_gram(&fano, &Distribution::uniform(7)).unwrap();
        let tc = trace_inverse_gram(&comp, &Distribution::uniform(35)).unwrap();
        ensure((tf - tc).abs() <= 1e-9, || format!("eps {e}: trace inverse {tf} vs {tc}"))?;
    }
    Ok("Fano and complete(7,3) agree at 4 budgets".into())
}

fn criterion_10_two_rr() -> Outcome {
    let (q, _) = build_mechanism(&trivial_design(2).unwrap(), PrivacyParam::new(2f64.ln()).unwrap()).unwrap();
    let rows = q.to_rows();
    ensure(rows == vec![vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]], || format!("{rows:?}"))?;
    Ok(format!("{rows:?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1  Gram structure", criterion_1_gram_structure),
        ("2  trace-inverse", criterion_2_trace_inverse),
        ("3  minimax bound", criterion_3_minimax_bound),
        ("4  Monte Carlo agreement", criterion_4_monte_carlo),
        ("5  converse verifier suite", criterion_5_converse),
        ("6  design certifications", criterion_6_designs),
        ("7  unbiasedness identity", criterion_7_unbiasedness),
        ("8  subset-size oracle", criterion_8_subset_size),
        ("9  Gram invariance", criterion_9_gram_invariance),
        ("10 2-RR ground truth", criterion_10_two_rr),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
