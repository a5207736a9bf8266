//! Statistics checked against a frozen scipy reference and brute force.

use alqa_core::stats::{self, WILCOXON_EXACT_MAX_N};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    a: Vec<f64>,
    b: Vec<f64>,
    shapiro: (f64, f64),
    paired_t: (f64, f64),
    wilcoxon: (f64, f64),
    wilcoxon_method: String,
}

#[derive(Deserialize)]
struct Reference {
    cases: Vec<Case>,
}

fn reference() -> Reference {
    serde_json::from_str(include_str!("fixtures/stats_reference.json")).unwrap()
}

fn close(what: &str, i: usize, got: (f64, f64), want: (f64, f64)) {
    assert!((got.0 - want.0).abs() <= 1e-6, "case {i} {what} statistic {} vs {}", got.0, want.0);
    assert!((got.1 - want.1).abs() <= 1e-4, "case {i} {what} p {} vs {}", got.1, want.1);
}

#[test]
fn fifty_fixtures_match_reference() {
    let r = reference();
    assert_eq!(r.cases.len(), 50);
    for (i, c) in r.cases.iter().enumerate() {
        let d = stats::differences(&c.a, &c.b).unwrap();
        let sw = stats::shapiro_wilk(&d).unwrap();
        close("shapiro", i, (sw.statistic, sw.p_value), c.shapiro);
        let t = stats::paired_t(&c.a, &c.b).unwrap();
        close("paired_t", i, (t.statistic, t.p_value), c.paired_t);
        let w = stats::wilcoxon_signed_rank(&c.a, &c.b).unwrap();
        assert_eq!(c.wilcoxon_method == "exact", w.n <= WILCOXON_EXACT_MAX_N);
        close("wilcoxon", i, (w.statistic, w.p_value), c.wilcoxon);
    }
}

/// Two-sided p by enumerating all 2^n sign assignments.
fn brute_force_p(d: &[f64]) -> (f64, f64) {
    let (ranks, positive) = stats::signed_ranks(d);
    let n = ranks.len();
    let total: f64 = ranks.iter().sum();
    let r_plus: f64 = ranks.iter().zip(&positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let w = r_plus.min(total - r_plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if s <= w + 1e-9 {
            hits += 1;
        }
    }
    (w, (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0))
}

#[test]
fn exact_path_equals_sign_enumeration() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_pcg::Pcg64::seed_from_u64(99);
    for trial in 0..300 {
        let n = rng.random_range(1..=WILCOXON_EXACT_MAX_N);
        // Coarse values so ties and zeros show up regularly.
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 4.0).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 4.0).collect();
        let d = stats::differences(&a, &b).unwrap();
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        let got = stats::wilcoxon_signed_rank(&a, &b).unwrap();
        let (w, p) = brute_force_p(&d);
        assert_eq!(got.statistic, w, "trial {trial}");
        assert_eq!(got.p_value, p, "trial {trial}");
    }
}

#[test]
fn three_point_hand_fixture() {
    let r = stats::paired_t(&[1.0, 2.0, 3.0], &[2.0, 4.0, 5.0]).unwrap();
    assert!((r.statistic + 5.0).abs() <= 1e-9);
    assert!((r.p_value - 0.0377).abs() <= 1e-3);
}
