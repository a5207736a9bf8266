use alqa_core::evidential::{self, EvidentialOutput};
use rand::{Rng, SeedableRng};

#[test]
fn random_evidence_invariants() {
    let mut rng = rand_pcg::Pcg64::seed_from_u64(1);
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let e: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..50.0) * rng.random_range(0.0..1.0f64).powi(3)).collect();
        let o = EvidentialOutput::from_evidence(&e).unwrap();
        let s: f64 = e.iter().map(|v| v + 1.0).sum();
        assert!((o.strength - s).abs() <= 1e-9);
        assert!((o.uncertainty - k as f64 / s).abs() <= 1e-9);
        assert!((o.expected_prob.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(o.alpha.iter().all(|a| *a >= 1.0));
    }
    assert_eq!(EvidentialOutput::from_evidence(&[0.0, 0.0]).unwrap().uncertainty, 1.0);
}

fn loss_at(e: &[f64], y: &[f64], lambda: f64) -> f64 {
    evidential::evidential_loss(&EvidentialOutput::from_evidence(e).unwrap(), y, lambda).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rand_pcg::Pcg64::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let e: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..20.0)).collect();
        let cls = rng.random_range(0..2);
        let y: Vec<f64> = (0..2).map(|j| if j == cls { 1.0 } else { 0.0 }).collect();
        let lambda = rng.random_range(0.0..1.0);
        let (_, g) = evidential::loss_and_grad(&EvidentialOutput::from_evidence(&e).unwrap(), &y, lambda).unwrap();
        for j in 0..2 {
            let h = 1e-5 * e[j].max(1.0);
            let (mut up, mut dn) = (e.clone(), e.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (loss_at(&up, &y, lambda) - loss_at(&dn, &y, lambda)) / (2.0 * h);
            let rel = (g[j] - fd).abs() / fd.abs().max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}
