use fastgan_core::autodiff::{Graph, Tensor};
use fastgan_core::losses::*;
use proptest::prelude::*;

fn ln_sig(s: f64) -> f64 {
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// A batch of raw scores and logits with labels.
#[derive(Clone, Debug)]
struct Batch {
    scores: Vec<f64>,
    logits: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn batch(n: usize, c: usize) -> impl Strategy<Value = Batch> {
    (
        prop::collection::vec(-6.0..6.0f64, n),
        prop::collection::vec(prop::collection::vec(-5.0..5.0f64, c), n),
        prop::collection::vec(0..c, n),
    )
        .prop_map(|(scores, logits, labels)| Batch { scores, logits, labels })
}

fn bind(g: &mut Graph<f64>, b: &Batch) -> DiscriminatorOutput {
    let n = b.scores.len();
    let c = b.logits[0].len();
    DiscriminatorOutput {
        adv_score: g.param(Tensor::new(vec![n, 1], b.scores.clone()).unwrap()),
        class_logits: g.param(Tensor::new(vec![n, c], b.logits.concat()).unwrap()),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_log_p(b: &Batch) -> f64 {
    mean(b.logits.iter().zip(&b.labels).map(|(r, &y)| log_softmax(r)[y]))
}

fn oracle_kl(b: &Batch) -> f64 {
    mean(b.logits.iter().map(|r| {
        let lp = log_softmax(r);
        let c = r.len() as f64;
        lp.iter().map(|&l| l.exp() * (l + c.ln())).sum::<f64>()
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_match_per_sample_oracles(real in batch(7, 5), fake in batch(7, 5), af in 0.05..1.0f64, ag in 0.05..1.0f64) {
        let coeffs = LossCoefficients { alpha_c_f: af, alpha_c_g: ag, ..Default::default() };
        let mut g = Graph::new();
        let r = bind(&mut g, &real);
        let f = bind(&mut g, &fake);

        let orig = gan_loss_original(&mut g, r.adv_score, f.adv_score).unwrap();
        let want = mean(real.scores.iter().map(|&s| ln_sig(s))) + mean(fake.scores.iter().map(|&s| ln_sig(-s)));
        prop_assert!(rel(g.item(orig), want) < 1e-10);

        let ns = gan_loss_nonsaturating(&mut g, f.adv_score).unwrap();
        prop_assert!(rel(g.item(ns), -mean(fake.scores.iter().map(|&s| ln_sig(s)))) < 1e-10);

        let ac = acgan_d_loss(&mut g, r, &real.labels, f, &fake.labels).unwrap();
        let want = mean(real.scores.iter().map(|&s| ln_sig(s))) + oracle_log_p(&real)
            + mean(fake.scores.iter().map(|&s| ln_sig(-s))) + oracle_log_p(&fake);
        prop_assert!(rel(g.item(ac), want) < 1e-10);

        let rob = robgan_fake_loss(&mut g, f).unwrap();
        prop_assert!(rel(g.item(rob), mean(fake.scores.iter().map(|&s| ln_sig(-s)))) < 1e-10);

        let fd = fastgan_d_loss(&mut g, r, &real.labels, f, &coeffs).unwrap();
        let want = mean(real.scores.iter().map(|&s| -(1.0 - s).max(0.0))) + oracle_log_p(&real)
            + mean(fake.scores.iter().map(|&s| -(1.0 + s).max(0.0))) - af * oracle_kl(&fake);
        prop_assert!(rel(g.item(fd), want) < 1e-10);

        let fg = fastgan_g_loss(&mut g, f, &fake.labels, &coeffs).unwrap();
        let want = -mean(fake.scores.iter().copied()) - ag * oracle_log_p(&fake);
        prop_assert!(rel(g.item(fg), want) < 1e-10);
    }

    #[test]
    fn acgan_without_fake_class_term_is_robgan_plus_real_terms(real in batch(6, 4), fake in batch(6, 4)) {
        let mut g = Graph::new();
        let r = bind(&mut g, &real);
        let f = bind(&mut g, &fake);
        let ac = acgan_d_loss(&mut g, r, &real.labels, f, &fake.labels).unwrap();
        let real_terms = acgan_d_real(&mut g, r, &real.labels).unwrap();
        let rob = robgan_fake_loss(&mut g, f).unwrap();
        let lhs = g.item(ac) - oracle_log_p(&fake);
        let rhs = g.item(rob) + g.item(real_terms);
        prop_assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn hinge_terms_are_nonpositive(real in batch(5, 3), fake in batch(5, 3)) {
        let coeffs = LossCoefficients { kl_enabled: false, ..Default::default() };
        let mut g = Graph::new();
        let r = bind(&mut g, &real);
        let f = bind(&mut g, &fake);
        let hf = fastgan_d_fake(&mut g, f, &coeffs).unwrap();
        let real_hinge = fastgan_d_real(&mut g, r, &real.labels, &coeffs).unwrap();
        let hr = g.item(real_hinge) - oracle_log_p(&real);
        prop_assert!(g.item(hf) <= 0.0);
        prop_assert!(hr <= 1e-12);
        let satisfied = real.scores.iter().all(|&s| s >= 1.0) && fake.scores.iter().all(|&s| s <= -1.0);
        prop_assert_eq!(satisfied, g.item(hf) == 0.0 && hr.abs() < 1e-12);
    }

    #[test]
    fn g_loss_gradient_in_score_is_constant(fake in batch(8, 4)) {
        let mut g = Graph::new();
        let f = bind(&mut g, &fake);
        let l = fastgan_g_loss(&mut g, f, &fake.labels, &LossCoefficients::default()).unwrap();
        let gr = g.grad_values(l, &[f.adv_score]).unwrap();
        for &d in gr.get(f.adv_score).unwrap().data() {
            prop_assert!((d + 1.0 / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_to_uniform_is_bounded(raw in prop::collection::vec(0.0..1.0f64, 2..12)) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-6);
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let kl = kl_to_uniform(&p).unwrap();
        let c = p.len() as f64;
        prop_assert!(kl >= -1e-12 && kl <= c.ln() + 1e-12);
        let entropy: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        prop_assert!((kl - (c.ln() - entropy)).abs() < 1e-12);
    }
}

#[test]
fn kl_zero_only_at_uniform() {
    assert!(kl_to_uniform(&[0.1f64; 10]).unwrap().abs() < 1e-10);
    assert!(kl_to_uniform(&[0.26, 0.24, 0.25, 0.25]).unwrap() > 1e-10);
    assert!(kl_to_uniform(&[0.5, 0.6]).is_err());
}

#[test]
fn nonsaturating_gradient_does_not_vanish() {
    let mut g = Graph::new();
    let s = g.param(Tensor::new(vec![1, 1], vec![-10.0]).unwrap());
    let ns = gan_loss_nonsaturating(&mut g, s).unwrap();
    let d_ns: f64 = g.grad_values(ns, &[s]).unwrap().flat()[0];
    let mut g2 = Graph::new();
    let s2 = g2.param(Tensor::new(vec![1, 1], vec![-10.0]).unwrap());
    let orig = gan_fake_term(&mut g2, s2).unwrap();
    let d_orig: f64 = g2.grad_values(orig, &[s2]).unwrap().flat()[0];
    assert!((d_ns + 1.0).abs() < 1e-4, "{d_ns}");
    assert!(d_orig.abs() < 1e-4, "{d_orig}");
}

#[test]
fn out_of_range_labels_are_contract_errors() {
    let b = Batch { scores: vec![0.0, 0.0], logits: vec![vec![0.0; 3]; 2], labels: vec![0, 3] };
    let mut g = Graph::new();
    let o = bind(&mut g, &b);
    assert!(fastgan_g_loss(&mut g, o, &b.labels, &LossCoefficients::default()).is_err());
    assert!(acgan_d_loss(&mut g, o, &b.labels, o, &[0, 1]).is_err());
}
