use fastgan_core::autodiff::Tensor;
use fastgan_core::games::*;
use fastgan_core::losses::LossKind;
use fastgan_core::trainers::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(m: &DMatrix<f64>) -> Tensor<f64> {
    let data: Vec<f64> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    Tensor::new(vec![m.nrows(), m.ncols()], data).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n);
    &m * m.transpose() + DMatrix::identity(n, n) * 0.5
}

fn random_point(rng: &mut ChaCha8Rng, k: usize, l: usize) -> GamePoint<f64> {
    GamePoint::new((0..k).map(|_| rng.random_range(-2.0..2.0)).collect(), (0..l).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn xy_game() -> GameSpec<f64> {
    make_bilinear_game(Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fr_matches_dense_solve_on_quadratic_games(seed in any::<u64>(), k in 1usize..5, l in 1usize..5, eta in 0.01..0.3f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (spd(&mut rng, k), random_matrix(&mut rng, k, l), spd(&mut rng, l));
        let game = make_quadratic_game(tensor(&a), tensor(&b), tensor(&c)).unwrap();
        let p = random_point(&mut rng, k, l);
        let (x, y) = (DVector::from_vec(p.x.clone()), DVector::from_vec(p.y.clone()));
        let gx = &a * &x + &b * &y;
        let gy = b.transpose() * &x - &c * &y;
        // H_yy = -C, H_yx = B^T
        let corr = (-&c).lu().solve(&(b.transpose() * &gx)).unwrap();
        let want_x = &x - &gx * eta;
        let want_y = &y + &gy * eta + corr * eta;

        let got = fr_step(&game, &p, eta, eta, 1e-10).unwrap();
        prop_assert!(close(&got.x, want_x.as_slice(), 1e-8));
        prop_assert!(close(&got.y, want_y.as_slice(), 1e-8), "{:?} vs {:?}", got.y, want_y);
    }

    #[test]
    fn without_coupling_fr_variants_reduce_to_gda(seed in any::<u64>(), k in 1usize..4, l in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let game = make_quadratic_game(tensor(&spd(&mut rng, k)), Tensor::zeros(vec![k, l]), tensor(&spd(&mut rng, l))).unwrap();
        let p = random_point(&mut rng, k, l);
        let gda = gda_step(&game, &p, 0.1, 0.05, GdaMode::Simultaneous).unwrap();
        let sfr = simplified_fr_step(&game, &p, 0.1, 0.05).unwrap();
        let fr = fr_step(&game, &p, 0.1, 0.05, 1e-10).unwrap();
        prop_assert!(close(&sfr.x, &gda.x, 1e-14) && close(&sfr.y, &gda.y, 1e-14));
        prop_assert!(close(&fr.x, &gda.x, 1e-12) && close(&fr.y, &gda.y, 1e-12));
    }

    #[test]
    fn bilinear_spectral_split(eta in 0.01..0.99f64) {
        let game = xy_game();
        let p = GamePoint::new(vec![0.0], vec![0.0]);
        let gda = spectral_radius_jacobian(&game, &p, eta, eta, UpdateRule::Gda).unwrap();
        let sfr = spectral_radius_jacobian(&game, &p, eta, eta, UpdateRule::SimplifiedFr).unwrap();
        prop_assert!(gda.spectral_radius > 1.0);
        prop_assert!(sfr.spectral_radius < 1.0);
        prop_assert!((gda.spectral_radius - (1.0 + eta * eta).sqrt()).abs() < 1e-12);
        let max_mod = sfr.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        prop_assert_eq!(max_mod, sfr.spectral_radius);
    }

    #[test]
    fn perturbation_stays_in_the_box(
        eps in prop::collection::vec(-1.0..1.0f64, 6),
        g in prop::collection::vec(-5.0..5.0f64, 6),
        c_max in 0.0..0.5f64,
    ) {
        let start = PerturbationState {
            eps: Tensor::new(vec![3, 2], eps.iter().map(|e| e * c_max).collect()).unwrap(),
            c_max,
        };
        let next = adv_perturb_step(&start, &Tensor::new(vec![3, 2], g).unwrap()).unwrap();
        prop_assert!(next.eps.data().iter().all(|e| e.abs() <= c_max));
    }

    #[test]
    fn schedule_halves_every_kappa(kappa in 1.0..1e5f64, eta0 in 1e-6..1e-1f64, periods in 0u32..4) {
        let cfg = TrainerConfig { eta0, decay_scale: kappa, ..Default::default() };
        let t = (kappa * periods as f64).round() as usize;
        let want = eta0 * 0.5f64.powf(t as f64 / kappa);
        prop_assert!((lr_schedule(t, &cfg) - want).abs() <= 1e-15 * eta0);
    }
}

#[test]
fn simplified_fr_converges_on_xy() {
    let game = xy_game();
    let mut p = GamePoint::new(vec![1.0], vec![1.0]);
    for _ in 0..10_000 {
        p = simplified_fr_step(&game, &p, 0.1, 0.1).unwrap();
    }
    assert!(p.norm() < 1e-6, "{}", p.norm());
}

#[test]
fn fr_on_xy_reports_singular_hessian() {
    let err = fr_step(&xy_game(), &GamePoint::new(vec![1.0], vec![1.0]), 0.1, 0.1, 1e-10).unwrap_err();
    assert!(matches!(err, TrainerError::SingularHessian { .. }), "{err}");
}

#[test]
fn alternating_gda_uses_updated_x() {
    let p = gda_step(&xy_game(), &GamePoint::new(vec![1.0], vec![1.0]), 0.1, 0.1, GdaMode::Alternating);
    let p = p.unwrap();
    assert!((p.x[0] - 0.9).abs() < 1e-15 && (p.y[0] - 1.09).abs() < 1e-15);
}

#[test]
fn local_nash_examples() {
    let one = |v: f64| Tensor::new(vec![1, 1], vec![v]).unwrap();
    // f = x^2 - y^2
    let saddle = make_quadratic_game(one(2.0), one(0.0), one(2.0)).unwrap();
    let r = verify_local_nash(&saddle, &GamePoint::new(vec![0.0], vec![0.0]), 1e-10).unwrap();
    assert!(r.first_order && r.second_order);
    assert_eq!((r.hxx_min_eigenvalue, r.hyy_max_eigenvalue), (2.0, -2.0));
    let r = verify_local_nash(&saddle, &GamePoint::new(vec![1.0], vec![0.0]), 1e-10).unwrap();
    assert!(!r.first_order);
    assert!((r.grad_norm - 2.0).abs() < 1e-12);

    let r = verify_local_nash(&xy_game(), &GamePoint::new(vec![0.0], vec![0.0]), 1e-10).unwrap();
    assert!(r.first_order && r.second_order);
    assert!(!r.convention_note.is_empty());
}

#[test]
fn adam_examples() {
    let cfg = AdamConfig::default();
    let z = Tensor::vector(vec![0.0f64; 3]);
    let mut st = AdamState::new([&z]);
    st.v[0] = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let step = adam_step(&mut st, &[z.clone()], 0.1, &cfg);
    assert!(step[0].data().iter().all(|&s| s == 0.0));
    assert_eq!(st.v[0].data(), &[0.9, 1.8, 2.7]);

    let g = Tensor::vector(vec![0.3f64, -1.0]);
    let st0 = AdamState::new([&g]);
    let (mut a, mut b) = (st0.clone(), st0);
    assert_eq!(adam_step(&mut a, &[g.clone()], 0.01, &cfg), adam_step(&mut b, &[g], 0.01, &cfg));
    assert_eq!(a, b);
}

fn tiny_setup(seed: u64) -> (GanNetworks<f64>, LabeledDataset<f64>) {
    let data = sample_gaussian_mixture::<f64>(4, 2.0, 0.05, 400, seed).unwrap();
    (build_mlp_gan::<f64>(2, 8, 1, 2, 4, seed).unwrap(), data)
}

fn tiny_cfg() -> TrainerConfig {
    TrainerConfig { eta0: 1e-3, batch_size: 16, total_iters: 40, decay_scale: 20.0, ..Default::default() }
}

#[test]
fn free_adversarial_training_without_perturbation_is_adam_gda() {
    let (nets, data) = tiny_setup(5);
    let cfg = TrainerConfig { c_max: 0.0, max_adv_step: 1, max_d_step: 2, ..tiny_cfg() };
    let (_, fast) = fastgan_train(nets.clone(), &data, LossKind::Fastgan, &cfg, None).unwrap();
    let (_, plain) = adam_gda_train(nets, &data, LossKind::Fastgan, &cfg, None).unwrap();
    for (a, b) in fast.steps.iter().zip(&plain.steps) {
        assert_eq!(
            (a.d_update_count, a.g_update_count, a.generator_forward_count),
            (b.d_update_count, b.g_update_count, b.generator_forward_count)
        );
    }
    for (a, b) in fast.final_params.iter().zip(&plain.final_params) {
        assert!(close(a.data(), b.data(), 1e-12));
    }
    assert!(fast.steps.iter().all(|s| s.eps_inf_norm == 0.0));
}

#[test]
fn training_is_bit_reproducible() {
    let (nets, data) = tiny_setup(2);
    let cfg = tiny_cfg();
    let (_, a) = fastgan_train(nets.clone(), &data, LossKind::Fastgan, &cfg, None).unwrap();
    let (_, b) = fastgan_train(nets, &data, LossKind::Fastgan, &cfg, None).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.final_params, b.final_params);
}

#[test]
fn counters_follow_the_loop_structure() {
    let (nets, data) = tiny_setup(0);
    let cfg = TrainerConfig { max_d_step: 3, max_adv_step: 2, total_iters: 5, ..tiny_cfg() };
    let (_, rec) = fastgan_train(nets, &data, LossKind::Fastgan, &cfg, None).unwrap();
    for (i, s) in rec.steps.iter().enumerate() {
        let t = i as u64 + 1;
        assert_eq!(s.iter, i + 1);
        assert_eq!(s.d_update_count, 12 * t);
        assert_eq!(s.g_update_count, t);
        assert_eq!(s.generator_forward_count, 4 * t);
        assert!(s.eps_inf_norm <= cfg.c_max);
    }
}

#[test]
fn runaway_learning_rate_is_reported_as_divergence() {
    let (nets, data) = tiny_setup(1);
    let cfg = TrainerConfig { eta0: 1e200, adam: None, constant_lr: true, ..tiny_cfg() };
    match fastgan_train(nets, &data, LossKind::Fastgan, &cfg, None) {
        Err(TrainerError::Diverged { report, record, .. }) => {
            let rec = record.unwrap();
            assert_eq!(rec.status, RunStatus::Diverged);
            assert_eq!(rec.failure.as_ref().map(|f| f.iter), report.map(|r| r.iter));
        }
        other => panic!("expected divergence, got {:?}", other.map(|(_, r)| r.status)),
    }
}

#[test]
fn mismatched_class_counts_are_rejected() {
    let data = sample_gaussian_mixture::<f64>(4, 2.0, 0.05, 40, 0).unwrap();
    let nets = build_mlp_gan::<f64>(2, 8, 1, 2, 5, 0).unwrap();
    assert!(fastgan_train(nets, &data, LossKind::Fastgan, &tiny_cfg(), None).is_err());
}
