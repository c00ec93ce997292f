use perturblab_core::attack::{
    apply_pixels, bim_attack, cw_attack, deepfool_attack, one_pixel_attack_with_history,
    square_attack, Algorithm, AttackParams, AttackSpec, BimParams, CwParams, DeepFoolParams,
    Goal, OnePixelParams, SquareParams,
};
use perturblab_core::loss::softmax;
use perturblab_core::model::{catalog, Network};
use perturblab_core::seed::Gaussian;
use perturblab_core::{Classifier, Tensor};

fn cnn(seed: u64) -> Network {
    let arch = catalog(1, 12, 4).into_iter().find(|a| a.name == "stride-cnn").unwrap();
    Network::init(arch, seed).unwrap()
}

fn image(seed: u64) -> Tensor {
    let mut g = Gaussian::new(seed);
    Tensor::from_fn(&[1, 12, 12], |_| (0.5 + 0.2 * g.next_standard()).clamp(0.0, 1.0) as f32)
}

fn affine(k: usize, d: usize, seed: u64) -> (Network, Vec<f64>, Vec<f64>) {
    let mut g = Gaussian::new(seed);
    let w: Vec<f64> = (0..k * d).map(|_| g.next_standard()).collect();
    let b: Vec<f64> = (0..k).map(|_| g.next_standard() * 0.1).collect();
    let net = Network::affine(
        &[d],
        Tensor::new(vec![k, d], w.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::new(vec![k], b.iter().map(|&v| v as f32).collect()).unwrap(),
    )
    .unwrap();
    (net, w, b)
}

#[test]
fn zero_budgets_give_zero_perturbations() {
    let net = cnn(1);
    let x = image(2);
    let bim = bim_attack(&net, &x, Goal::Untargeted(0), &BimParams { epsilon: 0.1, step: 0.01, iterations: 0 }).unwrap();
    assert!(bim.data().iter().all(|&v| v == 0.0));
    let sq = square_attack(&net, &x, Goal::Untargeted(0), &SquareParams { epsilon: 0.1, p_init: 0.1, iterations: 0 }, 3).unwrap();
    assert!(sq.delta.data().iter().all(|&v| v == 0.0));
    let df = deepfool_attack(&net, &x, &DeepFoolParams { overshoot: 0.02, max_iterations: 0, top_k: 4 }).unwrap();
    assert!(df.delta.data().iter().all(|&v| v == 0.0));
    assert_eq!(df.iterations, 0);
}

#[test]
fn bim_budget_after_k_iterations() {
    let net = cnn(4);
    let x = image(5);
    let (eps, step) = (0.05f32, 0.008f32);
    for k in 0..10 {
        let d = bim_attack(&net, &x, Goal::Untargeted(1), &BimParams { epsilon: eps, step, iterations: k }).unwrap();
        assert!(d.norm_linf() <= (k as f32 * step).min(eps) + 1e-7, "k={k}");
    }
}

#[test]
fn one_bim_step_on_linear_softmax_is_signed_closed_form_gradient() {
    let (k, d) = (4, 9);
    for seed in 0..20 {
        let (net, w, b) = affine(k, d, seed);
        let mut g = Gaussian::new(seed + 100);
        let x: Vec<f64> = (0..d).map(|_| 0.5 + 0.2 * g.next_standard()).collect();
        let y = seed as usize % k;
        let z: Vec<f32> = (0..k)
            .map(|i| (b[i] + (0..d).map(|j| w[i * d + j] * x[j]).sum::<f64>()) as f32)
            .collect();
        let p = softmax(&z);
        let alpha = 0.01f32;
        let delta = bim_attack(
            &net,
            &Tensor::new(vec![d], x.iter().map(|&v| v as f32).collect()).unwrap(),
            Goal::Untargeted(y),
            &BimParams { epsilon: 0.1, step: alpha, iterations: 1 },
        )
        .unwrap();
        for j in 0..d {
            let grad: f64 = (0..k).map(|i| (p[i] - (i == y) as u8 as f64) * w[i * d + j]).sum();
            let want = if grad.abs() < 1e-9 { 0.0 } else { alpha * grad.signum() as f32 };
            assert_eq!(delta.data()[j], want, "seed {seed} coordinate {j}");
        }
    }
}

#[test]
fn cw_without_attack_term_stays_at_the_origin() {
    let net = cnn(7);
    let x = image(8);
    let d = cw_attack(&net, &x, Goal::Untargeted(0), &CwParams { c: 0.0, kappa: 5.0, iterations: 200, learning_rate: 0.01 }).unwrap();
    assert!(d.norm_l2() < 1e-3, "{}", d.norm_l2());
}

#[test]
fn cw_on_misclassified_input_with_zero_confidence_returns_zero() {
    let net = cnn(9);
    let x = image(10);
    let pred = net.predict(&x).unwrap();
    let wrong = (pred + 1) % 4;
    let d = cw_attack(&net, &x, Goal::Untargeted(wrong), &CwParams { c: 5.0, kappa: 0.0, iterations: 100, learning_rate: 0.01 }).unwrap();
    assert!(d.norm_l2() < 1e-3, "{}", d.norm_l2());
}

#[test]
fn deepfool_top_two_target_comes_from_the_initial_top_two() {
    let params = DeepFoolParams { overshoot: 0.02, max_iterations: 50, top_k: 2 };
    for seed in 0..100 {
        let (net, _, _) = affine(3, 5, 300 + seed);
        let mut g = Gaussian::new(seed);
        let x = Tensor::from_fn(&[5], |_| g.next_standard() as f32);
        let logits = net.logits(&x).unwrap();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| logits.data()[b].total_cmp(&logits.data()[a]));
        let out = deepfool_attack(&net, &x, &params).unwrap();
        assert_eq!(out.candidates, vec![order[1]]);
        assert!(out.targets.iter().all(|&t| t == order[1]), "seed {seed}");
    }
}

#[test]
fn one_pixel_without_generations_returns_best_initial_member() {
    let net = cnn(11);
    let x = image(12);
    let goal = Goal::Untargeted(net.predict(&x).unwrap());
    let params = OnePixelParams { pixels: 2, population: 12, generations: 0, ..Default::default() };
    let out = one_pixel_attack_with_history(&net, &x, goal, &params, 13).unwrap();
    let initial = &out.history.as_ref().unwrap()[0];
    let best = initial
        .iter()
        .map(|genome| {
            let adv = x.add(&apply_pixels(&x, genome).unwrap()).unwrap();
            goal.search_loss(net.logits(&adv).unwrap().data()).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_fitness, best);
}

#[test]
fn seeded_attacks_are_reproducible() {
    let net = cnn(14);
    let x = image(15);
    for alg in Algorithm::ALL {
        let params = match alg.default_params() {
            AttackParams::Cw(p) => AttackParams::Cw(CwParams { iterations: 30, ..p }),
            AttackParams::Square(p) => AttackParams::Square(SquareParams { iterations: 100, ..p }),
            AttackParams::OnePixel(p) => {
                AttackParams::OnePixel(OnePixelParams { population: 10, generations: 5, ..p })
            }
            other => other,
        };
        let spec = AttackSpec::untargeted(params).with_seed(77);
        let a = spec.run(&net, &x, 2).unwrap();
        let b = spec.run(&net, &x, 2).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "{}",
            alg.label()
        );
    }
}

#[test]
fn bim_does_not_decrease_the_source_loss() {
    use perturblab_core::classifier::input_gradient;
    use perturblab_core::loss::LossSpec;
    for seed in 0..10 {
        let net = cnn(20 + seed);
        let x = image(40 + seed);
        let y = seed as usize % 4;
        let loss = LossSpec::CrossEntropy { label: y };
        let before = input_gradient(&net, &x, &loss).unwrap().loss;
        let d = bim_attack(&net, &x, Goal::Untargeted(y), &BimParams { epsilon: 0.05, step: 0.005, iterations: 20 }).unwrap();
        let after = input_gradient(&net, &x.add(&d).unwrap(), &loss).unwrap().loss;
        assert!(after >= before, "seed {seed}: {after} < {before}");
    }
}

#[test]
fn one_pixel_modifies_at_most_the_configured_pixel_count() {
    let net = cnn(16);
    let x = image(17);
    let spec = AttackSpec::untargeted(AttackParams::OnePixel(OnePixelParams {
        pixels: 3,
        population: 10,
        generations: 5,
        ..Default::default()
    }))
    .with_seed(5);
    let d = spec.run(&net, &x, 0).unwrap();
    assert!(d.data().iter().filter(|&&v| v != 0.0).count() <= 3);
}
