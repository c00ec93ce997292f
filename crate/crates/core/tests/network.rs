use perturblab_core::classifier::input_gradient;
use perturblab_core::loss::LossSpec;
use perturblab_core::model::{catalog, Network};
use perturblab_core::seed::Gaussian;
use perturblab_core::{Classifier, Error, Tensor};
use proptest::prelude::*;

fn random_image(shape: &[usize], seed: u64) -> Tensor {
    let mut g = Gaussian::new(seed);
    Tensor::from_fn(shape, |_| g.next_standard() as f32)
}

/// A catalog network whose final linear layer (weight and bias) is zero.
fn zero_head(name: &str) -> Network {
    let arch = catalog(1, 12, 5).into_iter().find(|a| a.name == name).unwrap();
    let net = Network::init(arch.clone(), 3).unwrap();
    let mut params = net.params().to_vec();
    let n = params.len();
    for p in &mut params[n - 2..] {
        *p = Tensor::zeros(p.shape());
    }
    Network::from_params(arch, params).unwrap()
}

#[test]
fn zero_final_layer_gives_zero_logits_and_gradient() {
    for name in ["stride-cnn", "pool-cnn", "residual-cnn", "mlp"] {
        let net = zero_head(name);
        let x = random_image(&[1, 12, 12], 1);
        assert!(net.logits(&x).unwrap().data().iter().all(|&v| v == 0.0), "{name}");
        let g = input_gradient(&net, &x, &LossSpec::CrossEntropy { label: 2 }).unwrap();
        assert!(g.grad.data().iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn identity_linear_map() {
    let net = Network::affine(
        &[2],
        Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        Tensor::zeros(&[2]),
    )
    .unwrap();
    let logits = net.logits(&Tensor::from_vec(vec![0.3, 0.7])).unwrap();
    assert_eq!(logits.data(), &[0.3, 0.7]);
}

#[test]
fn forward_is_bitwise_deterministic() {
    for arch in catalog(3, 16, 4) {
        let net = Network::init(arch.clone(), 9).unwrap();
        let x = random_image(&arch.input_shape, 4);
        let a = net.logits(&x).unwrap();
        let b = net.logits(&x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn wrong_input_shape_names_both_shapes() {
    let arch = catalog(1, 12, 3).remove(0);
    let net = Network::init(arch, 1).unwrap();
    let err = net.logits(&Tensor::zeros(&[1, 10, 12])).unwrap_err();
    match &err {
        Error::ShapeMismatch { expected, actual, .. } => {
            assert_eq!(expected, &vec![1, 12, 12]);
            assert_eq!(actual, &vec![1, 10, 12]);
        }
        other => panic!("unexpected error {other:?}"),
    }
    let text = err.to_string();
    assert!(text.contains("[1, 12, 12]") && text.contains("[1, 10, 12]"), "{text}");
}

#[test]
fn non_differentiable_loss_tokens_are_rejected() {
    for token in ["zero-one", "argmax", "accuracy"] {
        assert!(matches!(LossSpec::parse(token, 0), Err(Error::NonDifferentiable(_))));
    }
    for token in ["cross-entropy", "margin", "logit"] {
        assert!(LossSpec::parse(token, 0).is_ok());
    }
}

fn weighted_loss_gradient(net: &Network, x: &Tensor, a: f32, b: f32, l1: LossSpec, l2: LossSpec) -> Tensor {
    let (_, mut grads) = net
        .pullback(x, &mut |logits| {
            let (_, g1) = l1.value_and_grad(logits)?;
            let (_, g2) = l2.value_and_grad(logits)?;
            Ok(vec![g1.iter().zip(&g2).map(|(u, v)| a * u + b * v).collect()])
        })
        .unwrap();
    grads.pop().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_accumulation_is_linear(
        seed in 0u64..1000,
        a in -2.0f32..2.0,
        b in -2.0f32..2.0,
        arch_index in 0usize..4,
    ) {
        let arch = catalog(1, 12, 4).remove(arch_index);
        let net = Network::init(arch.clone(), seed).unwrap();
        let x = random_image(&arch.input_shape, seed + 1);
        let l1 = LossSpec::CrossEntropy { label: (seed % 4) as usize };
        let l2 = LossSpec::Margin { class: ((seed + 1) % 4) as usize, kappa: f32::INFINITY, targeted: false };
        let combined = weighted_loss_gradient(&net, &x, a, b, l1, l2);
        let g1 = input_gradient(&net, &x, &l1).unwrap().grad;
        let g2 = input_gradient(&net, &x, &l2).unwrap().grad;
        for ((c, u), v) in combined.data().iter().zip(g1.data()).zip(g2.data()) {
            let want = a * u + b * v;
            prop_assert!((c - want).abs() <= 1e-5 * (1.0 + want.abs()), "{c} vs {want}");
        }
    }
}
