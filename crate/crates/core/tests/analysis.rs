use perturblab_core::analysis::{
    attack_strength_eval, contour_split, cosine_similarity_matrix, epsilon_sweep, recognizability_eval,
    sign_scale, EvalSet, RecordColumn, SignScaleSpec, TestingModel, AVERAGE_ROW,
};
use perturblab_core::attack::{Algorithm, AttackSpec};
use perturblab_core::ensemble::{EnsembleSpec, PerturbationRecord};
use perturblab_core::model::Network;
use perturblab_core::render::DatasetStats;
use perturblab_core::seed::Gaussian;
use perturblab_core::{Error, Tensor};
use proptest::prelude::*;

fn record(id: &str, label: usize, v: Tensor) -> PerturbationRecord {
    PerturbationRecord {
        perturbation: v,
        image_id: id.into(),
        label,
        setting: None,
        attack: AttackSpec::untargeted(Algorithm::Bim.default_params()),
        ensemble: EnsembleSpec::single(),
        models: vec![],
        components: 1,
        seeds: vec![],
        generated_at: None,
    }
}

fn affine(seed: u64) -> Network {
    let mut g = Gaussian::new(seed);
    Network::affine(
        &[1, 3, 3],
        Tensor::from_fn(&[3, 9], |_| g.next_standard() as f32),
        Tensor::zeros(&[3]),
    )
    .unwrap()
}

fn fixture(n: usize) -> (Vec<String>, Vec<Tensor>, Vec<usize>) {
    let mut g = Gaussian::new(99);
    let ids = (0..n).map(|i| format!("img-{i}")).collect();
    let images = (0..n).map(|_| Tensor::from_fn(&[1, 3, 3], |_| g.next_standard() as f32)).collect();
    let labels = (0..n).map(|i| i % 3).collect();
    (ids, images, labels)
}

#[test]
fn sign_scale_examples() {
    let v = Tensor::new(vec![3], vec![0.5, -0.3, 0.0]).unwrap();
    let s = sign_scale(&v, SignScaleSpec::new(0.02).unwrap());
    assert_eq!(s.data(), &[0.02, -0.02, 0.0]);
    assert_eq!(sign_scale(&v, SignScaleSpec::new(0.0).unwrap()), Tensor::zeros(&[3]));
    assert!(SignScaleSpec::new(-1.0).is_err());
}

#[test]
fn zero_perturbations_leave_accuracy_unchanged() {
    let (ids, images, labels) = fixture(12);
    let records: Vec<_> = ids.iter().zip(&labels).map(|(id, &y)| record(id, y, Tensor::zeros(&[1, 3, 3]))).collect();
    let nets = [affine(1), affine(2)];
    let testing: Vec<TestingModel> = nets
        .iter()
        .enumerate()
        .map(|(i, n)| TestingModel { name: format!("t{i}"), model: n })
        .collect();
    let eval = EvalSet::new(&ids, &images, &labels).unwrap();
    let cols = [RecordColumn { name: "SM/BIM".into(), records: &records }];
    let table = attack_strength_eval(eval, &cols, &testing, SignScaleSpec::new(0.02).unwrap(), 1).unwrap();
    assert_eq!(table.columns, vec!["Image", "Noise", "SM/BIM"]);
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.rows[2].name, AVERAGE_ROW);
    assert_eq!(table.average("Image"), table.average("SM/BIM"));
    let csv = String::from_utf8(table.to_csv().unwrap()).unwrap();
    assert!(csv.starts_with("model,Image,Noise,SM/BIM\n"));
    assert!(csv.contains("Avg.,"));

    let missing = [RecordColumn { name: "MM/BIM".into(), records: &records[1..] }];
    match attack_strength_eval(eval, &missing, &testing, SignScaleSpec::new(0.02).unwrap(), 1) {
        Err(Error::InvalidArgument(msg)) => assert!(msg.contains("img-0")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn contour_split_cases() {
    let v = Tensor::from_fn(&[2, 2, 2], |i| i as f32 - 3.0);
    let ones = Tensor::full(&[1, 2, 2], 1.0);
    let (c, b) = contour_split(&v, &ones).unwrap();
    assert_eq!(c, v);
    assert_eq!(b, Tensor::zeros(&[2, 2, 2]));
    let mask = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let (c, b) = contour_split(&v, &mask).unwrap();
    assert_eq!(c.data(), &[-3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 4.0]);
    assert_eq!(c.add(&b).unwrap(), v);
    assert!(matches!(contour_split(&v, &Tensor::zeros(&[1, 3, 2])), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn sweep_starts_at_clean_accuracy() {
    let (ids, images, labels) = fixture(9);
    let mut g = Gaussian::new(5);
    let records: Vec<_> = ids
        .iter()
        .zip(&labels)
        .map(|(id, &y)| record(id, y, Tensor::from_fn(&[1, 3, 3], |_| g.next_standard() as f32)))
        .collect();
    let masks: Vec<Tensor> = (0..9).map(|i| Tensor::from_fn(&[1, 3, 3], |p| ((p + i) % 2) as f32)).collect();
    let net = affine(3);
    let testing = [TestingModel { name: "t".into(), model: &net }];
    let eval = EvalSet::new(&ids, &images, &labels).unwrap();
    let sweep = epsilon_sweep(eval, &records, &masks, &testing, &[0.0, 0.1, 0.2]).unwrap();
    let clean = perturblab_core::analysis::accuracy(&net, &images, &labels).unwrap();
    assert_eq!(sweep.contour[0], clean);
    assert_eq!(sweep.background[0], clean);
    assert!(epsilon_sweep(eval, &records, &masks, &testing, &[0.2, 0.1]).is_err());
    assert!(epsilon_sweep(eval, &records, &masks, &testing, &[]).is_err());
}

#[test]
fn similarity_matrix_cases() {
    let ids: Vec<String> = (0..3).map(|i| format!("img-{i}")).collect();
    let images = vec![Tensor::zeros(&[1, 2, 2]); 3];
    let labels = vec![0; 3];
    let masks = vec![Tensor::full(&[1, 2, 2], 1.0); 3];
    let one_hot = |p: usize| Tensor::from_fn(&[1, 2, 2], |i| (i == p) as u8 as f32);
    let a: Vec<_> = ids.iter().map(|id| record(id, 0, one_hot(0))).collect();
    let b = a.clone();
    let c: Vec<_> = ids.iter().map(|id| record(id, 0, one_hot(1))).collect();
    let mut d = c.clone();
    d[1].perturbation = Tensor::zeros(&[1, 2, 2]);
    let eval = EvalSet::new(&ids, &images, &labels).unwrap();
    let cols = [
        RecordColumn { name: "A".into(), records: &a },
        RecordColumn { name: "B".into(), records: &b },
        RecordColumn { name: "C".into(), records: &c },
        RecordColumn { name: "D".into(), records: &d },
    ];
    let m = cosine_similarity_matrix(eval, &cols, &masks).unwrap();
    assert_eq!(m.values[0][1], 1.0);
    assert_eq!(m.values[0][2], 0.0);
    assert_eq!(m.values[2][3], 1.0);
    assert_eq!(m.counts[2][3], 2);
    assert_eq!(m.excluded[3][2], 1);
    for i in 0..4 {
        assert_eq!(m.values[i][i], 1.0);
        for j in 0..4 {
            assert_eq!(m.values[i][j], m.values[j][i]);
        }
    }
}

#[test]
fn recognizability_rejects_tiny_subsets_and_reports_chance() {
    let net = affine(4);
    let stats = DatasetStats { mean: vec![0.5], std: vec![0.2] };
    let mut g = Gaussian::new(6);
    let records: Vec<_> = (0..30)
        .map(|i| record(&format!("r{i}"), i % 3, Tensor::from_fn(&[1, 3, 3], |_| g.next_standard() as f32)))
        .collect();
    assert!(recognizability_eval(&records, &net, &stats, &[0], 0.5).is_err());
    let r = recognizability_eval(&records, &net, &stats, &[0, 1, 2], 0.5).unwrap();
    assert_eq!(r.count, 30);
    assert!((r.chance - 1.0 / 3.0).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&r.accuracy));
    assert!(recognizability_eval(&records, &net, &stats, &[0, 1], 0.5).is_err());
}

proptest! {
    #[test]
    fn sign_scale_is_idempotent_and_bounded(
        values in proptest::collection::vec(-2.0f32..2.0, 1..40),
        eps in 0.0f32..0.5,
    ) {
        let v = Tensor::from_vec(values);
        let spec = SignScaleSpec::new(eps).unwrap();
        let once = sign_scale(&v, spec);
        prop_assert_eq!(sign_scale(&once, spec), once.clone());
        prop_assert!(once.norm_linf() <= eps);
        if v.data().iter().any(|&e| e != 0.0) {
            prop_assert_eq!(once.norm_linf(), eps);
        }
    }

    #[test]
    fn contour_split_is_a_linear_partition(
        a in proptest::collection::vec(-1.0f32..1.0, 12),
        b in proptest::collection::vec(-1.0f32..1.0, 12),
        mask in proptest::collection::vec(0u8..=1, 4),
    ) {
        let a = Tensor::new(vec![3, 2, 2], a).unwrap();
        let b = Tensor::new(vec![3, 2, 2], b).unwrap();
        let m = Tensor::new(vec![1, 2, 2], mask.into_iter().map(f32::from).collect()).unwrap();
        let (ac, ab) = contour_split(&a, &m).unwrap();
        prop_assert_eq!(ac.add(&ab).unwrap(), a.clone());
        let (sc, sb) = contour_split(&a.add(&b).unwrap(), &m).unwrap();
        let (bc, bb) = contour_split(&b, &m).unwrap();
        prop_assert_eq!(sc, ac.add(&bc).unwrap());
        prop_assert_eq!(sb, ab.add(&bb).unwrap());
    }
}
