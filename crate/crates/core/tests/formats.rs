mod common;

use common::pltn;
use perturblab_core::attack::{Algorithm, AttackSpec};
use perturblab_core::data::{
    encode_idx_images, encode_idx_labels, encode_record, file_crc, load_idx, load_record,
    rebuild_index, save_record, save_tensor, ExperimentManifest, FileEntry, RecordEntry,
};
use perturblab_core::ensemble::{ComponentSeeds, EnsembleSpec, PerturbationRecord, Setting};
use perturblab_core::seed::Gaussian;
use perturblab_core::{Error, Tensor};

fn record(id: &str, setting: Setting, seed: u64) -> PerturbationRecord {
    let mut g = Gaussian::new(seed);
    PerturbationRecord {
        perturbation: Tensor::from_fn(&[1, 4, 4], |_| (g.next_standard() * 0.01) as f32),
        image_id: id.into(),
        label: 1,
        setting: Some(setting),
        attack: AttackSpec::untargeted(Algorithm::Bim.default_params()).with_seed(seed),
        ensemble: EnsembleSpec { m: 1, n: 1, sigma: 0.0, seed },
        models: vec!["testing-000".into()],
        components: 1,
        seeds: vec![ComponentSeeds { noise: 1, attack: 2 }],
        generated_at: None,
    }
}

#[test]
fn independent_reader_decodes_records_and_checksums() {
    for seed in 0..10 {
        let r = record("test-00001", Setting::Sm, seed);
        let bytes = encode_record(&r).unwrap();
        let d = pltn::decode(&bytes).unwrap();
        assert_eq!(d.shape, vec![1, 4, 4]);
        assert_eq!(d.stored_crc, d.computed_crc);
        assert_eq!(d.stored_crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
        assert_eq!(
            d.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            r.perturbation.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(d.header["meta"]["image_id"], "test-00001");
        assert!(d.header["meta"]["generated_at"].is_null());
    }
}

#[test]
fn independent_crc_matches_standard_check_value() {
    assert_eq!(pltn::crc32(b"123456789"), 0xcbf4_3926);
}

#[test]
fn manifest_round_trip_verify_and_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = ExperimentManifest {
        tool_version: "0.1.0".into(),
        config: serde_json::json!({"master_seed": 3}),
        ..Default::default()
    };
    let mut expected = Vec::new();
    for (i, setting) in [Setting::Sm, Setting::MmG].into_iter().enumerate() {
        for j in 0..2 {
            let id = format!("test-{j:05}");
            let file = format!("perturbations/bim/{}/{id}.pltn", if i == 0 { "sm" } else { "mmg" });
            let path = dir.path().join(&file);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            save_record(&record(&id, setting, (i * 2 + j) as u64), &path).unwrap();
            let entry = RecordEntry {
                image_id: id,
                algorithm: Algorithm::Bim,
                setting: Some(setting),
                crc32: file_crc(&path).unwrap(),
                file,
                generated_at: None,
            };
            manifest.upsert_record(entry.clone());
            expected.push(entry);
        }
    }
    std::fs::create_dir_all(dir.path().join("tables")).unwrap();
    std::fs::write(dir.path().join("tables/a.csv"), "x\n1\n").unwrap();
    manifest.upsert_output(FileEntry {
        file: "tables/a.csv".into(),
        crc32: file_crc(&dir.path().join("tables/a.csv")).unwrap(),
    });
    manifest.save(dir.path()).unwrap();

    let loaded = ExperimentManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, manifest);
    loaded.verify(dir.path()).unwrap();

    expected.sort_by(|a, b| a.file.cmp(&b.file));
    assert_eq!(rebuild_index(dir.path()).unwrap(), expected);

    std::fs::write(dir.path().join("tables/a.csv"), "x\n2\n").unwrap();
    assert!(matches!(loaded.verify(dir.path()), Err(Error::Checksum { .. })));
}

#[test]
fn records_survive_save_and_load_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let r = record("test-00002", Setting::MmG, 11);
    let path = dir.path().join("r.pltn");
    save_record(&r, &path).unwrap();
    assert_eq!(load_record(&path).unwrap(), r);
}

#[test]
fn plain_tensors_carry_no_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pltn");
    save_tensor(&Tensor::zeros(&[2, 3]), &path).unwrap();
    let d = pltn::decode(&std::fs::read(&path).unwrap()).unwrap();
    assert!(d.header.get("meta").is_none());
    assert!(load_record(&path).is_err());
}

#[test]
fn canonical_sized_idx_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let n = 60_000;
    let pixels: Vec<Vec<u8>> = (0..n).map(|i| vec![(i % 256) as u8; 28 * 28]).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let img = dir.path().join("train-images-idx3-ubyte");
    let lab = dir.path().join("train-labels-idx1-ubyte");
    std::fs::write(&img, encode_idx_images(28, 28, &pixels)).unwrap();
    std::fs::write(&lab, encode_idx_labels(&labels)).unwrap();
    let ds = load_idx(&img, &lab).unwrap();
    assert_eq!(ds.images.len(), n);
    assert_eq!((ds.rows, ds.cols), (28, 28));
    assert_eq!(ds.images[255].data()[0], 1.0);
    assert_eq!(ds.images[0].shape(), &[1, 28, 28]);
    assert_eq!(ds.labels[59_999], 9);
}
