use setmixer::io::{
    dataset_hash, decode_pcf, encode_model, encode_pcf, load_model, load_split, read_index, read_pcf, save_model,
    save_samples, write_pcf,
};
use setmixer::model::{desk_config, Model};
use setmixer::nn::{AdamState, Matrix};
use setmixer::synth::{make_dataset, DatasetOptions, Family};
use setmixer::{Error, PointCloud};

#[test]
fn pcf_layout_is_little_endian_with_header() {
    let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]], Some(Matrix::from_rows(&[[4.0]]).unwrap()), Some(7)).unwrap();
    let bytes = encode_pcf(&cloud);
    assert_eq!(&bytes[..4], b"PCF1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    assert_eq!(i32::from_le_bytes(bytes[12..16].try_into().unwrap()), 7);
    assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2.0);
    assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 4.0);
    assert_eq!(bytes.len(), 48);
    assert_eq!(decode_pcf(&bytes).unwrap(), cloud);
    let unlabelled = cloud.clone().with_label(None);
    assert_eq!(i32::from_le_bytes(encode_pcf(&unlabelled)[12..16].try_into().unwrap()), -1);
    assert!(matches!(decode_pcf(&bytes[..40]), Err(Error::Format { .. })));
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let opts = DatasetOptions { points: 64, ..DatasetOptions::default() };
    let ds = make_dataset(&[Family::Cone, Family::Torus], 3, 1, 5, &opts).unwrap();
    let rows = save_samples(dir.path(), &ds.train).unwrap();
    assert_eq!(read_index(dir.path()).unwrap(), rows);
    let text = std::fs::read_to_string(dir.path().join("index.csv")).unwrap();
    assert!(text.starts_with("path,label,family,seed\n"));
    assert!(text.contains("clouds/00000.pcf,0,cone,"));
    let (_, clouds) = load_split(dir.path()).unwrap();
    assert_eq!(clouds, ds.train.iter().map(|s| s.cloud.clone()).collect::<Vec<_>>());

    let hash = dataset_hash(dir.path()).unwrap();
    let again = tempfile::tempdir().unwrap();
    save_samples(again.path(), &ds.train).unwrap();
    assert_eq!(dataset_hash(again.path()).unwrap(), hash);
    write_pcf(&again.path().join("clouds/00001.pcf"), &ds.test[0].cloud).unwrap();
    assert_ne!(dataset_hash(again.path()).unwrap(), hash);
    assert_eq!(read_pcf(&again.path().join("clouds/00001.pcf")).unwrap(), ds.test[0].cloud);
}

#[test]
fn checkpoint_round_trip_preserves_logits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::new(desk_config(8), 3).unwrap();
    let opt = AdamState::new(model.params());
    save_model(&path, &model, 4, Some(&opt)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"SETMIX-CKPT v1\n"));
    let (loaded, meta) = load_model(&path).unwrap();
    assert_eq!(meta.epochs, 4);
    assert_eq!(meta.config_hash, model.config().hash());
    assert!(meta.optimizer.is_some());
    let ds = make_dataset(&[Family::Sphere], 1, 0, 1, &DatasetOptions::default()).unwrap();
    assert_eq!(loaded.logits(&ds.train[0].cloud).unwrap(), model.logits(&ds.train[0].cloud).unwrap());
    assert_eq!(encode_model(&loaded, 4, Some(&opt)).unwrap(), bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::new(desk_config(4), 1).unwrap();
    save_model(&path, &model, 0, None).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_model(&path).is_err());

    let hash = model.config().hash();
    let at = bytes.windows(hash.len()).position(|w| w == hash.as_bytes()).unwrap();
    let mut forged = bytes.clone();
    forged[at..at + hash.len()].fill(b'0');
    std::fs::write(&path, &forged).unwrap();
    assert!(matches!(load_model(&path), Err(Error::ChecksumMismatch { .. })));

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_model(&path).is_err());
}
