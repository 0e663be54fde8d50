mod common;

use common::*;
use depref::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, vocab_path};
use depref::model::{Model, ModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(kind: ModelKind, seed: u64) -> Model {
    random_model(tiny_config(kind), &mut ChaCha8Rng::seed_from_u64(seed), 1.0)
}

fn assert_bit_equal(a: &Model, b: &Model) {
    assert_eq!(a.config, b.config);
    assert_eq!(a.params.len(), b.params.len());
    for (_, p) in a.params.iter() {
        let q = b.params.param(b.params.id(&p.name).unwrap());
        assert_eq!(p.value.shape(), q.value.shape(), "{}", p.name);
        let bits = |t: &depref_tensor::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.value), bits(&q.value), "{}", p.name);
        assert_eq!(p.frozen_rows, q.frozen_rows, "{}", p.name);
    }
}

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::RngTr, ModelKind::SynTr] {
        let m = model(kind, 3);
        let path = dir.path().join(format!("{}.ckpt", kind.name()));
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path, Some(&m.config)).unwrap();
        assert_bit_equal(&m, &back);
        assert_eq!(to_bytes(&back), std::fs::read(&path).unwrap());
    }
    assert_eq!(vocab_path(&dir.path().join("m.ckpt")), dir.path().join("vocab.tsv"));
}

#[test]
fn edited_shape_names_the_tensor() {
    let m = model(ModelKind::RngTr, 4);
    let bytes = to_bytes(&m);
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let line = text.lines().find(|l| l.starts_with("tensor arc.u ")).unwrap().to_string();
    let edited = line.replace("6x6", "6x5");
    assert_ne!(line, edited);
    let mut tampered = bytes.clone();
    let at = text.find(&line).unwrap();
    tampered.splice(at..at + line.len(), edited.bytes());
    let err = from_bytes(&tampered, None).unwrap_err().to_string();
    assert!(err.contains("arc.u"), "{err}");
}

#[test]
fn truncation_names_the_tensor() {
    let m = model(ModelKind::RngTr, 5);
    let bytes = to_bytes(&m);
    let err = from_bytes(&bytes[..bytes.len() - 3], None).unwrap_err().to_string();
    assert!(err.contains("truncated"), "{err}");
    assert!(err.contains("label.bias"), "{err}");
}

#[test]
fn different_configuration_is_refused_with_diff() {
    let mut big = tiny_config(ModelKind::RngTr);
    big.encoder.model_dim = 64;
    big.encoder.num_heads = 4;
    let m: Model = Model::new(big.clone(), 1).unwrap();
    let mut small = big.clone();
    small.encoder.model_dim = 32;
    let err = from_bytes(&to_bytes(&m), Some(&small)).unwrap_err().to_string();
    assert!(err.contains("model_dim: expected 32, checkpoint has 64"), "{err}");
    assert!(from_bytes(&to_bytes(&m), Some(&big)).is_ok());
}

#[test]
fn garbage_is_not_a_checkpoint() {
    assert!(from_bytes(b"hello\n", None).is_err());
    assert!(from_bytes(b"", None).is_err());
    let dir = tempfile::tempdir().unwrap();
    let err = load_checkpoint(dir.path().join("absent.ckpt"), None).unwrap_err().to_string();
    assert!(err.contains("absent.ckpt"), "{err}");
}
