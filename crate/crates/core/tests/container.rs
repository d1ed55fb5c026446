// SPDX-License-Identifier: MIT OR Apache-2.0

use ppscope_core::config::{Activation, ModelConfig, NormKind, Positional};
use ppscope_core::container::{read_container, to_bytes, write_container};
use ppscope_core::toy::random_weights;
use ppscope_core::weights::tensor_count;
use ppscope_core::{Error, Model};

fn two_by_two() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        n_kv_heads: 2,
        d_model: 8,
        d_head: 4,
        d_mlp: 16,
        vocab_size: 12,
        n_ctx: 16,
        norm_kind: NormKind::Rms,
        activation: Activation::Gelu,
        positional: Positional::Learned,
        logit_softcap: None,
        tie_embeddings: false,
        attn_bias: false,
    }
}

#[test]
fn toy_container_loads_with_documented_count() {
    let cfg = two_by_two();
    let dir = tempfile::tempdir().unwrap();
    let (wp, cp) = (dir.path().join("w.ppsc"), dir.path().join("c.json"));
    Model::new(cfg.clone(), random_weights(&cfg, 0))
        .unwrap()
        .save(&wp, &cp)
        .unwrap();
    let map = read_container(&wp).unwrap();
    assert_eq!(map.len(), tensor_count(&cfg));
    assert_eq!(map.len(), 4 + 2 * 8);
    let m = Model::load(&wp, &cp).unwrap();
    assert_eq!(m.config(), &cfg);
}

#[test]
fn writing_twice_is_byte_identical() {
    let cfg = two_by_two();
    let map = random_weights(&cfg, 1).to_tensor_map();
    assert_eq!(to_bytes(&map).unwrap(), to_bytes(&map).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_container(&a, &map).unwrap();
    write_container(&b, &map).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn transposed_tensor_is_named_in_the_error() {
    let cfg = two_by_two();
    let mut map = random_weights(&cfg, 2).to_tensor_map();
    let t = map.get_mut("layers.1.mlp.w_in").unwrap();
    t.shape.reverse();
    let dir = tempfile::tempdir().unwrap();
    let (wp, cp) = (dir.path().join("w.ppsc"), dir.path().join("c.json"));
    write_container(&wp, &map).unwrap();
    cfg.save(&cp).unwrap();
    match Model::load(&wp, &cp) {
        Err(Error::ShapeMismatch { name, .. }) => assert_eq!(name, "layers.1.mlp.w_in"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_file_and_bad_config_fail() {
    let cfg = two_by_two();
    let bytes = to_bytes(&random_weights(&cfg, 3).to_tensor_map()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let wp = dir.path().join("w.ppsc");
    std::fs::write(&wp, &bytes[..bytes.len() - 7]).unwrap();
    assert!(read_container(&wp).is_err());
    let cp = dir.path().join("c.json");
    std::fs::write(&cp, r#"{"n_layers": 2}"#).unwrap();
    assert!(ModelConfig::load(&cp).is_err());
    let mut extra: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    extra["surprise"] = 1.into();
    assert!(ModelConfig::from_json(&extra.to_string()).is_err());
}

#[test]
fn full_scale_preset_validates() {
    let full = ModelConfig::full_scale();
    full.validate().unwrap();
    assert_eq!((full.n_layers, full.n_heads, full.d_mlp), (26, 8, 9216));
}
