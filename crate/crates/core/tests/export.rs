use nalgebra::DMatrix;
use serde_json::Value;
use sha2::{Digest, Sha256};
use structattn::attention_init::{init_vit, InitConfig, InitMethod, ModelInit};
use structattn::conv_matrix::GridShape;
use structattn::export::*;
use structattn::fidelity::evaluate_model;
use structattn::Error;

fn small() -> InitConfig {
    InitConfig {
        grid: GridShape::new(4, 4).unwrap(),
        dim: 24,
        heads: 2,
        layers: 2,
        d_head: 8,
        ..Default::default()
    }
}

fn model() -> ModelInit {
    init_vit(&small(), 3).unwrap()
}

fn split(bytes: &[u8]) -> (Value, Vec<u8>) {
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    (header, bytes[16 + len..].to_vec())
}

/// Builds a container by hand from header text and payload.
fn assemble(header: &str, payload: &[u8]) -> Vec<u8> {
    let mut json = header.as_bytes().to_vec();
    while !(16 + json.len()).is_multiple_of(64) {
        json.push(b'\n');
    }
    let mut out = b"SAIW".to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out
}

#[test]
fn f64_round_trip_is_exact() {
    let m = model();
    let back = decode_container(&encode_container(&m, DType::F64).unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn f32_round_trip_is_a_cast() {
    let m = model();
    let back = decode_container(&encode_container(&m, DType::F32).unwrap()).unwrap();
    let cast = |x: &DMatrix<f64>| x.map(|v| v as f32 as f64);
    assert_eq!(back.pos.data, cast(&m.pos.data));
    for (a, b) in m.attention.iter().zip(&back.attention) {
        assert_eq!(b.q, cast(&a.q));
        assert_eq!(b.k, cast(&a.k));
        assert_eq!(a.target_offset, b.target_offset);
    }
}

#[test]
fn equal_inputs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.saiw"), dir.path().join("b.saiw"));
    write_container(&init_vit(&small(), 9).unwrap(), &a, DType::F32).unwrap();
    write_container(&init_vit(&small(), 9).unwrap(), &b, DType::F32).unwrap();
    let digest = |p| Sha256::digest(std::fs::read(p).unwrap());
    assert_eq!(digest(&a), digest(&b));
    let c = dir.path().join("c.saiw");
    write_container(&init_vit(&small(), 10).unwrap(), &c, DType::F32).unwrap();
    assert_ne!(digest(&a), digest(&c));
}

#[test]
fn default_model_has_73_aligned_tensors() {
    let m = ModelInit::build(&InitConfig::default(), 0, InitMethod::Default).unwrap();
    let bytes = encode_container(&m, DType::F32).unwrap();
    let (header, payload) = parse_header(&bytes).unwrap();
    assert_eq!(header.tensors.len(), 73);
    assert_eq!((bytes.len() - payload.len()) % ALIGNMENT, 0);
    for t in header.tensors.values() {
        assert_eq!(t.byte_offset % ALIGNMENT as u64, 0);
    }
    assert_eq!(header.tensors["pos_embed"].shape, vec![64, 192]);
    assert_eq!(header.tensors["layer11.head2.k"].shape, vec![192, 64]);
}

#[test]
fn foreign_layout_parses_identically() {
    let m = model();
    let (header, payload) = split(&encode_container(&m, DType::F64).unwrap());
    // store tensors in reverse order with a 128-byte stride and pretty JSON
    let mut tensors: Vec<(String, Value)> = header["tensors"].as_object().unwrap().clone().into_iter().collect();
    tensors.reverse();
    let mut new_payload = Vec::new();
    let mut table = Vec::new();
    for (name, entry) in &tensors {
        let off = entry["byte_offset"].as_u64().unwrap() as usize;
        let len = entry["byte_len"].as_u64().unwrap() as usize;
        while new_payload.len() % 128 != 0 {
            new_payload.push(0);
        }
        let mut e = entry.clone();
        e["byte_offset"] = Value::from(new_payload.len());
        new_payload.extend_from_slice(&payload[off..off + len]);
        table.push(format!("    {}: {}", Value::from(name.as_str()), e));
    }
    let text = format!(
        "{{\n  \"metadata\": {},\n  \"tensors\": {{\n{}\n  }}\n}}",
        serde_json::to_string_pretty(&header["metadata"]).unwrap(),
        table.join(",\n")
    );
    let back = decode_container(&assemble(&text, &new_payload)).unwrap();
    assert_eq!(back, m);
}

fn expect_format(r: structattn::Result<ModelInit>) {
    assert!(matches!(r, Err(Error::Format(_))), "{r:?}");
}

fn expect_corruption(r: structattn::Result<ModelInit>) {
    assert!(matches!(r, Err(Error::Corruption(_))), "{r:?}");
}

fn expect_validation(r: structattn::Result<ModelInit>) -> Vec<String> {
    match r {
        Err(Error::Validation { tensors }) => tensors,
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn malformed_preamble() {
    let good = encode_container(&model(), DType::F32).unwrap();
    let mut bad = good.clone();
    bad[0] ^= 0xff;
    expect_format(decode_container(&bad));

    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&2u32.to_le_bytes());
    expect_format(decode_container(&bad));

    expect_format(decode_container(&good[..10]));

    let mut bad = good.clone();
    bad[8..16].copy_from_slice(&(good.len() as u64).to_le_bytes());
    expect_corruption(decode_container(&bad));

    expect_corruption(decode_container(&good[..good.len() - 1]));
}

#[test]
fn malformed_header() {
    let m = model();
    let (header, payload) = split(&encode_container(&m, DType::F64).unwrap());
    expect_format(decode_container(&assemble("{\"tensors\": ", &payload)));

    let mut h = header.clone();
    let first = h["tensors"]["layer0.head0.k"]["byte_offset"].clone();
    h["tensors"]["layer0.head0.q"]["byte_offset"] = first;
    expect_format(decode_container(&assemble(&h.to_string(), &payload)));

    let mut h = header.clone();
    h["tensors"]["pos_embed"]["byte_len"] = Value::from(8);
    expect_format(decode_container(&assemble(&h.to_string(), &payload)));

    let mut h = header.clone();
    h["tensors"].as_object_mut().unwrap().remove("layer1.head0.k");
    let names = expect_validation(decode_container(&assemble(&h.to_string(), &payload)));
    assert_eq!(names, vec!["layer1.head0.k".to_string()]);
}

#[test]
fn norm_breach_is_rejected() {
    let m = model();
    let (header, mut payload) = split(&encode_container(&m, DType::F64).unwrap());
    let off = header["tensors"]["layer1.head1.q"]["byte_offset"].as_u64().unwrap() as usize;
    let v = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
    payload[off..off + 8].copy_from_slice(&(v + 0.5).to_le_bytes());
    let names = expect_validation(decode_container(&assemble(&header.to_string(), &payload)));
    assert_eq!(names, vec!["layer1.head1.q".to_string()]);
}

#[test]
fn pgm_files_and_zoom() {
    let dir = tempfile::tempdir().unwrap();
    let m = DMatrix::from_fn(20, 20, |i, j| (i + j) as f64);
    let paths = render_attention_pgm(&m, dir.path().join("map.pgm"), Some(Zoom::corner(4))).unwrap();
    assert_eq!(paths.len(), 2);
    let full = std::fs::read(&paths[0]).unwrap();
    assert!(full.starts_with(b"P5\n20 20\n255\n"));
    assert_eq!(full.len(), 13 + 400);
    assert_eq!(*full.last().unwrap(), 255);
    let zoom = std::fs::read(&paths[1]).unwrap();
    assert!(zoom.starts_with(b"P5\n4 4\n255\n"));
    // zoom keeps the full-map scale: entry (3, 3) = 6 of max 38
    assert_eq!(*zoom.last().unwrap(), (255.0f64 * 6.0 / 38.0).round() as u8);
}

#[test]
fn fidelity_csv_columns() {
    let m = model();
    let reports = evaluate_model(&m, |_, _| true).unwrap();
    let mut out = Vec::new();
    write_fidelity_csv(&reports, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "layer,head,method,target_dr,target_dc,detected_dr,detected_dc,peak_recovery,mean_row_entropy,frobenius_error,detected_flat,entropy_ratio"
    );
    assert_eq!(lines.count(), 4);

    let d = ModelInit::build(&small(), 3, InitMethod::Default).unwrap();
    let mut out = Vec::new();
    write_fidelity_csv(&evaluate_model(&d, |l, h| l == 0 && h == 0).unwrap(), &mut out).unwrap();
    let row = String::from_utf8(out).unwrap().lines().nth(1).unwrap().to_string();
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells[2], "default");
    assert_eq!((cells[3], cells[4], cells[7], cells[9]), ("", "", "", ""));
}
