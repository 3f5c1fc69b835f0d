use proptest::prelude::*;
use simda_core::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC};
use simda_core::denoiser::{build_image_denoiser, inflate_to_video, DenoiserConfig, VideoOptions};
use simda_core::params::ParamSet;
use simda_core::{Error, Tensor};
use std::path::Path;

fn small_video() -> ParamSet<f32> {
    let cfg = DenoiserConfig { widths: vec![8, 16], groups: 4, adapter_ratio: 4, ..DenoiserConfig::default() };
    let base = build_image_denoiser::<f32>(&cfg).unwrap();
    inflate_to_video(&base, VideoOptions::default()).unwrap().params().clone()
}

/// Independent reader of the container layout, used as the oracle.
fn parse(bytes: &[u8]) -> Vec<(String, bool, Vec<usize>, Vec<f32>)> {
    let mut at = 0;
    let mut take = |n: usize| {
        let s = &bytes[at..at + n];
        at += n;
        s
    };
    assert_eq!(take(8), b"SIMDA001");
    let count = u64::from_le_bytes(take(8).try_into().unwrap()) as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let nl = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
        let name = String::from_utf8(take(nl).to_vec()).unwrap();
        let flag = take(1)[0];
        assert!(flag <= 1);
        let rank = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
        let dims: Vec<usize> = (0..rank).map(|_| u64::from_le_bytes(take(8).try_into().unwrap()) as usize).collect();
        let n: usize = dims.iter().product();
        let data = take(4 * n).chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, flag == 1, dims, data));
    }
    out
}

#[test]
fn layout_matches_independent_reader() {
    let ps = small_video();
    let bytes = encode_checkpoint(&ps);
    assert_eq!(&bytes[..8], MAGIC);
    let entries = parse(&bytes);
    assert_eq!(entries.len(), ps.len());
    let total: usize = entries.iter().map(|e| e.3.len()).sum();
    let trainable: usize = entries.iter().filter(|e| e.1).map(|e| e.3.len()).sum();
    let c = ps.count();
    assert_eq!((total, trainable), (c.total, c.trainable));
    for (name, flag, dims, data) in entries {
        let t = ps.get(&name).unwrap();
        assert_eq!(t.shape(), &dims[..]);
        assert_eq!(ps.is_trainable(&name), Some(flag));
        assert_eq!(t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let ps = small_video();
    save_checkpoint(&ps, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for (name, e) in ps.iter() {
        assert_eq!(loaded.is_trainable(name), Some(e.trainable));
    }
}

#[test]
fn special_values_survive() {
    let mut ps = ParamSet::<f32>::new();
    let vals = vec![f32::NAN, -0.0, f32::INFINITY, f32::MIN_POSITIVE / 2.0, 1.5];
    ps.insert("odd", Tensor::from_vec(vals.clone(), &[5]).unwrap(), true).unwrap();
    ps.insert("scalar", Tensor::scalar(3.0), false).unwrap();
    let back = decode_checkpoint(&encode_checkpoint(&ps), Path::new("mem")).unwrap();
    let bits = |v: Vec<f32>| v.into_iter().map(f32::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(back.get("odd").unwrap().to_vec()), bits(vals));
    assert_eq!(back.get("scalar").unwrap().shape(), &[] as &[usize]);
}

#[test]
fn bad_magic_is_corrupt() {
    let mut bytes = encode_checkpoint(&small_video());
    bytes[0] = b'X';
    assert!(matches!(decode_checkpoint(&bytes, Path::new("mem")), Err(Error::Corrupt { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_truncation_is_corrupt(cut in 0usize..10_000) {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("a.weight", Tensor::from_vec((0..600).map(|i| i as f32).collect(), &[20, 30]).unwrap(), true).unwrap();
        ps.insert("b", Tensor::zeros(&[7]), false).unwrap();
        let bytes = encode_checkpoint(&ps);
        let cut = cut % bytes.len();
        let corrupt = matches!(decode_checkpoint(&bytes[..cut], Path::new("mem")), Err(Error::Corrupt { .. }));
        prop_assert!(corrupt, "prefix of {} bytes decoded", cut);
    }
}
