use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simda_core::adapters::bottleneck_width;
use simda_core::denoiser::{build_image_denoiser, inflate_to_video, DenoiserConfig, VideoOptions};
use simda_core::lsa::{attention_cost, AttnVariant, Attention, ShiftSpec};
use simda_core::params::{is_adapter_name, ParamBuilder};
use simda_core::{Error, Tensor};

fn small(seed: u64) -> DenoiserConfig {
    DenoiserConfig { widths: vec![8, 16], groups: 4, adapter_ratio: 4, resolution: 4, seed, ..DenoiserConfig::default() }
}

fn options(bits: u8) -> VideoOptions {
    VideoOptions {
        temporal_adapter: bits & 1 != 0,
        attn_adapter: bits & 2 != 0,
        ffn_adapter: bits & 4 != 0,
        lsa: bits & 8 != 0,
    }
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// A freshly inflated model reproduces the base frame by frame on static clips.
    #[test]
    fn identity_at_init_on_static_clips(seed in any::<u64>(), bits in 0u8..16, frames in 1usize..5, t in 1usize..1000) {
        let base = build_image_denoiser::<f32>(&small(seed)).unwrap();
        let video = inflate_to_video(&base, options(bits)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let frame = Tensor::<f32>::randn(&[1, 1, 48, 4, 4], &mut rng);
        let clip = Tensor::concat(&vec![frame.clone(); frames], 1).unwrap();
        let text = Tensor::<f32>::randn(&[1, 8, 32], &mut rng);
        let v = video.forward(&clip, &text, &[t]).unwrap().to_vec();
        let b = base.forward(&frame.reshape(&[1, 48, 4, 4]).unwrap(), &text, &[t]).unwrap().to_vec();
        for i in 0..frames {
            prop_assert!(max_abs_diff(&v[i * b.len()..(i + 1) * b.len()], &b) <= 1e-5);
        }
    }

    /// With identical frames every composite frame equals the current frame,
    /// so latent-shift attention reduces to per-frame attention.
    #[test]
    fn shift_attention_on_repeated_frames(seed in any::<u64>(), window in 1usize..5, frames in 1usize..6, heads in 1usize..3) {
        let pb = ParamBuilder::<f64>::fresh(seed);
        let attn = Attention::new(&pb.pp("a"), 8, heads).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Tensor::<f64>::randn(&[1, 1, 5, 8], &mut rng);
        let x = Tensor::concat(&vec![f; frames], 1).unwrap();
        let lsa = attn.forward(&x, AttnVariant::Lsa(ShiftSpec::new(window).unwrap())).unwrap().to_vec();
        let fw = attn.forward(&x, AttnVariant::Framewise).unwrap().to_vec();
        for (a, b) in lsa.iter().zip(&fw) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count_formula(seed in any::<u64>(), bits in 0u8..16, blocks in 1usize..3, sr in any::<bool>()) {
        let mut cfg = DenoiserConfig { blocks_per_res: blocks, ..small(seed) };
        if sr {
            cfg = cfg.superres();
        }
        let base = build_image_denoiser::<f32>(&cfg).unwrap();
        prop_assert_eq!(base.params().count().total, cfg.param_count(None));
        let opts = options(bits);
        let video = inflate_to_video(&base, opts).unwrap();
        let c = video.params().count();
        prop_assert_eq!(c.total, cfg.param_count(Some(opts)));
        prop_assert_eq!(c.frozen, cfg.param_count(None));
        prop_assert_eq!(c.trainable + c.frozen, c.total);
    }

    #[test]
    fn cost_ratio_is_half_the_length(l in 1u64..64, n in 1u64..128, d in 1u64..64) {
        let g = attention_cost(l, n, d, AttnVariant::GlobalSt);
        let s = attention_cost(l, n, d, AttnVariant::Lsa(ShiftSpec::default()));
        prop_assert_eq!(2 * g, l * s);
    }
}

#[test]
fn default_budget() {
    let cfg = DenoiserConfig::default();
    let base = build_image_denoiser::<f32>(&cfg).unwrap();
    let video = inflate_to_video(&base, VideoOptions::default()).unwrap();
    let c = video.params().count();
    assert!(c.fraction >= 0.005 && c.fraction <= 0.05, "fraction {}", c.fraction);
    for (name, e) in video.params().iter() {
        assert_eq!(e.trainable, is_adapter_name(name), "{name}");
        assert_eq!(e.tensor.requires_grad(), e.trainable, "{name}");
    }
}

#[test]
fn inflation_copies_storage() {
    let base = build_image_denoiser::<f32>(&small(1)).unwrap();
    let video = inflate_to_video(&base, VideoOptions::default()).unwrap();
    let name = "conv_in.weight";
    let before = video.params().get(name).unwrap().to_vec();
    base.params().get(name).unwrap().update_data(|d| d.iter_mut().for_each(|v| *v += 1.0));
    assert_eq!(video.params().get(name).unwrap().to_vec(), before);
    assert!(matches!(inflate_to_video(&video, VideoOptions::default()), Err(Error::Usage(_))));
}

#[test]
fn configuration_errors() {
    assert!(matches!(bottleneck_width(8, 16), Err(Error::Config(_))));
    let bad = DenoiserConfig { groups: 3, ..small(0) };
    assert!(build_image_denoiser::<f32>(&bad).is_err());
    let base = build_image_denoiser::<f32>(&small(0)).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 48, 3, 3]);
    let text = Tensor::<f32>::zeros(&[1, 8, 32]);
    assert!(matches!(base.forward(&x, &text, &[5]), Err(Error::Dimension(_))));
    let x = Tensor::<f32>::zeros(&[2, 48, 4, 4]);
    assert!(matches!(base.forward(&x, &text, &[5, 5]), Err(Error::Dimension(_))));
}
