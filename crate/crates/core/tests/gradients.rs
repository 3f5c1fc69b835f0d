//! Finite-difference gradient checks (64-bit, h = 1e-3).

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simda_core::adapters::{SpatialAdapter, TemporalAdapter};
use simda_core::denoiser::{build_image_denoiser, inflate_to_video, DenoiserConfig, Frames, VideoOptions};
use simda_core::lsa::{lsa_forward, Attention, ShiftSpec};
use simda_core::numerics::gradcheck::check;
use simda_core::params::ParamBuilder;
use simda_core::{Result, Tensor};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn leaf(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::<f64>::randn(shape, rng).with_requires_grad(true)
}

/// Contracts `y` with a fixed random tensor so every output element matters.
fn probe(y: &Tensor<f64>, w: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(y.mul(w)?.sum_all())
}

fn assert_close(name: &str, inputs: &[(String, Tensor<f64>)], loss: impl Fn() -> Result<Tensor<f64>>, probes: usize) {
    for r in check(inputs, loss, H, probes).unwrap() {
        assert!(r.rel_error <= TOL, "{name}/{}: relative error {:.3e}", r.name, r.rel_error);
    }
}

fn named(ts: &[&Tensor<f64>]) -> Vec<(String, Tensor<f64>)> {
    ts.iter().enumerate().map(|(i, t)| (format!("in{i}"), (*t).clone())).collect()
}

/// Random nonzero adapter up-weights so every adapter tensor has a gradient.
fn randomize_up(params: &simda_core::params::ParamSet<f64>, rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for (name, t) in params.iter() {
        if name.contains("adapter.up.") {
            t.tensor.update_data(|d| d.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn elementwise_and_reductions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = leaf(&[3, 4], &mut rng);
        let b = leaf(&[4], &mut rng);
        let w = Tensor::<f64>::randn(&[3, 4], &mut rng);
        let inputs = named(&[&a, &b]);
        assert_close("elementwise", &inputs, || {
            let x = a.add(&b)?.gelu().mul(&a.silu())?.sub(&b.tanh())?;
            let y = x.div(&b.square().affine(1.0, 1.0))?.softmax(1)?.add(&x.l2_normalize(1e-9)?)?;
            probe(&y, &w)
        }, 64);
    }

    #[test]
    fn losses(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = leaf(&[4, 5], &mut rng);
        let t = Tensor::<f64>::randn(&[4, 5], &mut rng);
        let inputs = named(&[&a]);
        assert_close("cross_entropy+mse", &inputs, || a.cross_entropy(&[0, 3, 1, 4])?.add(&a.mse(&t)?), 64);
    }

    #[test]
    fn linear_algebra(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = leaf(&[2, 3, 4], &mut rng);
        let b = leaf(&[2, 5, 4], &mut rng);
        let m = leaf(&[4, 3], &mut rng);
        let w = Tensor::<f64>::randn(&[2, 3, 5], &mut rng);
        let w2 = Tensor::<f64>::randn(&[2, 3, 3], &mut rng);
        let inputs = named(&[&a, &b, &m]);
        assert_close("bmm+matmul", &inputs, || probe(&a.bmm(&b, true)?, &w)?.add(&probe(&a.matmul(&m)?, &w2)?), 64);
    }

    #[test]
    fn convolutions_and_norms(seed in any::<u64>(), stride in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = leaf(&[2, 4, 6, 6], &mut rng);
        let k = leaf(&[3, 4, 3, 3], &mut rng);
        let bias = leaf(&[3], &mut rng);
        let gs = leaf(&[4], &mut rng);
        let gb = leaf(&[4], &mut rng);
        let oh = (6 + 2 - 3) / stride + 1;
        let w = Tensor::<f64>::randn(&[2, 3, oh, oh], &mut rng);
        let inputs = named(&[&x, &k, &bias, &gs, &gb]);
        assert_close("conv2d+group_norm", &inputs, || {
            let y = x.group_norm(2, 1e-5, &gs, &gb)?.conv2d(&k, Some(&bias), stride, 1)?;
            probe(&y, &w)
        }, 64);
    }

    #[test]
    fn depthwise_temporal_conv(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = leaf(&[2, 4, 3, 2, 2], &mut rng);
        let k = leaf(&[3, 3, 1, 1], &mut rng);
        let w = Tensor::<f64>::randn(&[2, 4, 3, 2, 2], &mut rng);
        let inputs = named(&[&x, &k]);
        assert_close("depthwise_conv3d", &inputs, || probe(&x.depthwise_conv3d(&k)?, &w), 64);
    }

    #[test]
    fn shape_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = leaf(&[2, 3, 2, 2], &mut rng);
        let y = leaf(&[2, 1, 2, 2], &mut rng);
        let ls = leaf(&[4], &mut rng);
        let lb = leaf(&[4], &mut rng);
        let w = Tensor::<f64>::randn(&[2, 4, 4, 4], &mut rng);
        let w2 = Tensor::<f64>::randn(&[5, 4], &mut rng);
        let inputs = named(&[&x, &y, &ls, &lb]);
        assert_close("shape", &inputs, || {
            let c = Tensor::concat(&[x.clone(), y.clone()], 1)?;
            let u = c.upsample_nearest(2)?;
            let r = c.permute(&[0, 2, 3, 1])?.reshape(&[8, 4])?.index_select(&[0, 7, 7, 3, 2])?;
            let n = r.layer_norm(1e-5, &ls, &lb)?.narrow(0, 0, 5)?;
            probe(&u, &w)?.add(&probe(&n, &w2)?)?.add(&c.sum_axis(1)?.sum_all())
        }, 64);
    }

    #[test]
    fn spatial_adapter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pb = ParamBuilder::<f64>::fresh(seed);
        let a = SpatialAdapter::new(&pb.pp("adapter"), 8, 2).unwrap();
        let params = pb.finish().unwrap();
        randomize_up(&params, &mut rng);
        let x = leaf(&[3, 8], &mut rng);
        let w = Tensor::<f64>::randn(&[3, 8], &mut rng);
        let mut inputs: Vec<(String, Tensor<f64>)> = params.iter().map(|(n, e)| (n.to_string(), e.tensor.clone())).collect();
        for (_, t) in &inputs { t.set_requires_grad(true); }
        inputs.push(("x".into(), x.clone()));
        assert_close("spatial_adapter", &inputs, || probe(&a.forward(&x)?, &w), 64);
    }

    #[test]
    fn temporal_adapter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pb = ParamBuilder::<f64>::fresh(seed);
        let a = TemporalAdapter::new(&pb.pp("temporal_adapter"), 8, 2).unwrap();
        let params = pb.finish().unwrap();
        randomize_up(&params, &mut rng);
        let x = leaf(&[2, 3, 8, 2, 2], &mut rng);
        let w = Tensor::<f64>::randn(&[2, 3, 8, 2, 2], &mut rng);
        let mut inputs: Vec<(String, Tensor<f64>)> = params.iter().map(|(n, e)| (n.to_string(), e.tensor.clone())).collect();
        for (_, t) in &inputs { t.set_requires_grad(true); }
        inputs.push(("x".into(), x.clone()));
        assert_close("temporal_adapter", &inputs, || probe(&a.forward(&x)?, &w), 64);
    }

    #[test]
    fn latent_shift_attention(seed in any::<u64>(), window in 1usize..4, heads in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pb = ParamBuilder::<f64>::fresh(seed);
        let attn = Attention::new(&pb.pp("self_attn"), 8, heads).unwrap();
        let params = pb.finish().unwrap();
        let x = leaf(&[2, 4, 3, 8], &mut rng);
        let w = Tensor::<f64>::randn(&[2, 4, 3, 8], &mut rng);
        let mut inputs: Vec<(String, Tensor<f64>)> = params.iter().map(|(n, e)| (n.to_string(), e.tensor.clone())).collect();
        for (_, t) in &inputs { t.set_requires_grad(true); }
        inputs.push(("x".into(), x.clone()));
        let spec = ShiftSpec::new(window).unwrap();
        assert_close("lsa", &inputs, || probe(&lsa_forward(&x, &attn, &spec)?, &w), 64);
    }
}

fn tiny_config() -> DenoiserConfig {
    DenoiserConfig {
        widths: vec![8, 16],
        groups: 4,
        heads: 2,
        adapter_ratio: 4,
        text_dim: 8,
        time_dim: 8,
        temb_dim: 16,
        ffn_mult: 2,
        feature_dim: 8,
        resolution: 4,
        ..DenoiserConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    /// Whole video denoiser on a 2-frame 4x4 latent clip: every parameter
    /// tensor (frozen ones temporarily marked differentiable) plus the input.
    #[test]
    fn full_video_denoiser(seed in any::<u64>(), t in 1usize..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = DenoiserConfig { seed, ..tiny_config() };
        let base = build_image_denoiser::<f64>(&cfg).unwrap();
        let model = inflate_to_video(&base, VideoOptions::default()).unwrap();
        randomize_up(model.params(), &mut rng);
        let x = leaf(&[1, 2, 48, 4, 4], &mut rng);
        let text = Tensor::<f64>::randn(&[1, 8, 8], &mut rng);
        let w = Tensor::<f64>::randn(&[1, 2, 48, 4, 4], &mut rng);
        let mut inputs: Vec<(String, Tensor<f64>)> = model
            .params()
            .iter()
            .filter(|(n, _)| !n.starts_with("text.") && !n.starts_with("feature_head."))
            .map(|(n, e)| (n.to_string(), e.tensor.clone()))
            .collect();
        for (_, p) in &inputs { p.set_requires_grad(true); }
        inputs.push(("x".into(), x.clone()));
        assert_close("denoiser", &inputs, || probe(&model.forward(&x, &text, &[t])?, &w), 6);
    }
}

#[test]
fn frames_count() {
    assert_eq!(Frames { batch: 3, len: 4 }.count(), 12);
}
