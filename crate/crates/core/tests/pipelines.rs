//! Short runs of every workflow on a tiny configuration.

use simda_core::checkpoint::encode_checkpoint;
use simda_core::denoiser::{build_image_denoiser, SrConditioning};
use simda_core::diffusion::{ddim_invert, ddim_sample_from, SamplerConfig};
use simda_core::numerics::no_grad;
use simda_core::pipelines::*;
use simda_core::toyworld::{synth_video, Color, Motion, SceneSpec, Shape};
use simda_core::{Error, Tensor};

fn tiny() -> RunConfig {
    RunConfig::parse(
        "widths = 8,16\ngroups = 4\nadapter_ratio = 4\ntext_dim = 8\ntime_dim = 8\ntemb_dim = 16\nfeature_dim = 8\n\
         resolution = 4\nframes = 4\nheight = 16\nwidth = 16\nnum_clips = 8\nval_clips = 2\nbatch_size = 2\n\
         steps = 3\nlr = 1e-3\nddim_steps = 5\nbench_lengths = 2,4\nbench_tokens = 4\nbench_dim = 4\nbench_repeats = 1\n",
    )
    .unwrap()
}

fn noop() -> impl FnMut(usize, &simda_core::denoiser::Denoiser<f32>) -> simda_core::Result<()> {
    |_, _| Ok(())
}

#[test]
fn zero_step_pretraining_is_the_initialization() {
    let mut cfg = tiny();
    cfg.train.steps = 0;
    let out = pretrain_base(&cfg, &mut noop()).unwrap();
    let init = build_image_denoiser::<f32>(&cfg.model).unwrap();
    assert_eq!(encode_checkpoint(out.model.params()), encode_checkpoint(init.params()));
    assert!(out.log.records.is_empty());
}

#[test]
fn pretraining_is_reproducible() {
    let cfg = tiny();
    let a = pretrain_base(&cfg, &mut noop()).unwrap();
    let b = pretrain_base(&cfg, &mut noop()).unwrap();
    assert_eq!(encode_checkpoint(a.model.params()), encode_checkpoint(b.model.params()));
    assert_eq!(a.log.losses(), b.log.losses());
    assert_eq!(a.log.records.len(), 3);
}

#[test]
fn adapter_training_respects_the_partition() {
    let mut cfg = tiny();
    let base = pretrain_base(&cfg, &mut noop()).unwrap().model;
    cfg.train.eval_every = 2;
    cfg.train.ckpt_every = 1;
    let mut seen = Vec::new();
    let out = adapt_train_t2v(&base, &cfg, &mut |step, _| {
        seen.push(step);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    assert_eq!(out.validation.iter().map(|v| v.0).collect::<Vec<_>>(), vec![2, 3]);
    let init = simda_core::denoiser::inflate_to_video(&base, cfg.video).unwrap();
    for (name, e) in out.model.params().iter() {
        let before = init.params().tensor_bytes(name).unwrap();
        let after = out.model.params().tensor_bytes(name).unwrap();
        if e.trainable {
            assert_ne!(before, after, "{name} did not move");
        } else {
            assert_eq!(before, after, "{name} was modified");
        }
    }
    assert_eq!(out.budget, out.model.params().count());
}

#[test]
fn validation_loss_is_deterministic() {
    let cfg = tiny();
    let base = build_image_denoiser::<f32>(&cfg.model).unwrap();
    let video = simda_core::denoiser::inflate_to_video(&base, cfg.video).unwrap();
    let val = Corpus::validation(&cfg.data).unwrap();
    let sched = cfg.schedule().unwrap();
    let a = validation_loss(&video, &val, 2, &sched).unwrap();
    assert_eq!(a, validation_loss(&video, &val, 2, &sched).unwrap());
    assert!(a.is_finite() && a > 0.0);
    assert!(validation_loss(&base, &val, 2, &sched).unwrap().is_finite());
}

#[test]
fn generation_shapes_and_determinism() {
    let cfg = tiny();
    let base = build_image_denoiser::<f32>(&cfg.model).unwrap();
    let video = simda_core::denoiser::inflate_to_video(&base, cfg.video).unwrap();
    let s = SamplerConfig { num_inference_steps: 5, eta: 0.0, seed: 3, ..Default::default() };
    for model in [&base, &video] {
        let a = generate_t2v(model, "a red square moving right", 4, &cfg, &s).unwrap();
        assert_eq!(a.shape(), &[4, 3, 16, 16]);
        assert!(a.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
        let b = generate_t2v(model, "a red square moving right", 4, &cfg, &s).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }
    assert!(matches!(generate_t2v(&video, "a red hexagon static", 4, &cfg, &s), Err(Error::Vocabulary(_))));
    let dir = tempfile::tempdir().unwrap();
    let px = generate_t2v(&video, "a blue circle static", 2, &cfg, &s).unwrap();
    let rec = write_generation(dir.path(), &px, "a blue circle static", &s).unwrap();
    assert_eq!(rec.frames, vec!["frame_000.ppm", "frame_001.ppm"]);
    assert!(dir.path().join("manifest.jsonl").exists());
}

#[test]
fn guidance_scale_one_is_plain_conditioning() {
    let cfg = tiny();
    let base = build_image_denoiser::<f32>(&cfg.model).unwrap();
    let s = SamplerConfig { num_inference_steps: 3, eta: 0.0, seed: 1, ..Default::default() };
    let plain = generate_t2v(&base, "a red square static", 2, &cfg, &s).unwrap();
    let mut guided_cfg = cfg.clone();
    guided_cfg.guidance_scale = 3.0;
    let guided = generate_t2v(&base, "a red square static", 2, &guided_cfg, &s).unwrap();
    assert_ne!(plain.to_vec(), guided.to_vec());
}

#[test]
fn model_files_round_trip() {
    let cfg = tiny();
    let base = build_image_denoiser::<f32>(&cfg.model).unwrap();
    let video = simda_core::denoiser::inflate_to_video(&base, cfg.video).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.ckpt");
    save_model(&video, ModelKind::Video, &p).unwrap();
    assert!(card_path(&p).exists());
    let (kind, back) = load_model(&p).unwrap();
    assert_eq!(kind, ModelKind::Video);
    assert_eq!(encode_checkpoint(back.params()), encode_checkpoint(video.params()));
    assert_eq!(back.video_options(), video.video_options());
}

#[test]
fn untuned_identity_edit_is_the_round_trip() {
    let cfg = tiny();
    let base = build_image_denoiser::<f32>(&cfg.model).unwrap();
    let video = simda_core::denoiser::inflate_to_video(&base, cfg.video).unwrap();
    let spec = SceneSpec::simple(Shape::Square, Color::Red, Motion::Right);
    let clip = synth_video(&spec, 4, 16, 16, 2).unwrap();
    let cap = "a red square moving right";
    let out = one_shot_edit(&video, &clip.pixels, cap, cap, &cfg, 0).unwrap();
    assert_eq!(out.reconstruction.to_vec(), out.edited.to_vec());
    // Same as running inversion and sampling directly.
    let sched = cfg.schedule().unwrap();
    let lat = to_model_space(&simda_core::toyworld::encode_latent(&clip.pixels).unwrap()).reshape(&[1, 4, 48, 4, 4]).unwrap();
    let text = caption_batch(&video, &simda_core::toyworld::Caption::parse(cap).unwrap(), 1).unwrap();
    let direct = no_grad(|| {
        let inv = ddim_invert(&video, &lat, &text, &cfg.sampler, &sched).unwrap();
        latents_to_pixels(&ddim_sample_from(&video, &inv, &text, &cfg.sampler, &sched).unwrap()).unwrap()
    });
    assert_eq!(direct.to_vec(), out.reconstruction.to_vec());
    assert!(matches!(one_shot_edit(&base, &clip.pixels, cap, cap, &cfg, 0), Err(Error::Usage(_))));
}

#[test]
fn edit_tuning_touches_only_adapters() {
    let cfg = tiny();
    let base = build_image_denoiser::<f32>(&cfg.model).unwrap();
    let video = simda_core::denoiser::inflate_to_video(&base, cfg.video).unwrap();
    let spec = SceneSpec::simple(Shape::Circle, Color::Red, Motion::Static);
    let clip = synth_video(&spec, 4, 16, 16, 2).unwrap();
    let out = one_shot_edit(&video, &clip.pixels, "a red circle static", "a blue circle static", &cfg, 2).unwrap();
    assert_eq!(out.log.records.len(), 2);
    for (name, e) in out.model.params().iter() {
        let same = video.params().tensor_bytes(name) == out.model.params().tensor_bytes(name);
        assert_eq!(same, !e.trainable, "{name}");
    }
}

#[test]
fn masked_statistics() {
    let px = Tensor::<f32>::from_f64(&[0.0, 1.0, 0.5, 0.25, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[1, 3, 2, 2]).unwrap();
    let mask = vec![vec![true, false, true, false]];
    assert_eq!(masked_channel_mean(&px, &mask, 0).unwrap(), 0.25);
    assert_eq!(masked_channel_mean(&px, &mask, 1).unwrap(), 0.5);
    assert!(masked_channel_mean(&px, &[vec![false; 4]], 0).is_err());
    let other = px.affine(1.0, 0.5);
    assert!((mean_abs_diff(&px, &other).unwrap() - 0.5).abs() < 1e-7);
}

#[test]
fn superres_structure() {
    let mut cfg = tiny();
    cfg.train.steps = 2;
    let out = superres_train(&cfg, SrTask::Upscale, &mut noop()).unwrap();
    let model = &out.model;
    assert_eq!(model.config().input_channels(), 96);
    assert_eq!(model.params().get("conv_in.weight").unwrap().shape()[1], 96);
    assert_eq!(out.budget.frozen, 0);
    let spec = SceneSpec::simple(Shape::Square, Color::Green, Motion::Static);
    let high = synth_video(&spec, 4, 32, 32, 1).unwrap().pixels;
    let low = downsample_box(&high, SR_FACTOR).unwrap();
    assert_eq!(low.shape(), &[4, 3, 8, 8]);
    let s = SamplerConfig { num_inference_steps: 3, eta: 0.0, seed: 0, ..Default::default() };
    let up = superres_apply(model, &low, "a green square static", &cfg, &s).unwrap();
    assert_eq!(up.shape(), &[4, 3, 32, 32]);
    let odd = Tensor::<f32>::zeros(&[4, 3, 5, 5]);
    assert!(superres_apply(model, &odd, "a green square static", &cfg, &s).is_err());
    assert!(matches!(superres_apply(&build_image_denoiser::<f32>(&cfg.model).unwrap(), &low, "a green square static", &cfg, &s), Err(Error::Usage(_))));
    let x = Tensor::<f32>::zeros(&[1, 4, 48, 8, 8]);
    let text = Tensor::<f32>::zeros(&[1, 8, 8]);
    let bad = SrConditioning { low: Tensor::zeros(&[1, 4, 48, 4, 4]), noise_level: vec![0.0] };
    assert!(model.forward_full(&x, &text, &[3], Some(&bad)).is_err());
    assert!(model.forward(&x, &text, &[3]).is_err());
}

#[test]
fn box_downsampling_oracle() {
    let px = Tensor::<f32>::from_vec((0..16).map(|v| v as f32).collect(), &[1, 1, 4, 4]).unwrap();
    let d = downsample_box(&px, 2).unwrap().to_vec();
    assert_eq!(d, vec![2.5, 4.5, 10.5, 12.5]);
    assert!(downsample_box(&px, 3).is_err());
}

#[test]
fn loss_log_csv() {
    let mut log = LossLog::default();
    log.push(1, 0.5, 10);
    log.push(2, 0.25, 21);
    let csv = log.to_csv();
    assert!(csv.starts_with("step,loss,wallclock_ms\n1,"));
    assert_eq!(LossLog::parse_csv(&csv).unwrap(), log);
    assert_eq!(log.head_mean(1), 0.5);
    assert_eq!(log.tail_mean(5), 0.375);
}

#[test]
fn config_rejects_bad_values() {
    for text in ["lr = -1", "batch_size = 0", "eta = 2", "widths = ", "edit_source = a red blob static", "ddim_steps = 5000", "shift_window = 0"] {
        assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
    }
}
