mod common;

use common::{random_frame, rng, tiny_concat_model, tiny_model, zero_weights};
use proptest::prelude::*;
use rand::Rng;
use tinygaze::gaze::{
    build_reference_model, grid_tensor, make_grid_embedding, postprocess, predict, preprocess, ConfigError, ConfigFile,
    CropRect, GazeError, PipelineConfig,
};
use tinygaze::graph::{Engine, LayerOp, Model};
use tinygaze::kernels::{center_crop, quantize_image, resize_bilinear, rgb_to_gray, Image, PixelFormat, Tensor};

fn channel(t: &Tensor, c: usize) -> Vec<i8> {
    let n = *t.dims().last().unwrap();
    t.as_i8().unwrap().iter().skip(c).step_by(n).copied().collect()
}

#[test]
fn mid_gray_quantizes_to_zero() {
    let m = tiny_model(1);
    let cfg = PipelineConfig::default();
    let frame = Image::gray(320, 240, vec![128; 320 * 240]).unwrap();
    let t = preprocess(&frame, &cfg, &m).unwrap();
    assert_eq!(t.dims(), &[1, 96, 96, 2]);
    assert!(channel(&t, 0).iter().all(|&q| q == 0));
}

#[test]
fn native_resolution_frame_passes_through() {
    let cfg = PipelineConfig::new(96, 96, 96).unwrap();
    let m = tiny_concat_model(1);
    let mut r = rng(2);
    let px: Vec<u8> = (0..96 * 96).map(|_| r.gen()).collect();
    let t = preprocess(&Image::gray(96, 96, px.clone()).unwrap(), &cfg, &m).unwrap();
    assert_eq!(t.dims(), &[1, 96, 96, 1]);
    let want: Vec<i8> = px.iter().map(|&p| (i16::from(p) - 128) as i8).collect();
    assert_eq!(t.as_i8().unwrap(), want.as_slice());
}

#[test]
fn preprocess_equals_manual_composition() {
    let m = tiny_model(3);
    let mut r = rng(4);
    for i in 0..50 {
        let (w, h) = (r.gen_range(96..400), r.gen_range(96..300));
        let format = if i % 2 == 0 {
            PixelFormat::Gray8
        } else {
            PixelFormat::Rgb888
        };
        let frame = random_frame(&mut r, w, h, format);
        let side = r.gen_range(1..=w.min(h));
        let cfg = PipelineConfig::new(w, h, side).unwrap();

        let gray = match format {
            PixelFormat::Gray8 => frame.clone(),
            PixelFormat::Rgb888 => rgb_to_gray(&frame).unwrap(),
        };
        let small = resize_bilinear(&center_crop(&gray, side).unwrap(), 96, 96).unwrap();
        let image = quantize_image(&small, cfg.input_qp).unwrap();

        let t = preprocess(&frame, &cfg, &m).unwrap();
        assert_eq!(channel(&t, 0), image.as_i8().unwrap(), "frame {i}");
        assert_eq!(channel(&t, 1), m.grid.as_ref().unwrap().as_i8().unwrap(), "frame {i}");
    }
}

#[test]
fn grid_channel_is_constant() {
    let m = tiny_model(5);
    let cfg = PipelineConfig::default();
    let stored = m.grid.as_ref().unwrap();
    assert_eq!(stored, &grid_tensor(&cfg).unwrap());
    let mut r = rng(6);
    let first = channel(
        &preprocess(&random_frame(&mut r, 320, 240, PixelFormat::Gray8), &cfg, &m).unwrap(),
        1,
    );
    for _ in 0..20 {
        let frame = random_frame(&mut r, 320, 240, PixelFormat::Rgb888);
        assert_eq!(channel(&preprocess(&frame, &cfg, &m).unwrap(), 1), first);
    }
    // 240 of 320 columns, stretched onto 96 cells: [12, 84)
    let plane = make_grid_embedding(cfg.grid_rect, cfg.capture_dims).unwrap();
    for (i, &p) in plane.pixels().iter().enumerate() {
        let col = i % 96;
        assert_eq!(p, if (12..84).contains(&col) { 255 } else { 0 }, "cell {i}");
    }
    assert!(first.iter().all(|&q| q == -128 || q == 127));
}

#[test]
fn grid_embedding_rejects_bad_rects() {
    let zero = CropRect {
        x: 0,
        y: 0,
        width: 0,
        height: 10,
    };
    assert!(make_grid_embedding(zero, (64, 64)).is_err());
    let outside = CropRect {
        x: 60,
        y: 0,
        width: 10,
        height: 10,
    };
    assert!(make_grid_embedding(outside, (64, 64)).is_err());
    assert!(PipelineConfig::new(100, 80, 81).is_err());
}

#[test]
fn content_outside_the_crop_is_ignored() {
    let engine = Engine::new(build_reference_model(7).unwrap()).unwrap();
    let cfg = PipelineConfig::default();
    let mut r = rng(8);
    for _ in 0..5 {
        let a = random_frame(&mut r, 320, 240, PixelFormat::Rgb888);
        let mut px = a.pixels().to_vec();
        for y in 0..240 {
            for x in (0..40).chain(280..320) {
                let i = 3 * (y * 320 + x);
                px[i..i + 3].copy_from_slice(&[r.gen(), r.gen(), r.gen()]);
            }
        }
        let b = Image::rgb(320, 240, px).unwrap();
        assert_ne!(a, b);
        assert_eq!(
            predict(&engine, &a, &cfg).unwrap().raw,
            predict(&engine, &b, &cfg).unwrap().raw
        );
    }
}

#[test]
fn zero_weights_expose_the_output_bias() {
    let cfg = PipelineConfig::default();
    let mut r = rng(9);
    for m in [tiny_model(10), build_reference_model(10).unwrap()] {
        let engine = Engine::new(zero_weights(m, &[0.05, -0.05])).unwrap();
        for _ in 0..3 {
            let est = predict(&engine, &random_frame(&mut r, 320, 240, PixelFormat::Gray8), &cfg).unwrap();
            assert_eq!(est.raw, (0.05, -0.05));
            assert!(
                (est.x_cm - 0.5).abs() < 1e-6 && (est.y_cm + 0.5).abs() < 1e-6,
                "{est:?}"
            );
        }
    }
}

#[test]
fn predictions_are_deterministic() {
    let cfg = PipelineConfig::default();
    let frame = random_frame(&mut rng(11), 320, 240, PixelFormat::Rgb888);
    let a = Engine::new(build_reference_model(12).unwrap()).unwrap();
    let b = Engine::new(build_reference_model(12).unwrap()).unwrap();
    let first = predict(&a, &frame, &cfg).unwrap();
    for _ in 0..3 {
        assert_eq!(predict(&a, &frame, &cfg).unwrap().raw, first.raw);
    }
    assert_eq!(predict(&b, &frame, &cfg).unwrap().raw, first.raw);
}

#[test]
fn concurrent_predictions_agree() {
    let cfg = PipelineConfig::default();
    let engine = Engine::new(build_reference_model(13).unwrap()).unwrap();
    let frames: Vec<Image> = {
        let mut r = rng(14);
        (0..4)
            .map(|_| random_frame(&mut r, 320, 240, PixelFormat::Gray8))
            .collect()
    };
    let serial: Vec<_> = frames.iter().map(|f| predict(&engine, f, &cfg).unwrap().raw).collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = frames
            .iter()
            .map(|f| s.spawn(|| predict(&engine, f, &cfg).unwrap().raw))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

#[test]
fn concat_layer_matches_two_channel_input() {
    let cfg = PipelineConfig::default();
    let two = Engine::new(tiny_model(15)).unwrap();
    let one = Engine::new(tiny_concat_model(15)).unwrap();
    let mut r = rng(16);
    for _ in 0..10 {
        let frame = random_frame(&mut r, 320, 240, PixelFormat::Gray8);
        assert_eq!(
            predict(&two, &frame, &cfg).unwrap().raw,
            predict(&one, &frame, &cfg).unwrap().raw
        );
    }
}

#[test]
fn wrong_frame_size_is_rejected() {
    let engine = Engine::new(tiny_model(1)).unwrap();
    let frame = Image::gray(640, 480, vec![0; 640 * 480]).unwrap();
    match predict(&engine, &frame, &PipelineConfig::default()) {
        Err(GazeError::FrameDimensions { expected, got }) => assert_eq!((expected, got), ((320, 240), (640, 480))),
        other => panic!("{other:?}"),
    }
}

/// Scales the output layer so the raw output lands far outside [-1, 1].
fn loud(mut m: Model, gain: f32) -> Model {
    if let Some(LayerOp::FcReal { weights, bias }) = m.layers.last_mut().map(|l| &mut l.op) {
        let w: Vec<f32> = weights.as_f32().unwrap().iter().map(|v| v * gain).collect();
        *weights = Tensor::real32(weights.dims().to_vec(), w).unwrap();
        let b: Vec<f32> = bias.as_f32().unwrap().iter().map(|v| v * gain).collect();
        *bias = Tensor::real32(bias.dims().to_vec(), b).unwrap();
    }
    m
}

#[test]
fn estimates_stay_in_range_for_extreme_weights() {
    let cfg = PipelineConfig::default();
    let mut r = rng(17);
    let mut saturated = 0;
    for seed in 0..10 {
        let engine = Engine::new(loud(tiny_model(seed), 1e4)).unwrap();
        for _ in 0..10 {
            let est = predict(&engine, &random_frame(&mut r, 320, 240, PixelFormat::Rgb888), &cfg).unwrap();
            assert!(est.x_cm.abs() <= 10.0 && est.y_cm.abs() <= 10.0, "{est:?}");
            saturated += usize::from(est.x_cm.abs() == 10.0) + usize::from(est.y_cm.abs() == 10.0);
        }
    }
    assert!(saturated > 100, "only {saturated} saturated axes");
}

proptest! {
    #[test]
    fn postprocess_clamps_any_finite_output(x in any::<f32>(), y in any::<f32>()) {
        let result = postprocess((x, y));
        if x.is_finite() && y.is_finite() {
            let est = result.unwrap();
            prop_assert!(est.x_cm.abs() <= 10.0 && est.y_cm.abs() <= 10.0);
            prop_assert_eq!(est.raw, (x, y));
            if x.abs() <= 1.0 {
                prop_assert_eq!(est.x_cm, 10.0 * x);
            }
        } else {
            prop_assert!(matches!(result, Err(GazeError::InvalidOutput(_))));
        }
    }
}

#[test]
fn postprocess_examples() {
    let cm = |raw| {
        let e = postprocess(raw).unwrap();
        (e.x_cm, e.y_cm)
    };
    assert_eq!(cm((0.0, 0.0)), (0.0, 0.0));
    assert_eq!(cm((1.5, -0.2)), (10.0, -2.0));
    assert_eq!(cm((-1.0, 1.0)), (-10.0, 10.0));
}

#[test]
fn config_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("gaze-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("pipeline.conf");
    std::fs::write(
        &path,
        "capture_width = 640\ncapture_height = 480\ncrop_side = 400 # tighter\n",
    )
    .unwrap();
    let file = ConfigFile::load(&path).unwrap();
    let cfg = file.pipeline().unwrap();
    assert_eq!(cfg, PipelineConfig::new(640, 480, 400).unwrap());
    assert_eq!(
        cfg.grid_rect,
        CropRect {
            x: 120,
            y: 40,
            width: 400,
            height: 400
        }
    );

    std::fs::write(&path, "crop_side = 500\n").unwrap();
    assert!(matches!(
        ConfigFile::load(&path).unwrap().pipeline(),
        Err(ConfigError::Pipeline(_))
    ));
    assert!(matches!(
        ConfigFile::load(&dir.join("missing")),
        Err(ConfigError::Io { .. })
    ));
    std::fs::remove_dir_all(&dir).unwrap();
}
