//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the PASS/FAIL lines are always printed.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{crc32_bitwise, kernel_sweep, random_frame, random_input, rng, tiny_model, KernelKind};
use rand::Rng;
use tinygaze::bench::{render_report, run_bench, BenchOptions, FakeClock, ReportFormat};
use tinygaze::gaze::{build_reference_model, postprocess, predict, preprocess, raw_output, PipelineConfig};
use tinygaze::graph::{count_macs, count_params, decode_model, encode_model, plan_arena, validate, Engine, TensorSpec};
use tinygaze::kernels::{Image, PixelFormat};
use tinygaze::wire::{
    device_serve, encode_message, loopback, Decoder, FramePayload, GazePayload, Reply, WireMessage, SYNC,
};

type Outcome = Result<String, String>;
/// Name, runtime limit and check.
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn budget_envelope() -> Outcome {
    let m = build_reference_model(1).map_err(|e| e.to_string())?;
    let (params, macs) = (count_params(&m), count_macs(&m));
    let size = encode_model(&m).len();
    ensure((77_220..=94_380).contains(&params), || format!("params {params}"))?;
    ensure((4_770_000..=5_830_000).contains(&macs), || format!("MACs {macs}"))?;
    ensure(size <= 173_056, || format!("file {size} bytes"))?;
    ensure(validate(&m).is_empty(), || "reference model fails validation".into())?;
    Ok(format!("params {params}, MACs {macs}, file {size} B"))
}

fn arena_budget() -> Outcome {
    let m = build_reference_model(1).map_err(|e| e.to_string())?;
    let plan = plan_arena(&m).map_err(|e| e.to_string())?;
    // Brute-force lifetime oracle: activation k is live while layers k-1 and k run.
    let sizes: Vec<usize> = m.activations().map(TensorSpec::byte_len).collect();
    let layers = m.layers.len();
    let bound = (0..layers)
        .map(|t| {
            sizes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k.saturating_sub(1) <= t && t <= k.min(layers - 1))
                .map(|(_, s)| s)
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0);
    ensure(plan.find_conflict().is_none(), || "overlapping live activations".into())?;
    ensure(plan.peak_bytes <= 131_072, || format!("peak {}", plan.peak_bytes))?;
    ensure(bound == 110_592 && plan.peak_bytes == bound, || {
        format!("peak {} vs oracle {bound}", plan.peak_bytes)
    })?;
    Ok(format!("peak {} B = lifetime oracle, budget 131072 B", plan.peak_bytes))
}

fn kernel_correctness() -> Outcome {
    let mut parts = Vec::new();
    for (kind, seed) in [
        (KernelKind::Conv, 101),
        (KernelKind::Depthwise, 102),
        (KernelKind::Dense, 103),
    ] {
        let s = kernel_sweep(kind, 1000, seed)?;
        ensure(s.cases >= 1000 && s.worst_quanta <= 1.0, || format!("{kind:?}: {s:?}"))?;
        parts.push(format!(
            "{kind:?} {} cases bit-exact, worst {:.3} q",
            s.cases, s.worst_quanta
        ));
    }
    Ok(parts.join("; "))
}

fn output_contract() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut r = rng(40);
    let mut checked = 0usize;
    for seed in 0..10u64 {
        let model_seed = r.gen::<u64>() ^ seed;
        let engine =
            Engine::new(build_reference_model(model_seed).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut arena = engine.new_arena();
        let mut grid: Option<Vec<i8>> = None;
        for i in 0..1000 {
            let format = if i % 2 == 0 {
                PixelFormat::Gray8
            } else {
                PixelFormat::Rgb888
            };
            let frame = random_frame(&mut r, 320, 240, format);
            let input = preprocess(&frame, &cfg, engine.model()).map_err(|e| e.to_string())?;
            let plane: Vec<i8> = input.as_i8().unwrap().iter().skip(1).step_by(2).copied().collect();
            match &grid {
                None => grid = Some(plane),
                Some(g) => ensure(*g == plane, || format!("model {seed} frame {i}: grid channel changed"))?,
            }
            let out = engine.execute_in(&mut arena, &input).map_err(|e| e.to_string())?;
            let est = postprocess(raw_output(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            ensure(est.x_cm.abs() <= 10.0 && est.y_cm.abs() <= 10.0, || {
                format!("model {seed} frame {i}: {est:?}")
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} estimates in [-10, 10]^2, grid channel constant per model"
    ))
}

fn throughput() -> Outcome {
    let cfg = PipelineConfig::default();
    let engine = Engine::new(build_reference_model(2).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut r = rng(50);
    let frames: Vec<Image> = (0..100)
        .map(|_| random_frame(&mut r, 320, 240, PixelFormat::Rgb888))
        .collect();
    let start = Instant::now();
    for f in &frames {
        predict(&engine, f, &cfg).map_err(|e| e.to_string())?;
    }
    let fps = frames.len() as f64 / start.elapsed().as_secs_f64();
    ensure(fps >= 3.0, || format!("{fps:.1} FPS"))?;

    let opts = BenchOptions {
        model_name: "reference".into(),
        iterations: 20,
        warmup: 2,
        clock_hz: Some(156e6),
    };
    let render = |format| {
        let mut clock = FakeClock::new(10_000_000);
        run_bench(&engine, &frames[..4], &cfg, &opts, &mut clock).map(|rep| render_report(&rep, format))
    };
    for format in [ReportFormat::Table, ReportFormat::Json] {
        let (a, b) = (
            render(format).map_err(|e| e.to_string())?,
            render(format).map_err(|e| e.to_string())?,
        );
        ensure(a == b, || {
            format!("{format:?} report differs between identical fake-clock runs")
        })?;
    }
    Ok(format!(
        "{fps:.1} FPS end to end over 100 frames; fake-clock reports byte-identical"
    ))
}

struct SoakFrame {
    bytes: Vec<u8>,
    garbage: Vec<u8>,
    /// Estimate the device must reply with, or `None` when corrupted.
    expect: Option<(u32, u32)>,
}

fn soak_stream(engine: &Engine, count: usize) -> Result<Vec<SoakFrame>, String> {
    let mut r = rng(60);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let format = if i % 3 == 0 {
            PixelFormat::Rgb888
        } else {
            PixelFormat::Gray8
        };
        let (w, h) = (r.gen_range(8..40), r.gen_range(8..30));
        let img = random_frame(&mut r, w, h, format);
        let msg = FramePayload::from_image(&img)
            .and_then(|f| f.to_message())
            .map_err(|e| e.to_string())?;
        let mut bytes = encode_message(&msg);
        let garbage: Vec<u8> = if r.gen_bool(0.3) {
            (0..r.gen_range(1..=64))
                .map(|_| if r.gen_bool(0.1) { SYNC } else { r.gen() })
                .collect()
        } else {
            Vec::new()
        };
        let expect = if r.gen_bool(0.1) {
            let bit = r.gen_range(0..bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);
            None
        } else {
            let cfg = PipelineConfig::for_frame(w, h).map_err(|e| e.to_string())?;
            let est = predict(engine, &img, &cfg).map_err(|e| e.to_string())?;
            Some((est.x_cm.to_bits(), est.y_cm.to_bits()))
        };
        out.push(SoakFrame { bytes, garbage, expect });
    }
    Ok(out)
}

fn protocol_robustness() -> Outcome {
    let engine = Engine::new(tiny_model(70)).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let frames = soak_stream(&engine, 10_000)?;
    let valid = frames.iter().filter(|f| f.expect.is_some()).count();

    // Every intact frame must decode the moment its last byte arrives.
    let mut d = Decoder::new();
    for (i, f) in frames.iter().enumerate() {
        d.push(&f.garbage);
        d.push(&f.bytes);
        let mut intact = Vec::new();
        while let Some(e) = d.next_event() {
            if let Ok(m) = e {
                intact.push(m);
            }
        }
        let want = usize::from(f.expect.is_some());
        ensure(intact.len() == want, || {
            format!("frame {i}: decoded {} messages, expected {want}", intact.len())
        })?;
    }
    ensure(d.finish().iter().all(Result::is_err), || {
        "message surfaced only at end of stream".into()
    })?;

    // The same stream through a device over an in-memory loopback.
    let (host, device) = loopback();
    let (mut tx, mut rx) = (host.writer, host.reader);
    let replies: Vec<WireMessage> = std::thread::scope(|s| {
        let server = s.spawn(|| device_serve(device.reader, device.writer, &engine, &cfg));
        let frames = &frames;
        s.spawn(move || {
            for f in frames {
                tx.write_all(&f.garbage)
                    .and_then(|_| tx.write_all(&f.bytes))
                    .expect("device hung up");
            }
        });
        let mut d = Decoder::new();
        let mut buf = [0u8; 4096];
        let mut got = Vec::new();
        loop {
            let n = std::io::Read::read(&mut rx, &mut buf).expect("loopback read");
            if n == 0 {
                break;
            }
            d.push(&buf[..n]);
            while let Some(e) = d.next_event() {
                got.push(e.expect("reply stream corrupted"));
            }
        }
        server.join().expect("device panicked").expect("device I/O");
        got
    });
    ensure(replies.len() == valid, || {
        format!("{} replies for {valid} intact frames", replies.len())
    })?;
    let expected = frames.iter().filter_map(|f| f.expect);
    for (i, (m, want)) in replies.iter().zip(expected).enumerate() {
        let g: GazePayload = match Reply::parse(m) {
            Ok(Reply::Gaze(g)) => g,
            other => return Err(format!("reply {i}: {other:?}")),
        };
        ensure((g.x_cm.to_bits(), g.y_cm.to_bits()) == want, || {
            format!("reply {i} out of order or wrong")
        })?;
    }
    Ok(format!(
        "{} frames, {} corrupted, {} garbage runs: {valid} in-order replies, none for corrupted frames",
        frames.len(),
        frames.len() - valid,
        frames.iter().filter(|f| !f.garbage.is_empty()).count()
    ))
}

fn with_crc(mut body: Vec<u8>) -> Vec<u8> {
    let crc = crc32_bitwise(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    body
}

fn serialization() -> Outcome {
    let reference = build_reference_model(3).map_err(|e| e.to_string())?;
    let bytes = encode_model(&reference);
    let back = decode_model(&bytes).map_err(|e| e.to_string())?;
    ensure(back == reference && encode_model(&back) == bytes, || {
        "reference round trip not bit-exact".into()
    })?;
    let engine = Engine::new(back).map_err(|e| e.to_string())?;
    let original = Engine::new(reference).map_err(|e| e.to_string())?;
    let x = random_input(&mut rng(80), original.model());
    let (a, b) = (
        original.execute(&x).map_err(|e| e.to_string())?,
        engine.execute(&x).map_err(|e| e.to_string())?,
    );
    ensure(
        a.as_f32().map(|v| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>())
            == b.as_f32().map(|v| v.iter().map(|f| f.to_bits()).collect()),
        || "decoded model computes differently".into(),
    )?;

    let small = encode_model(&tiny_model(81));
    let mut r = rng(82);
    let mut rejected = 0;
    for case in 0..10_000 {
        let input = match case % 4 {
            0 => (0..r.gen_range(0..600)).map(|_| r.gen()).collect::<Vec<u8>>(),
            1 => {
                let mut v = small.clone();
                for _ in 0..r.gen_range(1..6) {
                    let i = r.gen_range(0..v.len());
                    v[i] = r.gen();
                }
                v
            }
            2 => {
                let mut body = small[..small.len() - 4].to_vec();
                for _ in 0..r.gen_range(1..6) {
                    let i = r.gen_range(4..body.len());
                    body[i] = r.gen();
                }
                with_crc(body)
            }
            _ => small[..r.gen_range(0..small.len())].to_vec(),
        };
        let outcome = catch_unwind(|| decode_model(&input)).map_err(|_| format!("decode panicked on case {case}"))?;
        match outcome {
            Err(_) => rejected += 1,
            Ok(m) => ensure(validate(&m).is_empty(), || {
                format!("case {case}: accepted an invalid model")
            })?,
        }
    }
    Ok(format!(
        "{} B round trip bit-exact; 10000 fuzz cases, {rejected} rejected, no panic",
        bytes.len()
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("budget envelope", Duration::from_secs(1), budget_envelope),
        ("arena budget", Duration::from_secs(1), arena_budget),
        ("kernel correctness", Duration::from_secs(30), kernel_correctness),
        ("output contract", Duration::from_secs(120), output_contract),
        ("throughput sanity", Duration::from_secs(60), throughput),
        ("protocol robustness", Duration::from_secs(120), protocol_robustness),
        ("serialization", Duration::from_secs(60), serialization),
    ];
    // A panic is reported on its criterion's line instead.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; too slow"))
            }
        });
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "{tag} {name:<20} {detail} [{:.2}s / {}s]",
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        failures += usize::from(result.is_err());
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
