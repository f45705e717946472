use warpnorm::checkpoint;
use warpnorm::config::{AblationRun, KvFile, StprRun};
use warpnorm::image::{decode_pnm, encode_pgm, encode_ppm, flow_to_rgb, hstack};
use warpnorm::manifest::{sha256_hex, RunManifest};
use warpnorm::metrics::{parse_csv, trace_csv};
use warpnorm::{CliError, Threads};
use warpnorm_core::model::{ModelConfig, ModelParams, StyleMode};
use warpnorm_core::synth::Motion;
use warpnorm_core::train::{Executor, Sequential, StepMetrics, TrainTrace};
use warpnorm_core::{Shape4, Tensor4};

fn quantized(shape: Shape4) -> Tensor4 {
    Tensor4::from_fn(shape, |_, c, y, x| {
        ((c * 31 + y * 7 + x * 13) % 256) as f64 / 255.0
    })
}

#[test]
fn ppm_and_pgm_round_trip() {
    let rgb = quantized(Shape4::new(1, 3, 5, 7));
    assert_eq!(decode_pnm(&encode_ppm(&rgb).unwrap()).unwrap(), rgb);
    let grey = quantized(Shape4::new(1, 1, 4, 3));
    assert_eq!(decode_pnm(&encode_pgm(&grey).unwrap()).unwrap(), grey);
}

#[test]
fn pgm_maps_unit_interval_to_bytes() {
    let t = Tensor4::new(Shape4::new(1, 1, 1, 4), vec![0.0, 0.5, 1.0, 1.7]).unwrap();
    let bytes = encode_pgm(&t).unwrap();
    assert!(bytes.starts_with(b"P5\n4 1\n255\n"));
    assert_eq!(&bytes[bytes.len() - 4..], &[0, 128, 255, 255]);
}

#[test]
fn images_reject_bad_shapes_and_headers() {
    assert!(encode_ppm(&Tensor4::zeros(Shape4::new(2, 3, 2, 2))).is_err());
    assert!(encode_pgm(&Tensor4::zeros(Shape4::new(1, 3, 2, 2))).is_err());
    assert!(decode_pnm(b"P3\n1 1\n255\n\0\0\0").is_err());
    assert!(decode_pnm(b"P5\n2 2\n255\n\0").is_err());
}

#[test]
fn hstack_lays_panels_side_by_side() {
    let a = Tensor4::full(Shape4::new(1, 3, 2, 2), 0.25);
    let b = Tensor4::full(Shape4::new(1, 1, 2, 2), 0.75);
    let s = hstack(&[a, b]).unwrap();
    assert_eq!(s.shape(), Shape4::new(1, 3, 2, 4));
    assert_eq!(s.at(0, 2, 1, 1), 0.25);
    assert_eq!(s.at(0, 0, 0, 2), 0.75);
    assert!(hstack(&[
        Tensor4::zeros(Shape4::new(1, 3, 2, 2)),
        Tensor4::zeros(Shape4::new(1, 3, 2, 3))
    ])
    .is_err());
}

#[test]
fn flow_colouring() {
    let zero = Tensor4::zeros(Shape4::new(1, 2, 4, 4));
    assert!(flow_to_rgb(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    let f = warpnorm_core::synth::gen_flow(&Motion::Rotate { degrees: 20.0 }, 16, 16).unwrap();
    let rgb = flow_to_rgb(&f).unwrap();
    assert!(rgb.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(rgb.max_abs() > 0.9);
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = ModelConfig::default();
    let a = ModelParams::init(&cfg, 1).unwrap();
    let bytes = checkpoint::encode(&a);
    assert!(bytes.starts_with(b"warpnorm-checkpoint 1\nendian little\n"));
    let mut b = ModelParams::init(&cfg, 2).unwrap();
    checkpoint::decode_into(&bytes, &mut b).unwrap();
    assert_eq!(a, b);

    let other = ModelConfig {
        channels: vec![8, 16, 32],
        ..ModelConfig::default()
    };
    let mut c = ModelParams::init(&other, 0).unwrap();
    assert!(matches!(
        checkpoint::decode_into(&bytes, &mut c),
        Err(CliError::Format(_))
    ));
    let free = ModelConfig {
        style_mode: StyleMode::FreeMaps,
        ..ModelConfig::default()
    };
    let mut d = ModelParams::init(&free, 0).unwrap();
    assert!(checkpoint::decode_into(&bytes, &mut d).is_err());
    let mut e = ModelParams::init(&cfg, 3).unwrap();
    assert!(checkpoint::decode_into(&bytes[..bytes.len() - 8], &mut e).is_err());
}

#[test]
fn kv_parsing_errors_carry_line_numbers() {
    let kv = KvFile::parse("test.cfg", "# comment\nseed = 3\n\nsteps = 10 # trailing\n").unwrap();
    let run = AblationRun::from_kv(&kv).unwrap();
    assert_eq!(run.ablation.seed, 3);
    assert_eq!(run.ablation.steps, 10);

    let err = KvFile::parse("test.cfg", "seed = 1\nseed = 2\n").unwrap_err();
    assert!(matches!(err, CliError::Config { line: 2, .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(matches!(
        KvFile::parse("test.cfg", "just words\n"),
        Err(CliError::Config { line: 1, .. })
    ));

    let unknown = KvFile::parse("test.cfg", "seed = 1\nspeed = 2\n").unwrap();
    assert!(matches!(
        AblationRun::from_kv(&unknown),
        Err(CliError::Config { line: 2, .. })
    ));
    let bad = KvFile::parse("test.cfg", "steps = many\n").unwrap();
    assert!(matches!(
        AblationRun::from_kv(&bad),
        Err(CliError::Config { line: 1, .. })
    ));
    let motion = KvFile::parse("test.cfg", "f2 = wobble(1)\n").unwrap();
    assert!(AblationRun::from_kv(&motion).is_err());
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let err = KvFile::load(std::path::Path::new("/definitely/not/here.cfg")).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn configs_round_trip_through_text() {
    let run = AblationRun::default();
    let again = AblationRun::from_kv(&KvFile::parse("x", &run.to_kv()).unwrap()).unwrap();
    assert_eq!(again, run);
    let stpr = StprRun::default();
    let again = StprRun::from_kv(&KvFile::parse("x", &stpr.to_kv()).unwrap()).unwrap();
    assert_eq!(again, stpr);
    assert_eq!(stpr.stpr.steps, 100);
}

#[test]
fn stpr_geometry_follows_scene_keys() {
    let kv = KvFile::parse(
        "x",
        "height = 32\nwidth = 32\nchannels = 4,8,8\nstyle_channels = 2,2,2\n",
    )
    .unwrap();
    let run = StprRun::from_kv(&kv).unwrap();
    assert_eq!((run.train.model.height, run.train.model.width), (32, 32));
    let bad = KvFile::parse("x", "channels = 5,8,8\n").unwrap();
    assert!(StprRun::from_kv(&bad).is_err());
}

#[test]
fn trace_csv_shape() {
    let mut trace = TrainTrace::default();
    trace.rows.push(StepMetrics {
        step: 0,
        terms: Default::default(),
        total: 0.5,
        heldout_l1: Some(0.25),
    });
    trace.rows.push(StepMetrics {
        step: 1,
        terms: Default::default(),
        total: 0.125,
        heldout_l1: None,
    });
    let csv = trace_csv(&trace);
    assert!(csv.starts_with("step,adv,recon,style,content,total,heldout_l1\n"));
    let rows = parse_csv(&csv);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][6], "0.25");
    assert_eq!(rows[1][6], "");
}

#[test]
fn manifest_records_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new("test", None, 7, dir.path());
    m.write_artifact("a.txt", b"abc").unwrap();
    m.finish().unwrap();
    let text = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(text.contains("subcommand = test"));
    assert!(text.contains("seed = 7"));
    assert!(text.contains(
        "artifact a.txt sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    ));
    assert_eq!(
        sha256_hex(b""),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
}

#[test]
fn threaded_executor_keeps_index_order() {
    let f = |i: usize| i * i;
    let want = Sequential.map(37, &f);
    for t in [1, 2, 3, 8, 64] {
        assert_eq!(Threads(t).map(37, &f), want);
    }
    assert!(Threads(4).map(0, &f).is_empty());
}
