use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smoj::cameras::read_cameras;
use smoj::image::read_png;
use smoj::smim::read_smim;
use smoj::synth::{random_scene, synthetic_head};
use smoj::timeline::write_timeline;
use smoj::{load_asset, save_asset};
use smoj_core::codec::{encode_unchecked, EncodeOptions};
use smoj_core::{
    blend, render, AvatarAsset, BlendTimeline, BlendWeights, RenderConfig, FACS_CHANNELS,
};
use tempfile::TempDir;

fn smoj(args: &[&str]) -> Output {
    smoj_env(args, &[])
}

fn smoj_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_smoj"));
    cmd.args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("SMOJ_")) {
        cmd.env_remove(k);
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn head(dir: &TempDir, m: usize) -> PathBuf {
    let path = dir.path().join("head.smoj");
    save_asset(&synthetic_head(m, 5), &path).unwrap();
    path
}

#[test]
fn inspect_lists_channels_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 200);
    let o = smoj(&["inspect", "--asset", s(&asset)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("splats (M): 200"));
    assert!(text.contains("channels (K): 16"));
    assert!(FACS_CHANNELS.iter().all(|c| text.contains(c)));
    assert!(text.contains("validation: ok"));
}

#[test]
fn inspect_reports_corruption_with_offset() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 20);
    let mut bytes = std::fs::read(&asset).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&asset, bytes).unwrap();
    let o = smoj(&["inspect", "--asset", s(&asset)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
}

#[test]
fn inspect_flags_range_violations() {
    let dir = TempDir::new().unwrap();
    let mut asset = synthetic_head(10, 1);
    asset.rest.gaussians[3].opacity = 1.5;
    let path = dir.path().join("bad.smoj");
    std::fs::write(
        &path,
        encode_unchecked(&asset, EncodeOptions::default()).unwrap(),
    )
    .unwrap();
    let o = smoj(&["inspect", "--asset", s(&path)]);
    assert_eq!(code(&o), 3);
    assert!(
        stdout(&o).contains("validation: 1 violation(s)"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&smoj(&["frobnicate"])), 1);
    assert_eq!(code(&smoj(&["inspect"])), 1);
    assert_eq!(
        code(&smoj(&[
            "render", "--asset", "a", "--out", "b", "--mode", "4dgs"
        ])),
        1
    );
    let o = smoj_env(&["inspect", "--asset", "x.smoj"], &[("SMOJ_PORT", "high")]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&smoj(&["--help"])), 0);
}

#[test]
fn default_render_is_one_frontal_view_of_configured_size() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 300);
    let out = dir.path().join("r");
    let o = smoj(&[
        "render",
        "--asset",
        s(&asset),
        "--out",
        s(&out),
        "--width",
        "48",
        "--height",
        "40",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let png = read_png(out.join("view_000.png")).unwrap();
    assert_eq!((png.width, png.height), (48, 40));
    assert!(!out.join("view_001.png").exists());
    assert!(!out.join("view_000.normal.smim").exists());
    let cams = read_cameras(out.join("cameras.txt")).unwrap();
    assert_eq!(cams.len(), 1);
    // Frontal: the camera sits on +z of the centroid.
    let centroid = load_asset(&asset).unwrap().rest.centroid().unwrap();
    let c = cams[0].center();
    assert!((c[2] - centroid[2] - 3.0).abs() < 1e-9 && (c[0] - centroid[0]).abs() < 1e-9);
}

#[test]
fn turntable_writes_every_view_and_the_camera_list() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 100);
    let out = dir.path().join("t");
    let o = smoj(&[
        "render",
        "--asset",
        s(&asset),
        "--out",
        s(&out),
        "--turntable",
        "10",
        "--width",
        "16",
        "--height",
        "16",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for k in 0..10 {
        assert!(out.join(format!("view_{k:03}.png")).exists());
        assert!(out.join(format!("view_{k:03}.depth.smim")).exists());
    }
    assert_eq!(read_cameras(out.join("cameras.txt")).unwrap().len(), 10);
}

#[test]
fn surfel_mode_adds_normals_and_buffers_reload_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let asset_path = head(&dir, 400);
    let out = dir.path().join("n");
    let o = smoj(&[
        "render",
        "--asset",
        s(&asset_path),
        "--out",
        s(&out),
        "--mode",
        "2dgs",
        "--width",
        "32",
        "--height",
        "32",
        "--preset",
        "happiness",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let asset = load_asset(&asset_path).unwrap();
    let cam = read_cameras(out.join("cameras.txt")).unwrap()[0];
    let posed = blend(&asset, &smoj_core::emotion_preset("happiness").unwrap()).unwrap();
    let direct = render(&posed, &cam, &RenderConfig::surfel()).unwrap();
    let load = |name: &str| {
        read_smim(out.join(format!("view_000.{name}.smim")))
            .unwrap()
            .data
    };
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&load("rgb")), bits(&direct.rgb));
    assert_eq!(bits(&load("alpha")), bits(&direct.alpha));
    assert_eq!(bits(&load("depth")), bits(&direct.depth));
    assert_eq!(bits(&load("normal")), bits(&direct.normal));
    assert!(direct.normal.iter().any(|n| *n != 0.0));
}

fn timeline_file(dir: &TempDir, name: &str, frames: Vec<(f64, BlendWeights)>) -> PathBuf {
    let path = dir.path().join(name);
    let names: Vec<String> = FACS_CHANNELS.iter().map(|c| c.to_string()).collect();
    write_timeline(&path, &names, &BlendTimeline::new(frames).unwrap()).unwrap();
    path
}

#[test]
fn zero_timeline_frames_equal_the_rest_render() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 300);
    let tl = timeline_file(
        &dir,
        "zero.txt",
        vec![
            (0.0, BlendWeights::zeros(16)),
            (0.5, BlendWeights::zeros(16)),
        ],
    );
    let rest = dir.path().join("rest");
    let flags = ["--width", "24", "--height", "24"];
    assert_eq!(
        code(&smoj(
            &[
                &["render", "--asset", s(&asset), "--out", s(&rest)],
                &flags[..]
            ]
            .concat()
        )),
        0
    );
    let anim = dir.path().join("anim");
    let o = smoj(
        &[
            &[
                "animate",
                "--asset",
                s(&asset),
                "--timeline",
                s(&tl),
                "--out",
                s(&anim),
                "--fps",
                "10",
            ],
            &flags[..],
        ]
        .concat(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("frames: 6"), "{text}");
    assert!(
        text.contains("blend_ms p50=") && text.contains("render_ms p50=") && text.contains("p99=")
    );
    let reference = read_png(rest.join("view_000.png")).unwrap();
    for i in 0..6 {
        assert_eq!(
            read_png(anim.join(format!("frame_{i:05}.png"))).unwrap(),
            reference,
            "frame {i}"
        );
    }
    let timing = std::fs::read_to_string(anim.join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 7);
}

#[test]
fn one_hot_ramp_ends_at_the_component_render() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 300);
    let jaw = FACS_CHANNELS.iter().position(|c| *c == "jawOpen").unwrap();
    let tl = timeline_file(
        &dir,
        "ramp.txt",
        vec![
            (0.0, BlendWeights::zeros(16)),
            (1.0, BlendWeights::one_hot(16, jaw)),
        ],
    );
    let weights = BlendWeights::one_hot(16, jaw)
        .0
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let flags = ["--width", "24", "--height", "24"];
    let pose = dir.path().join("pose");
    let o = smoj(
        &[
            &[
                "render",
                "--asset",
                s(&asset),
                "--out",
                s(&pose),
                "--weights",
                &weights,
            ],
            &flags[..],
        ]
        .concat(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let anim = dir.path().join("anim");
    let o = smoj(
        &[
            &[
                "animate",
                "--asset",
                s(&asset),
                "--timeline",
                s(&tl),
                "--out",
                s(&anim),
                "--fps",
                "4",
            ],
            &flags[..],
        ]
        .concat(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        read_png(anim.join("frame_00004.png")).unwrap(),
        read_png(pose.join("view_000.png")).unwrap()
    );
    assert_ne!(
        read_png(anim.join("frame_00000.png")).unwrap(),
        read_png(anim.join("frame_00004.png")).unwrap()
    );
}

#[test]
fn mismatched_timeline_channels_are_rejected() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 50);
    let tl = dir.path().join("swapped.txt");
    let mut names: Vec<String> = FACS_CHANNELS.iter().map(|c| c.to_string()).collect();
    names.swap(0, 1);
    write_timeline(
        &tl,
        &names,
        &BlendTimeline::new(vec![(0.0, BlendWeights::zeros(16))]).unwrap(),
    )
    .unwrap();
    let o = smoj(&[
        "animate",
        "--asset",
        s(&asset),
        "--timeline",
        s(&tl),
        "--out",
        s(&dir.path().join("a")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("channels"), "{}", stderr(&o));
}

fn targets(dir: &TempDir, asset: &Path, views: &str, size: &str) -> PathBuf {
    let out = dir.path().join("targets");
    let o = smoj(&[
        "render",
        "--asset",
        s(asset),
        "--out",
        s(&out),
        "--turntable",
        views,
        "--width",
        size,
        "--height",
        size,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn fit_with_zero_iterations_writes_the_init() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 60);
    let t = targets(&dir, &asset, "2", "16");
    let out = dir.path().join("out.smoj");
    let o = smoj(&[
        "fit",
        "--targets",
        s(&t),
        "--init",
        s(&asset),
        "--out",
        s(&out),
        "--iterations",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&asset).unwrap());
}

#[test]
fn fit_without_cameras_fails() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 10);
    let t = targets(&dir, &asset, "2", "16");
    std::fs::remove_file(t.join("cameras.txt")).unwrap();
    let o = smoj(&[
        "fit",
        "--targets",
        s(&t),
        "--init",
        s(&asset),
        "--out",
        s(&dir.path().join("o.smoj")),
    ]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("camera"), "{}", stderr(&o));
}

#[test]
fn fit_recovers_a_perturbed_scene_deterministically() {
    let dir = TempDir::new().unwrap();
    let gt = dir.path().join("gt.smoj");
    save_asset(&AvatarAsset::from_rest(random_scene(10, 8)), &gt).unwrap();
    let t = targets(&dir, &gt, "6", "48");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = smoj(&[
            "fit",
            "--targets",
            s(&t),
            "--init",
            s(&gt),
            "--out",
            s(&out),
            "--iterations",
            "600",
            "--seed",
            "3",
            "--perturb-position",
            "0.05",
            "--perturb-color",
            "0.1",
            "--lambda-dist",
            "0",
            "--log-every",
            "200",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (out, stdout(&o))
    };
    let (a, log) = run("a.smoj");
    let min_psnr: f64 = log
        .lines()
        .find_map(|l| l.strip_prefix("min_psnr_db "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(min_psnr >= 30.0, "{log}");
    assert!(log.starts_with("iter,total,render,normal,dist\n0,"));
    let history = std::fs::read_to_string(format!("{}.history.csv", a.display())).unwrap();
    assert_eq!(history.lines().count(), 601);
    let (b, _) = run("b.smoj");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn settings_precedence_is_env_then_flags_then_file() {
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 20);
    let cfg = dir.path().join("smoj.toml");
    std::fs::write(&cfg, "width = 10\nheight = 11\nmode = \"2dgs\"\n").unwrap();
    let out = dir.path().join("r");
    let args = [
        "render",
        "--asset",
        s(&asset),
        "--out",
        s(&out),
        "--config",
        s(&cfg),
        "--width",
        "20",
        "--height",
        "21",
    ];
    let o = smoj_env(&args, &[("SMOJ_WIDTH", "30")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let png = read_png(out.join("view_000.png")).unwrap();
    assert_eq!((png.width, png.height), (30, 21));
    // The file still supplies the mode.
    assert!(out.join("view_000.normal.smim").exists());

    std::fs::write(&cfg, "widht = 10\n").unwrap();
    assert_eq!(
        code(&smoj(&[
            "inspect",
            "--asset",
            s(&asset),
            "--config",
            s(&cfg)
        ])),
        2
    );
}

#[test]
fn bench_emits_the_table() {
    let o = smoj(&[
        "bench",
        "--resolutions",
        "32,16",
        "--counts",
        "0,30",
        "--frames",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], smoj::bench::CSV_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("16,16,0,2,"));
    assert!(lines[4].starts_with("32,32,30,2,"));
}

#[test]
fn fixtures_hold_blended_positions() {
    let dir = TempDir::new().unwrap();
    let asset_path = head(&dir, 30);
    let out = dir.path().join("fx");
    let o = smoj(&["fixtures", "--asset", s(&asset_path), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert_eq!(
        manifest
            .lines()
            .filter(|l| l.starts_with("fixture "))
            .count(),
        20
    );
    let asset = load_asset(&asset_path).unwrap();
    let text = std::fs::read_to_string(out.join("blend_03.txt")).unwrap();
    let mut lines = text.lines();
    let w: Vec<f32> = lines
        .next()
        .unwrap()
        .split(' ')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(w, BlendWeights::one_hot(16, 2).0);
    for (line, g) in lines.zip(&asset.components[2].gaussians) {
        let p: Vec<f32> = line.split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(p, g.position);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stylize_round_trips_a_render_through_the_mock() {
    use smoj::stylizer::{run_mock_server, MockConfig, MockMode};
    let mock = run_mock_server(
        "127.0.0.1:0".parse().unwrap(),
        MockConfig::new(MockMode::Tint),
    )
    .await
    .unwrap();
    let dir = TempDir::new().unwrap();
    let asset = head(&dir, 100);
    let out = dir.path().join("styled.png");
    let endpoint = mock.endpoint();
    let args: Vec<String> = [
        "--endpoint",
        &endpoint,
        "--width",
        "24",
        "--height",
        "20",
        "stylize",
        "--asset",
        s(&asset),
        "--out",
        s(&out),
        "--prompt",
        "ink",
        "--strength",
        "0",
    ]
    .iter()
    .map(|a| a.to_string())
    .collect();
    let o = tokio::task::spawn_blocking(move || {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        smoj(&refs)
    })
    .await
    .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let styled = read_png(&out).unwrap();
    assert_eq!((styled.width, styled.height), (24, 20));
    mock.shutdown().await.unwrap();

    // Nothing listening: a runtime failure, not a crash.
    let o = smoj(&[
        "--endpoint",
        &endpoint,
        "stylize",
        "--asset",
        s(&asset),
        "--out",
        s(&out),
        "--prompt",
        "ink",
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
