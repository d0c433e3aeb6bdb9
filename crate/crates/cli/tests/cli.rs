use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsrefine::mixer::{read_manifest, STANDARD_SNRS_DB};
use dsrefine::signal::Waveform;
use dsrefine::wav::write_wav;

fn dsrefine(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsrefine"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dsrefine(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    dsrefine(dir, args).status.code().expect("exit code")
}

/// Speech and noise pools plus a corpus mixed at `snr`.
fn corpus(dir: &Path, snr: &str) -> PathBuf {
    ok(dir, &["synth", "--out-dir", "pools", "--count", "6", "--seconds", "0.4", "--noise-seconds", "1", "--seed", "5"]);
    let snr_flag = format!("--snr={snr}");
    let stdout = ok(
        dir,
        &["simulate", "--clean-dir", "pools/clean", "--noise-dir", "pools/noise", "--out-dir", "mix", &snr_flag, "--seed", "7"],
    );
    dir.join(stdout.trim())
}

const TRAIN: [&str; 14] = [
    "train", "--manifest", "mix/manifest.jsonl", "--variant", "mlp", "--hidden", "8", "--epochs", "2", "--warmup", "4",
    "--batch-frames", "16", "--seed",
];

fn train(dir: &Path, out: &str, extra: &[&str]) {
    let mut args: Vec<&str> = TRAIN.to_vec();
    args.extend(["3", "--ckpt-out", out]);
    args.extend(extra);
    ok(dir, &args);
}

fn trace_column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let col = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["simulate", "--noise-dir", "n", "--out-dir", "o"]), 2);
    assert_eq!(code(dir.path(), &["simulate", "--clean-dir", "c", "--noise-dir", "n", "--out-dir", "o", "--loud"]), 2);
    assert_eq!(code(dir.path(), &["train", "--synthetic", "2", "--ckpt-out", "o", "--lambda", "fixed:2"]), 2);
    assert_eq!(code(dir.path(), &["frobnicate"]), 2);
}

#[test]
fn runtime_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["simulate", "--clean-dir", "nope", "--noise-dir", "nope", "--out-dir", "o"]), 1);
    assert_eq!(code(dir.path(), &["eval", "--manifest", "missing.jsonl", "--oracle", "--report-out", "r.csv"]), 1);
}

#[test]
fn simulate_snr_modes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), "random");
    let first = fs::read(&manifest).unwrap();
    let rows = read_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| STANDARD_SNRS_DB.contains(&r.snr_db)));

    fs::remove_dir_all(dir.path().join("mix")).unwrap();
    corpus(dir.path(), "random");
    assert_eq!(fs::read(&manifest).unwrap(), first);

    fs::remove_dir_all(dir.path().join("mix")).unwrap();
    corpus(dir.path(), "-5");
    assert!(read_manifest(&manifest).unwrap().iter().all(|r| r.snr_db == -5.0));
}

#[test]
fn train_and_eval_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d, "random");
    train(d, "a", &[]);
    train(d, "b", &[]);
    for f in ["se.ckpt", "dsrnet.ckpt", "trace.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let eval = |out: &str| {
        ok(
            d,
            &[
                "eval", "--manifest", "mix/manifest.jsonl", "--se-ckpt", "a/se.ckpt", "--dsrnet-ckpt", "a/dsrnet.ckpt",
                "--report-out", out,
            ],
        );
        fs::read(d.join(out)).unwrap()
    };
    let report = eval("r1.csv");
    assert_eq!(report, eval("r2.csv"));
    assert_eq!(String::from_utf8(report).unwrap().lines().count(), 7);
}

#[test]
fn ablation_switches() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d, "0");
    train(d, "fixed", &["--lambda", "fixed:0.5"]);
    let lambdas = trace_column(&d.join("fixed/trace.csv"), "lambda");
    assert!(!lambdas.is_empty() && lambdas.iter().all(|&l| l == 0.5));

    train(d, "nobeta", &["--beta", "0"]);
    assert!(trace_column(&d.join("nobeta/trace.csv"), "l_refine").iter().all(|x| x.is_finite()));

    train(d, "se", &["--regime", "se"]);
    assert!(d.join("se/se.ckpt").exists());
    assert!(!d.join("se/dsrnet.ckpt").exists());

    train(d, "frozen", &["--regime", "frozen", "--se-ckpt-in", "se/se.ckpt"]);
    assert_eq!(fs::read(d.join("se/se.ckpt")).unwrap().len(), fs::read(d.join("frozen/se.ckpt")).unwrap().len());
    let mut args: Vec<&str> = TRAIN.to_vec();
    args.extend(["3", "--ckpt-out", "x", "--regime", "frozen"]);
    assert_eq!(code(d, &args), 2);
}

#[test]
fn oracle_eval_in_synthetic_mode_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["eval", "--synthetic", "4", "--synthetic-seconds", "0.3", "--oracle", "--report-out", "r.csv"]);
    let mse = trace_column(&d.join("r.csv"), "spectral_mse_enhanced");
    assert_eq!(mse.len(), 4);
    assert!(mse.iter().all(|&x| x < 1e-25), "{mse:?}");
}

fn pgm_pixels(bytes: &[u8]) -> (usize, usize, &[u8]) {
    let header: Vec<&[u8]> = bytes.splitn(4, |&b| b == b'\n').collect();
    assert_eq!(header[0], b"P5");
    let dims = std::str::from_utf8(header[1]).unwrap();
    let (w, h) = dims.split_once(' ').unwrap();
    assert_eq!(header[2], b"255");
    (w.parse().unwrap(), h.parse().unwrap(), header[3])
}

#[test]
fn silent_wav_renders_black_257_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_wav(d.join("zero.wav"), &Waveform::new(vec![0.0; 4000], 16000).unwrap()).unwrap();
    ok(d, &["spectrogram", "--wav", "zero.wav", "--out", "z.pgm"]);
    let bytes = fs::read(d.join("z.pgm")).unwrap();
    let (w, h, px) = pgm_pixels(&bytes);
    assert_eq!(h, 257);
    assert_eq!(px.len(), w * h);
    assert!(px.iter().all(|&p| p == 0));

    ok(d, &["spectrogram", "--wav", "zero.wav", "--out", "z.png"]);
    assert!(fs::read(d.join("z.png")).unwrap().starts_with(b"\x89PNG\r\n\x1a\n"));
    assert_eq!(code(d, &["spectrogram", "--wav", "zero.wav", "--out", "z.jpg"]), 1);
}

#[test]
fn spectrogram_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d, "0");
    train(d, "m", &[]);
    let render = |stage: &str, out: &str| {
        ok(
            d,
            &[
                "spectrogram", "--manifest", "mix/manifest.jsonl", "--row", "utt0002", "--stage", stage, "--se-ckpt",
                "m/se.ckpt", "--dsrnet-ckpt", "m/dsrnet.ckpt", "--out", out,
            ],
        );
        fs::read(d.join(out)).unwrap()
    };
    let noisy = render("noisy", "n.pgm");
    assert_eq!(noisy, render("noisy", "n2.pgm"));
    for stage in ["clean", "enhanced", "refined"] {
        let img = render(stage, &format!("{stage}.pgm"));
        assert_eq!(pgm_pixels(&img).1, 257);
        assert_ne!(img, noisy, "{stage}");
    }
    // row by index selects the same utterance
    ok(d, &["spectrogram", "--manifest", "mix/manifest.jsonl", "--row", "2", "--out", "i.pgm"]);
    assert_eq!(fs::read(d.join("i.pgm")).unwrap(), noisy);

    let base = ["spectrogram", "--manifest", "mix/manifest.jsonl", "--row", "0", "--out", "x.pgm", "--stage"];
    fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
        [base, extra].concat()
    }
    assert_eq!(code(d, &with(&base, &["enhanced"])), 2);
    assert_eq!(code(d, &with(&base, &["refined", "--se-ckpt", "m/se.ckpt"])), 2);
    assert_eq!(code(d, &with(&base, &["enhanced", "--se-ckpt", "missing.ckpt"])), 1);
    assert_eq!(code(d, &["spectrogram", "--wav", "mix/utt0000.wav", "--stage", "clean", "--out", "x.pgm"]), 2);
}

#[test]
fn gradcheck_passes_and_reports_every_block() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--component", "dsrnet", "--seed", "4"]);
    assert_eq!(out.lines().count(), 10);
    assert!(out.lines().all(|l| l.ends_with(" ok")));
    let all = ok(dir.path(), &["gradcheck"]);
    for name in ["enhance-mlp", "enhance-recurrent", "dsrnet", "loss", "end-to-end"] {
        assert!(all.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn sweep_writes_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "sweep", "--synthetic", "4", "--synthetic-seconds", "0.3", "--variant", "mlp", "--hidden", "4", "--epochs", "1",
        "--alphas", "1,50,300",
    ];
    ok(d, &[&args[..], &["--out", "a.csv"]].concat());
    ok(d, &[&args[..], &["--out", "b.csv", "--sequential"]].concat());
    let a = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("b.csv")).unwrap());
    assert_eq!(a.lines().count(), 4);
    assert!(a.starts_with("alpha,final_proxy_loss,final_l_enh\n1.0,"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d, "0");
    fs::write(
        d.join("run.toml"),
        "[simulate]\nclean_dir = \"pools/clean\"\nnoise_dir = \"pools/noise\"\nsnr = \"-10\"\nseed = 7\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "simulate", "--out-dir", "c1"]);
    assert!(read_manifest(d.join("c1/manifest.jsonl")).unwrap().iter().all(|r| r.snr_db == -10.0));
    ok(d, &["--config", "run.toml", "simulate", "--out-dir", "c2", "--snr", "5"]);
    assert!(read_manifest(d.join("c2/manifest.jsonl")).unwrap().iter().all(|r| r.snr_db == 5.0));

    fs::write(d.join("bad.toml"), "[simulate]\nloudness = 3\n").unwrap();
    assert_eq!(code(d, &["--config", "bad.toml", "simulate", "--out-dir", "c3"]), 2);
    assert_eq!(code(d, &["--config", "absent.toml", "simulate", "--out-dir", "c3"]), 2);
}

#[test]
fn resolved_config_is_logged_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d, "0");
    let out = Command::new(env!("CARGO_BIN_EXE_dsrefine"))
        .current_dir(d)
        .args(["simulate", "--clean-dir", "pools/clean", "--noise-dir", "pools/noise", "--out-dir", "r1", "--snr=-5,5", "--seed", "9"])
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    let log = String::from_utf8(out.stderr).unwrap();
    let body: String = log
        .lines()
        .skip_while(|l| !l.contains("resolved config"))
        .skip(1)
        .take_while(|l| !l.starts_with('['))
        .map(|l| format!("{}\n", l.trim_start()))
        .collect();
    assert!(body.contains("[simulate]"), "{log}");
    fs::write(d.join("replay.toml"), body.replace("\"r1\"", "\"r2\"")).unwrap();
    ok(d, &["--config", "replay.toml", "simulate"]);
    let strip = |p: &str, tag: &str| fs::read_to_string(d.join(p)).unwrap().replace(tag, "");
    assert_eq!(strip("r1/manifest.jsonl", "r1/"), strip("r2/manifest.jsonl", "r2/"));
}
