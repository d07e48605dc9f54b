use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[simulation]
normalize = true

[simulation.offline]
n_subjects = 3
trials_per_class_per_subject = 4
channels = 2
time_steps = 64
sample_rate_hz = 128.0
seed = 11

[simulation.online]
n_subjects = 2
trials_per_class_per_subject = 2
channels = 2
time_steps = 64
sample_rate_hz = 128.0
amplitude_multiplier = 0.8
first_subject_id = 100
seed = 12

[network]
backbone_widths = [4, 4, 4, 4]
kernel_size = 3
latent_dim = 4
generator_widths = [8, 8, 4, 4]

[training.gan]
epochs = 1
batch_size = 8

[training.ssvep_classifier]
epochs = 1
batch_size = 8

[training.subject_classifier]
epochs = 1
batch_size = 8

[evaluation]
n_seeds = 1
regimes = ["real_only", "synthetic_only_acgan", "synthetic_only_sisgan"]
"#;

fn sisgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sisgan"))
        .arg("--config")
        .arg(dir.join("exp.toml"))
        .args(args)
        .env("SISGAN_ARTIFACT_DIR", dir.join("artifacts"))
        .output()
        .expect("spawn sisgan")
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), config).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn arts(dir: &Path) -> PathBuf {
    dir.join("artifacts")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_both_datasets_deterministically() {
    let a = workspace(TINY);
    let b = workspace(TINY);
    ok(&sisgan(a.path(), &["simulate"]));
    ok(&sisgan(b.path(), &["simulate"]));
    for name in ["offline.sisgds", "online.sisgds", "manifest.json"] {
        let x = fs::read(arts(a.path()).join(name)).unwrap();
        let y = fs::read(arts(b.path()).join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let off = sisgan::io::decode_dataset(&fs::read(arts(a.path()).join("offline.sisgds")).unwrap()).unwrap();
    let on = sisgan::io::decode_dataset(&fs::read(arts(a.path()).join("online.sisgds")).unwrap()).unwrap();
    assert_eq!(off.len(), 3 * 3 * 4);
    assert_eq!(on.len(), 2 * 3 * 2);
    assert!(off.meta.contains_key("config_hash"));
}

#[test]
fn sisgan_without_frozen_subject_is_a_config_error() {
    let w = workspace(TINY);
    let out = sisgan(w.path(), &["train", "--variant", "sisgan"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frozen-subject"));
}

#[test]
fn unknown_config_key_exits_2() {
    let w = workspace(&format!("{TINY}\n[io]\nartifact_dir = \"x\"\nbogus = 1\n"));
    assert_eq!(sisgan(w.path(), &["simulate"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_3() {
    let w = workspace(TINY);
    let missing = w.path().join("nope.sisgds");
    let out = sisgan(w.path(), &["train", "--variant", "ssvep-clf", "--data", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn uncreatable_output_exits_3() {
    let w = workspace(TINY);
    let blocker = w.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = sisgan(w.path(), &["simulate", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn frozen_checkpoint_of_wrong_role_exits_2() {
    let w = workspace(TINY);
    ok(&sisgan(w.path(), &["simulate"]));
    ok(&sisgan(w.path(), &["train", "--variant", "ssvep-clf"]));
    let ck = arts(w.path()).join("ssvep_classifier.sisgck");
    let out = sisgan(w.path(), &["train", "--variant", "sisgan", "--frozen-subject", s(&ck)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_and_verify() {
    let w = workspace(TINY);
    let dir = arts(w.path());
    ok(&sisgan(w.path(), &["simulate"]));
    ok(&sisgan(w.path(), &["train", "--variant", "subject-clf"]));
    let subject = dir.join("subject_classifier.sisgck");
    let before = fs::read(&subject).unwrap();
    ok(&sisgan(w.path(), &["train", "--variant", "sisgan", "--frozen-subject", s(&subject)]));
    assert_eq!(before, fs::read(&subject).unwrap());
    ok(&sisgan(w.path(), &["train", "--variant", "dcgan"]));

    let gen = dir.join("generator_sisgan.sisgck");
    let synth = dir.join("synthetic_sisgan.sisgds");
    ok(&sisgan(w.path(), &["generate", "--checkpoint", s(&gen), "--n-per-class", "5", "--seed", "3", "--out", s(&synth)]));
    let ds = sisgan::io::decode_dataset(&fs::read(&synth).unwrap()).unwrap();
    assert_eq!(ds.class_histogram(), vec![5, 5, 5]);

    let dc: Vec<PathBuf> = (0..3).map(|c| dir.join(format!("generator_dcgan_class{c}.sisgck"))).collect();
    let dc_out = dir.join("synthetic_dcgan.sisgds");
    let mut args = vec!["generate", "--checkpoint"];
    args.extend(dc.iter().map(|p| s(p)));
    args.extend(["--n-per-class", "2", "--out", s(&dc_out)]);
    ok(&sisgan(w.path(), &args));

    let probe = dir.join("probe.csv");
    ok(&sisgan(w.path(), &["probe", "--data", s(&synth), "--checkpoint", s(&subject), "--out", s(&probe)]));
    assert!(fs::read_to_string(&probe).unwrap().lines().count() >= 2);

    let real = dir.join("offline.sisgds");
    let fft = dir.join("fft");
    ok(&sisgan(w.path(), &["fft-report", "--real", s(&real), "--generated", s(&synth), "--out", s(&fft)]));
    assert!(fft.join("fft_peaks.csv").exists());

    ok(&sisgan(w.path(), &["eval", "--protocol", "cross-task"]));
    let reports: Vec<_> = fs::read_dir(dir.join("reports")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(reports.iter().any(|n| n.to_string_lossy().ends_with(".csv")));

    ok(&sisgan(w.path(), &["verify"]));

    // tampering is detected
    let mut bytes = fs::read(&real).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&real, bytes).unwrap();
    assert_eq!(sisgan(w.path(), &["verify"]).status.code(), Some(4));
}

#[test]
fn verify_flags_a_changed_config() {
    let w = workspace(TINY);
    ok(&sisgan(w.path(), &["simulate"]));
    fs::write(w.path().join("exp.toml"), TINY.replace("seed = 11", "seed = 13")).unwrap();
    assert_eq!(sisgan(w.path(), &["verify"]).status.code(), Some(4));
}
