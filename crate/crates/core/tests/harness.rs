use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use xmct::diffusion::{DenoiserParams, NoiseSchedule};
use xmct::harness::*;
use xmct::io::{self, Dtype, Resume};
use xmct::nn::{OptimizerKind, TrainState, UNetConfig};
use xmct::solver::Trace;
use xmct::xmodal::{TranslationConfig, TranslationModel};
use xmct::{Error, GridImage, GridVolume};

fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(
        r#"
workers = 1

[phantom]
volume_side = 16
depth = 2

[data]
train_volumes = 1
test_volumes = 3
prior_slices = 16
paired_samples = 16
ideal_views = 64

[data.main_grid]
views = [8, 16]

[data.aux_grid]
views = [24]

[aux]
num_views = 24

[prior]
base_channels = 4
channel_mults = [1, 2]
time_embed_dim = 8
max_steps = 3

[xmodal]
base_channels = 4
channel_mults = [1, 2]
max_steps = 3

[solver]
t_prime = 3

[sweep]
views = [8, 16, 32, 64]
num_steps = [5, 10]
noise = [0.0, 0.05]
"#,
    )
    .unwrap();
    c.out_dir = out.to_path_buf();
    c
}

/// Every file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}

fn pipeline(h: &Harness) {
    h.generate_data().unwrap();
    h.train_prior(false).unwrap();
    h.train_xmodal(false).unwrap();
    let cells = h.reconstruct().unwrap();
    assert!(cells.iter().all(|c| c.failure.is_none()));
    h.evaluate().unwrap();
    h.report().unwrap();
}

#[test]
fn full_sweep_is_complete_controlled_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::new(tiny(dir.path())).unwrap();
    pipeline(&h);

    let cells = h.completed_cells().unwrap();
    for mode in [Mode::Unimodal, Mode::Crossmodal] {
        assert_eq!(cells.iter().filter(|c| c.mode == mode).count(), 48);
    }

    for c in cells.iter().filter(|c| c.mode == Mode::Unimodal) {
        let twin = Cell {
            mode: Mode::Crossmodal,
            ..*c
        };
        let a = fs::read(h.cell_dir(c).join("y_main.grid")).unwrap();
        let b = fs::read(h.cell_dir(&twin).join("y_main.grid")).unwrap();
        assert_eq!(a, b, "{}", c.id());
    }

    for c in &cells {
        let trace = Trace::from_text(&fs::read_to_string(h.cell_dir(c).join("trace.txt")).unwrap()).unwrap();
        let ts: Vec<usize> = trace.records().iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![3, 2, 1]);
        let want: Vec<usize> = if c.mode == Mode::Crossmodal { vec![2] } else { vec![] };
        assert_eq!(trace.refined_steps(), want, "{}", c.id());
        assert!(trace.records().iter().all(|r| r.adapt_losses.len() == c.steps));
    }

    let precision = h.config().report.precision;
    let table = fs::read_to_string(h.layout().report_dir().join("table.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(table.as_bytes());
    let mut n = 0;
    for r in rows.records() {
        let r = r.unwrap();
        n += 1;
        let f = |i: usize| r[i].parse::<f64>().unwrap();
        let scale = 10f64.powi(precision as i32);
        assert!(((f(4) - f(3)) * scale - f(5) * scale).abs() < 1e-6, "psnr delta in {r:?}");
        assert!(((f(7) - f(6)) * scale - f(8) * scale).abs() < 1e-6, "ssim delta in {r:?}");
        assert_eq!(&r[9], "");
    }
    assert_eq!(n, 16);

    let metrics = fs::read_to_string(h.layout().metrics_csv()).unwrap();
    let mut backed = BTreeMap::<(String, String, String, String), Vec<f64>>::new();
    for r in csv::Reader::from_reader(metrics.as_bytes()).records() {
        let r = r.unwrap();
        if &r[5] == "mean" {
            backed
                .entry((r[1].to_string(), r[2].to_string(), r[3].to_string(), r[4].to_string()))
                .or_default()
                .push(r[6].parse().unwrap());
        }
    }
    let report = h.report().unwrap();
    for row in &report.rows {
        let key = |m: Mode| (row.views.to_string(), row.steps.to_string(), row.noise.to_string(), m.name().to_string());
        let uni = &backed[&key(Mode::Unimodal)];
        assert_eq!(uni.len(), 3);
        let mean = uni.iter().sum::<f64>() / 3.0;
        assert!((row.unimodal.unwrap().psnr - mean).abs() < 1e-9);
    }

    let again = tempfile::tempdir().unwrap();
    let h2 = Harness::new(tiny(again.path())).unwrap();
    pipeline(&h2);
    let (a, b) = (snapshot(dir.path()), snapshot(again.path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs between runs", k.display());
    }
}

#[test]
fn data_generation_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Harness::new(tiny(a.path())).unwrap().generate_data().unwrap();
    Harness::new(tiny(b.path())).unwrap().generate_data().unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.len() > 5);
    assert_eq!(sa, sb);
}

#[test]
fn zero_counts_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.data.train_volumes = 0;
    c.data.test_volumes = 0;
    c.data.prior_slices = 0;
    c.data.paired_samples = 0;
    let h = Harness::new(c).unwrap();
    let m = h.generate_data().unwrap();
    assert!(m.records.is_empty());
    assert_eq!(Manifest::load(&h.layout().manifest()).unwrap(), m);
}

#[test]
fn missing_dataset_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::new(tiny(dir.path())).unwrap();
    let msg = h.train_prior(false).unwrap_err().to_string();
    assert!(msg.contains(&h.layout().manifest().display().to_string()), "{msg}");
    let msg = h.train_xmodal(false).unwrap_err().to_string();
    assert!(msg.contains("manifest.txt"), "{msg}");
}

#[test]
fn resumed_prior_training_matches_a_straight_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut straight = tiny(a.path());
    straight.prior.max_steps = Some(6);
    let h = Harness::new(straight.clone()).unwrap();
    h.generate_data().unwrap();
    h.train_prior(false).unwrap();

    let mut first = tiny(b.path());
    first.prior.max_steps = Some(3);
    let h1 = Harness::new(first).unwrap();
    h1.generate_data().unwrap();
    h1.train_prior(false).unwrap();
    let mut second = straight;
    second.out_dir = b.path().to_path_buf();
    let log = Harness::new(second).unwrap().train_prior(true).unwrap();
    assert_eq!(log.step_losses.len(), 3);

    let read = |d: &Path| fs::read(d.join("models/prior_loss.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let ck = |d: &Path| fs::read(d.join("models/prior.ckpt")).unwrap();
    assert_eq!(ck(a.path()), ck(b.path()));
}

#[test]
fn translator_training_writes_validation_scores() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::new(tiny(dir.path())).unwrap();
    h.generate_data().unwrap();
    let v = h.train_xmodal(false).unwrap();
    assert_eq!(v.pairs, 2);
    let text = fs::read_to_string(dir.path().join("models/xmodal_validation.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(dir.path().join("models/xmodal.ckpt").exists());
}

#[test]
fn a_failing_cell_does_not_abort_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.sweep.views = vec![8];
    c.sweep.num_steps = vec![2];
    c.sweep.noise = vec![0.0];
    c.sweep.volumes = Some(2);
    let h = Harness::new(c).unwrap();
    h.generate_data().unwrap();
    h.train_prior(false).unwrap();
    h.train_xmodal(false).unwrap();
    let blocked = Cell {
        volume: 1,
        views: 8,
        steps: 2,
        noise: 0.0,
        mode: Mode::Crossmodal,
    };
    fs::create_dir_all(h.layout().recon_dir()).unwrap();
    fs::write(h.cell_dir(&blocked), b"not a directory").unwrap();
    let out = h.reconstruct().unwrap();
    assert_eq!(out.len(), 4);
    let failed: Vec<_> = out.iter().filter(|o| o.failure.is_some()).map(|o| o.cell).collect();
    assert_eq!(failed, vec![blocked]);
    assert_eq!(h.evaluate().unwrap(), 3);
    let table = h.report().unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].failed, 1);
    assert_eq!(table.rows[0].crossmodal.unwrap().volumes, 1);
    let md = fs::read_to_string(h.layout().report_dir().join("table.md")).unwrap();
    assert!(md.contains("1 failed"));
}

#[test]
fn empty_results_give_a_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::new(tiny(dir.path())).unwrap();
    let table = h.report().unwrap();
    assert!(table.rows.is_empty());
    let csv = fs::read_to_string(h.layout().report_dir().join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("noise,steps,views,"));
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut c = tiny(&out);
    c.sweep.views.clear();
    let err = Harness::new(c).err().unwrap();
    assert!(matches!(&err, Error::Config(m) if m.contains("[sweep]")), "{err}");
    assert!(!out.exists());

    let err = ExperimentConfig::from_toml("[solver]\nadapt_lr = \"fast\"\n").unwrap_err().to_string();
    assert!(err.contains("adapt_lr"), "{err}");
}

fn tiny_denoiser() -> DenoiserParams {
    DenoiserParams::init(
        UNetConfig {
            in_channels: 1,
            out_channels: 1,
            base_channels: 2,
            channel_mults: vec![1, 2],
            time_embed_dim: 4,
        },
        7,
    )
    .unwrap()
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let sched = NoiseSchedule::default();
    let p = tiny_denoiser();
    let mut state = TrainState::new(p.theta().to_vec());
    state.optimizer.first_moment = p.theta().iter().map(|v| v * 0.5).collect();
    state.optimizer.second_moment = p.theta().iter().map(|v| v * v).collect();
    state.optimizer.step = 12;
    state.step = 12;
    let bytes = io::encode_denoiser(
        &p,
        &sched,
        Some(Resume {
            kind: OptimizerKind::Adam,
            state: &state,
        }),
    );
    let (q, s, st) = io::decode_denoiser(&bytes, Path::new("mem")).unwrap();
    assert_eq!((&q, &s, st.as_ref()), (&p, &sched, Some(&state)));
    assert_eq!(
        io::encode_denoiser(
            &q,
            &s,
            Some(Resume {
                kind: OptimizerKind::Adam,
                state: &state
            })
        ),
        bytes
    );

    let arch = UNetConfig {
        in_channels: 2,
        out_channels: 1,
        base_channels: 2,
        channel_mults: vec![1, 2],
        time_embed_dim: 0,
    };
    let m = TranslationModel::init(arch, 8, 3).unwrap();
    let bytes = io::encode_translator(&m, None);
    let (back, st) = io::decode_translator(&bytes, Path::new("mem")).unwrap();
    assert!(st.is_none());
    assert_eq!(back, m);
    assert_eq!(back.training(), &TranslationConfig::default());
    assert_eq!(io::encode_translator(&back, None), bytes);
    assert!(io::decode_denoiser(&bytes, Path::new("mem")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn grid_files_round_trip(w in 1usize..6, h in 1usize..6, d in 1usize..4, seed in any::<u64>(), wide in any::<bool>()) {
        let mut r = xmct::rng::stream(seed, &[]);
        use rand::Rng;
        let slices: Vec<GridImage> = (0..d)
            .map(|_| GridImage::from_fn(w, h, |_, _| r.gen_range(-1e3f32..1e3) as f64))
            .collect();
        let vol = GridVolume::new(slices).unwrap();
        let dtype = if wide { Dtype::F64 } else { Dtype::F32 };
        let bytes = io::encode_grid(&vol, dtype);
        let size = if wide { 8 } else { 4 };
        prop_assert_eq!(bytes.len(), 4 + 2 + 12 + 1 + w * h * d * size);
        let (back, dt) = io::decode_grid(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(dt, dtype);
        prop_assert_eq!(&back, &vol);
        prop_assert_eq!(io::encode_grid(&back, dtype), bytes);
    }
}

fn xmct() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xmct"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[sweep]\nviewz = [8]\n").unwrap();
    let code = |c: &mut Command| c.output().unwrap().status.code();
    assert_eq!(code(xmct().arg("--config").arg(&cfg).arg("report")), Some(1));
    assert_eq!(code(xmct().arg("--frobnicate")), Some(1));
    assert_eq!(code(xmct().arg("--help")), Some(0));
    let empty = dir.path().join("empty");
    assert_eq!(code(xmct().arg("--out").arg(&empty).arg("train-prior")), Some(2));
    let out = xmct().arg("--out").arg(&empty).arg("report").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("| noise | steps | views |"));
}
