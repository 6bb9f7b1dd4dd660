use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use taxograph::synthdata::{decode_mask, load_manifest};
use taxograph::taxonomy::{load_embeddings, LabelTaxonomy};

fn taxograph(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_taxograph"));
    c.args(args).env_remove("GRAPHONOMY_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    taxograph(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn flag(key: &str, path: &Path) -> String {
    format!("--{key}={}", path.display())
}

/// Small, fast model and data settings shared by the training tests.
const TINY: &[&str] = &[
    "--data.resolution=32",
    "--data.max_figures=1",
    "--backbone.widths=8,16",
    "--backbone.convs_per_stage=1",
    "--backbone.output_stride=2",
    "--graph.node_dim=16",
    "--train.batch_size=2",
];

fn train_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train"];
    v.extend_from_slice(TINY);
    v.extend_from_slice(extra);
    v
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["fly"])), 1);
    let o = run(&["train", "--train.lr=0.1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown key train.lr"));
    assert_eq!(code(&run(&["train", "steps"])), 1);
    assert_eq!(code(&run(&["train", "--train.base_lr=fast"])), 1);
    assert_eq!(code(&run(&["eval"])), 1);
}

#[test]
fn config_file_errors_exit_one_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\nseed = 1\nbogus.key = 2\n").unwrap();
    let o = run(&["gradcheck", &flag("config", &cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(":3:"), "{}", stderr(&o));
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 11\ngradcheck.seeds = 1\n").unwrap();
    let c = flag("config", &cfg);
    let seed_of = |o: Output| {
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stderr(&o)
            .lines()
            .find_map(|l| l.strip_prefix("# seed = ").map(String::from))
            .unwrap()
    };
    assert_eq!(seed_of(run(&["gradcheck", &c])), "11");
    let env = taxograph(&["gradcheck", &c]).env("GRAPHONOMY_SEED", "22").output().unwrap();
    assert_eq!(seed_of(env), "22");
    let both = taxograph(&["gradcheck", &c, "--seed=33"])
        .env("GRAPHONOMY_SEED", "22")
        .output()
        .unwrap();
    assert_eq!(seed_of(both), "33");
}

#[test]
fn gradcheck_passes_and_fails_with_exit_codes() {
    let o = run(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("intra_graph_reasoning") && out.contains("end_to_end"));
    let strict = run(&["gradcheck", "--gradcheck.seeds=1", "--gradcheck.tolerance=1e-30"]);
    assert_eq!(code(&strict), 3);
}

#[test]
fn synth_writes_loadable_manifests_and_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "synth",
        &flag("out", dir.path()),
        "--count=2",
        "--test_count=1",
        "--data.resolution=32",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tax = LabelTaxonomy::shipped();
    for ds in ["coarse", "mid", "fine"] {
        let m = load_manifest(dir.path().join(format!("train_{ds}.tsv")), &tax).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.split.as_deref(), Some("train"));
        let mask = decode_mask(&std::fs::read(&m.records[0].mask).unwrap()).unwrap();
        assert_eq!((mask.height, mask.width), (32, 32));
        assert!(mask.data.iter().all(|&v| (v as usize) < tax.num_labels(ds).unwrap()));
        let t = load_manifest(dir.path().join(format!("test_{ds}.tsv")), &tax).unwrap();
        assert_eq!(t.records.len(), 1);
    }
    let emb = load_embeddings(dir.path().join("embeddings.txt")).unwrap();
    assert_eq!(emb.len(), tax.all_tokens().len());
}

#[test]
fn train_then_eval_on_overfit_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["synth", &flag("out", &data), "--count=2", "--test_count=0", "--data.resolution=32", "--data.max_figures=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = data.join("train_coarse.tsv");
    let out = dir.path().join("run");
    let o = run(&train_args(&[
        &flag("out", &out),
        &flag("data.manifests", &manifest),
        "--model.heads=coarse",
        "--train.steps=2000",
        "--train.base_lr=0.1",
        "--train.augment=false",
    ]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    let steps: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(steps.len(), 2000);
    assert_eq!(steps[0].split('\t').collect::<Vec<_>>()[..2], ["0", "coarse"]);
    assert!(log.contains("# train.steps = 2000"));

    let report = dir.path().join("eval");
    let o = run(&[
        "eval",
        &flag("checkpoint", &out.join("model.grfy")),
        &flag("manifest", &manifest),
        &flag("out", &report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = std::fs::read_to_string(report.join("metrics_coarse.tsv")).unwrap();
    let miou: f64 = lines
        .lines()
        .find_map(|l| l.strip_prefix("mean_iou\tall\t"))
        .expect("mean_iou line")
        .parse()
        .unwrap();
    assert!(miou >= 0.95, "overfit mIoU {miou}");
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = flag("out", &out);
    let args = train_args(&[&o, "--data.train_count=6", "--model.heads=mid", "--train.steps=4"]);
    let once = || {
        let r = run(&args);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        (
            std::fs::read(out.join("model.grfy")).unwrap(),
            std::fs::read(out.join("train.log")).unwrap(),
            r.stdout,
        )
    };
    assert_eq!(once(), once());
}

#[test]
fn universal_infer_writes_three_masks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&train_args(&[
        &flag("out", &out),
        "--data.train_count=4",
        "--model.heads=coarse,mid,fine",
        "--model.mode=transfer",
        "--model.edges=fine>mid,mid>fine,mid>coarse,coarse>mid",
        "--train.steps=3",
    ]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = dir.path().join("data");
    let o = run(&["synth", &flag("out", &data), "--count=1", "--test_count=0", "--data.resolution=32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let image = data.join("images/fine/train_00000.ppm");
    let masks = dir.path().join("masks");
    let o = run(&[
        "infer",
        &flag("checkpoint", &out.join("model.grfy")),
        &flag("image", &image),
        &flag("out", &masks),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let raw = files_with_ext(&masks, "pgm");
    assert_eq!(raw.len(), 3);
    assert_eq!(files_with_ext(&masks, "ppm").len(), 3);
    let tax = LabelTaxonomy::shipped();
    for (p, ds) in raw.iter().zip(["coarse", "fine", "mid"]) {
        assert!(p.to_string_lossy().ends_with(&format!("train_00000_{ds}.pgm")));
        let m = decode_mask(&std::fs::read(p).unwrap()).unwrap();
        assert!(m.data.iter().all(|&v| (v as usize) < tax.num_labels(ds).unwrap()));
    }
}

#[test]
fn bad_checkpoints_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.grfy");
    assert_eq!(code(&run(&["eval", &flag("checkpoint", &missing)])), 2);
    let bad = dir.path().join("bad.grfy");
    std::fs::write(&bad, b"GRFX\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
    let o = run(&["eval", &flag("checkpoint", &bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad magic"));
}
