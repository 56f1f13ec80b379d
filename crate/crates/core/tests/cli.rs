use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
# small, fast run
preset = desk
gen.n = 30
pretrain.images = 16
pretrain.epochs = 1
train.stage1_epochs = 3
train.stage2_epochs = 1
train.batch = 8
";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_img2joint")).args(args).output().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn setup() -> Run {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = root.join("run.cfg");
    fs::write(&config, SMALL).unwrap();
    Run { _tmp: tmp, root, config }
}

#[test]
fn full_pipeline_through_the_binary() {
    let r = setup();
    let cfg = s(&r.config);
    let data = r.root.join("data");
    let o = bin(&["--config", cfg, "gen", "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = snapshot(&data);
    assert_eq!(files.len(), 31);
    let labels = String::from_utf8(files[Path::new("labels.csv")].clone()).unwrap();
    assert!(labels.starts_with("filename,q_rad\nimg_00000.ppm,"));

    let run1 = r.root.join("run1");
    let o = bin(&["--config", cfg, "train", "--data", s(&data), "--out", s(&run1)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(run1.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("stage,epoch,train_mse,val_mse\n1,1,"));
    assert_eq!(metrics.lines().count(), 1 + 3 + 1);

    let weights = run1.join("weights.a2j");
    let o = bin(&["--config", cfg, "eval", "--weights", s(&weights), "--data", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = fs::read_to_string(run1.join("eval.csv")).unwrap();
    let rows = eval.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 3);
    assert!(run1.join("histogram.csv").exists());

    let image = data.join("img_00004.ppm");
    let p1 = bin(&["--config", cfg, "predict", "--weights", s(&weights), "--image", s(&image)]);
    let p2 = bin(&["--config", cfg, "predict", "--weights", s(&weights), "--image", s(&image)]);
    let q = |o: &Output| String::from_utf8_lossy(&o.stdout).split_whitespace().next().unwrap().to_string();
    assert!(p1.status.success());
    assert_eq!(q(&p1), q(&p2));

    let grid = r.root.join("maps/layer4.pgm");
    let o = bin(&["--config", cfg, "featmap", "--weights", s(&weights), "--image", s(&image), "--out", s(&grid)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // desk layer 4: 8 channels of 48x48 in a 3x3 grid
    let pgm = img2joint::raster::read_pgm(&grid).unwrap();
    assert_eq!((pgm.width, pgm.height), (3 * 48 + 2, 3 * 48 + 2));

    let aug = r.root.join("aug");
    let o = bin(&["--config", cfg, "augment", "--data", s(&data), "--out", s(&aug)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 30 base + 7 * 30 variants, images plus labels and split files
    assert_eq!(fs::read_dir(&aug).unwrap().count(), 240 + 2);

    let o = bin(&[
        "--config", cfg, "eval", "--weights", s(&weights), "--aug-weights", s(&weights), "--data", s(&data),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rob = fs::read_to_string(run1.join("robustness.csv")).unwrap();
    assert!(rob.starts_with("corruption,clean_mae,aug_mae\ngaussian:0:0.01,"));

    let kf = r.root.join("kf");
    let o = bin(&["--config", cfg, "kfold", "--k", "3", "--data", s(&data), "--out", s(&kf)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kcsv = fs::read_to_string(kf.join("kfold.csv")).unwrap();
    assert!(kcsv.starts_with("fold,start,end,mae_rad\n0,0,10,"));
    assert!(kcsv.contains("# variance"));

    assert_eq!(snapshot(&data), files, "inputs were modified");
}

#[test]
fn gen_is_reproducible() {
    let r = setup();
    let (a, b) = (r.root.join("a"), r.root.join("b"));
    for d in [&a, &b] {
        assert!(bin(&["--config", s(&r.config), "gen", "--n", "12", "--out", s(d)]).status.success());
    }
    assert_eq!(snapshot(&a), snapshot(&b));
    let c = r.root.join("c");
    assert!(bin(&["--config", s(&r.config), "--seed", "8", "gen", "--n", "12", "--out", s(&c)]).status.success());
    assert_ne!(snapshot(&a)[Path::new("labels.csv")], snapshot(&c)[Path::new("labels.csv")]);
}

#[test]
fn unwritable_output_leaves_nothing_behind() {
    let r = setup();
    let blocker = r.root.join("file");
    fs::write(&blocker, b"x").unwrap();
    let target = blocker.join("data");
    let o = bin(&["--config", s(&r.config), "gen", "--out", s(&target)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error kind=io code=3 msg="), "{err}");
    let mut names: Vec<_> = fs::read_dir(&r.root).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["file", "run.cfg"]);
}

#[test]
fn exit_codes() {
    let r = setup();
    let bad = r.root.join("bad.cfg");
    fs::write(&bad, "gen.count = 3\n").unwrap();
    let o = bin(&["--config", s(&bad), "gen", "--out", s(&r.root.join("x"))]);
    assert_eq!(o.status.code(), Some(1));

    fs::write(&bad, "train.stage2_epochs = 9\ntrain.stage1_epochs = 3\n").unwrap();
    let o = bin(&["--config", s(&bad), "gen", "--out", s(&r.root.join("x"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = bin(&["--config", s(&r.config), "eval", "--weights", s(&r.root.join("none.a2j")), "--data", s(&r.root)]);
    assert_eq!(o.status.code(), Some(3));

    let o = bin(&["--config", s(&r.config), "predict", "--weights", s(&r.config), "--image", s(&r.config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());

    let occupied = r.root.join("occupied");
    fs::create_dir(&occupied).unwrap();
    fs::write(occupied.join("keep.txt"), b"mine").unwrap();
    let o = bin(&["--config", s(&r.config), "gen", "--n", "3", "--out", s(&occupied)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_dir(&occupied).unwrap().count(), 1);

    assert_eq!(bin(&["gen", "--n"]).status.code(), Some(1));
}

#[test]
fn dump_config_round_trips() {
    let r = setup();
    let o = bin(&["--config", s(&r.config), "--dump-config"]);
    assert!(o.status.success());
    let dumped = r.root.join("dumped.cfg");
    fs::write(&dumped, &o.stdout).unwrap();
    let again = bin(&["--config", s(&dumped), "--dump-config"]);
    assert_eq!(o.stdout, again.stdout);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("preset = desk\nseed = 7\n"));
    assert!(text.contains("gen.n = 30\n"));

    let paper = bin(&["--preset", "paper", "--dump-config"]);
    assert!(String::from_utf8_lossy(&paper.stdout).contains("camera.image_width = 600\n"));
}
