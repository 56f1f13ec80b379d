//! Command-line front end: run-config file, subcommands and output staging.
//!
//! Exit codes: 0 success, 1 config or argument parse error, 2 validation
//! error, 3 I/O error, 4 runtime failure (for example a diverging loss).
//! Failures print one line to stderr:
//!
//! ```text
//! error kind=io code=3 msg="data/labels.csv: No such file or directory (os error 2)"
//! ```

use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::arm_sim::{ArmConfig, CameraConfig};
use crate::augment::{self, AugmentSpec, Corruption};
use crate::evalreport::{self, EvalError};
use crate::nn::{self, NnError};
use crate::raster::{self, RasterError};
use crate::train::{self, Dataset, Preset, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Parse(String),
    Validation(String),
    Io(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn msg(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Validation(m) | CliError::Io(m) | CliError::Runtime(m) => m,
        }
    }

    /// The single stderr line printed on failure.
    pub fn line(&self) -> String {
        format!("error kind={} code={} msg={:?}", self.kind(), self.code(), self.msg())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.msg())
    }
}

impl std::error::Error for CliError {}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn from_nn(e: NnError) -> CliError {
    let m = e.to_string();
    match e {
        NnError::Io { .. } => CliError::Io(m),
        NnError::NonFiniteGradient { .. } => CliError::Runtime(m),
        _ => CliError::Validation(m),
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let m = e.to_string();
        match e {
            TrainError::Io { .. } => CliError::Io(m),
            TrainError::Raster(r) => r.into(),
            TrainError::Nn(n) => from_nn(n),
            TrainError::NonFiniteLoss { .. } | TrainError::FreezeViolation { .. } => CliError::Runtime(m),
            _ => CliError::Validation(m),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let m = e.to_string();
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Raster(r) => r.into(),
            EvalError::Nn(n) => from_nn(n),
            EvalError::NonFinite(_) => CliError::Runtime(m),
            _ => CliError::Validation(m),
        }
    }
}

/// File and directory names used when a flag does not override them.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Paths {
    pub data: String,
    pub out: String,
    pub weights: String,
    pub aug_weights: String,
    pub image: String,
}

/// Every tunable of a run. Serialized as flat `key = value` lines; lists
/// are comma separated.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    /// Master seed for generation and training.
    pub seed: u64,
    pub arm: ArmConfig,
    pub camera: CameraConfig,
    pub gen_n: usize,
    pub train: TrainConfig,
    pub augment_suite: Vec<Corruption>,
    pub augment_copies: usize,
    pub augment_seed: u64,
    pub augment_max_items: usize,
    pub eval_bin_width: f64,
    pub eval_suite: Vec<Corruption>,
    pub eval_seed: u64,
    pub kfold_k: usize,
    pub featmap_layer: usize,
    pub paths: Paths,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let train = TrainConfig::preset(preset);
        RunConfig {
            preset,
            seed: train.seed,
            arm: ArmConfig::default(),
            camera: preset.camera(),
            gen_n: 1000,
            train,
            augment_suite: augment::default_suite(),
            augment_copies: 1,
            augment_seed: 11,
            augment_max_items: 100_000,
            eval_bin_width: evalreport::DEFAULT_BIN_WIDTH,
            eval_suite: vec![
                Corruption::Gaussian { mean: 0.0, std: 0.01 },
                Corruption::Occlusion { side: None },
                Corruption::Gamma { gamma: augment::GAMMA_DARK },
            ],
            eval_seed: 13,
            kfold_k: 10,
            featmap_layer: evalreport::DEFAULT_FEATURE_LAYER,
            paths: Paths::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |e: &dyn fmt::Display| CliError::Validation(e.to_string());
        self.arm.validate().map_err(|e| v(&e))?;
        self.camera.validate().map_err(|e| v(&e))?;
        self.train.validate().map_err(|e| v(&e))?;
        for c in self.augment_suite.iter().chain(&self.eval_suite) {
            c.validate().map_err(|e| v(&e))?;
        }
        let bad = |m: &str| Err(CliError::Validation(m.to_string()));
        if self.gen_n == 0 {
            return bad("gen.n must be at least 1");
        }
        if self.kfold_k < 2 {
            return bad("kfold.k must be at least 2");
        }
        if !(self.eval_bin_width > 0.0 && self.eval_bin_width.is_finite()) {
            return bad("eval.bin_width must be positive");
        }
        if self.featmap_layer == 0 {
            return bad("featmap.layer must be at least 1");
        }
        Ok(())
    }

    /// All keys in a fixed order, `preset` first.
    pub fn dump(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("preset", self.preset.name().into());
        kv("seed", self.seed.to_string());
        kv("arm.backbone_length", self.arm.backbone_length.to_string());
        kv("arm.backbone_radius", self.arm.backbone_radius.to_string());
        kv("arm.tendon_offset", self.arm.tendon_offset.to_string());
        kv("arm.disk_count", self.arm.disk_count.to_string());
        kv("arm.motor_to_curvature_gain", self.arm.motor_to_curvature_gain.to_string());
        kv("camera.image_width", self.camera.image_width.to_string());
        kv("camera.image_height", self.camera.image_height.to_string());
        kv("camera.horizontal_fov", self.camera.horizontal_fov.to_string());
        kv("camera.position", join(&self.camera.camera_position));
        kv("camera.target", join(&self.camera.camera_target));
        kv("camera.background_shade", self.camera.background_shade.to_string());
        kv("gen.n", self.gen_n.to_string());
        kv("train.stage1_lr", t.stage1.lr.to_string());
        kv("train.stage1_epochs", t.stage1.epochs.to_string());
        kv("train.stage2_lr", t.stage2.lr.to_string());
        kv("train.stage2_epochs", t.stage2.epochs.to_string());
        kv("train.batch", t.batch.to_string());
        kv("pretrain.images", t.pretrain.images.to_string());
        kv("pretrain.epochs", t.pretrain.epochs.to_string());
        kv("pretrain.lr", t.pretrain.lr.to_string());
        kv("pretrain.seed", t.pretrain.seed.to_string());
        kv("adam.beta1", t.adam.beta1.to_string());
        kv("adam.beta2", t.adam.beta2.to_string());
        kv("adam.eps", t.adam.eps.to_string());
        kv("augment.suite", join(&self.augment_suite));
        kv("augment.copies", self.augment_copies.to_string());
        kv("augment.seed", self.augment_seed.to_string());
        kv("augment.max_items", self.augment_max_items.to_string());
        kv("eval.bin_width", self.eval_bin_width.to_string());
        kv("eval.suite", join(&self.eval_suite));
        kv("eval.seed", self.eval_seed.to_string());
        kv("kfold.k", self.kfold_k.to_string());
        kv("featmap.layer", self.featmap_layer.to_string());
        kv("paths.data", self.paths.data.clone());
        kv("paths.out", self.paths.out.clone());
        kv("paths.weights", self.paths.weights.clone());
        kv("paths.aug_weights", self.paths.aug_weights.clone());
        kv("paths.image", self.paths.image.clone());
        s
    }

    /// Parses a config document. The `preset` key (or `preset_override`)
    /// selects the defaults; every other key then overrides one field.
    pub fn parse(text: &str, preset_override: Option<Preset>) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Parse(format!("line {}: expected `key = value`", n + 1)))?;
            entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut preset = Preset::Desk;
        for (n, k, v) in &entries {
            if k == "preset" {
                preset = Preset::parse(v).ok_or_else(|| CliError::Parse(format!("line {n}: unknown preset `{v}`")))?;
            }
        }
        let mut cfg = RunConfig::preset(preset_override.unwrap_or(preset));
        let mut seen = std::collections::HashSet::new();
        for (n, k, v) in &entries {
            if !seen.insert(k.as_str()) {
                return Err(CliError::Parse(format!("line {n}: duplicate key `{k}`")));
            }
            if k != "preset" {
                cfg.set(k, v).map_err(|m| CliError::Parse(format!("line {n}: {m}")))?;
            }
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, v)?,
            "arm.backbone_length" => self.arm.backbone_length = num(key, v)?,
            "arm.backbone_radius" => self.arm.backbone_radius = num(key, v)?,
            "arm.tendon_offset" => self.arm.tendon_offset = num(key, v)?,
            "arm.disk_count" => self.arm.disk_count = num(key, v)?,
            "arm.motor_to_curvature_gain" => self.arm.motor_to_curvature_gain = num(key, v)?,
            "camera.image_width" => self.camera.image_width = num(key, v)?,
            "camera.image_height" => self.camera.image_height = num(key, v)?,
            "camera.horizontal_fov" => self.camera.horizontal_fov = num(key, v)?,
            "camera.position" => self.camera.camera_position = vec3(key, v)?,
            "camera.target" => self.camera.camera_target = vec3(key, v)?,
            "camera.background_shade" => self.camera.background_shade = num(key, v)?,
            "gen.n" => self.gen_n = num(key, v)?,
            "train.stage1_lr" => t.stage1.lr = num(key, v)?,
            "train.stage1_epochs" => t.stage1.epochs = num(key, v)?,
            "train.stage2_lr" => t.stage2.lr = num(key, v)?,
            "train.stage2_epochs" => t.stage2.epochs = num(key, v)?,
            "train.batch" => t.batch = num(key, v)?,
            "pretrain.images" => t.pretrain.images = num(key, v)?,
            "pretrain.epochs" => t.pretrain.epochs = num(key, v)?,
            "pretrain.lr" => t.pretrain.lr = num(key, v)?,
            "pretrain.seed" => t.pretrain.seed = num(key, v)?,
            "adam.beta1" => t.adam.beta1 = num(key, v)?,
            "adam.beta2" => t.adam.beta2 = num(key, v)?,
            "adam.eps" => t.adam.eps = num(key, v)?,
            "augment.suite" => self.augment_suite = corruptions(v)?,
            "augment.copies" => self.augment_copies = num(key, v)?,
            "augment.seed" => self.augment_seed = num(key, v)?,
            "augment.max_items" => self.augment_max_items = num(key, v)?,
            "eval.bin_width" => self.eval_bin_width = num(key, v)?,
            "eval.suite" => self.eval_suite = corruptions(v)?,
            "eval.seed" => self.eval_seed = num(key, v)?,
            "kfold.k" => self.kfold_k = num(key, v)?,
            "featmap.layer" => self.featmap_layer = num(key, v)?,
            "paths.data" => self.paths.data = v.to_string(),
            "paths.out" => self.paths.out = v.to_string(),
            "paths.weights" => self.paths.weights = v.to_string(),
            "paths.aug_weights" => self.paths.aug_weights = v.to_string(),
            "paths.image" => self.paths.image = v.to_string(),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid value for `{key}`"))
}

fn vec3(key: &str, v: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = v.split(',').map(|p| num(key, p.trim())).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("`{key}` needs three comma-separated numbers"))
}

fn corruptions(v: &str) -> Result<Vec<Corruption>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| t.trim().parse::<Corruption>().map_err(|e| e.to_string())).collect()
}

#[derive(Parser, Debug)]
#[command(name = "img2joint", version, about = "Image-to-joint regression for a continuum arm")]
pub struct Cli {
    /// Run-config file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `desk` or `paper`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a labeled synthetic dataset.
    Gen {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add corrupted copies of every image of a dataset.
    Augment {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain a base, then run both transfer-learning stages.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate on the test split; with `--aug-weights` also compare
    /// robustness against the corruption suite.
    Eval {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        aug_weights: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contiguous K-fold cross-validation.
    Kfold {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one layer's activations as a PGM grid.
    Featmap {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the joint value of one image.
    Predict {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", CliError::Parse(e.kind().to_string()).line());
            return 1;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.code()
        }
    }
}

/// Effective config of an invocation: file, then `--preset`, then `--seed`.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let preset = match &cli.preset {
        Some(p) => Some(Preset::parse(p).ok_or_else(|| CliError::Parse(format!("unknown preset `{p}`")))?),
        None => None,
    };
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path).map_err(io_err(path))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text, preset)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if cli.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        // a global pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let Some(cmd) = &cli.command else {
        return Err(CliError::Parse("no subcommand given".into()));
    };
    match cmd {
        Command::Gen { n, out } => cmd_gen(&cfg, n.unwrap_or(cfg.gen_n), &pick(out, &cfg.paths.out, "out")?),
        Command::Augment { data, out } => {
            cmd_augment(&cfg, &pick(data, &cfg.paths.data, "data")?, &pick(out, &cfg.paths.out, "out")?)
        }
        Command::Train { data, out } => {
            cmd_train(&cfg, &pick(data, &cfg.paths.data, "data")?, &pick(out, &cfg.paths.out, "out")?)
        }
        Command::Eval { weights, aug_weights, data, out } => {
            let weights = pick(weights, &cfg.paths.weights, "weights")?;
            let aug = aug_weights.clone().or_else(|| non_empty(&cfg.paths.aug_weights));
            let out = match out.clone().or_else(|| non_empty(&cfg.paths.out)) {
                Some(o) => o,
                None => weights.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            cmd_eval(&cfg, &weights, aug.as_deref(), &pick(data, &cfg.paths.data, "data")?, &out)
        }
        Command::Kfold { data, k, out } => cmd_kfold(
            &cfg,
            &pick(data, &cfg.paths.data, "data")?,
            k.unwrap_or(cfg.kfold_k),
            &pick(out, &cfg.paths.out, "out")?,
        ),
        Command::Featmap { weights, image, layer, out } => cmd_featmap(
            &cfg,
            &pick(weights, &cfg.paths.weights, "weights")?,
            &pick(image, &cfg.paths.image, "image")?,
            layer.unwrap_or(cfg.featmap_layer),
            &pick(out, &cfg.paths.out, "out")?,
        ),
        Command::Predict { weights, image } => cmd_predict(
            &cfg,
            &pick(weights, &cfg.paths.weights, "weights")?,
            &pick(image, &cfg.paths.image, "image")?,
        ),
    }
}

fn non_empty(s: &str) -> Option<PathBuf> {
    (!s.is_empty()).then(|| PathBuf::from(s))
}

fn pick(flag: &Option<PathBuf>, configured: &str, name: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| non_empty(configured))
        .ok_or_else(|| CliError::Parse(format!("missing --{name} (or paths.{name} in the config)")))
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Saves a dataset into a hidden sibling of `out` and renames it into
/// place, so a failure never leaves a half-written directory behind.
fn save_dataset_atomic(data: &Dataset, out: &Path) -> Result<(), CliError> {
    if out.exists() {
        let empty = fs::read_dir(out).map_err(io_err(out))?.next().is_none();
        if !empty {
            return Err(CliError::Validation(format!("{} exists and is not empty", out.display())));
        }
    }
    let name = out
        .file_name()
        .ok_or_else(|| CliError::Validation(format!("{} is not a directory name", out.display())))?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = parent.join(tmp_name);
    if let Err(e) = data.save(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e.into());
    }
    if out.exists() {
        fs::remove_dir(out).map_err(io_err(out))?;
    }
    fs::rename(&tmp, out).map_err(|e| {
        let _ = fs::remove_dir_all(&tmp);
        io_err(out)(e)
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn cmd_gen(cfg: &RunConfig, n: usize, out: &Path) -> Result<(), CliError> {
    let data = train::generate_dataset(n, &cfg.arm, &cfg.camera, cfg.seed)?;
    save_dataset_atomic(&data, out)?;
    println!("wrote {n} images to {}", out.display());
    Ok(())
}

pub fn cmd_augment(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let base = Dataset::load_dir(data)?;
    let aug = augment::build_augmented_dataset(
        &base,
        &cfg.augment_suite,
        cfg.augment_copies,
        cfg.augment_seed,
        cfg.augment_max_items,
    )?;
    save_dataset_atomic(&aug, out)?;
    println!("wrote {} items ({} base) to {}", aug.len(), base.len(), out.display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let spec = cfg.preset.model_spec();
    let dataset = Dataset::load_dir(data)?.materialize()?;
    let aux = train::auxiliary_dataset(&cfg.arm, &cfg.camera, &cfg.train.pretrain)?;
    let base = train::pretrain_base(&spec, &aux, &cfg.train.pretrain, cfg.train.batch, &cfg.train.adam)?;
    let (state, report) = train::train_two_stage(&spec, &base, &dataset, &cfg.train)?;
    ensure_dir(out)?;
    write_atomic(&out.join("weights.a2j"), &nn::encode_weights(&spec, &state))?;
    write_atomic(&out.join("metrics.csv"), report.metrics_csv().as_bytes())?;
    let secs: f64 = report.stages.iter().flat_map(|s| &s.epochs).map(|e| e.seconds).sum();
    let (stage, epoch, val) = report.best;
    print!("best val_mse={val} at stage {stage} epoch {epoch}; training took {secs:.1}s");
    if let Some(mae) = report.test_mae {
        print!("; test mae={mae}");
    }
    println!();
    Ok(())
}

pub fn cmd_eval(
    cfg: &RunConfig,
    weights: &Path,
    aug_weights: Option<&Path>,
    data: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let spec = cfg.preset.model_spec();
    let state = nn::load_weights(&spec, weights).map_err(from_nn)?;
    let dataset = Dataset::load_dir(data)?;
    let report = evalreport::evaluate(&spec, &state, &dataset, cfg.eval_bin_width)?;
    let robustness = match aug_weights {
        Some(p) => {
            let aug = nn::load_weights(&spec, p).map_err(from_nn)?;
            let specs: Vec<AugmentSpec> = cfg
                .eval_suite
                .iter()
                .map(|&corruption| AugmentSpec { corruption, seed: cfg.eval_seed })
                .collect();
            Some(evalreport::robustness_suite(&spec, &state, &aug, &dataset, &specs)?)
        }
        None => None,
    };
    ensure_dir(out)?;
    write_atomic(&out.join("eval.csv"), report.csv().as_bytes())?;
    write_atomic(&out.join("histogram.csv"), report.histogram.csv().as_bytes())?;
    if let Some(r) = &robustness {
        write_atomic(&out.join("robustness.csv"), r.csv().as_bytes())?;
    }
    println!(
        "items={} mae={} mse={} mean_seconds={:.4}",
        report.items.len(),
        report.mae,
        report.mse,
        report.mean_seconds
    );
    Ok(())
}

pub fn cmd_kfold(cfg: &RunConfig, data: &Path, k: usize, out: &Path) -> Result<(), CliError> {
    let spec = cfg.preset.model_spec();
    let dataset = Dataset::load_dir(data)?.materialize()?;
    let aux = train::auxiliary_dataset(&cfg.arm, &cfg.camera, &cfg.train.pretrain)?;
    let base = train::pretrain_base(&spec, &aux, &cfg.train.pretrain, cfg.train.batch, &cfg.train.adam)?;
    let report = train::kfold(&spec, &base, &dataset, k, &cfg.train)?;
    ensure_dir(out)?;
    write_atomic(&out.join("kfold.csv"), report.csv().as_bytes())?;
    println!("k={k} mean_mae={} variance={}", report.mean_mae, report.variance);
    Ok(())
}

pub fn cmd_featmap(cfg: &RunConfig, weights: &Path, image: &Path, layer: usize, out: &Path) -> Result<(), CliError> {
    let spec = cfg.preset.model_spec();
    let state = nn::load_weights(&spec, weights).map_err(from_nn)?;
    let img = raster::read_ppm(image)?;
    let grid = evalreport::feature_maps(&spec, &state, &img, layer)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_atomic(out, &raster::encode_pgm(&grid.image))?;
    println!(
        "layer {layer}: {} tiles of {}x{} -> {}",
        grid.channels,
        grid.tile_height,
        grid.tile_width,
        out.display()
    );
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, weights: &Path, image: &Path) -> Result<(), CliError> {
    let spec = cfg.preset.model_spec();
    let state = nn::load_weights(&spec, weights).map_err(from_nn)?;
    let (q, secs) = evalreport::predict(&spec, &state, image)?;
    println!("q_rad={q} seconds={secs:.4}");
    Ok(())
}
