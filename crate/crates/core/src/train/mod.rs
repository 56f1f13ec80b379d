//! Dataset assembly, the two-stage transfer-learning protocol and K-fold
//! cross-validation.
//!
//! Stage 1 freezes every convolution and fits a freshly initialized dense
//! head. Stage 2 freezes that head and fine-tunes the convolutions at a
//! lower learning rate for fewer epochs. The returned model is the one
//! with the lowest validation MSE across both stages.

mod dataset;

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

pub use dataset::{
    check_label, generate_dataset, image_name, read_labels, write_labels, Dataset, ImageSource,
    Sample, Split, LABELS_FILE, SPLIT_FILE,
};

use crate::arm_sim::{ArmConfig, ArmError, CameraConfig};
use crate::nn::{
    self, adam_step, AdamConfig, FreezeMask, ModelSpec, ModelState, NnError, Tensor,
};
use crate::raster::{self, Image, RasterError};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Labels { path: PathBuf, line: u64, msg: String },
    #[error("label {q} for `{name}` is outside the joint range")]
    LabelRange { name: String, q: f64 },
    #[error("duplicate file name `{0}`")]
    DuplicateName(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid split: {0}")]
    Split(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in stage {stage}, epoch {epoch}")]
    NonFiniteLoss { stage: usize, epoch: usize },
    #[error("frozen layer {layer} changed during stage {stage}")]
    FreezeViolation { stage: usize, layer: String },
    #[error("k-fold: {0}")]
    KFold(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl TrainError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
        move |source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-size network; used for shape checks.
    Paper,
    /// CPU-sized network for actual training runs.
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Preset::Paper),
            "desk" => Some(Preset::Desk),
            _ => None,
        }
    }

    pub fn model_spec(self) -> ModelSpec {
        match self {
            Preset::Paper => ModelSpec::paper(),
            Preset::Desk => ModelSpec::desk(),
        }
    }

    /// Camera used to render scenes for this preset.
    pub fn camera(self) -> CameraConfig {
        match self {
            Preset::Paper => CameraConfig::default().with_resolution(600, 600),
            Preset::Desk => CameraConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageConfig {
    pub lr: f64,
    pub epochs: usize,
}

/// Brief end-to-end training that produces the frozen feature extractor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub images: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub batch: usize,
    pub seed: u64,
    pub pretrain: PretrainConfig,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let stage1 = match preset {
            Preset::Paper => StageConfig { lr: 1e-6, epochs: 150 },
            Preset::Desk => StageConfig { lr: 1e-3, epochs: 30 },
        };
        let pretrain = match preset {
            Preset::Paper => PretrainConfig {
                images: 1000,
                epochs: 10,
                lr: 1e-4,
                seed: 1,
            },
            Preset::Desk => PretrainConfig {
                images: 200,
                epochs: 10,
                lr: 1e-3,
                seed: 1,
            },
        };
        TrainConfig {
            preset,
            stage1,
            stage2: StageConfig {
                lr: stage1.lr / 10.0,
                epochs: stage1.epochs / 5,
            },
            batch: 16,
            seed: 7,
            pretrain,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        for lr in [self.stage1.lr, self.stage2.lr, self.pretrain.lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rates must be positive and finite");
            }
        }
        if self.stage2.lr >= self.stage1.lr {
            return bad("stage 2 learning rate must be below stage 1's");
        }
        if self.stage2.epochs >= self.stage1.epochs {
            return bad("stage 2 must run fewer epochs than stage 1");
        }
        if self.batch == 0 {
            return bad("batch size must be at least 1");
        }
        Ok(())
    }
}

/// Nearest-neighbour resize to `(height, width)` and clamp into `[0, 1]`.
/// Ingested 8-bit images are already divided by 255 when decoded.
pub fn preprocess(img: &Image, target: (usize, usize)) -> Tensor<f32> {
    let (h, w) = target;
    raster::resize_nearest(img, w, h).data.map(|v| v.clamp(0.0, 1.0))
}

/// Network-ready inputs and labels for every item of a dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<f64>,
}

pub fn prepare(spec: &ModelSpec, data: &Dataset) -> Result<Prepared, TrainError> {
    use rayon::prelude::*;
    let target = (spec.input[0], spec.input[1]);
    let inputs = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(preprocess(&*data.image(i)?, target)))
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(Prepared {
        inputs,
        labels: data.labels(),
    })
}

/// Predictions of the network for a list of per-sample inputs that enter
/// `layers[start]`.
pub fn predict_inputs(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    inputs: &[&Tensor<f32>],
    start: usize,
    batch: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch.max(1)) {
        let x = Tensor::stack(chunk)?;
        let y = nn::infer(spec, state, &x, start, spec.layers.len())?;
        out.extend(y.data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-sample squared error over the epoch's batches (rad²).
    pub train_mse: f64,
    /// MSE on the validation split after the epoch (rad²); NaN when there is none.
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    /// `(stage, epoch, val_mse)` of the returned model.
    pub best: (usize, usize, f64),
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    /// Epoch-end checks that frozen layers were left bit-identical.
    pub freeze_checks: usize,
}

impl TrainReport {
    /// `stage,epoch,train_mse,val_mse` rows.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("stage,epoch,train_mse,val_mse\n");
        for s in &self.stages {
            for e in &s.epochs {
                out.push_str(&format!("{},{},{},{}\n", s.stage, e.epoch, e.train_mse, e.val_mse));
            }
        }
        out
    }
}

/// Options of one training stage.
#[derive(Clone, Debug)]
pub struct StageOptions {
    pub stage: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub mask: FreezeMask,
    pub seed: u64,
    pub adam: AdamConfig,
}

/// Runs one stage of minibatch Adam on `train`, reporting validation MSE
/// after every epoch. Batches are a seeded reshuffle of `train` per epoch.
///
/// When every parameterized layer ahead of the first trainable one is
/// frozen, their outputs are computed once and reused across epochs.
pub fn train_stage(
    spec: &ModelSpec,
    state: &mut ModelState<f32>,
    data: &Prepared,
    train: &[usize],
    val: &[usize],
    opts: &StageOptions,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelState<f32>),
) -> Result<Vec<EpochRecord>, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if !opts.mask.any_trainable() {
        return Err(NnError::NothingTrainable.into());
    }
    let positions = spec.param_positions();
    let first = opts.mask.trainable.iter().position(|&t| t).unwrap();
    let start = positions[first];

    let frozen: Vec<(usize, nn::Params<f32>)> = opts
        .mask
        .trainable
        .iter()
        .enumerate()
        .filter(|(_, &t)| !t)
        .map(|(slot, _)| (slot, state.params[slot].clone()))
        .collect();

    // activations entering layers[start]
    let mut features: Vec<Option<Tensor<f32>>> = vec![None; data.inputs.len()];
    if start > 0 {
        let needed: Vec<usize> = train.iter().chain(val).copied().collect();
        for chunk in needed.chunks(32) {
            let refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &data.inputs[i]).collect();
            let out = nn::infer(spec, state, &Tensor::stack(&refs)?, 0, start)?;
            let per_shape = &out.shape()[1..];
            for (k, &i) in chunk.iter().enumerate() {
                features[i] = Some(Tensor::from_vec(per_shape, out.outer(k).to_vec())?);
            }
        }
    }
    let input_of = |i: usize| features[i].as_ref().unwrap_or(&data.inputs[i]);

    let mut records = Vec::with_capacity(opts.epochs);
    let mut order = train.to_vec();
    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        let mut rng = rng::stream(opts.seed, &[opts.stage as u64, epoch as u64]);
        order.copy_from_slice(train);
        order.shuffle(&mut rng);

        let mut sse = 0.0;
        for chunk in order.chunks(opts.batch) {
            let refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| input_of(i)).collect();
            let x = Tensor::stack(&refs)?;
            let y = Tensor::from_vec(&[chunk.len(), 1], chunk.iter().map(|&i| data.labels[i] as f32).collect())?;
            let (pred, cache) = nn::forward_from(spec, state, &x, start)?;
            let loss = nn::mse(&pred, &y)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { stage: opts.stage, epoch });
            }
            sse += loss * chunk.len() as f64;
            let grad = nn::mse_grad(&pred, &y)?;
            let grads = nn::backward(spec, state, cache, &grad)?;
            adam_step(spec, state, &grads, &opts.mask, opts.lr, &opts.adam)?;
        }

        for (slot, before) in &frozen {
            if !state.params[*slot].bit_eq(before) {
                return Err(TrainError::FreezeViolation {
                    stage: opts.stage,
                    layer: spec.param_name(*slot),
                });
            }
        }

        let val_mse = if val.is_empty() {
            f64::NAN
        } else {
            let refs: Vec<&Tensor<f32>> = val.iter().map(|&i| input_of(i)).collect();
            let preds = predict_inputs(spec, state, &refs, start, opts.batch.max(16))?;
            let mse = preds
                .iter()
                .zip(val)
                .map(|(p, &i)| (p - data.labels[i]).powi(2))
                .sum::<f64>()
                / val.len() as f64;
            if !mse.is_finite() {
                return Err(TrainError::NonFiniteLoss { stage: opts.stage, epoch });
            }
            mse
        };
        let rec = EpochRecord {
            epoch,
            train_mse: sse / train.len() as f64,
            val_mse,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&rec, state);
        records.push(rec);
    }
    Ok(records)
}

/// Auxiliary scenes for [`pretrain_base`], drawn from their own seed.
pub fn auxiliary_dataset(arm: &ArmConfig, cam: &CameraConfig, cfg: &PretrainConfig) -> Result<Dataset, TrainError> {
    generate_dataset(cfg.images, arm, cam, rng::derive_seed(cfg.seed, &[0xa0c5]))
}

/// Trains every layer briefly on `aux`; the result stands in for a pretrained
/// feature extractor. Zero epochs returns the initialization.
pub fn pretrain_base(
    spec: &ModelSpec,
    aux: &Dataset,
    cfg: &PretrainConfig,
    batch: usize,
    adam: &AdamConfig,
) -> Result<ModelState<f32>, TrainError> {
    spec.validate()?;
    let mut state = ModelState::init(spec, cfg.seed)?;
    if cfg.epochs == 0 {
        return Ok(state);
    }
    let data = prepare(spec, aux)?;
    let all: Vec<usize> = (0..data.inputs.len()).collect();
    let opts = StageOptions {
        stage: 0,
        lr: cfg.lr,
        epochs: cfg.epochs,
        batch,
        mask: FreezeMask::all_trainable(spec),
        seed: cfg.seed,
        adam: *adam,
    };
    train_stage(spec, &mut state, &data, &all, &[], &opts, |_, _| {})?;
    state.reset_optimizer();
    Ok(state)
}

/// Both transfer-learning stages on `data`'s split.
pub fn train_two_stage(
    spec: &ModelSpec,
    base: &ModelState<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelState<f32>, TrainReport), TrainError> {
    let prepared = prepare(spec, data)?;
    train_two_stage_prepared(spec, base, &prepared, &data.split, cfg)
}

pub fn train_two_stage_prepared(
    spec: &ModelSpec,
    base: &ModelState<f32>,
    data: &Prepared,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<(ModelState<f32>, TrainReport), TrainError> {
    cfg.validate()?;
    spec.validate()?;
    split.validate(data.inputs.len())?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut state = ModelState::from_params(spec, base.params.clone())?;
    let head = state.params.len() - 1;
    state.reinit_slot(spec, head, rng::derive_seed(cfg.seed, &[0x4ead]))?;

    let mut best: Option<(ModelState<f32>, (usize, usize, f64))> = None;
    let mut stages = Vec::new();
    let mut freeze_checks = 0;
    let plan = [
        (1, cfg.stage1, FreezeMask::freeze_convs(spec)),
        (2, cfg.stage2, FreezeMask::freeze_head(spec)),
    ];
    for (stage, sc, mask) in plan {
        state.reset_optimizer();
        let opts = StageOptions {
            stage,
            lr: sc.lr,
            epochs: sc.epochs,
            batch: cfg.batch,
            mask,
            seed: cfg.seed,
            adam: cfg.adam,
        };
        let epochs = train_stage(spec, &mut state, data, &split.train, &split.val, &opts, |rec, st| {
            if best.as_ref().is_none_or(|(_, b)| rec.val_mse < b.2) {
                best = Some((st.clone(), (stage, rec.epoch, rec.val_mse)));
            }
        })?;
        freeze_checks += epochs.len();
        stages.push(StageReport { stage, epochs });
    }

    let (best_state, best_at) = best.unwrap_or_else(|| (state.clone(), (0, 0, f64::NAN)));
    let (test_mse, test_mae) = if split.test.is_empty() {
        (None, None)
    } else {
        let refs: Vec<&Tensor<f32>> = split.test.iter().map(|&i| &data.inputs[i]).collect();
        let preds = predict_inputs(spec, &best_state, &refs, 0, cfg.batch)?;
        let errs: Vec<f64> = preds.iter().zip(&split.test).map(|(p, &i)| p - data.labels[i]).collect();
        let n = errs.len() as f64;
        (
            Some(errs.iter().map(|e| e * e).sum::<f64>() / n),
            Some(errs.iter().map(|e| e.abs()).sum::<f64>() / n),
        )
    };
    Ok((
        best_state,
        TrainReport {
            stages,
            best: best_at,
            test_mse,
            test_mae,
            freeze_checks,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub start: usize,
    pub end: usize,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KFoldReport {
    pub folds: Vec<FoldResult>,
    pub mean_mae: f64,
    /// Population variance of the fold MAEs (rad²).
    pub variance: f64,
}

impl KFoldReport {
    /// `fold,start,end,mae_rad` rows followed by `#` summary lines.
    pub fn csv(&self) -> String {
        let mut out = String::from("fold,start,end,mae_rad\n");
        for f in &self.folds {
            out.push_str(&format!("{},{},{},{}\n", f.fold, f.start, f.end, f.mae));
        }
        out.push_str(&format!("# mean_mae_rad={}\n", self.mean_mae));
        out.push_str(&format!("# variance_mae_rad2={}\n", self.variance));
        out
    }
}

/// Contiguous, unshuffled folds over `0..n`.
pub fn fold_blocks(n: usize, k: usize) -> Result<Vec<Range<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::KFold(format!("k must be at least 2 (got {k})")));
    }
    if k > n {
        return Err(TrainError::KFold(format!("k = {k} exceeds the {n} items")));
    }
    if !n.is_multiple_of(k) {
        return Err(TrainError::KFold(format!("{n} items do not divide into {k} folds")));
    }
    let size = n / k;
    Ok((0..k).map(|f| f * size..(f + 1) * size).collect())
}

/// Runs K-fold cross-validation with a caller-supplied learner.
///
/// For each fold, the other blocks (in original order) form the training
/// pool; its last ninth (at least one item) is held out for model
/// selection. `fit_predict` receives that split plus the fold's test
/// indices and returns one prediction per test index.
pub fn kfold_with(
    labels: &[f64],
    k: usize,
    mut fit_predict: impl FnMut(&Split) -> Result<Vec<f64>, TrainError>,
) -> Result<KFoldReport, TrainError> {
    let blocks = fold_blocks(labels.len(), k)?;
    let mut folds = Vec::with_capacity(k);
    for (fold, block) in blocks.iter().enumerate() {
        let pool: Vec<usize> = (0..labels.len()).filter(|i| !block.contains(i)).collect();
        if pool.len() < 2 {
            return Err(TrainError::KFold("training pool needs at least two items".into()));
        }
        let n_val = (pool.len() / 9).max(1);
        let split = Split {
            train: pool[..pool.len() - n_val].to_vec(),
            val: pool[pool.len() - n_val..].to_vec(),
            test: block.clone().collect(),
        };
        let preds = fit_predict(&split)?;
        if preds.len() != split.test.len() {
            return Err(TrainError::KFold("learner returned the wrong number of predictions".into()));
        }
        let mae = preds
            .iter()
            .zip(&split.test)
            .map(|(p, &i)| (p - labels[i]).abs())
            .sum::<f64>()
            / preds.len() as f64;
        folds.push(FoldResult {
            fold,
            start: block.start,
            end: block.end,
            mae,
        });
    }
    let mean_mae = folds.iter().map(|f| f.mae).sum::<f64>() / k as f64;
    let variance = folds.iter().map(|f| (f.mae - mean_mae).powi(2)).sum::<f64>() / k as f64;
    Ok(KFoldReport {
        folds,
        mean_mae,
        variance,
    })
}

/// K-fold with the two-stage protocol from a shared pretrained base.
pub fn kfold(
    spec: &ModelSpec,
    base: &ModelState<f32>,
    data: &Dataset,
    k: usize,
    cfg: &TrainConfig,
) -> Result<KFoldReport, TrainError> {
    fold_blocks(data.len(), k)?;
    let prepared = prepare(spec, data)?;
    kfold_with(&prepared.labels, k, |split| {
        let (state, _) = train_two_stage_prepared(spec, base, &prepared, split, cfg)?;
        let refs: Vec<&Tensor<f32>> = split.test.iter().map(|&i| &prepared.inputs[i]).collect();
        predict_inputs(spec, &state, &refs, 0, cfg.batch)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Provenance;

    #[test]
    fn preset_stage_two_derivation() {
        let d = TrainConfig::preset(Preset::Desk);
        assert_eq!(d.stage2.epochs, 6);
        assert!((d.stage2.lr - 1e-4).abs() < 1e-18);
        let p = TrainConfig::preset(Preset::Paper);
        assert_eq!((p.stage1.epochs, p.stage2.epochs), (150, 30));
        assert_eq!(p.batch, 16);
        d.validate().unwrap();
        p.validate().unwrap();
    }

    #[test]
    fn config_invariants() {
        let mut c = TrainConfig::preset(Preset::Desk);
        c.stage2.lr = c.stage1.lr;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::preset(Preset::Desk);
        c.batch = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn preprocess_examples() {
        let big = Image::filled(600, 600, 0.25, Provenance::Synthetic);
        assert_eq!(preprocess(&big, (300, 300)).shape(), &[300, 300, 3]);
        let small = Image::filled(4, 4, 1.0, Provenance::Ingested);
        assert_eq!(preprocess(&small, (4, 4)), small.data);
        let byte = crate::raster::decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(preprocess(&byte, (1, 1)).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn folds_are_contiguous_blocks() {
        let blocks = fold_blocks(1000, 10).unwrap();
        assert_eq!(blocks[0], 0..100);
        assert_eq!(blocks[1], 100..200);
        assert_eq!(blocks[9], 900..1000);
        assert!(fold_blocks(1000, 3).is_err());
        assert!(fold_blocks(5, 6).is_err());
    }

    #[test]
    fn constant_learner_gives_identical_folds() {
        let labels = vec![1.5; 40];
        let report = kfold_with(&labels, 10, |s| Ok(vec![1.0; s.test.len()])).unwrap();
        assert!(report.folds.iter().all(|f| f.mae == 0.5));
        assert_eq!(report.variance, 0.0);
    }

    #[test]
    fn leave_one_out_runs() {
        let labels: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let report = kfold_with(&labels, 5, |s| {
            assert_eq!(s.test.len(), 1);
            assert!(!s.val.is_empty() && !s.train.is_empty());
            Ok(vec![0.0])
        })
        .unwrap();
        assert_eq!(report.folds.len(), 5);
        assert_eq!(report.folds[4].mae, 4.0);
    }

    #[test]
    fn kfold_pool_excludes_the_fold() {
        let labels = vec![0.0; 20];
        kfold_with(&labels, 4, |s| {
            for i in s.train.iter().chain(&s.val) {
                assert!(!s.test.contains(i));
            }
            assert_eq!(s.train.len() + s.val.len(), 15);
            Ok(vec![0.0; s.test.len()])
        })
        .unwrap();
    }
}
