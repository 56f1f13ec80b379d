//! Test-set metrics, error histograms, robustness tables, feature-map
//! grids and single-image prediction.
//!
//! Errors are `|q̂ − q|` in radians without wrapping.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::augment::{self, AugmentError, AugmentSpec};
use crate::nn::{self, ModelSpec, ModelState, NnError, Tensor};
use crate::raster::{self, GrayImage, Image, RasterError};
use crate::rng;
use crate::train::{self, Dataset, TrainError};

/// Default histogram bin width in radians.
pub const DEFAULT_BIN_WIDTH: f64 = 0.025;
/// Layer exported by default: the output of the first block.
pub const DEFAULT_FEATURE_LAYER: usize = 4;
/// Shade of the separator lines and empty cells of a feature grid.
pub const SEPARATOR_SHADE: f32 = 0.5;

const EVAL_BATCH: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("the test split is empty")]
    EmptyTest,
    #[error("no corruptions given")]
    EmptySuite,
    #[error("bin width {0} must be positive and finite")]
    BinWidth(f64),
    #[error("prediction for `{0}` is not finite")]
    NonFinite(String),
    #[error("layer {layer} does not exist (network has {count} layers)")]
    LayerIndex { layer: usize, count: usize },
    #[error("layer {layer} ({kind}) has no spatial output")]
    NonSpatial { layer: usize, kind: &'static str },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

/// Fails unless every parameter tensor of `state` has the shape `spec` asks for.
pub fn check_state(spec: &ModelSpec, state: &ModelState<f32>) -> Result<(), NnError> {
    ModelState::from_params(spec, state.params.clone()).map(|_| ())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// Bin `i` covers `[i * bin_width, (i + 1) * bin_width)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_errors(errors: &[f64], bin_width: f64) -> Result<Self, EvalError> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(EvalError::BinWidth(bin_width));
        }
        let bin = |e: f64| (e / bin_width).floor() as usize;
        let len = errors.iter().map(|&e| bin(e) + 1).max().unwrap_or(1);
        let mut counts = vec![0; len];
        for &e in errors {
            counts[bin(e)] += 1;
        }
        Ok(Histogram { bin_width, counts })
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|i| i as f64 * self.bin_width).collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `bin_start,bin_end,count` rows.
    pub fn csv(&self) -> String {
        let edges = self.edges();
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", edges[i], edges[i + 1], c).unwrap();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub name: String,
    pub label: f64,
    pub prediction: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub mse: f64,
    pub mae: f64,
    pub histogram: Histogram,
    /// Wall-clock seconds per item, averaged over the run.
    pub mean_seconds: f64,
}

impl EvalReport {
    pub fn from_predictions(
        names: &[String],
        labels: &[f64],
        predictions: &[f64],
        bin_width: f64,
        mean_seconds: f64,
    ) -> Result<Self, EvalError> {
        assert!(names.len() == labels.len() && labels.len() == predictions.len());
        if labels.is_empty() {
            return Err(EvalError::EmptyTest);
        }
        let mut items = Vec::with_capacity(labels.len());
        for ((name, &label), &prediction) in names.iter().zip(labels).zip(predictions) {
            if !prediction.is_finite() {
                return Err(EvalError::NonFinite(name.clone()));
            }
            items.push(EvalItem {
                name: name.clone(),
                label,
                prediction,
                abs_error: (prediction - label).abs(),
            });
        }
        let n = items.len() as f64;
        let errors: Vec<f64> = items.iter().map(|i| i.abs_error).collect();
        Ok(EvalReport {
            mae: errors.iter().sum::<f64>() / n,
            mse: errors.iter().map(|e| e * e).sum::<f64>() / n,
            histogram: Histogram::from_errors(&errors, bin_width)?,
            items,
            mean_seconds,
        })
    }

    /// Standard deviation of the per-item absolute errors.
    pub fn error_std(&self) -> f64 {
        let n = self.items.len() as f64;
        let var = self.items.iter().map(|i| (i.abs_error - self.mae).powi(2)).sum::<f64>() / n;
        var.sqrt()
    }

    /// Per-item rows `filename,q_rad,q_hat_rad,abs_err_rad` and `#` footer
    /// lines with the aggregates. Timing is left out so that reruns match
    /// byte for byte.
    pub fn csv(&self) -> String {
        let mut out = String::from("filename,q_rad,q_hat_rad,abs_err_rad\n");
        for i in &self.items {
            writeln!(out, "{},{},{},{}", i.name, i.label, i.prediction, i.abs_error).unwrap();
        }
        writeln!(out, "# items={}", self.items.len()).unwrap();
        writeln!(out, "# mse_rad2={}", self.mse).unwrap();
        writeln!(out, "# mae_rad={}", self.mae).unwrap();
        out
    }
}

fn predict_images(spec: &ModelSpec, state: &ModelState<f32>, images: &[Image]) -> Result<Vec<f64>, EvalError> {
    let target = (spec.input[0], spec.input[1]);
    let inputs: Vec<Tensor<f32>> = images.par_iter().map(|img| train::preprocess(img, target)).collect();
    let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
    Ok(train::predict_inputs(spec, state, &refs, 0, EVAL_BATCH)?)
}

/// Evaluates the items at `indices` of `data`.
pub fn evaluate_items(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    data: &Dataset,
    indices: &[usize],
    bin_width: f64,
) -> Result<EvalReport, EvalError> {
    check_state(spec, state)?;
    if indices.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let images = indices
        .iter()
        .map(|&i| data.image(i).map(|c| c.into_owned()))
        .collect::<Result<Vec<_>, _>>()?;
    let t0 = Instant::now();
    let preds = predict_images(spec, state, &images)?;
    let secs = t0.elapsed().as_secs_f64() / indices.len() as f64;
    let names: Vec<String> = indices.iter().map(|&i| data.items[i].name.clone()).collect();
    let labels: Vec<f64> = indices.iter().map(|&i| data.items[i].label).collect();
    EvalReport::from_predictions(&names, &labels, &preds, bin_width, secs)
}

/// Evaluates the test split of `data`.
pub fn evaluate(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    data: &Dataset,
    bin_width: f64,
) -> Result<EvalReport, EvalError> {
    evaluate_items(spec, state, data, &data.split.test, bin_width)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    /// Corruption token, e.g. `gaussian:0:0.01`.
    pub corruption: String,
    pub clean_mae: f64,
    pub aug_mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    /// `corruption,clean_mae,aug_mae` rows.
    pub fn csv(&self) -> String {
        let mut out = String::from("corruption,clean_mae,aug_mae\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.corruption, r.clean_mae, r.aug_mae).unwrap();
        }
        out
    }

    pub fn row(&self, corruption: &str) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.corruption == corruption)
    }
}

/// Corrupts the test split of `base_test` once per entry of `specs` and
/// reports the MAE of both models on each corrupted copy. Image `i` is
/// corrupted with a seed derived from the entry's seed and `i`.
pub fn robustness_suite(
    spec: &ModelSpec,
    clean_state: &ModelState<f32>,
    aug_state: &ModelState<f32>,
    base_test: &Dataset,
    specs: &[AugmentSpec],
) -> Result<RobustnessReport, EvalError> {
    if specs.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    check_state(spec, clean_state)?;
    check_state(spec, aug_state)?;
    let test = &base_test.split.test;
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let labels: Vec<f64> = test.iter().map(|&i| base_test.items[i].label).collect();
    let mae = |preds: &[f64]| preds.iter().zip(&labels).map(|(p, q)| (p - q).abs()).sum::<f64>() / labels.len() as f64;
    let mut rows = Vec::with_capacity(specs.len());
    for s in specs {
        let images = test
            .par_iter()
            .map(|&i| {
                let item = AugmentSpec {
                    corruption: s.corruption,
                    seed: rng::derive_seed(s.seed, &[i as u64]),
                };
                Ok(augment::apply(&*base_test.image(i)?, &item)?)
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        rows.push(RobustnessRow {
            corruption: s.corruption.to_string(),
            clean_mae: mae(&predict_images(spec, clean_state, &images)?),
            aug_mae: mae(&predict_images(spec, aug_state, &images)?),
        });
    }
    Ok(RobustnessReport { rows })
}

/// Per-channel activation maps of one layer tiled into a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub image: GrayImage,
    pub channels: usize,
    pub cols: usize,
    pub tile_height: usize,
    pub tile_width: usize,
}

impl FeatureGrid {
    /// Row-major pixels of tile `c`.
    pub fn tile(&self, c: usize) -> Vec<f32> {
        assert!(c < self.channels);
        let (tr, tc) = (c / self.cols, c % self.cols);
        let (r0, c0) = (tr * (self.tile_height + 1), tc * (self.tile_width + 1));
        let mut out = Vec::with_capacity(self.tile_height * self.tile_width);
        for r in r0..r0 + self.tile_height {
            let row = r * self.image.width;
            out.extend_from_slice(&self.image.data[row + c0..row + c0 + self.tile_width]);
        }
        out
    }
}

/// Output of layer `layer` (numbered with the input as layer 1) for one
/// image, each channel min-max normalized to `[0, 1]` on its own (constant
/// channels become 0), tiled row-major into `ceil(sqrt(C))` columns with
/// 1-px separators.
pub fn feature_maps(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    img: &Image,
    layer: usize,
) -> Result<FeatureGrid, EvalError> {
    check_state(spec, state)?;
    let count = spec.layers.len() + 1;
    if layer == 0 || layer > count {
        return Err(EvalError::LayerIndex { layer, count });
    }
    let x = train::preprocess(img, (spec.input[0], spec.input[1]));
    let batch = Tensor::stack(&[&x])?;
    let act = nn::infer(spec, state, &batch, 0, layer - 1)?;
    let &[_, h, w, c] = act.shape() else {
        return Err(EvalError::NonSpatial {
            layer,
            kind: spec.layers[layer - 2].kind(),
        });
    };

    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let width = cols * w + cols - 1;
    let height = rows * h + rows - 1;
    let mut data = vec![SEPARATOR_SHADE; width * height];
    let a = act.data();
    for ch in 0..c {
        let values = (0..h * w).map(|p| a[p * c + ch]);
        let (lo, hi) = values.clone().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let (r0, c0) = ((ch / cols) * (h + 1), (ch % cols) * (w + 1));
        for (p, v) in values.enumerate() {
            let n = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            data[(r0 + p / w) * width + c0 + p % w] = n;
        }
    }
    Ok(FeatureGrid {
        image: GrayImage { width, height, data },
        channels: c,
        cols,
        tile_height: h,
        tile_width: w,
    })
}

/// Prediction for one image file plus elapsed wall-clock seconds.
pub fn predict(spec: &ModelSpec, state: &ModelState<f32>, path: &Path) -> Result<(f64, f64), EvalError> {
    check_state(spec, state)?;
    let img = raster::read_ppm(path)?;
    let t0 = Instant::now();
    let q = predict_images(spec, state, &[img])?[0];
    Ok((q, t0.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Corruption;
    use crate::raster::Provenance;
    use crate::train::{ImageSource, Sample};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    #[test]
    fn three_item_arithmetic() {
        let labels = [0.0, 1.0, -1.0];
        let preds = [0.1, 0.8, -0.4];
        let r = EvalReport::from_predictions(&names(3), &labels, &preds, DEFAULT_BIN_WIDTH, 0.0).unwrap();
        assert!((r.mae - 0.3).abs() < 1e-12);
        assert!((r.mse - (0.01 + 0.04 + 0.36) / 3.0).abs() < 1e-12);
        assert_eq!(r.histogram.total(), 3);
    }

    #[test]
    fn echo_model_lands_in_first_bin() {
        let labels = [0.5, -2.0, 3.0];
        let r = EvalReport::from_predictions(&names(3), &labels, &labels, DEFAULT_BIN_WIDTH, 0.0).unwrap();
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.histogram.counts, vec![3]);
    }

    #[test]
    fn histogram_bins_are_half_open() {
        let h = Histogram::from_errors(&[0.0, 0.5, 1.0, 1.49], 0.5).unwrap();
        assert_eq!(h.counts, vec![1, 1, 2]);
        assert_eq!(h.edges(), vec![0.0, 0.5, 1.0, 1.5]);
        assert!(Histogram::from_errors(&[0.1], 0.0).is_err());
    }

    #[test]
    fn csv_footer_and_rows() {
        let r = EvalReport::from_predictions(&names(2), &[0.0, 0.0], &[0.5, -0.5], 0.1, 1.0).unwrap();
        let csv = r.csv();
        assert!(csv.starts_with("filename,q_rad,q_hat_rad,abs_err_rad\ni0,0,0.5,0.5\n"));
        assert!(csv.contains("# mae_rad=0.5\n"));
    }

    #[test]
    fn nan_prediction_rejected() {
        let err = EvalReport::from_predictions(&names(1), &[0.0], &[f64::NAN], 0.1, 0.0).unwrap_err();
        assert!(matches!(err, EvalError::NonFinite(_)));
    }

    fn tiny_data(n: usize) -> Dataset {
        let items = (0..n)
            .map(|i| Sample {
                name: format!("s{i}.ppm"),
                source: ImageSource::Memory(Image::filled(8, 8, i as f32 / n as f32, Provenance::Synthetic)),
                label: i as f64 * 0.1,
            })
            .collect();
        Dataset::new(items, (8, 8)).unwrap()
    }

    #[test]
    fn evaluation_is_repeatable() {
        let spec = ModelSpec::tiny();
        let state = ModelState::init(&spec, 3).unwrap();
        let data = tiny_data(20);
        let a = evaluate(&spec, &state, &data, DEFAULT_BIN_WIDTH).unwrap();
        let b = evaluate(&spec, &state, &data, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(a.csv(), b.csv());
        assert_eq!(a.items.len(), 2);
    }

    #[test]
    fn mismatched_state_rejected() {
        let spec = ModelSpec::tiny();
        let state = ModelState::init(&ModelSpec::desk(), 3).unwrap();
        assert!(matches!(
            evaluate(&spec, &state, &tiny_data(10), 0.1),
            Err(EvalError::Nn(_))
        ));
    }

    #[test]
    fn robustness_identity_entry_matches_evaluate() {
        let spec = ModelSpec::tiny();
        let clean = ModelState::init(&spec, 3).unwrap();
        let data = tiny_data(20);
        let noop = AugmentSpec {
            corruption: Corruption::Gaussian { mean: 0.0, std: 0.0 },
            seed: 1,
        };
        let r = robustness_suite(&spec, &clean, &clean, &data, &[noop]).unwrap();
        let e = evaluate(&spec, &clean, &data, 0.1).unwrap();
        assert_eq!(r.rows[0].clean_mae, e.mae);
        assert_eq!(r.rows[0].clean_mae, r.rows[0].aug_mae);
        assert!(matches!(
            robustness_suite(&spec, &clean, &clean, &data, &[]),
            Err(EvalError::EmptySuite)
        ));
    }

    #[test]
    fn grid_geometry_and_normalization() {
        let spec = ModelSpec::tiny();
        let state = ModelState::init(&spec, 3).unwrap();
        let mut img = Image::filled(8, 8, 0.2, Provenance::Synthetic);
        for r in 0..8 {
            img.set_pixel(r, r, [0.9, 0.1, 0.5]);
        }
        // layer 2 is the first conv: 2 channels of 8x8
        let g = feature_maps(&spec, &state, &img, 2).unwrap();
        assert_eq!((g.channels, g.cols, g.image.width, g.image.height), (2, 2, 17, 8));
        for c in 0..2 {
            let t = g.tile(c);
            assert!(t.contains(&0.0) && t.contains(&1.0));
        }
        let flat = spec.layers.iter().position(|l| matches!(l, nn::Layer::Flatten)).unwrap();
        assert!(matches!(
            feature_maps(&spec, &state, &img, flat + 2),
            Err(EvalError::NonSpatial { .. })
        ));
        assert!(matches!(
            feature_maps(&spec, &state, &img, 99),
            Err(EvalError::LayerIndex { .. })
        ));
    }

    #[test]
    fn zero_input_gives_uniform_tiles() {
        let spec = ModelSpec::tiny();
        let mut state = ModelState::init(&spec, 3).unwrap();
        for p in &mut state.params {
            p.bias.data_mut().fill(0.0);
        }
        let g = feature_maps(&spec, &state, &Image::filled(8, 8, 0.0, Provenance::Synthetic), 3).unwrap();
        for c in 0..g.channels {
            assert!(g.tile(c).iter().all(|&v| v == 0.0));
        }
    }
}
