//! Seeded image corruptions: additive Gaussian, multiplicative speckle,
//! salt-and-pepper impulses, gamma illumination changes and square
//! occlusion.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::raster::{Image, Provenance};
use crate::rng;
use crate::train::{Dataset, ImageSource, Sample, TrainError};

/// Fill shade of the occluding square.
pub const OCCLUDER_SHADE: f32 = 0.2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AugmentError {
    #[error("{field} = {value} is invalid: {reason}")]
    Field {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("occlusion side {side} does not fit a {width}x{height} image")]
    OcclusionSide { side: usize, width: usize, height: usize },
    #[error("augmented dataset would hold {requested} items (limit {limit})")]
    TooManyItems { requested: usize, limit: usize },
    #[error("cannot parse corruption `{0}`")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corruption {
    /// `out = clamp(in + N(mean, std²))` per pixel-channel.
    Gaussian { mean: f64, std: f64 },
    /// `out = clamp(in * (1 + N(mean, std²)))` per pixel-channel.
    Speckle { mean: f64, std: f64 },
    /// Each pixel becomes black or white (even odds) with probability `prob`.
    Impulse { prob: f64 },
    /// `out = in^gamma`.
    Gamma { gamma: f64 },
    /// Axis-aligned square at a uniform random position, filled with
    /// [`OCCLUDER_SHADE`]. `None` means `ceil(width / 3)`.
    Occlusion { side: Option<usize> },
}

impl Corruption {
    pub fn kind(&self) -> &'static str {
        match self {
            Corruption::Gaussian { .. } => "gaussian",
            Corruption::Speckle { .. } => "speckle",
            Corruption::Impulse { .. } => "impulse",
            Corruption::Gamma { .. } => "gamma",
            Corruption::Occlusion { .. } => "occlusion",
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let field = |field, value, reason| Err(AugmentError::Field { field, value, reason });
        match *self {
            Corruption::Gaussian { mean, std } | Corruption::Speckle { mean, std } => {
                if !mean.is_finite() {
                    return field("gaussian_mean", mean, "must be finite");
                }
                if !(std >= 0.0 && std.is_finite()) {
                    return field("gaussian_std", std, "must be non-negative and finite");
                }
            }
            Corruption::Impulse { prob } => {
                if !(0.0..=1.0).contains(&prob) {
                    return field("impulse_prob", prob, "must lie in [0, 1]");
                }
            }
            Corruption::Gamma { gamma } => {
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return field("gamma", gamma, "must be positive and finite");
                }
            }
            Corruption::Occlusion { side } => {
                if side == Some(0) {
                    return field("occlusion_side", 0.0, "must be at least 1");
                }
            }
        }
        Ok(())
    }
}

/// Token form used in run configs, e.g. `gaussian:0:0.01`, `impulse:0.01`,
/// `gamma:2`, `occlusion:auto`, `occlusion:64`.
impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::Gaussian { mean, std } => write!(f, "gaussian:{mean}:{std}"),
            Corruption::Speckle { mean, std } => write!(f, "speckle:{mean}:{std}"),
            Corruption::Impulse { prob } => write!(f, "impulse:{prob}"),
            Corruption::Gamma { gamma } => write!(f, "gamma:{gamma}"),
            Corruption::Occlusion { side: None } => write!(f, "occlusion:auto"),
            Corruption::Occlusion { side: Some(s) } => write!(f, "occlusion:{s}"),
        }
    }
}

impl FromStr for Corruption {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AugmentError::Parse(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| parts.get(i).and_then(|p| p.parse::<f64>().ok()).ok_or_else(err);
        let c = match (parts[0], parts.len()) {
            ("gaussian", 3) => Corruption::Gaussian { mean: num(1)?, std: num(2)? },
            ("speckle", 3) => Corruption::Speckle { mean: num(1)?, std: num(2)? },
            ("impulse", 2) => Corruption::Impulse { prob: num(1)? },
            ("gamma", 2) => Corruption::Gamma { gamma: num(1)? },
            ("occlusion", 2) if parts[1] == "auto" => Corruption::Occlusion { side: None },
            ("occlusion", 2) => Corruption::Occlusion {
                side: Some(parts[1].parse().map_err(|_| err())?),
            },
            _ => return Err(err()),
        };
        c.validate()?;
        Ok(c)
    }
}

/// Gamma preset that brightens (`in^0.2`).
pub const GAMMA_BRIGHT: f64 = 0.2;
/// Alternative gamma preset (`in^0.5`).
pub const GAMMA_HALF: f64 = 0.5;
/// Gamma preset that darkens (`in^2`).
pub const GAMMA_DARK: f64 = 2.0;

/// The seven corruption instances used to build the augmented training
/// set: Gaussian, speckle, impulse, three gamma levels and occlusion.
pub fn default_suite() -> Vec<Corruption> {
    vec![
        Corruption::Gaussian { mean: 0.0, std: 0.01 },
        Corruption::Speckle { mean: 0.0, std: 0.01 },
        Corruption::Impulse { prob: 0.01 },
        Corruption::Gamma { gamma: GAMMA_BRIGHT },
        Corruption::Gamma { gamma: GAMMA_HALF },
        Corruption::Gamma { gamma: GAMMA_DARK },
        Corruption::Occlusion { side: None },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub corruption: Corruption,
    pub seed: u64,
}

/// Side actually used for an occlusion on a `width`-wide image.
pub fn occlusion_side(side: Option<usize>, width: usize) -> usize {
    side.unwrap_or(width.div_ceil(3))
}

pub fn apply(img: &Image, spec: &AugmentSpec) -> Result<Image, AugmentError> {
    spec.corruption.validate()?;
    let mut out = img.clone();
    out.provenance = Provenance::Augmented;
    let mut rng = rng::stream(spec.seed, &[0xa06]);
    match spec.corruption {
        Corruption::Gaussian { mean, std } | Corruption::Speckle { mean, std } => {
            if std == 0.0 && mean == 0.0 {
                return Ok(out);
            }
            let normal = Normal::new(mean, std).expect("validated");
            let additive = matches!(spec.corruption, Corruption::Gaussian { .. });
            for v in out.data.data_mut() {
                let n = normal.sample(&mut rng);
                let x = *v as f64;
                let y = if additive { x + n } else { x * (1.0 + n) };
                *v = y.clamp(0.0, 1.0) as f32;
            }
        }
        Corruption::Impulse { prob } => {
            for px in out.data.data_mut().chunks_exact_mut(3) {
                if rng.random::<f64>() < prob {
                    let salt = rng.random::<bool>();
                    px.fill(if salt { 1.0 } else { 0.0 });
                }
            }
        }
        Corruption::Gamma { gamma } => {
            if gamma != 1.0 {
                for v in out.data.data_mut() {
                    *v = (*v as f64).powf(gamma).clamp(0.0, 1.0) as f32;
                }
            }
        }
        Corruption::Occlusion { side } => {
            let (w, h) = (img.width(), img.height());
            let side = occlusion_side(side, w);
            if side == 0 || side > w.min(h) {
                return Err(AugmentError::OcclusionSide { side, width: w, height: h });
            }
            let x0 = rng.random_range(0..=w - side);
            let y0 = rng.random_range(0..=h - side);
            for r in y0..y0 + side {
                for c in x0..x0 + side {
                    out.set_pixel(r, c, [OCCLUDER_SHADE; 3]);
                }
            }
        }
    }
    Ok(out)
}

/// Seed of the corrupted copy `copy` of item `item` under suite entry `spec`.
pub fn item_seed(master: u64, item: usize, spec: usize, copy: usize) -> u64 {
    rng::derive_seed(master, &[item as u64, spec as u64, copy as u64])
}

/// Base items followed by `copies` corrupted variants of every base item
/// for each suite entry (suite-major, then copy, then item). Labels carry
/// over and each variant inherits its source item's split membership.
pub fn build_augmented_dataset(
    base: &Dataset,
    suite: &[Corruption],
    copies: usize,
    master_seed: u64,
    max_items: usize,
) -> Result<Dataset, TrainError> {
    if base.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for c in suite {
        c.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    }
    let n = base.len();
    let requested = suite
        .len()
        .checked_mul(copies)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_add(n))
        .unwrap_or(usize::MAX);
    if requested > max_items {
        return Err(TrainError::InvalidConfig(
            AugmentError::TooManyItems { requested, limit: max_items }.to_string(),
        ));
    }

    let mut jobs = Vec::new();
    for (si, _) in suite.iter().enumerate() {
        for copy in 0..copies {
            for item in 0..n {
                jobs.push((si, copy, item));
            }
        }
    }
    let variants = jobs
        .par_iter()
        .map(|&(si, copy, item)| {
            let spec = AugmentSpec {
                corruption: suite[si],
                seed: item_seed(master_seed, item, si, copy),
            };
            let img = apply(&*base.image(item)?, &spec).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            let src = &base.items[item];
            let stem = src.name.strip_suffix(".ppm").unwrap_or(&src.name);
            Ok(Sample {
                name: format!("{stem}_{}{si}c{copy}.ppm", suite[si].kind()),
                source: ImageSource::Memory(img),
                label: src.label,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let mut membership = vec![0u8; n];
    for (list, tag) in [(&base.split.train, 0u8), (&base.split.val, 1), (&base.split.test, 2)] {
        for &i in list {
            membership[i] = tag;
        }
    }
    let mut split = base.split.clone();
    for (k, &(_, _, item)) in jobs.iter().enumerate() {
        let idx = n + k;
        match membership[item] {
            0 => split.train.push(idx),
            1 => split.val.push(idx),
            _ => split.test.push(idx),
        }
    }

    let mut items = base.items.clone();
    items.extend(variants);
    Dataset::with_split(items, base.resolution, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::train::Split;

    fn ramp(w: usize, h: usize) -> Image {
        let data = (0..w * h * 3).map(|i| (i % 251) as f32 / 251.0 * 0.98 + 0.01).collect();
        Image::from_tensor(Tensor::from_vec(&[h, w, 3], data).unwrap(), Provenance::Synthetic)
    }

    fn spec(c: Corruption) -> AugmentSpec {
        AugmentSpec { corruption: c, seed: 99 }
    }

    #[test]
    fn unit_gamma_is_identity() {
        let img = ramp(17, 9);
        let out = apply(&img, &spec(Corruption::Gamma { gamma: 1.0 })).unwrap();
        assert!(out.data.bit_eq(&img.data));
    }

    #[test]
    fn gamma_two_squares() {
        let img = Image::filled(2, 2, 0.25, Provenance::Synthetic);
        let out = apply(&img, &spec(Corruption::Gamma { gamma: 2.0 })).unwrap();
        assert!(out.data.data().iter().all(|&v| v == 0.0625));
    }

    #[test]
    fn zero_std_gaussian_is_identity() {
        let img = ramp(8, 8);
        let out = apply(&img, &spec(Corruption::Gaussian { mean: 0.0, std: 0.0 })).unwrap();
        assert_eq!(out.data, img.data);
    }

    #[test]
    fn invalid_fields_are_named() {
        let img = ramp(8, 8);
        let err = apply(&img, &spec(Corruption::Impulse { prob: 1.5 })).unwrap_err();
        assert!(matches!(err, AugmentError::Field { field: "impulse_prob", .. }));
        let err = apply(&img, &spec(Corruption::Gamma { gamma: 0.0 })).unwrap_err();
        assert!(matches!(err, AugmentError::Field { field: "gamma", .. }));
        let err = apply(&img, &spec(Corruption::Gaussian { mean: 0.0, std: -1.0 })).unwrap_err();
        assert!(matches!(err, AugmentError::Field { field: "gaussian_std", .. }));
        let err = apply(&img, &spec(Corruption::Occlusion { side: Some(9) })).unwrap_err();
        assert!(matches!(err, AugmentError::OcclusionSide { .. }));
    }

    #[test]
    fn occlusion_touches_exactly_a_square() {
        let img = ramp(40, 30);
        let out = apply(&img, &spec(Corruption::Occlusion { side: None })).unwrap();
        let changed = img
            .data
            .data()
            .chunks(3)
            .zip(out.data.data().chunks(3))
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 14 * 14);
    }

    #[test]
    fn same_seed_same_noise() {
        let img = ramp(16, 16);
        let s = spec(Corruption::Speckle { mean: 0.0, std: 0.05 });
        assert_eq!(apply(&img, &s).unwrap(), apply(&img, &s).unwrap());
        let other = AugmentSpec { seed: 100, ..s };
        assert_ne!(apply(&img, &s).unwrap(), apply(&img, &other).unwrap());
    }

    #[test]
    fn token_round_trip() {
        for c in default_suite() {
            assert_eq!(c.to_string().parse::<Corruption>().unwrap(), c);
        }
        assert_eq!("occlusion:64".parse::<Corruption>().unwrap(), Corruption::Occlusion { side: Some(64) });
        assert!("blur:3".parse::<Corruption>().is_err());
        assert!("impulse:2".parse::<Corruption>().is_err());
    }

    fn tiny_base(n: usize) -> Dataset {
        let items = (0..n)
            .map(|i| Sample {
                name: format!("b{i}.ppm"),
                source: ImageSource::Memory(Image::filled(4, 4, 0.5, Provenance::Synthetic)),
                label: i as f64 * 0.01,
            })
            .collect();
        Dataset::new(items, (4, 4)).unwrap()
    }

    #[test]
    fn empty_suite_returns_base() {
        let base = tiny_base(10);
        let out = build_augmented_dataset(&base, &[], 1, 5, 1000).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn seven_instances_of_a_thousand() {
        let base = tiny_base(1000);
        let out = build_augmented_dataset(&base, &default_suite(), 1, 5, 100_000).unwrap();
        assert_eq!(out.len(), 8000);
        assert_eq!(out.split.train.len(), 6400);
        assert_eq!(out.items[1000 + 3].label, base.items[3].label);
        // a test item's variants stay in test
        assert!(out.split.test.contains(&(1000 + 950)));
    }

    #[test]
    fn augmented_dataset_is_reproducible_and_guarded() {
        let base = tiny_base(20);
        let a = build_augmented_dataset(&base, &default_suite(), 2, 5, 1000).unwrap();
        let b = build_augmented_dataset(&base, &default_suite(), 2, 5, 1000).unwrap();
        assert_eq!(a, b);
        let err = build_augmented_dataset(&base, &default_suite(), 2, 5, 100).unwrap_err();
        assert!(matches!(err, TrainError::InvalidConfig(_)));
    }

    #[test]
    fn split_membership_is_inherited() {
        let base = tiny_base(10);
        let out = build_augmented_dataset(&base, &[Corruption::Impulse { prob: 0.5 }], 1, 1, 100).unwrap();
        let expected = Split {
            train: (0..8).chain(10..18).collect(),
            val: vec![8, 18],
            test: vec![9, 19],
        };
        assert_eq!(out.split, expected);
    }
}
