use std::collections::BTreeSet;

use img2joint::arm_sim::{self, ArmConfig, CameraConfig, LABEL_LIMIT};
use img2joint::augment::{self, AugmentSpec, Corruption};
use img2joint::cli::RunConfig;
use img2joint::evalreport::{EvalReport, Histogram};
use img2joint::nn::Tensor;
use img2joint::raster::{self, Image, Provenance};
use img2joint::train::Preset;
use proptest::prelude::*;

fn image_from(w: usize, h: usize, values: &[f32]) -> Image {
    let data = (0..w * h * 3).map(|i| values[i % values.len()]).collect();
    Image::from_tensor(Tensor::from_vec(&[h, w, 3], data).unwrap(), Provenance::Synthetic)
}

fn bits(img: &Image) -> BTreeSet<[u32; 3]> {
    img.data
        .data()
        .chunks(3)
        .map(|p| [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()])
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantize_round_trip_error(v in 0.0f32..=1.0) {
        let back = raster::dequantize(raster::quantize(v));
        prop_assert!((back as f64 - v as f64).abs() <= 1.0 / 510.0 + 1e-7);
    }

    #[test]
    fn resize_keeps_distinct_values(
        values in prop::collection::vec(0.0f32..=1.0, 1..12),
        w in 1usize..20, h in 1usize..20, tw in 1usize..30, th in 1usize..30,
    ) {
        let img = image_from(w, h, &values);
        let out = raster::resize_nearest(&img, tw, th);
        prop_assert!(bits(&out).is_subset(&bits(&img)));
        if tw >= w && th >= h {
            prop_assert_eq!(bits(&out), bits(&img));
        }
    }

    #[test]
    fn gamma_is_monotone(a in 0.0f32..=1.0, b in 0.0f32..=1.0, gamma in 0.05f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let img = image_from(2, 1, &[lo, lo, lo, hi, hi, hi]);
        let out = augment::apply(&img, &AugmentSpec { corruption: Corruption::Gamma { gamma }, seed: 0 }).unwrap();
        prop_assert!(out.pixel(0, 0)[0] <= out.pixel(0, 1)[0]);
    }

    #[test]
    fn corruptions_stay_in_unit_range(
        values in prop::collection::vec(0.0f32..=1.0, 1..8),
        kind in 0usize..5, seed in any::<u64>(), p in 0.0f64..1.0,
    ) {
        let corruption = match kind {
            0 => Corruption::Gaussian { mean: 0.1, std: p },
            1 => Corruption::Speckle { mean: 0.0, std: 3.0 * p },
            2 => Corruption::Impulse { prob: p },
            3 => Corruption::Gamma { gamma: 0.1 + 4.0 * p },
            _ => Corruption::Occlusion { side: None },
        };
        let out = augment::apply(&image_from(9, 7, &values), &AugmentSpec { corruption, seed }).unwrap();
        prop_assert!(out.data.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn histogram_rebinning_reproduces_counts(
        errors in prop::collection::vec(0.0f64..3.0, 1..200), width in 0.001f64..0.5,
    ) {
        let hist = Histogram::from_errors(&errors, width).unwrap();
        prop_assert_eq!(hist.total(), errors.len());
        let edges = hist.edges();
        for (i, &c) in hist.counts.iter().enumerate() {
            let n = errors.iter().filter(|&&e| (e / width).floor() as usize == i).count();
            prop_assert_eq!(n, c);
            prop_assert!(edges[i] < edges[i + 1]);
        }
    }

    #[test]
    fn mae_never_exceeds_rmse(
        pairs in prop::collection::vec((-11.0f64..11.0, -11.0f64..11.0), 1..100),
    ) {
        let names: Vec<String> = (0..pairs.len()).map(|i| i.to_string()).collect();
        let (labels, preds): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = EvalReport::from_predictions(&names, &labels, &preds, 0.025, 0.0).unwrap();
        prop_assert!(r.mae <= r.mse.sqrt() * (1.0 + 1e-12) + 1e-300);
        let mae: f64 = r.items.iter().map(|i| i.abs_error).sum::<f64>() / r.items.len() as f64;
        prop_assert_eq!(mae, r.mae);
    }

    #[test]
    fn config_round_trips(
        seed in any::<u64>(), lr in 1e-9f64..1.0, batch in 1usize..64,
        gain in 0.01f64..0.25, fov in 10.0f64..170.0, paper in any::<bool>(), suite_len in 0usize..7,
    ) {
        let mut c = RunConfig::preset(if paper { Preset::Paper } else { Preset::Desk });
        c.seed = seed;
        c.train.seed = seed;
        c.train.stage1.lr = lr;
        c.train.stage2.lr = lr / 7.0;
        c.train.batch = batch;
        c.arm.motor_to_curvature_gain = gain;
        c.camera.horizontal_fov = fov;
        c.augment_suite.truncate(suite_len);
        let text = c.dump();
        let back = RunConfig::parse(&text, None).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.dump(), text);
    }

    #[test]
    fn arm_shape_is_pure(q in -LABEL_LIMIT..LABEL_LIMIT) {
        let (arm, cam) = (ArmConfig::default(), CameraConfig::default());
        prop_assert_eq!(arm_sim::arm_shape(q, &arm, &cam).unwrap(), arm_sim::arm_shape(q, &arm, &cam).unwrap());
    }
}

#[test]
fn chord_identity_over_fifty_angles() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
    let length = 0.4;
    for _ in 0..50 {
        let theta: f64 = rng.random_range(1e-3..std::f64::consts::PI);
        let pts = arm_sim::backbone_world(theta, length, 2);
        let d = ((pts[1][0] - pts[0][0]).powi(2) + (pts[1][1] - pts[0][1]).powi(2)).sqrt();
        // independent oracle: chord of a circle of radius L / theta
        let oracle = 2.0 * (length / theta) * (theta / 2.0).sin();
        assert!((d - oracle).abs() / oracle < 1e-6, "theta {theta}");
        assert!((arm_sim::chord_length(theta, length) - oracle).abs() / oracle < 1e-12);
    }
}

#[test]
fn tip_column_is_strictly_monotone_in_q() {
    let (arm, cam) = (ArmConfig::default(), CameraConfig::default());
    let steps = 2000;
    let cols: Vec<f64> = (0..=steps)
        .map(|i| {
            let q = -LABEL_LIMIT + 2.0 * LABEL_LIMIT * i as f64 / steps as f64;
            arm_sim::arm_shape(q, &arm, &cam).unwrap().tip()[0]
        })
        .collect();
    let increasing = cols[steps] > cols[0];
    for w in cols.windows(2) {
        assert!(if increasing { w[1] > w[0] } else { w[1] < w[0] });
    }
}

#[test]
fn render_stays_in_unit_range() {
    let cam = CameraConfig::default().with_resolution(64, 48);
    for q in [-LABEL_LIMIT, -3.0, 0.0, 1.0, LABEL_LIMIT] {
        let img = raster::render(&arm_sim::arm_shape(q, &ArmConfig::default(), &cam).unwrap(), &cam);
        assert!(img.data.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
