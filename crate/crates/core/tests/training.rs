use img2joint::arm_sim::ArmConfig;
use img2joint::nn::{self, ModelSpec, ModelState};
use img2joint::train::{self, Dataset, Preset, PretrainConfig, Split, StageConfig, TrainConfig};

fn data(n: usize, seed: u64) -> Dataset {
    train::generate_dataset(n, &ArmConfig::default(), &Preset::Desk.camera(), seed).unwrap()
}

fn quick_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::preset(Preset::Desk);
    cfg.stage1 = StageConfig { lr: 1e-3, epochs: 4 };
    cfg.stage2 = StageConfig { lr: 1e-4, epochs: 1 };
    cfg.pretrain = PretrainConfig { images: 24, epochs: 1, lr: 1e-3, seed: 3 };
    cfg
}

fn base(spec: &ModelSpec, cfg: &TrainConfig) -> ModelState<f32> {
    let aux = train::auxiliary_dataset(&ArmConfig::default(), &Preset::Desk.camera(), &cfg.pretrain).unwrap();
    train::pretrain_base(spec, &aux, &cfg.pretrain, cfg.batch, &cfg.adam).unwrap()
}

#[test]
fn loss_sequence_is_deterministic() {
    let spec = Preset::Desk.model_spec();
    let cfg = quick_cfg();
    let d = data(40, 1);
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let b = base(&spec, &cfg);
            let (state, report) = train::train_two_stage(&spec, &b, &d, &cfg).unwrap();
            let losses: Vec<(u64, u64)> = report
                .stages
                .iter()
                .flat_map(|s| &s.epochs)
                .map(|e| (e.train_mse.to_bits(), e.val_mse.to_bits()))
                .collect();
            (nn::encode_weights(&spec, &state), losses, report.best)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].1.len(), 5);
}

#[test]
fn best_state_matches_reported_validation() {
    let spec = Preset::Desk.model_spec();
    let cfg = quick_cfg();
    let d = data(40, 2);
    let (state, report) = train::train_two_stage(&spec, &base(&spec, &cfg), &d, &cfg).unwrap();
    let prepared = train::prepare(&spec, &d).unwrap();
    let refs: Vec<_> = d.split.val.iter().map(|&i| &prepared.inputs[i]).collect();
    let preds = train::predict_inputs(&spec, &state, &refs, 0, 7).unwrap();
    let mse = preds.iter().zip(&d.split.val).map(|(p, &i)| (p - prepared.labels[i]).powi(2)).sum::<f64>()
        / preds.len() as f64;
    assert!((mse - report.best.2).abs() <= 1e-9 * mse.max(1.0), "{mse} vs {}", report.best.2);
}

#[test]
fn split_is_a_pure_function_of_order() {
    let d = data(37, 3);
    assert_eq!(d.split, Split::contiguous(37));
    assert_eq!(data(37, 3).split, d.split);
    assert_eq!((d.split.train.len(), d.split.val.len(), d.split.test.len()), (29, 3, 5));
}

#[test]
fn fine_tuning_does_not_regress_at_desk_scale() {
    let spec = Preset::Desk.model_spec();
    let cfg = TrainConfig::preset(Preset::Desk);
    let d = data(200, cfg.seed);
    let (_, report) = train::train_two_stage(&spec, &base(&spec, &cfg), &d, &cfg).unwrap();
    let last = |s: usize| report.stages[s].epochs.last().unwrap().val_mse;
    assert!(last(1) <= 1.1 * last(0), "stage 2 {} vs stage 1 {}", last(1), last(0));
    assert_eq!(report.freeze_checks, 36);
}

#[test]
fn weights_survive_a_file_round_trip() {
    let spec = Preset::Desk.model_spec();
    let state = ModelState::<f32>::init(&spec, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.a2j");
    nn::save_weights(&spec, &state, &path).unwrap();
    let back = nn::load_weights(&spec, &path).unwrap();
    assert!(back.params.iter().zip(&state.params).all(|(a, b)| a.bit_eq(b)));
    assert!(nn::load_weights(&ModelSpec::tiny(), &path).is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let d = data(12, 4);
    let dir = tempfile::tempdir().unwrap();
    d.save(dir.path()).unwrap();
    let back = Dataset::load_dir(dir.path()).unwrap().materialize().unwrap();
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.resolution, d.resolution);
    for i in 0..d.len() {
        let (a, b) = (d.image(i).unwrap(), back.image(i).unwrap());
        let worst = a
            .data
            .data()
            .iter()
            .zip(b.data.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1.0 / 510.0 + 1e-6);
    }
}
