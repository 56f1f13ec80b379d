//! Trains briefly, saves the weights, then predicts the joint value of
//! rendered scenes read back from disk.

use img2joint::arm_sim::{self, ArmConfig};
use img2joint::evalreport;
use img2joint::nn;
use img2joint::raster;
use img2joint::train::{self, Preset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile_dir()?;
    let cfg = TrainConfig::preset(Preset::Desk);
    let spec = Preset::Desk.model_spec();
    let (arm, cam) = (ArmConfig::default(), Preset::Desk.camera());

    let data = train::generate_dataset(200, &arm, &cam, cfg.seed)?;
    let aux = train::auxiliary_dataset(&arm, &cam, &cfg.pretrain)?;
    let base = train::pretrain_base(&spec, &aux, &cfg.pretrain, cfg.batch, &cfg.adam)?;
    let (state, _) = train::train_two_stage(&spec, &base, &data, &cfg)?;
    let weights = dir.join("weights.a2j");
    nn::save_weights(&spec, &state, &weights)?;
    let state = nn::load_weights(&spec, &weights)?;

    for q in [-9.0, -4.5, 0.0, 2.25, 7.0] {
        let path = dir.join(format!("scene_{q}.ppm"));
        raster::write_ppm(&raster::render(&arm_sim::arm_shape(q, &arm, &cam)?, &cam), &path)?;
        let (q_hat, secs) = evalreport::predict(&spec, &state, &path)?;
        println!("q {q:+.3}  predicted {q_hat:+.3}  error {:.3} rad  {:.1} ms", (q_hat - q).abs(), secs * 1e3);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("img2joint-predict-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
