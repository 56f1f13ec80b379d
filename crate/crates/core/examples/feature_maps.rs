//! Exports the output of the first block (layer 4) as a PGM tile grid, at
//! the full-size preset with untrained weights and at the desk preset after
//! a short pretraining.
//!
//! ```text
//! cargo run --release --example feature_maps -- out_dir
//! ```

use std::path::PathBuf;

use img2joint::arm_sim::{self, ArmConfig};
use img2joint::evalreport::{self, DEFAULT_FEATURE_LAYER};
use img2joint::nn::ModelState;
use img2joint::raster;
use img2joint::train::{self, Preset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "feature_maps".into()));
    std::fs::create_dir_all(&out)?;
    let arm = ArmConfig::default();

    for preset in [Preset::Paper, Preset::Desk] {
        let spec = preset.model_spec();
        let cam = preset.camera();
        let state = match preset {
            Preset::Paper => ModelState::init(&spec, 1)?,
            Preset::Desk => {
                let cfg = TrainConfig::preset(preset);
                let aux = train::auxiliary_dataset(&arm, &cam, &cfg.pretrain)?;
                train::pretrain_base(&spec, &aux, &cfg.pretrain, cfg.batch, &cfg.adam)?
            }
        };
        let img = raster::render(&arm_sim::arm_shape(-5.0, &arm, &cam)?, &cam);
        for layer in [2, DEFAULT_FEATURE_LAYER, 7] {
            let grid = evalreport::feature_maps(&spec, &state, &img, layer)?;
            let path = out.join(format!("{}_layer{layer}.pgm", preset.name()));
            raster::write_pgm(&grid.image, &path)?;
            println!(
                "{:<5} layer {layer:>2} ({}): {:>3} tiles of {}x{} -> {}",
                preset.name(),
                spec.layers[layer - 2].kind(),
                grid.channels,
                grid.tile_height,
                grid.tile_width,
                path.display()
            );
        }
    }
    Ok(())
}
