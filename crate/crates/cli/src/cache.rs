use std::path::{Path, PathBuf};

use moire_core::coupling::{SampledInterlayerCoupling, CACHE_VERSION};
use moire_core::engine::Engine;
use moire_core::hamiltonian::{valley_anchor, MomentumHamiltonian};
use moire_core::hopping::InterlayerModel;
use moire_core::Result;
use serde_json::json;

use crate::output::sha256_hex;

/// File name derived from everything the samples depend on. The file itself
/// carries its own keys, which are checked again on load.
pub fn cache_path(dir: &Path, engine: &Engine, valley: usize) -> PathBuf {
    let t = engine.geom.theta_matrix;
    let key = json!({
        "version": CACHE_VERSION,
        "valley": valley,
        "theta": [t[(0, 0)], t[(1, 0)], t[(0, 1)], t[(1, 1)]],
        "interlayer": engine.model.interlayer,
        "options": engine.coupling_options(),
        "field": engine.field.as_ref().map(|u| u.to_json()),
    });
    let h = sha256_hex(key.to_string().as_bytes());
    dir.join(format!("coupling_v{valley}_{}.json", &h[..16]))
}

/// Loads the sampled coupling from the cache when present, otherwise samples
/// it and stores it.
pub fn sample(engine: &Engine, valley: usize, dir: Option<&Path>) -> Result<(SampledInterlayerCoupling, bool)> {
    let Some(dir) = dir else {
        return Ok((engine.sample(valley)?, false));
    };
    let path = cache_path(dir, engine, valley);
    if path.is_file() {
        let im = InterlayerModel::for_geometry(engine.model.interlayer.clone(), &engine.geom)?;
        let anchor = valley_anchor(&engine.geom, valley);
        let s = SampledInterlayerCoupling::load(&path, &im, &engine.geom, anchor, &engine.coupling_options(), engine.is_relaxed())?;
        log::info!("loaded coupling samples from {}", path.display());
        return Ok((s, true));
    }
    std::fs::create_dir_all(dir)?;
    let s = engine.sample(valley)?;
    s.save(&path)?;
    log::info!("stored coupling samples in {}", path.display());
    Ok((s, false))
}

pub fn hamiltonian(engine: &Engine, valley: usize, dir: Option<&Path>) -> Result<MomentumHamiltonian> {
    let (s, _) = sample(engine, valley, dir)?;
    engine.valley_with(valley, s)
}
