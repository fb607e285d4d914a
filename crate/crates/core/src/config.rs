//! Run configuration: one JSON document, unknown keys rejected, every
//! default filled in by serde so `--print-config` shows the effective run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, TruncationConfig};
use crate::error::{Error, Result};
use crate::geometry::{make_twisted_pair, BilayerGeometry, Lattice2D, RotationConvention, GRAPHENE_A};
use crate::hopping::ModelFile;
use crate::observables::DosOptions;
use crate::relaxation::{relax, DisplacementField, ElasticityTensor, GsfeModel, RelaxOptions};

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_a")]
    pub a: f64,
    pub theta_deg: f64,
    #[serde(default)]
    pub convention: RotationConvention,
}

fn default_a() -> f64 {
    GRAPHENE_A
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    #[default]
    NearestNeighbor,
    FiveShell,
}

/// Either a model file or a built-in preset; the file wins when both are set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub preset: ModelPreset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelaxationConfig {
    None {},
    Solve {
        #[serde(default = "GsfeModel::graphene_illustrative")]
        gsfe: GsfeModel,
        #[serde(default = "ElasticityTensor::graphene")]
        elasticity: ElasticityTensor,
        #[serde(default)]
        options: RelaxOptions,
    },
    Field {
        file: PathBuf,
    },
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        Self::None {}
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    #[serde(default = "default_pps")]
    pub points_per_segment: usize,
    #[serde(default = "default_valley")]
    pub valley: usize,
}

fn default_pps() -> usize {
    24
}
fn default_valley() -> usize {
    1
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { points_per_segment: default_pps(), valley: default_valley() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesConfig {
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub dos: DosOptions,
}

/// Λ values in units of the shortest moiré reciprocal vector, τ in Å⁻¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default = "default_lambda_units")]
    pub lambda_units: Vec<f64>,
    #[serde(default = "default_tau_sweep")]
    pub tau: Vec<f64>,
}

pub fn default_lambda_units() -> Vec<f64> {
    vec![2.0, 3.0, 4.0, 5.0, 6.0]
}

pub fn default_tau_sweep() -> Vec<f64> {
    (2..=12).map(f64::from).collect()
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { lambda_units: default_lambda_units(), tau: default_tau_sweep() }
    }
}

/// Commensurate cross-check against the real-space supercell. Uses its own
/// (m, n) angle; Λ and τ are the engine defaults times the given scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "default_m")]
    pub m: i64,
    #[serde(default = "default_n")]
    pub n: i64,
    #[serde(default = "default_scale")]
    pub lambda_scale: f64,
    #[serde(default = "default_scale")]
    pub tau_scale: f64,
    /// Eigenvalues with |E| below this (eV) are compared.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Path samples per segment, or the number of probe momenta.
    #[serde(default = "default_kpoints")]
    pub kpoints: usize,
    #[serde(default)]
    pub sampling: ValidationSampling,
    #[serde(default = "default_val_epsilon")]
    pub dos_epsilon: f64,
}

/// Where the supercell spectrum is probed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSampling {
    /// The moiré high-symmetry path of valley 1, folded into the supercell zone.
    #[default]
    Path,
    /// Quasi-random momenta over the supercell zone, offset by `seed`.
    Probe,
}

fn default_m() -> i64 {
    1
}
fn default_n() -> i64 {
    2
}
fn default_scale() -> f64 {
    2.0
}
fn default_window() -> f64 {
    1.0
}
fn default_kpoints() -> usize {
    8
}
fn default_val_epsilon() -> f64 {
    0.05
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            m: default_m(),
            n: default_n(),
            lambda_scale: default_scale(),
            tau_scale: default_scale(),
            window: default_window(),
            kpoints: default_kpoints(),
            sampling: ValidationSampling::default(),
            dos_epsilon: default_val_epsilon(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub relaxation: RelaxationConfig,
    #[serde(default)]
    pub observables: ObservablesConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(field_err(field, format!("must be positive and finite, got {x}")))
    }
}

impl RunConfig {
    /// Parses without touching the filesystem; relative paths stay as given.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| field_err("<document>", e.to_string()))
    }

    /// Parses, resolves relative paths against the config's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| field_err("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = self.model.file.as_mut() {
            fix(f);
        }
        if let RelaxationConfig::Field { file } = &mut self.relaxation {
            fix(file);
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("geometry.a", self.geometry.a)?;
        let th = self.geometry.theta_deg;
        if !(th > 0.0 && th <= 30.0) {
            return Err(field_err("geometry.theta_deg", format!("must lie in (0, 30], got {th}")));
        }
        if let Some(f) = &self.model.file {
            if !f.is_file() {
                return Err(field_err("model.file", format!("{} does not exist", f.display())));
            }
        }
        if let RelaxationConfig::Field { file } = &self.relaxation {
            if !file.is_file() {
                return Err(field_err("relaxation.file", format!("{} does not exist", file.display())));
            }
        }
        let t = &self.truncation;
        for (name, v) in [("truncation.lambda", t.lambda), ("truncation.tau", t.tau), ("truncation.tau_width", t.tau_width)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        if t.refinement == Some(0) {
            return Err(field_err("truncation.refinement", "must be at least 1"));
        }
        let geom = self.geometry()?;
        if let Some(l) = t.lambda {
            let limit = geom.homotopy_limit();
            if l > limit {
                return Err(field_err("truncation.lambda", format!("{l} exceeds the homotopy-safe limit {limit:.6}")));
            }
        }
        let p = &self.observables.path;
        if p.points_per_segment == 0 {
            return Err(field_err("observables.path.points_per_segment", "must be at least 1"));
        }
        if !(p.valley == 1 || p.valley == 2) {
            return Err(field_err("observables.path.valley", "must be 1 or 2"));
        }
        let d = &self.observables.dos;
        positive("observables.dos.epsilon", d.epsilon)?;
        if !(d.window[0] < d.window[1]) {
            return Err(field_err("observables.dos.window", "lower bound must be below the upper bound"));
        }
        if d.points < 2 {
            return Err(field_err("observables.dos.points", "must be at least 2"));
        }
        if d.nq < 2 || d.nq % 2 != 0 {
            return Err(field_err("observables.dos.nq", "must be an even number ≥ 2 (the noise estimate uses the half grid)"));
        }
        let c = &self.convergence;
        for (name, v) in [("convergence.lambda_units", &c.lambda_units), ("convergence.tau", &c.tau)] {
            if v.len() < 5 {
                return Err(field_err(name, "needs at least 5 points"));
            }
            for &x in v {
                positive(name, x)?;
            }
        }
        let v = &self.validation;
        if v.m <= 0 || v.n <= 0 || v.m == v.n {
            return Err(field_err("validation", "m and n must be distinct positive integers"));
        }
        positive("validation.lambda_scale", v.lambda_scale)?;
        positive("validation.tau_scale", v.tau_scale)?;
        positive("validation.window", v.window)?;
        positive("validation.dos_epsilon", v.dos_epsilon)?;
        if v.kpoints == 0 {
            return Err(field_err("validation.kpoints", "must be at least 1"));
        }
        Ok(())
    }

    pub fn monolayer(&self) -> Lattice2D {
        Lattice2D::graphene(self.geometry.a)
    }

    pub fn geometry(&self) -> Result<BilayerGeometry> {
        make_twisted_pair(&self.monolayer(), self.geometry.theta_deg.to_radians(), self.geometry.convention)
            .map_err(|e| field_err("geometry.theta_deg", e.to_string()))
    }

    pub fn model(&self) -> Result<ModelFile> {
        match &self.model.file {
            Some(path) => ModelFile::load(path).map_err(|e| field_err("model.file", format!("{}: {e}", path.display()))),
            None => Ok(match self.model.preset {
                ModelPreset::NearestNeighbor => ModelFile::nearest_neighbor(),
                ModelPreset::FiveShell => ModelFile::five_shell_illustrative(),
            }),
        }
    }

    /// The displacement field for this run: none, solved, or read from file.
    pub fn displacement(&self, geom: &BilayerGeometry) -> Result<Option<DisplacementField>> {
        match &self.relaxation {
            RelaxationConfig::None {} => Ok(None),
            RelaxationConfig::Solve { gsfe, elasticity, options } => Ok(Some(relax(gsfe, elasticity, geom, options)?.field)),
            RelaxationConfig::Field { file } => {
                let u = DisplacementField::load(file)
                    .map_err(|e| field_err("relaxation.file", format!("{}: {e}", file.display())))?;
                let dev = (u.theta_matrix - geom.theta_matrix).abs().max();
                if dev > 1e-9 * geom.theta_matrix.abs().max() {
                    return Err(field_err("relaxation.file", "G_basis does not match the configured geometry"));
                }
                Ok(Some(u))
            }
        }
    }

    pub fn engine(&self) -> Result<Engine> {
        let geom = self.geometry()?;
        let model = self.model()?;
        let u = self.displacement(&geom)?;
        Engine::new(geom, model, u, &self.truncation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"geometry": {"theta_deg": 1.1}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.geometry.a, GRAPHENE_A);
        assert_eq!(c.relaxation, RelaxationConfig::None {});
        assert_eq!(c.observables.dos.points, 801);
        assert_eq!(c.convergence.tau.len(), 11);
        c.validate().unwrap();
        let round = RunConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"geometry": {"theta_deg": 1.1, "thta": 2}}"#,
            r#"{"geometry": {"theta_deg": 1.1}, "seeed": 3}"#,
            r#"{"geometry": {"theta_deg": 1.1}, "relaxation": {"mode": "none", "x": 1}}"#,
            r#"{"geometry": {"theta_deg": 1.1}, "relaxation": {"mode": "solve", "gsfee": {}}}"#,
        ] {
            let e = RunConfig::parse(text).unwrap_err().to_string();
            assert!(e.contains("unknown field"), "{e}");
        }
    }

    #[test]
    fn field_level_diagnostics() {
        let bad = |patch: &str| {
            let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
            let p: serde_json::Value = serde_json::from_str(patch).unwrap();
            for (k, x) in p.as_object().unwrap() {
                v[k] = x.clone();
            }
            let c: RunConfig = serde_json::from_value(v).unwrap();
            match c.validate() {
                Err(Error::Config { field, .. }) => field,
                other => panic!("{other:?}"),
            }
        };
        assert_eq!(bad(r#"{"model": {"file": "/nonexistent/model.json"}}"#), "model.file");
        assert_eq!(bad(r#"{"truncation": {"lambda": 10.0}}"#), "truncation.lambda");
        assert_eq!(bad(r#"{"truncation": {"tau": -1.0}}"#), "truncation.tau");
        assert_eq!(bad(r#"{"geometry": {"theta_deg": 0.0}}"#), "geometry.theta_deg");
        assert_eq!(bad(r#"{"observables": {"dos": {"window": [0.1, -0.1]}}}"#), "observables.dos.window");
        assert_eq!(bad(r#"{"convergence": {"tau": [1, 2, 3]}}"#), "convergence.tau");
        assert_eq!(bad(r#"{"relaxation": {"mode": "field", "file": "/nonexistent/u.json"}}"#), "relaxation.file");
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut c = RunConfig::parse(r#"{"geometry": {"theta_deg": 1.0}, "model": {"file": "m.json"}}"#).unwrap();
        c.resolve_paths(Path::new("/etc/runs"));
        assert_eq!(c.model.file.unwrap(), PathBuf::from("/etc/runs/m.json"));
    }
}
