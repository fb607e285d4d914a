//! Builds per-valley momentum Hamiltonians from a geometry, a model and an
//! optional displacement field, filling in truncation defaults.

use serde::{Deserialize, Serialize};

use crate::coupling::{sample_interlayer, CouplingOptions, MeshSpec, SampledInterlayerCoupling};
use crate::error::{Error, Result};
use crate::geometry::BilayerGeometry;
use crate::hamiltonian::{intralayer_table, valley_anchor, MomentumHamiltonian};
use crate::hopping::{InterlayerModel, ModelFile};
use crate::momentum_basis::build_basis;
use crate::relaxation::DisplacementField;

/// Target node spacing of the sampled coupling, Å⁻¹.
const NODE_SPACING: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// Basis radius Λ in Å⁻¹; default min(4.5 |Θ₂₁|, 0.4 × homotopy limit).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Scattering cutoff τ in Å⁻¹; default 4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_width: Option<f64>,
    /// Coupling nodes per moiré reciprocal spacing; default keeps spacing ≤ 0.1 Å⁻¹.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshSpec>,
    /// Configuration grid for relaxed intralayer hoppings; 0 picks automatically.
    #[serde(default)]
    pub intralayer_grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Truncation {
    pub lambda: f64,
    pub tau: f64,
    pub tau_width: f64,
    pub refinement: usize,
    pub mesh: MeshSpec,
    pub intralayer_grid: usize,
}

pub const DEFAULT_TAU: f64 = 4.0;

pub fn default_lambda(geom: &BilayerGeometry) -> f64 {
    (4.5 * geom.moire_reciprocal_length()).min(0.4 * geom.homotopy_limit())
}

pub fn default_refinement(geom: &BilayerGeometry) -> usize {
    (geom.moire_reciprocal_length() / NODE_SPACING).ceil().max(1.0) as usize
}

impl TruncationConfig {
    pub fn resolve(&self, geom: &BilayerGeometry, model: &ModelFile) -> Result<Truncation> {
        let t = Truncation {
            lambda: self.lambda.unwrap_or_else(|| default_lambda(geom)),
            tau: self.tau.unwrap_or(DEFAULT_TAU),
            tau_width: self.tau_width.unwrap_or(0.5),
            refinement: self.refinement.unwrap_or_else(|| default_refinement(geom)),
            mesh: self.mesh.unwrap_or_else(|| MeshSpec::for_cutoff(model.interlayer.cutoff)),
            intralayer_grid: self.intralayer_grid,
        };
        if !(t.lambda > 0.0 && t.tau > 0.0 && t.tau_width > 0.0 && t.refinement > 0) {
            return Err(Error::InvalidArgument("truncation parameters must be positive".into()));
        }
        let limit = geom.homotopy_limit();
        if t.lambda > limit {
            return Err(Error::HomotopyViolation { lambda: t.lambda, limit });
        }
        Ok(t)
    }
}

#[derive(Clone, Debug)]
pub struct Engine {
    pub geom: BilayerGeometry,
    pub model: ModelFile,
    pub field: Option<DisplacementField>,
    pub truncation: Truncation,
}

impl Engine {
    pub fn new(
        geom: BilayerGeometry,
        model: ModelFile,
        field: Option<DisplacementField>,
        truncation: &TruncationConfig,
    ) -> Result<Self> {
        let truncation = truncation.resolve(&geom, &model)?;
        let field = field.filter(|u| !u.is_zero());
        Ok(Self { geom, model, field, truncation })
    }

    pub fn with_truncation(&self, lambda: f64, tau: f64) -> Result<Self> {
        let mut out = self.clone();
        let limit = self.geom.homotopy_limit();
        if lambda > limit {
            return Err(Error::HomotopyViolation { lambda, limit });
        }
        out.truncation.lambda = lambda;
        out.truncation.tau = tau;
        Ok(out)
    }

    pub fn is_relaxed(&self) -> bool {
        self.field.is_some()
    }

    pub fn coupling_options(&self) -> CouplingOptions {
        let t = &self.truncation;
        CouplingOptions {
            tau: t.tau,
            tau_width: t.tau_width,
            refinement: t.refinement,
            island_radius: t.lambda + self.geom.moire_reciprocal_length(),
            mesh: t.mesh,
        }
    }

    pub fn sample(&self, valley: usize) -> Result<SampledInterlayerCoupling> {
        let im = InterlayerModel::for_geometry(self.model.interlayer.clone(), &self.geom)?;
        sample_interlayer(&im, self.field.as_ref(), &self.geom, valley_anchor(&self.geom, valley), &self.coupling_options())
    }

    /// Hamiltonian builder for a valley, optionally reusing a sampled coupling.
    pub fn valley_with(&self, valley: usize, inter: SampledInterlayerCoupling) -> Result<MomentumHamiltonian> {
        let t = &self.truncation;
        let basis = build_basis(&self.geom, t.lambda, valley_anchor(&self.geom, valley))?;
        let u = self.field.as_ref();
        let intra = [
            intralayer_table(&self.model.intralayer, u, &self.geom, 1, t.tau, t.tau_width, t.intralayer_grid)?,
            intralayer_table(&self.model.intralayer, u, &self.geom, 2, t.tau, t.tau_width, t.intralayer_grid)?,
        ];
        MomentumHamiltonian::new(self.geom.clone(), basis, intra, inter)
    }

    pub fn valley(&self, valley: usize) -> Result<MomentumHamiltonian> {
        self.valley_with(valley, self.sample(valley)?)
    }
}
