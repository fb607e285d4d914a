//! Mechanical relaxation: GSFE adhesion plus linear elasticity, minimized over
//! Fourier coefficients of the moiré-periodic displacement fields.

mod energy;
mod field;
mod solver;

pub use energy::{EnergyParts, RelaxationProblem};
pub use field::{DisplacementField, ModeSet};
pub use solver::{LbfgsOptions, LbfgsReport};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::BilayerGeometry;

/// One cosine term c·cos(2π k·s) of the stacking energy, with s the
/// fractional disregistry in the partner layer's lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsfeTerm {
    pub k: [i64; 2],
    pub c: f64,
}

/// Φ(s) = c0 + Σ c_k cos(2π k·s), energy per area (eV/Å²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsfeModel {
    #[serde(default)]
    pub c0: f64,
    pub terms: Vec<GsfeTerm>,
}

const HEX_STAR1: [[i64; 2]; 3] = [[1, 0], [0, 1], [1, 1]];
const HEX_STAR2: [[i64; 2]; 3] = [[1, 2], [2, 1], [1, -1]];
const HEX_STAR3: [[i64; 2]; 3] = [[2, 0], [0, 2], [2, 2]];

impl GsfeModel {
    pub fn constant(c0: f64) -> Self {
        Self { c0, terms: vec![] }
    }

    /// c0 + c1 Σ cos over the first star of the hexagonal reciprocal lattice.
    pub fn first_star(c0: f64, c1: f64) -> Self {
        Self { c0, terms: HEX_STAR1.iter().map(|&k| GsfeTerm { k, c: c1 }).collect() }
    }

    /// Three-star graphene stacking energy. Illustrative values only
    /// (meV per graphene cell converted to eV/Å²), not fitted ground truth.
    pub fn graphene_illustrative() -> Self {
        let area = 0.5 * 3f64.sqrt() * crate::geometry::GRAPHENE_A.powi(2);
        let per_area = |mev: f64| mev * 1e-3 / area;
        let mut terms = Vec::new();
        for (star, c) in [(HEX_STAR1, 4.064), (HEX_STAR2, -0.374), (HEX_STAR3, -0.095)] {
            terms.extend(star.iter().map(|&k| GsfeTerm { k, c: per_area(c) }));
        }
        Self { c0: per_area(6.832), terms }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            c0: s * self.c0,
            terms: self.terms.iter().map(|t| GsfeTerm { k: t.k, c: s * t.c }).collect(),
        }
    }

    pub fn value(&self, s: [f64; 2]) -> f64 {
        use std::f64::consts::TAU;
        self.c0
            + self
                .terms
                .iter()
                .map(|t| t.c * (TAU * (t.k[0] as f64 * s[0] + t.k[1] as f64 * s[1])).cos())
                .sum::<f64>()
    }

    /// ∇_s Φ.
    pub fn gradient(&self, s: [f64; 2]) -> [f64; 2] {
        use std::f64::consts::TAU;
        let mut g = [0.0; 2];
        for t in &self.terms {
            let k = [t.k[0] as f64, t.k[1] as f64];
            let f = -t.c * TAU * (TAU * (k[0] * s[0] + k[1] * s[1])).sin();
            g[0] += f * k[0];
            g[1] += f * k[1];
        }
        g
    }

    pub fn max_index(&self) -> i64 {
        self.terms.iter().map(|t| t.k[0].abs().max(t.k[1].abs())).max().unwrap_or(0)
    }
}

/// Isotropic 2D elasticity, W = K/2 (tr ε)² + G/2 ((εxx − εyy)² + 4εxy²), eV/Å².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticityTensor {
    pub bulk: f64,
    pub shear: f64,
}

impl ElasticityTensor {
    /// Graphene moduli (illustrative): K ≈ 13.27, G ≈ 9.04 eV/Å².
    pub fn graphene() -> Self {
        let area = 0.5 * 3f64.sqrt() * crate::geometry::GRAPHENE_A.powi(2);
        Self { bulk: 69.518 / area, shear: 47.352 / area }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.bulk > 0.0 && self.shear > 0.0
    }

    pub fn energy_density(&self, eps: [[f64; 2]; 2]) -> f64 {
        let tr = eps[0][0] + eps[1][1];
        let dev = eps[0][0] - eps[1][1];
        0.5 * self.bulk * tr * tr + 0.5 * self.shear * (dev * dev + 4.0 * eps[0][1] * eps[0][1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxOptions {
    /// Mode cutoff in units of the shortest moiré reciprocal vector.
    #[serde(default = "default_mode_cutoff")]
    pub mode_cutoff: f64,
    /// Quadrature grid size; 0 picks 4× the combined mode and GSFE index range.
    #[serde(default)]
    pub grid: usize,
    /// Solve for the relative field only, with u₁ = −u₂ = v/2.
    #[serde(default = "default_true")]
    pub identical_layers: bool,
    #[serde(default = "default_gtol")]
    pub gradient_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iterations: usize,
}

fn default_mode_cutoff() -> f64 {
    6.0
}
fn default_true() -> bool {
    true
}
fn default_gtol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    5000
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            mode_cutoff: default_mode_cutoff(),
            grid: 0,
            identical_layers: true,
            gradient_tol: default_gtol(),
            max_iterations: default_max_iter(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RelaxResult {
    pub field: DisplacementField,
    pub energy: EnergyParts,
    pub report: LbfgsReport,
}

pub fn relax(
    gsfe: &GsfeModel,
    elast: &ElasticityTensor,
    geom: &BilayerGeometry,
    opts: &RelaxOptions,
) -> Result<RelaxResult> {
    let modes = ModeSet::circular(geom, opts.mode_cutoff);
    let problem = RelaxationProblem::new(geom, gsfe.clone(), *elast, *elast, modes, opts.grid)?;
    problem.relax(opts)
}

pub fn total_energy(
    u: &DisplacementField,
    gsfe: &GsfeModel,
    elast: &ElasticityTensor,
    geom: &BilayerGeometry,
    grid: usize,
) -> Result<EnergyParts> {
    let problem = RelaxationProblem::new(geom, gsfe.clone(), *elast, *elast, u.modes.clone(), grid)?;
    Ok(problem.energy_of(u))
}

/// Like [`total_energy`], but errors when doubling the grid changes the
/// energy by more than `tol`.
pub fn total_energy_checked(
    u: &DisplacementField,
    gsfe: &GsfeModel,
    elast: &ElasticityTensor,
    geom: &BilayerGeometry,
    grid: usize,
    tol: f64,
) -> Result<EnergyParts> {
    let e1 = total_energy(u, gsfe, elast, geom, grid)?;
    let n = RelaxationProblem::new(geom, gsfe.clone(), *elast, *elast, u.modes.clone(), grid)?.grid_size();
    let e2 = total_energy(u, gsfe, elast, geom, 2 * n)?;
    let change = (e1.total - e2.total).abs();
    if change > tol {
        return Err(crate::Error::Aliasing { change });
    }
    Ok(e1)
}

/// First-order relative field v = u₁ − u₂ for a weak stacking energy: per
/// mode, the linearized balance ((λ+μ)kkᵀ + μ|k|²)·v_k/2 = −i·(stacking force
/// at the star vector). Exact to O(s²) in the GSFE scale s.
pub fn linear_response(
    geom: &BilayerGeometry,
    gsfe: &GsfeModel,
    elast: &ElasticityTensor,
    modes: &ModeSet,
) -> Vec<[num_complex::Complex64; 2]> {
    use crate::geometry::{Mat2, Vec2};
    use num_complex::Complex64;
    let lam = elast.bulk - elast.shear;
    let mu = elast.shear;
    let (a1, a2) = (geom.layer1.inverse(), geom.layer2.inverse());
    modes
        .modes
        .iter()
        .map(|n| {
            let Some(term) = gsfe.terms.iter().find(|t| t.k == *n) else {
                return [Complex64::new(0.0, 0.0); 2];
            };
            let k = geom.moire_vector(*n);
            // The relative field costs ½W(v) in total.
            let d = 0.5 * ((lam + mu) * k * k.transpose() + Mat2::identity() * (mu * k.norm_squared()));
            let kk = Vec2::new(n[0] as f64, n[1] as f64);
            let force = 0.5 * std::f64::consts::PI * term.c * (a2.transpose() + a1.transpose()) * kk;
            let sol = d.try_inverse().expect("elastic operator is positive definite for k ≠ 0") * force;
            [Complex64::new(0.0, -sol.x), Complex64::new(0.0, -sol.y)]
        })
        .collect()
}

#[cfg(test)]
mod tests;
