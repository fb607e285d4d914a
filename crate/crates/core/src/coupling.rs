//! Interlayer coupling in momentum space.
//!
//! For a pair (layer-1 label n, layer-2 label n′) the coupling is
//! F̃(p)/√(|Γ₁||Γ₂|) at p = q + b₂n − b₁n′ = c_s + Θ₂₁μ, where
//! c_s = anchor + b₂s, s = n − n′ and μ = n′ + Θ₂₁⁻¹(q − anchor).
//! F̃ is sampled on islands of nodes c_s + Θ₂₁m/r around each c_s and
//! interpolated quadratically in μ.

use std::path::Path;

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BilayerGeometry, Mat2, Vec2, GRAPHENE_A};
use crate::hopping::{smooth_cutoff, InterlayerModel};
use crate::relaxation::DisplacementField;

pub const CACHE_VERSION: u32 = 1;

/// Triangular real-space mesh used for the plane-wave inner products.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub spacing: f64,
    pub radius: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { spacing: GRAPHENE_A / 12.0, radius: 12.0 }
    }
}

impl MeshSpec {
    pub fn for_cutoff(cutoff: f64) -> Self {
        Self { spacing: GRAPHENE_A / 12.0, radius: 1.5 * cutoff }
    }

    /// Largest momentum resolved without aliasing: half the shortest
    /// reciprocal vector of the mesh.
    pub fn nyquist(&self) -> f64 {
        0.5 * 4.0 * std::f64::consts::PI / (3f64.sqrt() * self.spacing)
    }

    pub fn cell_area(&self) -> f64 {
        0.5 * 3f64.sqrt() * self.spacing * self.spacing
    }

    /// FNV-1a over the bit patterns, stable across runs and platforms.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in [self.spacing, self.radius] {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Rows of mesh points y = h(i + j/2, j√3/2) with |y| ≤ radius, as
    /// (j, first i, count).
    fn rows(&self) -> Vec<(i64, i64, usize)> {
        let h = self.spacing;
        let jmax = (self.radius / (h * 0.5 * 3f64.sqrt())).floor() as i64;
        let mut rows = Vec::new();
        for j in -jmax..=jmax {
            let y = j as f64 * h * 0.5 * 3f64.sqrt();
            let half = (self.radius * self.radius - y * y).max(0.0).sqrt();
            let x0 = j as f64 * h * 0.5;
            let i0 = ((-half - x0) / h).ceil() as i64;
            let i1 = ((half - x0) / h).floor() as i64;
            if i1 >= i0 {
                rows.push((j, i0, (i1 - i0 + 1) as usize));
            }
        }
        rows
    }
}

fn mesh_point(h: f64, i: i64, j: i64) -> Vec2 {
    Vec2::new(h * (i as f64 + 0.5 * j as f64), h * 0.5 * 3f64.sqrt() * j as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingOptions {
    /// Momentum truncation radius τ, Å⁻¹.
    pub tau: f64,
    /// Width of the smooth roll-off of χ_τ below τ.
    #[serde(default = "default_tau_width")]
    pub tau_width: f64,
    /// Nodes per moiré reciprocal spacing.
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    /// Radius in momentum of each island around its center, before the
    /// stencil margin.
    pub island_radius: f64,
    #[serde(default)]
    pub mesh: MeshSpec,
}

fn default_tau_width() -> f64 {
    0.5
}
fn default_refinement() -> usize {
    1
}

impl CouplingOptions {
    pub fn new(tau: f64, island_radius: f64) -> Self {
        Self { tau, tau_width: default_tau_width(), refinement: 1, island_radius, mesh: MeshSpec::default() }
    }
}

/// Nodes c_s + Θ₂₁m/r of one island, stored on a dense index box.
#[derive(Clone, Debug)]
pub struct Island {
    pub s: [i64; 2],
    pub center: Vec2,
    pub nodes: Vec<[i64; 2]>,
    /// Aligned samples χ_τ·G(p)/√(|Γ₁||Γ₂|), node-major then pair.
    pub values: Vec<Complex64>,
    lo: [i64; 2],
    dims: [usize; 2],
    slot: Vec<u32>,
}

const EMPTY: u32 = u32::MAX;

impl Island {
    fn new(s: [i64; 2], center: Vec2, nodes: Vec<[i64; 2]>) -> Self {
        let lo = [
            nodes.iter().map(|m| m[0]).min().unwrap_or(0),
            nodes.iter().map(|m| m[1]).min().unwrap_or(0),
        ];
        let hi = [
            nodes.iter().map(|m| m[0]).max().unwrap_or(0),
            nodes.iter().map(|m| m[1]).max().unwrap_or(0),
        ];
        let dims = [(hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize];
        let mut slot = vec![EMPTY; dims[0] * dims[1]];
        for (k, m) in nodes.iter().enumerate() {
            slot[(m[0] - lo[0]) as usize * dims[1] + (m[1] - lo[1]) as usize] = k as u32;
        }
        Self { s, center, nodes, values: Vec::new(), lo, dims, slot }
    }

    #[inline]
    fn node(&self, m: [i64; 2]) -> Option<usize> {
        let (a, b) = (m[0] - self.lo[0], m[1] - self.lo[1]);
        if a < 0 || b < 0 || a as usize >= self.dims[0] || b as usize >= self.dims[1] {
            return None;
        }
        match self.slot[a as usize * self.dims[1] + b as usize] {
            EMPTY => None,
            k => Some(k as usize),
        }
    }
}

/// Six-node quadratic stencil: offsets from the base node and the inverse
/// Vandermonde matrix in the monomials (1, x, y, x², xy, y²).
#[derive(Clone, Debug)]
struct Stencil {
    offsets: [[i64; 2]; 6],
    vinv: SMatrix<f64, 6, 6>,
}

fn monomials(x: f64, y: f64) -> SVector<f64, 6> {
    SVector::<f64, 6>::from([1.0, x, y, x * x, x * y, y * y])
}

impl Stencil {
    fn new(offsets: [[i64; 2]; 6]) -> Self {
        let v = SMatrix::<f64, 6, 6>::from_fn(|k, c| monomials(offsets[k][0] as f64, offsets[k][1] as f64)[c]);
        let vinv = v.try_inverse().expect("stencil nodes are unisolvent");
        Self { offsets, vinv }
    }

    fn weights(&self, f: [f64; 2]) -> SVector<f64, 6> {
        self.vinv.transpose() * monomials(f[0], f[1])
    }
}

/// The unit index cell is split along its shorter diagonal; each half uses
/// the P2 triangle whose midpoint triangle is that half.
fn stencils(theta: &Mat2) -> (bool, [Stencil; 2]) {
    let d11 = (theta * Vec2::new(1.0, 1.0)).norm();
    let d1m = (theta * Vec2::new(1.0, -1.0)).norm();
    if d11 <= d1m {
        (
            true,
            [
                Stencil::new([[0, 0], [1, 0], [1, 1], [0, -1], [0, 1], [2, 1]]),
                Stencil::new([[0, 0], [1, 1], [0, 1], [1, 0], [-1, 0], [1, 2]]),
            ],
        )
    } else {
        (
            false,
            [
                Stencil::new([[0, 0], [1, 0], [0, 1], [1, -1], [-1, 1], [1, 1]]),
                Stencil::new([[1, 0], [0, 1], [1, 1], [0, 0], [2, 0], [0, 2]]),
            ],
        )
    }
}

#[derive(Clone, Debug)]
pub struct SampledInterlayerCoupling {
    pub anchor: Vec2,
    pub twist_angle: f64,
    pub theta: Mat2,
    theta_inv: Mat2,
    pub b2: Mat2,
    pub options: CouplingOptions,
    /// Orbital-pair shifts Δ = τ₁ₐ − τ₂ᵦ, pair = a·n₂ + b.
    pub deltas: Vec<Vec2>,
    pub orbitals: (usize, usize),
    pub islands: Vec<Island>,
    pub relaxed: bool,
    island_lo: [i64; 2],
    island_dims: [usize; 2],
    island_slot: Vec<u32>,
    main_diagonal: bool,
    stencils: [Stencil; 2],
}

/// Relative displacement w(x) = ũ₁(x) − ũ₂(−x) seen by a pair with Bravais
/// difference x.
pub fn relative_displacement(u: &DisplacementField, geom: &BilayerGeometry, x: &Vec2) -> Vec2 {
    let s1 = geom.layer2.inverse() * x;
    let s2 = geom.layer1.inverse() * (-x);
    u.eval_config(1, [s1.x, s1.y]) - u.eval_config(2, [s2.x, s2.y])
}

/// Mesh weights f(y) = T(y + w(y − Δ))·ΔA for one orbital pair, trimmed to
/// the nonzero stretch of each row.
struct PairMesh {
    rows: Vec<(i64, i64, Vec<f64>)>,
}

fn pair_mesh(
    model: &InterlayerModel,
    u: Option<&DisplacementField>,
    geom: &BilayerGeometry,
    mesh: &MeshSpec,
    pair: usize,
    delta: Vec2,
) -> PairMesh {
    let h = mesh.spacing;
    let area = mesh.cell_area();
    let rows = mesh
        .rows()
        .into_par_iter()
        .filter_map(|(j, i0, len)| {
            let vals: Vec<f64> = (0..len as i64)
                .map(|k| {
                    let y = mesh_point(h, i0 + k, j);
                    let x = match u {
                        Some(u) => y + relative_displacement(u, geom, &(y - delta)),
                        None => y,
                    };
                    model.value_unchecked(x.norm(), pair) * area
                })
                .collect();
            let first = vals.iter().position(|v| *v != 0.0)?;
            let last = vals.iter().rposition(|v| *v != 0.0)?;
            Some((j, i0 + first as i64, vals[first..=last].to_vec()))
        })
        .collect();
    PairMesh { rows }
}

impl PairMesh {
    /// Σ_y f(y) e^{−ip·y}.
    fn transform(&self, h: f64, p: &Vec2) -> Complex64 {
        let e1 = Vec2::new(h, 0.0);
        let step = Complex64::from_polar(1.0, -p.dot(&e1));
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, i0, vals) in &self.rows {
            let mut z = Complex64::from_polar(1.0, -p.dot(&mesh_point(h, *i0, *j)));
            let mut row = Complex64::new(0.0, 0.0);
            for v in vals {
                row += z * *v;
                z *= step;
            }
            acc += row;
        }
        acc
    }
}

/// Direct mesh transform G(p) = Σ_y T(y + w(y − Δ)) e^{−ip·y} ΔA for one pair,
/// without truncation or normalization. Exposed for oracles and diagnostics.
pub fn mesh_transform(
    model: &InterlayerModel,
    u: Option<&DisplacementField>,
    geom: &BilayerGeometry,
    mesh: &MeshSpec,
    pair: usize,
    points: &[Vec2],
) -> Vec<Complex64> {
    let delta = pair_delta(geom, model, pair);
    let pm = pair_mesh(model, u, geom, mesh, pair, delta);
    points.par_iter().map(|p| pm.transform(mesh.spacing, p)).collect()
}

fn pair_delta(geom: &BilayerGeometry, model: &InterlayerModel, pair: usize) -> Vec2 {
    let (_, n2) = model.orbital_counts();
    let (a, b) = (pair / n2, pair % n2);
    geom.layer1.orbitals()[a].position - geom.layer2.orbitals()[b].position
}

fn island_index_box(centers: &[[i64; 2]]) -> ([i64; 2], [usize; 2], Vec<u32>) {
    let lo = [
        centers.iter().map(|s| s[0]).min().unwrap_or(0),
        centers.iter().map(|s| s[1]).min().unwrap_or(0),
    ];
    let hi = [
        centers.iter().map(|s| s[0]).max().unwrap_or(0),
        centers.iter().map(|s| s[1]).max().unwrap_or(0),
    ];
    let dims = [(hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize];
    let mut slot = vec![EMPTY; dims[0] * dims[1]];
    for (k, s) in centers.iter().enumerate() {
        slot[(s[0] - lo[0]) as usize * dims[1] + (s[1] - lo[1]) as usize] = k as u32;
    }
    (lo, dims, slot)
}

/// Node radius of an island: the requested radius plus the farthest stencil
/// node from any point of its base cell.
fn node_radius(theta: &Mat2, opts: &CouplingOptions) -> f64 {
    let (_, st) = stencils(theta);
    let mut reach = 0.0f64;
    for s in &st {
        for off in &s.offsets {
            for c in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
                let d = Vec2::new(off[0] as f64 - c[0], off[1] as f64 - c[1]);
                reach = reach.max((theta * d).norm());
            }
        }
    }
    opts.island_radius + reach / opts.refinement as f64
}

pub fn sample_interlayer(
    model: &InterlayerModel,
    u: Option<&DisplacementField>,
    geom: &BilayerGeometry,
    anchor: Vec2,
    opts: &CouplingOptions,
) -> Result<SampledInterlayerCoupling> {
    let mut out = layout(model, u.is_some_and(|u| !u.is_zero()), geom, anchor, opts)?;
    let u = u.filter(|u| !u.is_zero());
    let norm = 1.0 / (geom.layer1.cell_area() * geom.layer2.cell_area()).sqrt();
    let npairs = out.deltas.len();
    let meshes: Vec<PairMesh> =
        (0..npairs).map(|p| pair_mesh(model, u, geom, &opts.mesh, p, out.deltas[p])).collect();
    // Pairs with identical meshes share their transforms.
    let alias: Vec<usize> =
        (0..npairs).map(|k| (0..k).find(|&j| meshes[j].rows == meshes[k].rows).unwrap_or(k)).collect();
    let alias = &alias;
    let meshes = &meshes;
    let h = opts.mesh.spacing;
    let r = opts.refinement as f64;
    let theta = out.theta;
    let (tau, width) = (opts.tau, opts.tau_width);
    for isl in out.islands.iter_mut() {
        let center = isl.center;
        isl.values = isl
            .nodes
            .par_iter()
            .flat_map_iter(|m| {
                let p = center + theta * Vec2::new(m[0] as f64, m[1] as f64) / r;
                let chi = smooth_cutoff(p.norm(), tau, width);
                let mut vals = vec![Complex64::new(0.0, 0.0); npairs];
                if chi != 0.0 {
                    for k in 0..npairs {
                        vals[k] = if alias[k] < k { vals[alias[k]] } else { meshes[k].transform(h, &p) * (chi * norm) };
                    }
                }
                vals
            })
            .collect();
    }
    Ok(out)
}

/// Island and node layout without sample values.
fn layout(
    model: &InterlayerModel,
    relaxed: bool,
    geom: &BilayerGeometry,
    anchor: Vec2,
    opts: &CouplingOptions,
) -> Result<SampledInterlayerCoupling> {
    if !(opts.tau > 0.0) || opts.refinement == 0 || !(opts.island_radius > 0.0) {
        return Err(Error::InvalidArgument("τ, refinement and island radius must be positive".into()));
    }
    if !(opts.mesh.spacing > 0.0) || opts.mesh.radius < model.params.cutoff {
        return Err(Error::InvalidArgument(format!(
            "mesh radius {} must cover the interlayer cutoff {}",
            opts.mesh.radius, model.params.cutoff
        )));
    }
    let theta = geom.theta_matrix;
    let theta_inv = theta.try_inverse().ok_or(Error::CommensurateDegenerate(geom.twist_angle))?;
    let b2 = geom.recip2();
    let b2inv = b2.try_inverse().ok_or(Error::SingularBasis(b2.determinant()))?;
    let rn = node_radius(&theta, opts);
    let max_momentum = opts.tau + 2.0 * rn;
    if max_momentum > opts.mesh.nyquist() {
        return Err(Error::MeshTooCoarse { spacing: opts.mesh.spacing, max_momentum });
    }

    // Islands whose node disk reaches inside τ.
    let reach = (b2inv.norm() * (opts.tau + rn + anchor.norm())).ceil() as i64 + 1;
    let mut centers = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            let c = anchor + b2 * Vec2::new(i as f64, j as f64);
            if c.norm() - rn < opts.tau {
                centers.push(([i, j], c));
            }
        }
    }
    centers.sort_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(a.0.cmp(&b.0)));

    let r = opts.refinement as f64;
    let mreach = (theta_inv.norm() * rn * r).ceil() as i64 + 1;
    let mut nodes = Vec::new();
    for i in -mreach..=mreach {
        for j in -mreach..=mreach {
            if (theta * Vec2::new(i as f64, j as f64)).norm() / r <= rn {
                nodes.push([i, j]);
            }
        }
    }
    let islands: Vec<Island> = centers.iter().map(|(s, c)| Island::new(*s, *c, nodes.clone())).collect();
    let keys: Vec<[i64; 2]> = centers.iter().map(|c| c.0).collect();
    let (island_lo, island_dims, island_slot) = island_index_box(&keys);
    let (n1, n2) = model.orbital_counts();
    let deltas = (0..n1 * n2).map(|p| pair_delta(geom, model, p)).collect();
    let (main_diagonal, stencils) = stencils(&theta);
    Ok(SampledInterlayerCoupling {
        anchor,
        twist_angle: geom.twist_angle,
        theta,
        theta_inv,
        b2,
        options: opts.clone(),
        deltas,
        orbitals: (n1, n2),
        islands,
        relaxed,
        island_lo,
        island_dims,
        island_slot,
        main_diagonal,
        stencils,
    })
}

impl SampledInterlayerCoupling {
    pub fn num_pairs(&self) -> usize {
        self.deltas.len()
    }

    pub fn island(&self, s: [i64; 2]) -> Option<&Island> {
        let (a, b) = (s[0] - self.island_lo[0], s[1] - self.island_lo[1]);
        if a < 0 || b < 0 || a as usize >= self.island_dims[0] || b as usize >= self.island_dims[1] {
            return None;
        }
        match self.island_slot[a as usize * self.island_dims[1] + b as usize] {
            EMPTY => None,
            k => Some(&self.islands[k as usize]),
        }
    }

    /// Fractional moiré coordinate μ of the layer-2 label at momentum q.
    pub fn mu(&self, q: &Vec2, n2: [i64; 2]) -> Vec2 {
        Vec2::new(n2[0] as f64, n2[1] as f64) + self.theta_inv * (q - self.anchor)
    }

    /// Aligned (phase-free) interpolated sample at p = c_s + Θ₂₁μ.
    /// `Some(0)` when the island lies beyond τ, `None` when μ falls outside
    /// the sampled island.
    pub fn aligned(&self, s: [i64; 2], mu: &Vec2, pair: usize) -> Option<Complex64> {
        let Some(isl) = self.island(s) else {
            return Some(Complex64::new(0.0, 0.0));
        };
        let r = self.options.refinement as f64;
        let nu = mu * r;
        let base = [nu.x.floor() as i64, nu.y.floor() as i64];
        let f = [nu.x - base[0] as f64, nu.y - base[1] as f64];
        let upper = if self.main_diagonal { f[1] > f[0] } else { f[0] + f[1] > 1.0 };
        let st = &self.stencils[upper as usize];
        let w = st.weights(f);
        let np = self.num_pairs();
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, off) in st.offsets.iter().enumerate() {
            let node = isl.node([base[0] + off[0], base[1] + off[1]])?;
            acc += isl.values[node * np + pair] * w[k];
        }
        Some(acc)
    }

    /// h̃₁₂ at p = c_s + Θ₂₁μ for the orbital pair, including the e^{ip·Δ} phase.
    pub fn value(&self, s: [i64; 2], mu: &Vec2, pair: usize) -> Option<Complex64> {
        let a = self.aligned(s, mu, pair)?;
        if a == Complex64::new(0.0, 0.0) {
            return Some(a);
        }
        let p = self.anchor + self.b2 * Vec2::new(s[0] as f64, s[1] as f64) + self.theta * mu;
        Some(a * Complex64::from_polar(1.0, p.dot(&self.deltas[pair])))
    }

    /// h̃₂₁ for the same scattering, the conjugate of [`Self::value`].
    pub fn value_21(&self, s: [i64; 2], mu: &Vec2, pair: usize) -> Option<Complex64> {
        self.value(s, mu, pair).map(|z| z.conj())
    }

    /// Interpolates at an arbitrary momentum ξ using the island whose center
    /// is nearest, with an explicit orbital shift Δ. Returns zero (and logs)
    /// outside every island.
    pub fn interpolate(&self, xi: &Vec2, pair: usize, delta: &Vec2) -> Complex64 {
        let Some(isl) = self
            .islands
            .iter()
            .min_by(|a, b| (xi - a.center).norm().total_cmp(&(xi - b.center).norm()))
        else {
            return Complex64::new(0.0, 0.0);
        };
        let mu = self.theta_inv * (xi - isl.center);
        match self.aligned(isl.s, &mu, pair) {
            Some(a) => a * Complex64::from_polar(1.0, xi.dot(delta)),
            None => {
                log::warn!("coupling query at |ξ| = {:.4} Å⁻¹ lies outside the sampled islands", xi.norm());
                Complex64::new(0.0, 0.0)
            }
        }
    }

    /// Share of Σ|G(c_s)|² carried by islands beyond the first shell, using
    /// the sample at each island center c_s. Center samples sit at fixed
    /// momenta, so the unrelaxed value does not depend on the twist angle.
    pub fn shell_mass_fraction(&self) -> f64 {
        let npairs = self.num_pairs();
        let mass = |isl: &Island| match isl.node([0, 0]) {
            Some(k) => isl.values[k * npairs..(k + 1) * npairs].iter().map(|z| z.norm_sqr()).sum::<f64>(),
            None => 0.0,
        };
        let total: f64 = self.islands.iter().map(mass).sum();
        if total == 0.0 {
            return 0.0;
        }
        let outer: f64 = self.islands.iter().skip(3).map(mass).sum();
        outer / total
    }

    /// Smallest distance between island centers over the largest node diameter.
    pub fn island_separation_ratio(&self) -> f64 {
        let rn = node_radius(&self.theta, &self.options);
        let mut best = f64::INFINITY;
        for (i, a) in self.islands.iter().enumerate() {
            for b in &self.islands[i + 1..] {
                best = best.min((a.center - b.center).norm());
            }
        }
        best / (2.0 * rn)
    }

    pub fn check_tau(&self, tau: f64) -> Result<()> {
        if (tau - self.options.tau).abs() > 1e-12 {
            return Err(Error::SampleMismatch(format!("sampled at τ = {}, requested {tau}", self.options.tau)));
        }
        Ok(())
    }

    pub fn to_cache(&self) -> CouplingCache {
        CouplingCache {
            version: CACHE_VERSION,
            twist_angle: self.twist_angle,
            tau: self.options.tau,
            mesh_hash: self.options.mesh.hash(),
            relaxed: self.relaxed,
            anchor: [self.anchor.x, self.anchor.y],
            options: self.options.clone(),
            islands: self
                .islands
                .iter()
                .map(|i| CachedIsland { s: i.s, values: i.values.iter().map(|z| [z.re, z.im]).collect() })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_cache())?)?;
        Ok(())
    }

    /// Loads a cache, rebuilding the layout from the model and geometry and
    /// rejecting any key mismatch.
    pub fn load(
        path: &Path,
        model: &InterlayerModel,
        geom: &BilayerGeometry,
        anchor: Vec2,
        opts: &CouplingOptions,
        relaxed: bool,
    ) -> Result<Self> {
        let cache: CouplingCache = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_cache(&cache, model, geom, anchor, opts, relaxed)
    }

    pub fn from_cache(
        cache: &CouplingCache,
        model: &InterlayerModel,
        geom: &BilayerGeometry,
        anchor: Vec2,
        opts: &CouplingOptions,
        relaxed: bool,
    ) -> Result<Self> {
        let mismatch = |what: &str| Err(Error::SampleMismatch(format!("cached {what} differs")));
        if cache.version != CACHE_VERSION {
            return mismatch("format version");
        }
        if (cache.twist_angle - geom.twist_angle).abs() > 1e-14 {
            return mismatch("twist angle");
        }
        if (cache.tau - opts.tau).abs() > 1e-14 {
            return mismatch("τ");
        }
        if cache.mesh_hash != opts.mesh.hash() {
            return mismatch("mesh");
        }
        if cache.relaxed != relaxed {
            return mismatch("relaxation flag");
        }
        if &cache.options != opts || (Vec2::new(cache.anchor[0], cache.anchor[1]) - anchor).norm() > 1e-14 {
            return mismatch("sampling options");
        }
        let mut out = layout(model, relaxed, geom, anchor, opts)?;
        if out.islands.len() != cache.islands.len() {
            return mismatch("island count");
        }
        let np = out.num_pairs();
        for (isl, c) in out.islands.iter_mut().zip(&cache.islands) {
            if isl.s != c.s || c.values.len() != isl.nodes.len() * np {
                return mismatch("island layout");
            }
            isl.values = c.values.iter().map(|v| Complex64::new(v[0], v[1])).collect();
        }
        Ok(out)
    }
}

/// On-disk sample table, keyed by (θ, τ, mesh hash, relaxed flag).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingCache {
    pub version: u32,
    pub twist_angle: f64,
    pub tau: f64,
    pub mesh_hash: u64,
    pub relaxed: bool,
    pub anchor: [f64; 2],
    pub options: CouplingOptions,
    pub islands: Vec<CachedIsland>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CachedIsland {
    pub s: [i64; 2],
    pub values: Vec<[f64; 2]>,
}

#[cfg(test)]
mod tests;
