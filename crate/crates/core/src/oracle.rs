//! Real-space tight-binding on commensurate supercells, used to cross-check
//! the momentum-space engine.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::eig::{eigh_real, eigvalsh};
use crate::engine::{Engine, TruncationConfig};
use crate::error::{Error, Result};
use crate::geometry::{BilayerGeometry, CommensurateCell, Lattice2D, Mat2, Vec2};
use crate::hopping::{InterlayerModel, LayerHoppings, ModelFile};
use crate::observables::{energy_grid, smeared_density, spectra, DosCurve};
use crate::relaxation::DisplacementField;

const MIN_SEPARATION: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct OracleAtom {
    pub layer: usize,
    pub orbital: usize,
    /// Lattice point of the atom's own layer.
    pub bravais: Vec2,
    pub height: f64,
}

/// Row atom in supercell image `shift`, column atom in the home cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTerm {
    pub row: usize,
    pub col: usize,
    pub shift: [i64; 2],
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SupercellHamiltonian {
    pub lattice: Mat2,
    pub atoms: Vec<OracleAtom>,
    /// Relaxed in-plane positions.
    pub positions: Vec<Vec2>,
    pub onsite: Vec<f64>,
    pub terms: Vec<PairTerm>,
}

impl SupercellHamiltonian {
    pub fn build(cell: &CommensurateCell, model: &ModelFile, u: Option<&DisplacementField>) -> Result<Self> {
        let atoms = cell
            .atoms
            .iter()
            .map(|a| OracleAtom { layer: a.tag.layer, orbital: a.tag.orbital, bravais: a.bravais, height: a.height })
            .collect();
        let g = &cell.geometry;
        Self::from_atoms(*cell.supercell.basis(), atoms, [&g.layer1, &g.layer2], model, u)
    }

    /// General constructor; every supercell vector must be a lattice vector of both layers.
    pub fn from_atoms(
        lattice: Mat2,
        atoms: Vec<OracleAtom>,
        layers: [&Lattice2D; 2],
        model: &ModelFile,
        u: Option<&DisplacementField>,
    ) -> Result<Self> {
        let hops: [LayerHoppings; 2] = [model.intralayer.hoppings(layers[0]), model.intralayer.hoppings(layers[1])];
        let inter = InterlayerModel::new(model.interlayer.clone(), layers[0], layers[1])?;
        let lookup: [HashMap<(usize, usize, [i64; 2]), usize>; 2] =
            hops.clone().map(|h| h.hops.iter().map(|x| ((x.row, x.col, x.cell), x.shell)).collect());
        let disp = |layer: usize, r: &Vec2| u.map_or(Vec2::zeros(), |f| f.eval(layer, r));
        let site = |a: &OracleAtom, r: &Vec2| r + layers[a.layer - 1].orbitals()[a.orbital].position + disp(a.layer, r);
        let positions: Vec<Vec2> = atoms.iter().map(|a| site(a, &a.bravais)).collect();

        let intra_reach = hops.iter().flat_map(|h| h.radii.iter()).fold(0.0f64, |m, r| m.max(*r)) + 1.0;
        let (c0, c1) = (lattice.column(0).norm(), lattice.column(1).norm());
        let strip = lattice.determinant().abs() / c0.max(c1);
        let reach = intra_reach.max(inter.params.cutoff) + c0 + c1 + 1.0;
        let box_n = (reach / strip).ceil() as i64 + 1;
        let inv = layers.map(|l| l.inverse());

        let n = atoms.len();
        let per_row: Vec<Result<Vec<PairTerm>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let ai = &atoms[i];
                let mut out = Vec::new();
                for sx in -box_n..=box_n {
                    for sy in -box_n..=box_n {
                        let sv = lattice * Vec2::new(sx as f64, sy as f64);
                        let ri = ai.bravais + sv;
                        let pi = site(ai, &ri);
                        for (j, aj) in atoms.iter().enumerate() {
                            if i == j && sx == 0 && sy == 0 {
                                continue;
                            }
                            let d = pi - positions[j];
                            let layer_gap = if ai.layer == aj.layer { 0.0 } else { inter.params.d };
                            let dz = layer_gap + ai.height - aj.height;
                            if (d.norm_squared() + dz * dz).sqrt() < MIN_SEPARATION {
                                return Err(Error::AtomsTooClose(i, j));
                            }
                            let value = if ai.layer == aj.layer {
                                let l = inv[ai.layer - 1] * (ri - aj.bravais);
                                let cell = [l.x.round() as i64, l.y.round() as i64];
                                match lookup[ai.layer - 1].get(&(ai.orbital, aj.orbital, cell)) {
                                    Some(&shell) => {
                                        let d0 = ri - aj.bravais + layers[ai.layer - 1].orbitals()[ai.orbital].position
                                            - layers[ai.layer - 1].orbitals()[aj.orbital].position;
                                        hops[ai.layer - 1].value(shell, &(d0 + disp(ai.layer, &ri) - disp(aj.layer, &aj.bravais)))
                                    }
                                    None => 0.0,
                                }
                            } else if ai.layer == 1 {
                                inter.value(&d, ai.orbital, aj.orbital)?
                            } else {
                                inter.value(&(-d), aj.orbital, ai.orbital)?
                            };
                            if value != 0.0 {
                                out.push(PairTerm { row: i, col: j, shift: [sx, sy], value });
                            }
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        let mut terms = Vec::new();
        for r in per_row {
            terms.extend(r?);
        }
        let onsite = atoms.iter().map(|a| hops[a.layer - 1].onsite[a.orbital]).collect();
        Ok(Self { lattice, atoms, positions, onsite, terms })
    }

    pub fn dim(&self) -> usize {
        self.atoms.len()
    }

    /// H(k)_{ij} = ε_i δ_ij + Σ t e^{−ik·S}, S the row image's supercell vector.
    pub fn bloch(&self, k: &Vec2) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::from_fn(n, n, |i, j| Complex64::new(if i == j { self.onsite[i] } else { 0.0 }, 0.0));
        for t in &self.terms {
            let s = self.lattice * Vec2::new(t.shift[0] as f64, t.shift[1] as f64);
            m[(t.row, t.col)] += t.value * Complex64::from_polar(1.0, -k.dot(&s));
        }
        m
    }

    pub fn eigenvalues(&self, k: &Vec2) -> Result<Vec<f64>> {
        eigvalsh(&self.bloch(k))
    }

    pub fn spectra(&self, ks: &[Vec2]) -> Result<Vec<Vec<f64>>> {
        ks.par_iter().map(|k| self.eigenvalues(k)).collect()
    }

    /// Reciprocal basis of the supercell, 2π S⁻ᵀ.
    pub fn reciprocal(&self) -> Mat2 {
        2.0 * std::f64::consts::PI * self.lattice.try_inverse().expect("supercell basis is invertible").transpose()
    }

    /// Normalized trace (1/N) mean_k Tr φ_ε(E − H(k)) over `ks`.
    pub fn dos(&self, ks: &[Vec2], energies: &[f64], epsilon: f64) -> Result<DosCurve> {
        let eigs = self.spectra(ks)?;
        let w = 1.0 / (self.dim() * ks.len()) as f64;
        let mut dos = vec![0.0; energies.len()];
        for e in &eigs {
            for (a, b) in dos.iter_mut().zip(smeared_density(e, w, energies, epsilon)) {
                *a += b;
            }
        }
        let nq = (ks.len() as f64).sqrt().round() as usize;
        Ok(DosCurve {
            energies: energies.to_vec(),
            dos,
            epsilon,
            nq,
            valleys: 1,
            per_valley: Vec::new(),
            noise: Vec::new(),
            resolution_ratio: f64::NAN,
        })
    }

    /// Finite flake of all atom images within `radius` of the home-cell
    /// center; returns the home-cell-averaged local density (1/N) Σ_i ⟨i|φ_ε(E − H)|i⟩.
    pub fn cluster_local_dos(&self, radius: f64, energies: &[f64], epsilon: f64) -> Result<Vec<f64>> {
        let center = self.lattice * Vec2::new(0.5, 0.5);
        let reach = (radius / self.lattice.column(0).norm().min(self.lattice.column(1).norm())).ceil() as i64 + 2;
        let mut index: HashMap<(usize, [i64; 2]), usize> = HashMap::new();
        let mut sites = Vec::new();
        for sx in -reach..=reach {
            for sy in -reach..=reach {
                let sv = self.lattice * Vec2::new(sx as f64, sy as f64);
                for (i, p) in self.positions.iter().enumerate() {
                    if (p + sv - center).norm() <= radius || (sx == 0 && sy == 0) {
                        index.insert((i, [sx, sy]), sites.len());
                        sites.push((i, [sx, sy]));
                    }
                }
            }
        }
        let n = sites.len();
        let mut h = DMatrix::<f64>::zeros(n, n);
        for (c, &(i, _)) in sites.iter().enumerate() {
            h[(c, c)] = self.onsite[i];
        }
        let mut by_col: Vec<Vec<&PairTerm>> = vec![Vec::new(); self.dim()];
        for t in &self.terms {
            by_col[t.col].push(t);
        }
        for (c, &(j, sj)) in sites.iter().enumerate() {
            for t in &by_col[j] {
                if let Some(&r) = index.get(&(t.row, [sj[0] + t.shift[0], sj[1] + t.shift[1]])) {
                    h[(r, c)] += t.value;
                }
            }
        }
        let (vals, vecs) = eigh_real(&h)?;
        let home: Vec<usize> = sites.iter().enumerate().filter(|(_, s)| s.1 == [0, 0]).map(|(c, _)| c).collect();
        let mut out = vec![0.0; energies.len()];
        for (l, &lam) in vals.iter().enumerate() {
            let w: f64 = home.iter().map(|&c| vecs[(c, l)].powi(2)).sum::<f64>() / home.len() as f64;
            for (d, e) in out.iter_mut().zip(smeared_density(&[lam], w, energies, epsilon)) {
                *d += e;
            }
        }
        Ok(out)
    }
}

/// Representative of supercell momentum `k` in the valley region around `anchor`:
/// anchor + Θ₂₁f with f the centered fractional part of Θ₂₁⁻¹(k − anchor).
pub fn valley_representative(geom: &BilayerGeometry, anchor: Vec2, k: &Vec2) -> Vec2 {
    let tinv = geom.theta_matrix.try_inverse().expect("Θ₂₁ is invertible");
    let f = tinv * (k - anchor);
    anchor + geom.theta_matrix * f.map(|x| x - x.round())
}

#[derive(Clone, Debug, Serialize)]
pub struct KMismatch {
    pub k_index: usize,
    pub oracle: usize,
    pub kspace: usize,
    /// Largest distance from a windowed eigenvalue on either side to the
    /// nearest eigenvalue of the other full spectrum.
    pub hausdorff: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumComparison {
    pub window: f64,
    pub max_deviation: f64,
    /// Largest deviation of the j-th windowed eigenvalue over all k with matching counts.
    pub per_band: Vec<f64>,
    pub mismatches: Vec<KMismatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dos_l1: Option<f64>,
}

/// Largest distance from an eigenvalue of `a` to the nearest one in `b`.
fn directed_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().map(|p| b.iter().map(|q| (p - q).abs()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
}

/// Eigenvalues with |E| < window compared per k. Equal counts pair in sorted
/// order; unequal counts (typically a level straddling the window edge) are
/// reported with the distance of each windowed level to the other full spectrum.
pub fn compare_spectra(oracle: &[Vec<f64>], kspace: &[Vec<f64>], window: f64) -> Result<SpectrumComparison> {
    if oracle.len() != kspace.len() {
        return Err(Error::InvalidArgument(format!(
            "{} oracle k-points vs {} momentum-space k-points",
            oracle.len(),
            kspace.len()
        )));
    }
    let mut per_band: Vec<f64> = Vec::new();
    let mut mismatches = Vec::new();
    let mut max_dev = 0.0f64;
    for (k, (a, b)) in oracle.iter().zip(kspace).enumerate() {
        let wa: Vec<f64> = a.iter().copied().filter(|e| e.abs() < window).collect();
        let wb: Vec<f64> = b.iter().copied().filter(|e| e.abs() < window).collect();
        if wa.len() == wb.len() {
            if per_band.len() < wa.len() {
                per_band.resize(wa.len(), 0.0);
            }
            for (j, (x, y)) in wa.iter().zip(&wb).enumerate() {
                let d = (x - y).abs();
                per_band[j] = per_band[j].max(d);
                max_dev = max_dev.max(d);
            }
        } else {
            let h = directed_distance(&wa, b).max(directed_distance(&wb, a));
            max_dev = max_dev.max(h);
            mismatches.push(KMismatch { k_index: k, oracle: wa.len(), kspace: wb.len(), hausdorff: h });
        }
    }
    Ok(SpectrumComparison { window, max_deviation: max_dev, per_band, mismatches, dos_l1: None })
}

/// Deterministic quasi-random supercell momenta: the additive sequence with
/// irrational steps 1/ρ, 1/ρ² (ρ the plastic number), started at `seed`.
pub fn probe_momenta(cell_reciprocal: &Mat2, count: usize, seed: u64) -> Vec<Vec2> {
    const RHO: f64 = 1.324_717_957_244_746;
    let (a1, a2) = (1.0 / RHO, 1.0 / (RHO * RHO));
    (0..count)
        .map(|i| {
            let t = (seed + i as u64 + 1) as f64;
            let f = Vec2::new((t * a1).fract() - 0.5, (t * a2).fract() - 0.5);
            cell_reciprocal * f
        })
        .collect()
}

/// Spectrum of the momentum engine at supercell momenta: valley 1 alone when
/// its basis already spans the supercell space (the second valley aliases
/// onto the same states), otherwise the union of both valleys.
/// Returns the spectra, the number of valleys used and the per-valley dimension.
pub fn kspace_supercell_spectra(engine: &Engine, supercell_dim: usize, ks: &[Vec2]) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let h1 = engine.valley(1)?;
    let dim = h1.dim();
    let hs = if h1.dim() >= supercell_dim { vec![h1] } else { vec![h1, engine.valley(2)?] };
    let per: Vec<Vec<Vec<f64>>> = hs
        .iter()
        .map(|h| {
            let qs: Vec<Vec2> = ks.iter().map(|k| valley_representative(&h.geom, h.basis.anchor, k)).collect();
            spectra(h, &qs)
        })
        .collect::<Result<_>>()?;
    let out = (0..ks.len())
        .map(|i| {
            let mut e: Vec<f64> = per.iter().flat_map(|p| p[i].iter().copied()).collect();
            e.sort_by(f64::total_cmp);
            e
        })
        .collect();
    Ok((out, hs.len(), dim))
}

/// Smeared state count per supercell, mean over k, on `energies`.
fn states_per_cell(eigs: &[Vec<f64>], energies: &[f64], epsilon: f64) -> Vec<f64> {
    let w = 1.0 / eigs.len() as f64;
    let mut out = vec![0.0; energies.len()];
    for e in eigs {
        for (a, b) in out.iter_mut().zip(smeared_density(e, w, energies, epsilon)) {
            *a += b;
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub m: i64,
    pub n: i64,
    pub theta_deg: f64,
    pub atoms: usize,
    pub lambda: f64,
    pub tau: f64,
    pub kspace_dim: usize,
    pub valleys: usize,
    pub kpoints: Vec<[f64; 2]>,
    pub comparison: SpectrumComparison,
}

/// Compares real-space supercell and momentum-engine spectra at `ks`, with
/// eigenvalues |E| < `window` and a smeared DOS (per supercell, over the same
/// window) for the L¹ distance.
pub fn cross_validate(
    cell: &CommensurateCell,
    model: &ModelFile,
    u: Option<&DisplacementField>,
    truncation: &TruncationConfig,
    ks: &[Vec2],
    window: f64,
    dos_epsilon: f64,
) -> Result<ValidationReport> {
    let engine = Engine::new(cell.geometry.clone(), model.clone(), u.cloned(), truncation)?;
    let sc = SupercellHamiltonian::build(cell, model, u)?;
    let oracle = sc.spectra(ks)?;
    let (kspace, valleys, kspace_dim) = kspace_supercell_spectra(&engine, sc.dim(), ks)?;
    let mut comparison = compare_spectra(&oracle, &kspace, window)?;
    let energies = energy_grid([-window, window], 401);
    let de = energies[1] - energies[0];
    let a = states_per_cell(&oracle, &energies, dos_epsilon);
    let b = states_per_cell(&kspace, &energies, dos_epsilon);
    let l1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() * de / sc.dim() as f64;
    comparison.dos_l1 = Some(l1);
    Ok(ValidationReport {
        m: cell.m,
        n: cell.n,
        theta_deg: cell.geometry.twist_angle.to_degrees(),
        atoms: cell.atom_count(),
        lambda: engine.truncation.lambda,
        tau: engine.truncation.tau,
        kspace_dim,
        valleys,
        kpoints: ks.iter().map(|k| [k.x, k.y]).collect(),
        comparison,
    })
}
