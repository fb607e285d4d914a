//! Finite Hermitian matrix H(q) over a truncated momentum basis.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::coupling::SampledInterlayerCoupling;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::geometry::{BilayerGeometry, Vec2};
use crate::hopping::{smooth_cutoff, IntralayerModel, LayerHoppings};
use crate::momentum_basis::MomentumBasis;
use crate::relaxation::DisplacementField;

/// Anchor momentum of a valley: K₁ for valley 1, −K₁ for its time-reversed partner.
pub fn valley_anchor(geom: &BilayerGeometry, valley: usize) -> Vec2 {
    match valley {
        1 => geom.dirac_point(1),
        2 => -geom.dirac_point(1),
        _ => panic!("valley index must be 1 or 2"),
    }
}

/// Configuration-Fourier coefficients ĥ_{L,m} of the relaxed intralayer
/// hoppings of one layer, truncated smoothly at |G_m| < τ.
#[derive(Clone, Debug)]
pub struct IntralayerTable {
    pub layer: usize,
    pub hoppings: LayerHoppings,
    cells: Vec<Vec2>,
    pub modes: Vec<[i64; 2]>,
    coeffs: Vec<Vec<Complex64>>,
    lookup: HashMap<[i64; 2], usize>,
    pub tau: f64,
    pub grid: usize,
}

/// Wavevector carried by configuration mode m of a layer: b₂m on layer 1, −b₁m on layer 2.
fn mode_vector(geom: &BilayerGeometry, layer: usize, m: [i64; 2]) -> Vec2 {
    let mv = Vec2::new(m[0] as f64, m[1] as f64);
    if layer == 1 { geom.recip2() * mv } else { -(geom.recip1() * mv) }
}

pub fn intralayer_table(
    model: &IntralayerModel,
    u: Option<&DisplacementField>,
    geom: &BilayerGeometry,
    layer: usize,
    tau: f64,
    tau_width: f64,
    grid: usize,
) -> Result<IntralayerTable> {
    let lat = geom.layer(layer);
    let hoppings = model.hoppings(lat);
    let cells: Vec<Vec2> = hoppings.hops.iter().map(|h| lat.point(h.cell)).collect();
    let u = u.filter(|u| !u.is_zero());
    let Some(u) = u else {
        let coeffs = vec![hoppings.amplitudes_per_hop()];
        return Ok(IntralayerTable {
            layer,
            hoppings,
            cells,
            modes: vec![[0, 0]],
            coeffs,
            lookup: HashMap::from([([0, 0], 0)]),
            tau,
            grid: 0,
        });
    };

    // Retained configuration modes.
    let partner = geom.layer(3 - layer);
    let reach = (partner.basis().norm() * tau / (2.0 * std::f64::consts::PI)).ceil() as i64 + 1;
    let mut modes = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            if smooth_cutoff(mode_vector(geom, layer, [i, j]).norm(), tau, tau_width) > 0.0 {
                modes.push([i, j]);
            }
        }
    }
    modes.sort();
    let mmax = modes.iter().map(|m| m[0].abs().max(m[1].abs())).max().unwrap_or(0);
    let n = if grid == 0 {
        (4 * (u.modes.max_index() + mmax) as usize).max(32)
    } else {
        grid
    };
    if (mmax as usize) * 2 >= n {
        return Err(Error::InvalidArgument(format!("grid {n} cannot resolve configuration modes up to {mmax}")));
    }

    let pinv = partner.inverse();
    let sign = if layer == 1 { 1.0 } else { -1.0 };
    let grid_pts: Vec<[f64; 2]> =
        (0..n * n).map(|k| [(k / n) as f64 / n as f64, (k % n) as f64 / n as f64]).collect();
    let here: Vec<Vec2> = grid_pts.iter().map(|s| u.eval_config(layer, *s)).collect();
    let fft = Fft2::new(n);
    let norm = 1.0 / (n * n) as f64;
    let mut per_hop: Vec<Vec<Complex64>> = Vec::with_capacity(hoppings.hops.len());
    let mut shifted_cache: HashMap<[i64; 2], Vec<Vec2>> = HashMap::new();
    for (h, cell) in hoppings.hops.iter().zip(&cells) {
        let shifted = shifted_cache.entry(h.cell).or_insert_with(|| {
            let ds = pinv * cell;
            grid_pts.iter().map(|s| u.eval_config(layer, [s[0] - ds.x, s[1] - ds.y])).collect()
        });
        let mut buf: Vec<Complex64> = (0..n * n)
            .map(|k| Complex64::new(hoppings.value(h.shell, &(h.displacement + here[k] - shifted[k])), 0.0))
            .collect();
        fft.forward(&mut buf);
        per_hop.push(
            modes
                .iter()
                .map(|m| {
                    let idx = if sign > 0.0 { fft.index(*m) } else { fft.index([-m[0], -m[1]]) };
                    let chi = smooth_cutoff(mode_vector(geom, layer, *m).norm(), tau, tau_width);
                    buf[idx] * (norm * chi)
                })
                .collect(),
        );
    }
    let coeffs: Vec<Vec<Complex64>> =
        (0..modes.len()).map(|mi| per_hop.iter().map(|c| c[mi]).collect()).collect();
    let lookup = modes.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    Ok(IntralayerTable { layer, hoppings, cells, modes, coeffs, lookup, tau, grid: n })
}

/// Like [`intralayer_table`], erroring if doubling the grid moves any
/// coefficient by more than `tol` (eV).
pub fn intralayer_table_checked(
    model: &IntralayerModel,
    u: Option<&DisplacementField>,
    geom: &BilayerGeometry,
    layer: usize,
    tau: f64,
    tau_width: f64,
    grid: usize,
    tol: f64,
) -> Result<IntralayerTable> {
    let a = intralayer_table(model, u, geom, layer, tau, tau_width, grid)?;
    if a.grid == 0 {
        return Ok(a);
    }
    let b = intralayer_table(model, u, geom, layer, tau, tau_width, 2 * a.grid)?;
    let change = a
        .coeffs
        .iter()
        .flatten()
        .zip(b.coeffs.iter().flatten())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    if change > tol {
        return Err(Error::Aliasing { change });
    }
    Ok(a)
}

impl LayerHoppings {
    fn amplitudes_per_hop(&self) -> Vec<Complex64> {
        self.hops.iter().map(|h| Complex64::new(self.amplitudes[h.shell], 0.0)).collect()
    }
}

impl IntralayerTable {
    pub fn mode_index(&self, m: [i64; 2]) -> Option<usize> {
        self.lookup.get(&m).copied()
    }

    fn phases(&self, k: &Vec2) -> Vec<Complex64> {
        self.cells.iter().map(|l| Complex64::from_polar(1.0, -k.dot(l))).collect()
    }

    fn accumulate(&self, mi: usize, phases: &[Complex64], out: &mut DMatrix<Complex64>) {
        for ((h, c), ph) in self.hoppings.hops.iter().zip(&self.coeffs[mi]).zip(phases) {
            out[(h.row, h.col)] += c * ph;
        }
        if self.modes[mi] == [0, 0] {
            for (a, e) in self.hoppings.onsite.iter().enumerate() {
                out[(a, a)] += e;
            }
        }
    }

    /// Orbital matrix Σ_L e^{−ik·L} ĥ_{L,m} (plus on-site terms at m = 0).
    pub fn block(&self, m: [i64; 2], k: &Vec2) -> Option<DMatrix<Complex64>> {
        let mi = self.mode_index(m)?;
        let n = self.hoppings.num_orbitals();
        let mut out = DMatrix::zeros(n, n);
        self.accumulate(mi, &self.phases(k), &mut out);
        Some(out)
    }

    pub fn blocks(&self, k: &Vec2) -> Vec<([i64; 2], DMatrix<Complex64>)> {
        self.modes.iter().map(|m| (*m, self.block(*m, k).unwrap())).collect()
    }
}

/// Orbital blocks of the relaxed intralayer Bloch sum at total momentum
/// `q_total`, keyed by configuration offset m, truncated at `cut`.
pub fn intralayer_block(
    model: &IntralayerModel,
    u: Option<&DisplacementField>,
    geom: &BilayerGeometry,
    layer: usize,
    q_total: &Vec2,
    cut: f64,
) -> Result<Vec<([i64; 2], DMatrix<Complex64>)>> {
    Ok(intralayer_table(model, u, geom, layer, cut, 0.5, 0)?.blocks(q_total))
}

#[derive(Clone, Debug)]
pub struct KHamiltonian {
    pub q: Vec2,
    pub matrix: DMatrix<Complex64>,
}

impl KHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        crate::eig::eigvalsh(&self.matrix)
    }

    /// Row-major (re, im) pairs, little endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.dim();
        let mut out = Vec::with_capacity(16 * n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.matrix[(i, j)];
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out
    }
}

/// Everything needed to assemble H(q) for one valley.
#[derive(Clone, Debug)]
pub struct MomentumHamiltonian {
    pub geom: BilayerGeometry,
    pub basis: MomentumBasis,
    pub intra: [IntralayerTable; 2],
    pub inter: SampledInterlayerCoupling,
    labels: HashMap<[i64; 2], usize>,
}

impl MomentumHamiltonian {
    pub fn new(
        geom: BilayerGeometry,
        basis: MomentumBasis,
        intra: [IntralayerTable; 2],
        inter: SampledInterlayerCoupling,
    ) -> Result<Self> {
        for t in &intra {
            if t.grid > 0 && (t.tau - inter.options.tau).abs() > 1e-12 {
                return Err(Error::SampleMismatch(format!(
                    "intralayer τ = {} but coupling τ = {}",
                    t.tau, inter.options.tau
                )));
            }
        }
        if (basis.anchor - inter.anchor).norm() > 1e-12 {
            return Err(Error::SampleMismatch("basis and coupling use different valley anchors".into()));
        }
        if basis.lambda > inter.options.island_radius + 1e-12 {
            return Err(Error::SampleMismatch(format!(
                "basis radius {} exceeds sampled island radius {}",
                basis.lambda, inter.options.island_radius
            )));
        }
        let labels = basis.labels.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        Ok(Self { geom, basis, intra, inter, labels })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn assemble(&self, q: &Vec2) -> KHamiltonian {
        let b = &self.basis;
        let dim = b.len();
        let no = b.orbitals;
        let nl = b.labels.len();
        let mut h = DMatrix::<Complex64>::zeros(dim, dim);

        // Intralayer blocks: entry (n, n′) = Σ_L e^{−ik′·L} ĥ_{L, n−n′}, k′ = q + Θn′.
        for (layer, table) in [1usize, 2].iter().zip(&self.intra) {
            let off = b.layer_range(*layer).start;
            let o = no[layer - 1];
            let mut blk = DMatrix::<Complex64>::zeros(o, o);
            for (jc, np) in b.labels.iter().enumerate() {
                let k = q + self.geom.moire_vector(*np);
                let ph = table.phases(&k);
                for (mi, m) in table.modes.iter().enumerate() {
                    let Some(&ir) = self.labels.get(&[np[0] + m[0], np[1] + m[1]]) else {
                        continue;
                    };
                    blk.fill(Complex64::new(0.0, 0.0));
                    table.accumulate(mi, &ph, &mut blk);
                    for a in 0..o {
                        for c in 0..o {
                            h[(off + ir * o + a, off + jc * o + c)] += blk[(a, c)];
                        }
                    }
                }
            }
        }

        // Interlayer blocks from the sampled coupling; H₂₁ = H₁₂ᴴ.
        let off2 = b.layer_range(2).start;
        let (o1, o2) = (no[0], no[1]);
        let mut misses = 0usize;
        for (j2, np) in b.labels.iter().enumerate() {
            let mu = self.inter.mu(q, *np);
            for (j1, n) in b.labels.iter().enumerate() {
                let s = [n[0] - np[0], n[1] - np[1]];
                if self.inter.island(s).is_none() {
                    continue;
                }
                for a in 0..o1 {
                    for c in 0..o2 {
                        let pair = a * o2 + c;
                        let v = match self.inter.value(s, &mu, pair) {
                            Some(v) => v,
                            None => {
                                misses += 1;
                                Complex64::new(0.0, 0.0)
                            }
                        };
                        let (r, col) = (j1 * o1 + a, off2 + j2 * o2 + c);
                        h[(r, col)] = v;
                        h[(col, r)] = v.conj();
                    }
                }
            }
        }
        if misses > 0 {
            log::warn!("{misses} interlayer entries at q = ({:.5}, {:.5}) fell outside the sampled islands", q.x, q.y);
        }
        debug_assert_eq!(nl * (o1 + o2), dim);
        KHamiltonian { q: *q, matrix: h }
    }

    pub fn eigenvalues(&self, q: &Vec2) -> Result<Vec<f64>> {
        self.assemble(q).eigenvalues()
    }
}
