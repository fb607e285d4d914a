//! Real-space tight-binding ingredients: intralayer shell hoppings and the
//! interlayer distance-dependent coupling.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BilayerGeometry, Lattice2D, Vec2};

const SHELL_TOL: f64 = 1e-6;

fn default_strain_decay() -> f64 {
    3.37
}

/// Shell amplitudes (nearest neighbour first) and onsite energies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntralayerModel {
    pub shells: Vec<f64>,
    #[serde(default)]
    pub onsite: Vec<f64>,
    /// Dimensionless decay β in t(d) = t_k exp(−β(|d|/r_k − 1)) for strained bonds.
    #[serde(default = "default_strain_decay")]
    pub strain_decay: f64,
}

impl IntralayerModel {
    pub fn nearest_neighbor(t1: f64) -> Self {
        Self { shells: vec![t1], onsite: vec![], strain_decay: default_strain_decay() }
    }

    pub fn onsite_energy(&self, orbital: usize) -> f64 {
        self.onsite.get(orbital).copied().unwrap_or(0.0)
    }

    /// Enumerates all hops of the first `shells.len()` distance shells on `lat`.
    pub fn hoppings(&self, lat: &Lattice2D) -> LayerHoppings {
        let orbs = lat.orbitals();
        let reach = 2 + 2 * self.shells.len() as i64;
        let mut cands = Vec::new();
        for i in -reach..=reach {
            for j in -reach..=reach {
                let l = lat.point([i, j]);
                for (r, or) in orbs.iter().enumerate() {
                    for (c, oc) in orbs.iter().enumerate() {
                        let d = l + or.position - oc.position;
                        let dist = d.norm();
                        if dist > SHELL_TOL {
                            cands.push((dist, [i, j], r, c, d));
                        }
                    }
                }
            }
        }
        let mut radii: Vec<f64> = Vec::new();
        let mut dists: Vec<f64> = cands.iter().map(|c| c.0).collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for d in dists {
            if radii.last().is_none_or(|&r| d - r > SHELL_TOL) {
                radii.push(d);
            }
            if radii.len() > self.shells.len() {
                radii.pop();
                break;
            }
        }
        let mut hops: Vec<Hop> = cands
            .into_iter()
            .filter_map(|(dist, cell, row, col, d)| {
                let shell = radii.iter().position(|&r| (r - dist).abs() <= SHELL_TOL)?;
                Some(Hop { cell, row, col, shell, displacement: d })
            })
            .collect();
        hops.sort_by_key(|h| (h.shell, h.row, h.col, h.cell));
        LayerHoppings {
            hops,
            radii,
            amplitudes: self.shells.clone(),
            onsite: (0..orbs.len()).map(|o| self.onsite_energy(o)).collect(),
            strain_decay: self.strain_decay,
        }
    }
}

/// One directed hop: orbital `col` in cell R′ to orbital `row` in cell R = R′ + L,
/// with `cell` = L and `displacement` = A·L + τ_row − τ_col.
#[derive(Clone, Debug, PartialEq)]
pub struct Hop {
    pub cell: [i64; 2],
    pub row: usize,
    pub col: usize,
    pub shell: usize,
    pub displacement: Vec2,
}

#[derive(Clone, Debug)]
pub struct LayerHoppings {
    pub hops: Vec<Hop>,
    pub radii: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub onsite: Vec<f64>,
    pub strain_decay: f64,
}

impl LayerHoppings {
    pub fn num_orbitals(&self) -> usize {
        self.onsite.len()
    }

    /// Hopping amplitude for a hop of the given shell stretched to separation `d`.
    pub fn value(&self, shell: usize, d: &Vec2) -> f64 {
        let r = self.radii[shell];
        self.amplitudes[shell] * (-self.strain_decay * (d.norm() / r - 1.0)).exp()
    }

    /// m(q)_{αβ} = ε_α δ_{αβ} + Σ_L t(A·L + τ_α − τ_β) e^{−iq·A·L}.
    pub fn bloch(&self, lat: &Lattice2D, q: &Vec2) -> DMatrix<Complex64> {
        let n = self.num_orbitals();
        let mut m = DMatrix::from_fn(n, n, |i, j| {
            if i == j { Complex64::new(self.onsite[i], 0.0) } else { Complex64::new(0.0, 0.0) }
        });
        for h in &self.hops {
            let l = lat.point(h.cell);
            m[(h.row, h.col)] += self.amplitudes[h.shell] * Complex64::from_polar(1.0, -q.dot(&l));
        }
        m
    }
}

pub fn monolayer_bloch(model: &IntralayerModel, lat: &Lattice2D, q: &Vec2) -> DMatrix<Complex64> {
    model.hoppings(lat).bloch(lat, q)
}

fn default_scale() -> f64 {
    1.0
}
fn default_cutoff() -> f64 {
    8.0
}
fn default_cutoff_width() -> f64 {
    0.5
}
fn default_d() -> f64 {
    3.35
}
fn default_lambda() -> f64 {
    0.184 * crate::geometry::GRAPHENE_A
}
fn default_t_perp() -> f64 {
    0.608
}

/// Parameters of the isotropic interlayer functional
/// scale · t⊥ · exp(−(√(r² + z²) − d)/λ) · ramp(r).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterlayerParams {
    #[serde(default = "default_t_perp")]
    pub t_perp: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_cutoff_width")]
    pub cutoff_width: f64,
    /// Global multiplier; 0 decouples the layers.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Optional orbital-pair weights, row = layer-1 orbital, column = layer-2 orbital.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_weights: Option<Vec<Vec<f64>>>,
}

impl Default for InterlayerParams {
    fn default() -> Self {
        Self {
            t_perp: default_t_perp(),
            lambda: default_lambda(),
            d: default_d(),
            cutoff: default_cutoff(),
            cutoff_width: default_cutoff_width(),
            scale: default_scale(),
            pair_weights: None,
        }
    }
}

/// Quintic ramp equal to 1 below `rc − w`, 0 above `rc`, C² in between.
pub fn smooth_cutoff(r: f64, rc: f64, w: f64) -> f64 {
    if r >= rc {
        0.0
    } else if r <= rc - w {
        1.0
    } else {
        let s = (rc - r) / w;
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

#[derive(Clone, Debug)]
pub struct InterlayerModel {
    pub params: InterlayerParams,
    n1: usize,
    n2: usize,
    weights: Vec<f64>,
    /// Layer separation per orbital pair including orbital height offsets.
    z: Vec<f64>,
}

impl InterlayerModel {
    pub fn new(params: InterlayerParams, layer1: &Lattice2D, layer2: &Lattice2D) -> Result<Self> {
        let (n1, n2) = (layer1.num_orbitals(), layer2.num_orbitals());
        let weights = match &params.pair_weights {
            None => vec![1.0; n1 * n2],
            Some(w) => {
                if w.len() != n1 || w.iter().any(|r| r.len() != n2) {
                    return Err(Error::InvalidArgument(format!(
                        "pair_weights must be {n1}×{n2}"
                    )));
                }
                w.iter().flatten().copied().collect()
            }
        };
        let mut z = Vec::with_capacity(n1 * n2);
        for o1 in layer1.orbitals() {
            for o2 in layer2.orbitals() {
                z.push(params.d + o2.height - o1.height);
            }
        }
        Ok(Self { params, n1, n2, weights, z })
    }

    pub fn for_geometry(params: InterlayerParams, geom: &BilayerGeometry) -> Result<Self> {
        Self::new(params, &geom.layer1, &geom.layer2)
    }

    pub fn orbital_counts(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// h¹²(x) for layer-1 orbital `a` and layer-2 orbital `b`, with x the
    /// in-plane vector from the layer-2 site to the layer-1 site.
    pub fn value(&self, x: &Vec2, a: usize, b: usize) -> Result<f64> {
        if a >= self.n1 || b >= self.n2 {
            return Err(Error::UnknownOrbitalPair(a, b));
        }
        Ok(self.value_unchecked(x.norm(), a * self.n2 + b))
    }

    /// h²¹(x) = h¹²(−x)ᵀ for the real functional.
    pub fn value_21(&self, x: &Vec2, b: usize, a: usize) -> Result<f64> {
        self.value(&(-x), a, b)
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, r: f64, pair: usize) -> f64 {
        let p = &self.params;
        if r >= p.cutoff {
            return 0.0;
        }
        let z = self.z[pair];
        let radial = (-((r * r + z * z).sqrt() - p.d) / p.lambda).exp();
        p.scale * p.t_perp * self.weights[pair] * radial * smooth_cutoff(r, p.cutoff, p.cutoff_width)
    }

    pub fn pair_index(&self, a: usize, b: usize) -> usize {
        a * self.n2 + b
    }

    /// (c, γ) with |h(x)| ≤ c·e^{−γ|x|}.
    pub fn envelope(&self) -> (f64, f64) {
        let p = &self.params;
        let wmax = self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        // √(r² + z²) ≥ r, so the radial factor is at most e^{(d − r)/λ}.
        let c = (p.scale * p.t_perp).abs() * wmax * (p.d / p.lambda).exp();
        (c, 1.0 / p.lambda)
    }
}

/// On-disk model file: intralayer shells plus interlayer functional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub intralayer: IntralayerModel,
    #[serde(default)]
    pub interlayer: InterlayerParams,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn nearest_neighbor() -> Self {
        Self { intralayer: IntralayerModel::nearest_neighbor(-2.7), interlayer: InterlayerParams::default() }
    }

    /// Five-shell pz block. The amplitudes are an illustrative parameter set,
    /// not fitted ground truth.
    pub fn five_shell_illustrative() -> Self {
        Self {
            intralayer: IntralayerModel {
                shells: vec![-2.8922, 0.2425, -0.2656, 0.0235, 0.0524],
                onsite: vec![],
                strain_decay: default_strain_decay(),
            },
            interlayer: InterlayerParams::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GRAPHENE_A, Mat2};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn eigs(m: &DMatrix<Complex64>) -> Vec<f64> {
        crate::eig::eigvalsh_dense(m)
    }

    #[test]
    fn graphene_shell_structure() {
        let lat = Lattice2D::graphene(GRAPHENE_A);
        let hop = ModelFile::five_shell_illustrative().intralayer.hoppings(&lat);
        let a = GRAPHENE_A;
        let s3 = 3f64.sqrt();
        let expected = [a / s3, a, 2.0 * a / s3, 7f64.sqrt() * a / s3, s3 * a];
        for (r, e) in hop.radii.iter().zip(expected) {
            assert_relative_eq!(*r, e, max_relative = 1e-12);
        }
        for (shell, count) in [3, 6, 3, 6, 6].into_iter().enumerate() {
            let n = hop.hops.iter().filter(|h| h.shell == shell && h.col == 0).count();
            assert_eq!(n, count, "shell {shell}");
        }
    }

    #[test]
    fn nn_gamma_and_k() {
        let lat = Lattice2D::graphene(GRAPHENE_A);
        let model = IntralayerModel::nearest_neighbor(-2.7);
        let e = eigs(&monolayer_bloch(&model, &lat, &Vec2::zeros()));
        assert_relative_eq!(e[0], -8.1, epsilon = 1e-12);
        assert_relative_eq!(e[1], 8.1, epsilon = 1e-12);
        let k = Vec2::new(4.0 * PI / (3.0 * GRAPHENE_A), 0.0);
        let e = eigs(&monolayer_bloch(&model, &lat, &k));
        assert!((e[1] - e[0]).abs() < 1e-10);
    }

    #[test]
    fn five_shell_fermi_velocity_is_isotropic() {
        // Slope from a two-point difference along x agrees with the average
        // slope over a fine ring of radius δ around K.
        let lat = Lattice2D::graphene(GRAPHENE_A);
        let hop = ModelFile::five_shell_illustrative().intralayer.hoppings(&lat);
        let k = Vec2::new(4.0 * PI / (3.0 * GRAPHENE_A), 0.0);
        let e0 = eigs(&hop.bloch(&lat, &k));
        let ef = 0.5 * (e0[0] + e0[1]);
        let split = |dq: Vec2| {
            let e = eigs(&hop.bloch(&lat, &(k + dq)));
            0.5 * (e[1] - e[0])
        };
        let h = 1e-4;
        let v_fd = split(Vec2::new(h, 0.0)) / h;
        let delta = 1e-5;
        let n = 360;
        let v_ring: f64 = (0..n)
            .map(|i| {
                let phi = 2.0 * PI * i as f64 / n as f64;
                split(delta * Vec2::new(phi.cos(), phi.sin())) / delta
            })
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(v_fd, v_ring, max_relative = 1e-3);
        assert!(v_fd > 5.0 && v_fd < 8.0, "v_F = {v_fd}");
        assert!(ef.is_finite());
    }

    #[test]
    fn interlayer_cutoff_and_center() {
        let lat = Lattice2D::graphene(GRAPHENE_A);
        let m = InterlayerModel::new(InterlayerParams::default(), &lat, &lat).unwrap();
        assert_eq!(m.value(&Vec2::new(9.0, 0.0), 0, 0).unwrap(), 0.0);
        assert_eq!(m.value(&Vec2::new(0.0, 8.0), 1, 0).unwrap(), 0.0);
        assert_relative_eq!(m.value(&Vec2::zeros(), 0, 0).unwrap(), 0.608, epsilon = 1e-15);
        assert!(matches!(m.value(&Vec2::zeros(), 2, 0), Err(Error::UnknownOrbitalPair(2, 0))));
    }

    #[test]
    fn ramp_is_c1() {
        let (rc, w) = (8.0, 0.5);
        let h = 1e-6;
        for r0 in [rc - w, rc] {
            let left = (smooth_cutoff(r0, rc, w) - smooth_cutoff(r0 - h, rc, w)) / h;
            let right = (smooth_cutoff(r0 + h, rc, w) - smooth_cutoff(r0, rc, w)) / h;
            assert!(left.abs() < 1e-4 && right.abs() < 1e-4);
        }
    }

    #[test]
    fn first_shell_coupling_calibration() {
        // (1/|Γ|) ∫ T(x) e^{−iK·x} dx via radial Hankel quadrature.
        let lat = Lattice2D::graphene(GRAPHENE_A);
        let m = InterlayerModel::new(InterlayerParams::default(), &lat, &lat).unwrap();
        let k = 4.0 * PI / (3.0 * GRAPHENE_A);
        let n = 20000;
        let dr = 8.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) * dr;
            let nphi = 64;
            let j0: f64 = (0..nphi)
                .map(|p| (k * r * (2.0 * PI * (p as f64 + 0.5) / nphi as f64).cos()).cos())
                .sum::<f64>()
                / nphi as f64;
            acc += 2.0 * PI * r * dr * j0 * m.value_unchecked(r, 0);
        }
        let w = acc / lat.cell_area();
        assert!((w - 0.110).abs() < 0.002, "w = {w}");
    }

    #[test]
    fn model_file_round_trip() {
        let f = ModelFile::five_shell_illustrative();
        let s = serde_json::to_string(&f).unwrap();
        let back: ModelFile = serde_json::from_str(&s).unwrap();
        assert_eq!(f, back);
        let bad = r#"{"intralayer": {"shells": [-2.7], "bogus": 1}}"#;
        assert!(serde_json::from_str::<ModelFile>(bad).is_err());
    }

    #[test]
    fn interlayer_envelope_bound() {
        let lat = Lattice2D::graphene(GRAPHENE_A);
        let m = InterlayerModel::new(InterlayerParams::default(), &lat, &lat).unwrap();
        let (c, g) = m.envelope();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let v = m.value(&x, rng.gen_range(0..2), rng.gen_range(0..2)).unwrap();
            assert!(v.abs() <= c * (-g * x.norm()).exp() * (1.0 + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn bloch_is_hermitian(qx in -5.0f64..5.0, qy in -5.0f64..5.0) {
            let lat = Lattice2D::graphene(GRAPHENE_A);
            let m = monolayer_bloch(&ModelFile::five_shell_illustrative().intralayer, &lat, &Vec2::new(qx, qy));
            prop_assert!(crate::eig::hermiticity_defect(&m) < 1e-14);
        }

        #[test]
        fn bloch_spectrum_periodic(qx in -3.0f64..3.0, qy in -3.0f64..3.0, i in -3i64..3, j in -3i64..3) {
            let lat = Lattice2D::graphene(GRAPHENE_A).rotated(0.3);
            let hop = ModelFile::five_shell_illustrative().intralayer.hoppings(&lat);
            let q = Vec2::new(qx, qy);
            let g = lat.reciprocal().point([i, j]);
            let a = eigs(&hop.bloch(&lat, &q));
            let b = eigs(&hop.bloch(&lat, &(q + g)));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn nn_particle_hole(qx in -3.0f64..3.0, qy in -3.0f64..3.0) {
            let lat = Lattice2D::graphene(GRAPHENE_A);
            let e = eigs(&monolayer_bloch(&IntralayerModel::nearest_neighbor(-2.7), &lat, &Vec2::new(qx, qy)));
            prop_assert!((e[0] + e[1]).abs() < 1e-12);
        }

        #[test]
        fn interlayer_hermitian_pairing(x in -9.0f64..9.0, y in -9.0f64..9.0, a in 0usize..2, b in 0usize..2) {
            let lat = Lattice2D::graphene(GRAPHENE_A);
            let p = InterlayerParams { pair_weights: Some(vec![vec![1.0, 0.7], vec![0.4, 1.2]]), ..Default::default() };
            let m = InterlayerModel::new(p, &lat, &lat.rotated(0.1)).unwrap();
            let v = Vec2::new(x, y);
            prop_assert!((m.value(&v, a, b).unwrap() - m.value_21(&(-v), b, a).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn square_lattice_shells() {
        let lat = Lattice2D::new(
            Mat2::identity(),
            vec![crate::geometry::Orbital { label: "s".into(), position: Vec2::zeros(), height: 0.0 }],
        )
        .unwrap();
        let hop = IntralayerModel { shells: vec![-1.0, 0.1], onsite: vec![0.5], strain_decay: 0.0 }.hoppings(&lat);
        assert_eq!(hop.hops.len(), 8);
        let e = eigs(&hop.bloch(&lat, &Vec2::zeros()));
        assert_relative_eq!(e[0], 0.5 - 4.0 + 0.4, epsilon = 1e-14);
    }
}
