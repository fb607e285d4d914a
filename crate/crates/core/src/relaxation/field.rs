use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BilayerGeometry, Mat2, Vec2};

/// Half of a symmetric set of nonzero moiré indices: n with n₁ > 0, or n₁ = 0
/// and n₂ > 0. The partner −n carries the conjugate coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    pub modes: Vec<[i64; 2]>,
}

pub fn is_half_mode(n: [i64; 2]) -> bool {
    n[0] > 0 || (n[0] == 0 && n[1] > 0)
}

impl ModeSet {
    /// Modes with |Θ₂₁ n| ≤ cutoff · |shortest moiré vector|.
    pub fn circular(geom: &BilayerGeometry, cutoff: f64) -> Self {
        let g0 = geom.moire_reciprocal_length();
        let limit = cutoff * g0 * (1.0 + 1e-9);
        let reach = (2.0 * cutoff).ceil() as i64 + 2;
        let mut modes = Vec::new();
        for i in -reach..=reach {
            for j in -reach..=reach {
                let n = [i, j];
                if is_half_mode(n) && geom.moire_vector(n).norm() <= limit {
                    modes.push(n);
                }
            }
        }
        modes.sort_by(|a, b| {
            let na = geom.moire_vector(*a).norm();
            let nb = geom.moire_vector(*b).norm();
            na.partial_cmp(&nb).unwrap().then(a.cmp(b))
        });
        Self { modes }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn max_index(&self) -> i64 {
        self.modes.iter().map(|n| n[0].abs().max(n[1].abs())).max().unwrap_or(0)
    }

    pub fn position(&self, n: [i64; 2]) -> Option<usize> {
        self.modes.iter().position(|&m| m == n)
    }
}

/// Moiré-periodic displacement fields u_j(x) = Σ_n U_{j,n} e^{iΘ₂₁n·x}, real,
/// zero-mean, stored on a half mode set.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub theta_matrix: Mat2,
    pub modes: ModeSet,
    pub u1: Vec<[Complex64; 2]>,
    pub u2: Vec<[Complex64; 2]>,
}

fn cmul_phase(u: &[Complex64; 2], phase: f64) -> [f64; 2] {
    let e = Complex64::from_polar(1.0, phase);
    [2.0 * (u[0] * e).re, 2.0 * (u[1] * e).re]
}

impl DisplacementField {
    pub fn zero(theta_matrix: Mat2, modes: ModeSet) -> Self {
        let z = [Complex64::new(0.0, 0.0); 2];
        Self { theta_matrix, u1: vec![z; modes.len()], u2: vec![z; modes.len()], modes }
    }

    pub fn is_zero(&self) -> bool {
        self.u1.iter().chain(&self.u2).all(|c| c[0].norm() == 0.0 && c[1].norm() == 0.0)
    }

    pub fn layer(&self, j: usize) -> &[[Complex64; 2]] {
        match j {
            1 => &self.u1,
            2 => &self.u2,
            _ => panic!("layer index must be 1 or 2"),
        }
    }

    /// u_j at a physical position x.
    pub fn eval(&self, layer: usize, x: &Vec2) -> Vec2 {
        let mut out = Vec2::zeros();
        for (n, c) in self.modes.modes.iter().zip(self.layer(layer)) {
            let g = self.theta_matrix * Vec2::new(n[0] as f64, n[1] as f64);
            let v = cmul_phase(c, g.dot(x));
            out += Vec2::new(v[0], v[1]);
        }
        out
    }

    /// u_j as a function of the layer's configuration s (fractional
    /// disregistry in the partner lattice). Layer 1 sees e^{2πi n·s}, layer 2
    /// sees e^{−2πi n·s}.
    pub fn eval_config(&self, layer: usize, s: [f64; 2]) -> Vec2 {
        let sign = if layer == 1 { 1.0 } else { -1.0 };
        let mut out = Vec2::zeros();
        for (n, c) in self.modes.modes.iter().zip(self.layer(layer)) {
            let ph = sign * TAU * (n[0] as f64 * s[0] + n[1] as f64 * s[1]);
            let v = cmul_phase(c, ph);
            out += Vec2::new(v[0], v[1]);
        }
        out
    }

    /// Σ_n |U_n|² over both layers and the implicit −n partners.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self
            .u1
            .iter()
            .chain(&self.u2)
            .map(|c| c[0].norm_sqr() + c[1].norm_sqr())
            .sum();
        (2.0 * s).sqrt()
    }

    pub fn max_coefficient(&self) -> f64 {
        self.u1
            .iter()
            .chain(&self.u2)
            .map(|c| c[0].norm().max(c[1].norm()))
            .fold(0.0, f64::max)
    }

    /// Radius (in units of the shortest moiré reciprocal vector) containing
    /// `fraction` of the ℓ² mass of both layers' coefficients.
    pub fn mass_radius(&self, fraction: f64) -> f64 {
        let mut g0 = f64::INFINITY;
        for i in -2i64..=2 {
            for j in -2i64..=2 {
                if i != 0 || j != 0 {
                    g0 = g0.min((self.theta_matrix * Vec2::new(i as f64, j as f64)).norm());
                }
            }
        }
        let mut items: Vec<(f64, f64)> = self
            .modes
            .modes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let r = (self.theta_matrix * Vec2::new(n[0] as f64, n[1] as f64)).norm() / g0;
                let w = self.u1[i][0].norm_sqr()
                    + self.u1[i][1].norm_sqr()
                    + self.u2[i][0].norm_sqr()
                    + self.u2[i][1].norm_sqr();
                (r, w)
            })
            .collect();
        items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total: f64 = items.iter().map(|x| x.1).sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (r, w) in items {
            acc += w;
            if acc >= fraction * total {
                return r;
            }
        }
        f64::INFINITY
    }

    pub fn to_json(&self) -> FieldFile {
        let row = |n: &[i64; 2], c: &[Complex64; 2]| {
            vec![n[0] as f64, n[1] as f64, c[0].re, c[0].im, c[1].re, c[1].im]
        };
        let t = self.theta_matrix;
        FieldFile {
            g_basis: [[t[(0, 0)], t[(1, 0)]], [t[(0, 1)], t[(1, 1)]]],
            coeffs: self.modes.modes.iter().zip(&self.u1).map(|(n, c)| row(n, c)).collect(),
            layer2_coeffs: Some(self.modes.modes.iter().zip(&self.u2).map(|(n, c)| row(n, c)).collect()),
        }
    }

    pub fn from_json(file: &FieldFile) -> Result<Self> {
        let [c0, c1] = file.g_basis;
        let theta = Mat2::new(c0[0], c1[0], c0[1], c1[1]);
        let parse = |rows: &[Vec<f64>]| -> Result<Vec<([i64; 2], [Complex64; 2])>> {
            rows.iter()
                .map(|r| {
                    if r.len() != 6 {
                        return Err(Error::InvalidArgument(format!(
                            "displacement coefficient rows need 6 entries, got {}",
                            r.len()
                        )));
                    }
                    let n = [r[0].round() as i64, r[1].round() as i64];
                    let c = [Complex64::new(r[2], r[3]), Complex64::new(r[4], r[5])];
                    Ok((n, c))
                })
                .collect()
        };
        let fold = |entries: Vec<([i64; 2], [Complex64; 2])>| -> Result<Vec<([i64; 2], [Complex64; 2])>> {
            let mut out: Vec<([i64; 2], [Complex64; 2])> = Vec::new();
            for (n, c) in entries {
                if n == [0, 0] {
                    if c.iter().any(|z| z.norm() > 1e-12) {
                        return Err(Error::InvalidArgument("displacement field must have zero mean".into()));
                    }
                    continue;
                }
                let (n, c) = if is_half_mode(n) { (n, c) } else { ([-n[0], -n[1]], [c[0].conj(), c[1].conj()]) };
                if let Some(prev) = out.iter().find(|e| e.0 == n) {
                    if (prev.1[0] - c[0]).norm() > 1e-12 || (prev.1[1] - c[1]).norm() > 1e-12 {
                        return Err(Error::InvalidArgument(format!(
                            "coefficients at ±{n:?} are not complex conjugates"
                        )));
                    }
                    continue;
                }
                out.push((n, c));
            }
            Ok(out)
        };
        let l1 = fold(parse(&file.coeffs)?)?;
        let l2 = match &file.layer2_coeffs {
            Some(rows) => fold(parse(rows)?)?,
            None => l1.iter().map(|(n, c)| (*n, [-c[0], -c[1]])).collect(),
        };
        let mut modes: Vec<[i64; 2]> = l1.iter().map(|e| e.0).collect();
        for (n, _) in &l2 {
            if !modes.contains(n) {
                modes.push(*n);
            }
        }
        let modes = ModeSet { modes };
        let mut field = DisplacementField::zero(theta, modes);
        for (n, c) in l1 {
            let i = field.modes.position(n).unwrap();
            field.u1[i] = c;
        }
        for (n, c) in l2 {
            let i = field.modes.position(n).unwrap();
            field.u2[i] = c;
        }
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: FieldFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json(&file)
    }
}

/// JSON form: `G_basis` lists the two moiré reciprocal basis vectors,
/// `coeffs` rows are [n1, n2, Re ux, Im ux, Re uy, Im uy] for layer 1, and
/// `layer2_coeffs` (optional) the same for layer 2; absent means u₂ = −u₁.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldFile {
    #[serde(rename = "G_basis")]
    pub g_basis: [[f64; 2]; 2],
    pub coeffs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer2_coeffs: Option<Vec<Vec<f64>>>,
}
