use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::field::{DisplacementField, ModeSet};
use super::solver::{minimize, LbfgsOptions};
use super::{ElasticityTensor, GsfeModel, RelaxOptions, RelaxResult};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::geometry::{BilayerGeometry, Mat2, Vec2};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyParts {
    pub gsfe: f64,
    pub elastic: f64,
    pub total: f64,
}

/// Energy functional on the moiré torus, averaged over the cell (eV/Å²):
/// ⨍ ½Φ(t + A₂⁻¹v) + ½Φ(−t − A₁⁻¹v) + W(ε(u₁)) + W(ε(u₂)), v = u₁ − u₂,
/// with t the fractional moiré coordinate.
#[derive(Clone, Debug)]
pub struct RelaxationProblem {
    a1inv: Mat2,
    a2inv: Mat2,
    theta: Mat2,
    gsfe: GsfeModel,
    stiffness: [Vec<Mat2>; 2],
    modes: ModeSet,
    fft: Fft2,
}

/// S(k) with ⨍ W(ε(a cos k·x)) = ½ aᵀ S a.
fn stiffness(e: &ElasticityTensor, k: Vec2) -> Mat2 {
    let c = Vec2::new(k.x, -k.y);
    let d = Vec2::new(k.y, k.x);
    0.5 * (e.bulk * k * k.transpose() + e.shear * (c * c.transpose() + d * d.transpose()))
}

impl RelaxationProblem {
    pub fn new(
        geom: &BilayerGeometry,
        gsfe: GsfeModel,
        elast1: ElasticityTensor,
        elast2: ElasticityTensor,
        modes: ModeSet,
        grid: usize,
    ) -> Result<Self> {
        if !elast1.is_positive_definite() || !elast2.is_positive_definite() {
            return Err(Error::InvalidArgument("elasticity moduli must be positive".into()));
        }
        // Stacking terms mix mode content with the GSFE harmonics.
        let need = (4 * (modes.max_index() + gsfe.max_index())).max(16) as usize;
        let n = if grid == 0 { need } else { grid };
        if n < 2 * modes.max_index() as usize + 1 {
            return Err(Error::InvalidArgument(format!("quadrature grid {n} cannot resolve the mode set")));
        }
        let gv: Vec<Vec2> = modes.modes.iter().map(|m| geom.moire_vector(*m)).collect();
        let stiffness = [
            gv.iter().map(|k| stiffness(&elast1, *k)).collect(),
            gv.iter().map(|k| stiffness(&elast2, *k)).collect(),
        ];
        Ok(Self {
            a1inv: geom.layer1.inverse(),
            a2inv: geom.layer2.inverse(),
            theta: geom.theta_matrix,
            gsfe,
            stiffness,
            modes,
            fft: Fft2::new(n),
        })
    }

    pub fn grid_size(&self) -> usize {
        self.fft.size()
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    /// Pointwise stacking energy density and its v-gradient at moiré coordinate t.
    fn local(&self, gsfe: &GsfeModel, t: [f64; 2], v: Vec2) -> (f64, Vec2) {
        let s1 = self.a2inv * v;
        let s2 = -(self.a1inv * v);
        let p1 = [t[0] + s1.x, t[1] + s1.y];
        let p2 = [-t[0] + s2.x, -t[1] + s2.y];
        let e = 0.5 * (gsfe.value(p1) + gsfe.value(p2));
        let g1 = gsfe.gradient(p1);
        let g2 = gsfe.gradient(p2);
        let grad = 0.5 * (self.a2inv.transpose() * Vec2::new(g1[0], g1[1])
            - self.a1inv.transpose() * Vec2::new(g2[0], g2[1]));
        (e, grad)
    }

    /// Real-space samples of a field given by half-set coefficients, packed as
    /// v_x + i v_y.
    fn synthesize(&self, coeffs: &[[Complex64; 2]]) -> Vec<Complex64> {
        let n = self.fft.size();
        let mut buf = vec![ZERO; n * n];
        let i = Complex64::i();
        for (m, c) in self.modes.modes.iter().zip(coeffs) {
            buf[self.fft.index(*m)] += c[0] + i * c[1];
            buf[self.fft.index([-m[0], -m[1]])] += c[0].conj() + i * c[1].conj();
        }
        self.fft.inverse(&mut buf);
        buf
    }

    /// Cell average of the stacking energy and the Fourier coefficients
    /// ĝ_n = ⨍ ∂g/∂v e^{−iG_n·x} on the half set.
    fn gsfe_terms(&self, gsfe: &GsfeModel, v: &[[Complex64; 2]]) -> (f64, Vec<[Complex64; 2]>) {
        let n = self.fft.size();
        let field = self.synthesize(v);
        let inv = 1.0 / n as f64;
        let rows: Vec<(f64, Vec<Complex64>)> = field
            .par_chunks(n)
            .enumerate()
            .map(|(i, row)| {
                let mut e = 0.0;
                let mut g = Vec::with_capacity(n);
                for (j, z) in row.iter().enumerate() {
                    let (el, gl) = self.local(gsfe, [i as f64 * inv, j as f64 * inv], Vec2::new(z.re, z.im));
                    e += el;
                    g.push(Complex64::new(gl.x, gl.y));
                }
                (e, g)
            })
            .collect();
        let mut energy = 0.0;
        let mut buf = Vec::with_capacity(n * n);
        for (e, g) in rows {
            energy += e;
            buf.extend(g);
        }
        let norm = 1.0 / (n * n) as f64;
        energy *= norm;
        self.fft.forward(&mut buf);
        let coeffs = self
            .modes
            .modes
            .iter()
            .map(|m| {
                let p = buf[self.fft.index(*m)] * norm;
                let q = buf[self.fft.index([-m[0], -m[1]])].conj() * norm;
                [(p + q) * 0.5, (p - q) * Complex64::new(0.0, -0.5)]
            })
            .collect();
        (energy, coeffs)
    }

    fn elastic(&self, layer: usize, u: &[[Complex64; 2]]) -> f64 {
        self.stiffness[layer]
            .iter()
            .zip(u)
            .map(|(s, c)| {
                let a = Vec2::new(c[0].re, c[1].re);
                let b = Vec2::new(c[0].im, c[1].im);
                2.0 * (a.dot(&(s * a)) + b.dot(&(s * b)))
            })
            .sum()
    }

    pub fn energy_of(&self, u: &DisplacementField) -> EnergyParts {
        assert_eq!(u.modes, self.modes, "field modes differ from the problem's mode set");
        let v: Vec<[Complex64; 2]> = u.u1.iter().zip(&u.u2).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
        let (gsfe, _) = self.gsfe_terms(&self.gsfe, &v);
        let elastic = self.elastic(0, &u.u1) + self.elastic(1, &u.u2);
        EnergyParts { gsfe, elastic, total: gsfe + elastic }
    }

    /// Gradient with respect to the real parameters (Re, Im of each
    /// coefficient) of both layers, layout per mode [Re ux, Re uy, Im ux, Im uy].
    pub fn gradient_of(&self, u: &DisplacementField) -> (Vec<f64>, Vec<f64>) {
        let x = self.pack(u, false);
        let (_, g) = self.objective(&self.gsfe, &x, false);
        let half = g.len() / 2;
        (g[..half].to_vec(), g[half..].to_vec())
    }

    pub fn pack(&self, u: &DisplacementField, identical: bool) -> Vec<f64> {
        let put = |out: &mut Vec<f64>, c: &[Complex64; 2], s: f64| {
            out.extend([s * c[0].re, s * c[1].re, s * c[0].im, s * c[1].im]);
        };
        let mut x = Vec::new();
        if identical {
            for (a, b) in u.u1.iter().zip(&u.u2) {
                put(&mut x, &[a[0] - b[0], a[1] - b[1]], 1.0);
            }
        } else {
            u.u1.iter().for_each(|c| put(&mut x, c, 1.0));
            u.u2.iter().for_each(|c| put(&mut x, c, 1.0));
        }
        x
    }

    pub fn unpack(&self, x: &[f64], identical: bool) -> DisplacementField {
        let m = self.modes.len();
        let read = |k: usize| [Complex64::new(x[4 * k], x[4 * k + 2]), Complex64::new(x[4 * k + 1], x[4 * k + 3])];
        let mut f = DisplacementField::zero(self.theta, self.modes.clone());
        for k in 0..m {
            if identical {
                let v = read(k);
                f.u1[k] = [v[0] * 0.5, v[1] * 0.5];
                f.u2[k] = [-v[0] * 0.5, -v[1] * 0.5];
            } else {
                f.u1[k] = read(k);
                f.u2[k] = read(m + k);
            }
        }
        f
    }

    fn coeffs_at(x: &[f64], offset: usize, m: usize) -> Vec<[Complex64; 2]> {
        (0..m)
            .map(|k| {
                let i = 4 * (offset + k);
                [Complex64::new(x[i], x[i + 2]), Complex64::new(x[i + 1], x[i + 3])]
            })
            .collect()
    }

    /// Objective and gradient in packed real parameters.
    fn objective(&self, gsfe: &GsfeModel, x: &[f64], identical: bool) -> (f64, Vec<f64>) {
        let m = self.modes.len();
        let mut grad = vec![0.0; x.len()];
        let push_gsfe = |grad: &mut [f64], offset: usize, gh: &[[Complex64; 2]], sign: f64| {
            for (k, c) in gh.iter().enumerate() {
                let i = 4 * (offset + k);
                grad[i] += sign * 2.0 * c[0].re;
                grad[i + 1] += sign * 2.0 * c[1].re;
                grad[i + 2] += sign * 2.0 * c[0].im;
                grad[i + 3] += sign * 2.0 * c[1].im;
            }
        };
        let push_elastic = |grad: &mut [f64], offset: usize, layer: usize, scale: f64| {
            for (k, s) in self.stiffness[layer].iter().enumerate() {
                let i = 4 * (offset + k);
                let a = Vec2::new(x[i], x[i + 1]);
                let b = Vec2::new(x[i + 2], x[i + 3]);
                let ga = 4.0 * scale * (s * a);
                let gb = 4.0 * scale * (s * b);
                grad[i] += ga.x;
                grad[i + 1] += ga.y;
                grad[i + 2] += gb.x;
                grad[i + 3] += gb.y;
            }
        };
        if identical {
            let v = Self::coeffs_at(x, 0, m);
            let (eg, gh) = self.gsfe_terms(gsfe, &v);
            // u₁ = v/2, u₂ = −v/2: W(v/2) + W(−v/2) = ½W(v) per layer pair.
            let el = 0.25 * (self.elastic(0, &v) + self.elastic(1, &v));
            push_gsfe(&mut grad, 0, &gh, 1.0);
            push_elastic(&mut grad, 0, 0, 0.25);
            push_elastic(&mut grad, 0, 1, 0.25);
            (eg + el, grad)
        } else {
            let u1 = Self::coeffs_at(x, 0, m);
            let u2 = Self::coeffs_at(x, m, m);
            let v: Vec<[Complex64; 2]> = u1.iter().zip(&u2).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
            let (eg, gh) = self.gsfe_terms(gsfe, &v);
            let el = self.elastic(0, &u1) + self.elastic(1, &u2);
            push_gsfe(&mut grad, 0, &gh, 1.0);
            push_gsfe(&mut grad, m, &gh, -1.0);
            push_elastic(&mut grad, 0, 0, 1.0);
            push_elastic(&mut grad, m, 1, 1.0);
            (eg + el, grad)
        }
    }

    /// Block-diagonal approximate inverse Hessian.
    fn preconditioner(&self, identical: bool) -> Vec<Mat2> {
        let two_pi = std::f64::consts::TAU;
        let mut mu = 0.0;
        for t in &self.gsfe.terms {
            let k = Vec2::new(t.k[0] as f64, t.k[1] as f64);
            let b1 = two_pi * self.a1inv.transpose() * k;
            let b2 = two_pi * self.a2inv.transpose() * k;
            mu += t.c.abs() * 0.5 * (b1.norm_squared() + b2.norm_squared());
        }
        let mu = mu.max(1e-12);
        if identical {
            self.stiffness[0]
                .iter()
                .zip(&self.stiffness[1])
                .map(|(s1, s2)| (s1 + s2 + Mat2::identity() * mu).try_inverse().unwrap())
                .collect()
        } else {
            self.stiffness
                .iter()
                .flatten()
                .map(|s| (4.0 * s + Mat2::identity() * mu).try_inverse().unwrap())
                .collect()
        }
    }

    pub fn relax(&self, opts: &RelaxOptions) -> Result<RelaxResult> {
        let identical = opts.identical_layers;
        // The constant c0 never affects the minimizer; dropping it keeps the
        // iterates bit-identical under gauge shifts.
        let shape = GsfeModel { c0: 0.0, terms: self.gsfe.terms.clone() };
        let blocks = self.preconditioner(identical);
        let nvar = 4 * self.modes.len() * if identical { 1 } else { 2 };
        let mut x = vec![0.0; nvar];
        let precond = |g: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; g.len()];
            for (k, p) in blocks.iter().enumerate() {
                let i = 4 * k;
                let a = p * Vec2::new(g[i], g[i + 1]);
                let b = p * Vec2::new(g[i + 2], g[i + 3]);
                out[i..i + 4].copy_from_slice(&[a.x, a.y, b.x, b.y]);
            }
            out
        };
        let lopts = LbfgsOptions {
            gradient_tol: opts.gradient_tol,
            max_iterations: opts.max_iterations,
            ..Default::default()
        };
        let mut report = minimize(&mut x, |x| self.objective(&shape, x, identical), precond, &lopts);
        report.energies.iter_mut().for_each(|e| *e += self.gsfe.c0);
        if !report.converged {
            return Err(Error::NotConverged { iterations: report.iterations, gradient_norm: report.gradient_norm });
        }
        let field = self.unpack(&x, identical);
        let energy = self.energy_of(&field);
        Ok(RelaxResult { field, energy, report })
    }

    /// Packed objective used by tests and diagnostics.
    pub fn objective_packed(&self, x: &[f64], identical: bool) -> (f64, Vec<f64>) {
        self.objective(&self.gsfe, x, identical)
    }
}
