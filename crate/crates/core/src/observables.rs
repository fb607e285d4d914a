//! Band structures, smeared densities of states and Γ-point convergence fits.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::geometry::{rotation, BilayerGeometry, Vec2};
use crate::hamiltonian::{valley_anchor, MomentumHamiltonian};

#[derive(Clone, Debug, Serialize)]
pub struct KPath {
    pub labels: Vec<String>,
    pub vertices: Vec<[f64; 2]>,
    pub points_per_segment: usize,
}

/// High-symmetry points of the moiré zone around a valley:
/// K_M at the anchor, K′_M = K_M + Θ₂₁κ, Γ_M the zone center adjacent to
/// both, M_M the midpoint of the K_M–K′_M edge.
pub fn moire_points(geom: &BilayerGeometry, valley: usize) -> [Vec2; 4] {
    let k1 = geom.dirac_point(1);
    let kappa = geom.theta_matrix * geom.valley_frac;
    let kp = k1 + kappa;
    // The center coset is K₁ − Θκ modulo Θ₂₁ℤ².
    let tinv = geom.theta_matrix.try_inverse().expect("Θ₂₁ is invertible");
    let coset = |p: Vec2| {
        let f = tinv * (p - (k1 - kappa));
        (f.x - f.x.round()).abs() + (f.y - f.y.round()).abs()
    };
    let cands = [k1 + rotation(-std::f64::consts::FRAC_PI_3) * kappa, k1 + rotation(std::f64::consts::FRAC_PI_3) * kappa];
    let gamma = if coset(cands[0]) <= coset(cands[1]) { cands[0] } else { cands[1] };
    let m = 0.5 * (k1 + kp);
    let pts = [k1, gamma, m, kp];
    if valley == 2 { pts.map(|p| -p) } else { pts }
}

pub fn gamma_point(geom: &BilayerGeometry, valley: usize) -> Vec2 {
    moire_points(geom, valley)[1]
}

impl KPath {
    pub fn new(labels: Vec<String>, vertices: Vec<Vec2>, points_per_segment: usize) -> Result<Self> {
        if vertices.len() < 2 || labels.len() != vertices.len() || points_per_segment == 0 {
            return Err(Error::InvalidArgument("a path needs ≥ 2 labelled vertices and ≥ 1 point per segment".into()));
        }
        if vertices.windows(2).any(|w| (w[1] - w[0]).norm() < 1e-12) {
            return Err(Error::InvalidArgument("consecutive path vertices coincide".into()));
        }
        Ok(Self { labels, vertices: vertices.iter().map(|v| [v.x, v.y]).collect(), points_per_segment })
    }

    pub fn moire(geom: &BilayerGeometry, valley: usize, points_per_segment: usize) -> Result<Self> {
        let labels = ["K_M", "Γ_M", "M_M", "K′_M"].iter().map(|s| s.to_string()).collect();
        Self::new(labels, moire_points(geom, valley).to_vec(), points_per_segment)
    }

    /// Cumulative distances and momenta, vertices included once.
    pub fn sample(&self) -> (Vec<f64>, Vec<Vec2>) {
        let v: Vec<Vec2> = self.vertices.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let mut dist = Vec::new();
        let mut pts = Vec::new();
        let mut s0 = 0.0;
        for w in v.windows(2) {
            let len = (w[1] - w[0]).norm();
            for i in 0..self.points_per_segment {
                let t = i as f64 / self.points_per_segment as f64;
                pts.push(w[0] + (w[1] - w[0]) * t);
                dist.push(s0 + t * len);
            }
            s0 += len;
        }
        pts.push(*v.last().unwrap());
        dist.push(s0);
        (dist, pts)
    }

    /// Indices of the vertices in the sampled point list.
    pub fn vertex_indices(&self) -> Vec<usize> {
        (0..self.vertices.len()).map(|i| i * self.points_per_segment).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BandStructure {
    pub distances: Vec<f64>,
    pub kpoints: Vec<[f64; 2]>,
    /// Ascending eigenvalues per k-point, eV.
    pub energies: Vec<Vec<f64>>,
}

/// Eigenvalues at a list of momenta, evaluated in parallel, returned in input order.
pub fn spectra(h: &MomentumHamiltonian, qs: &[Vec2]) -> Result<Vec<Vec<f64>>> {
    qs.par_iter().map(|q| h.eigenvalues(q)).collect()
}

pub fn bands(h: &MomentumHamiltonian, path: &KPath) -> Result<BandStructure> {
    let (distances, pts) = path.sample();
    let energies = spectra(h, &pts)?;
    Ok(BandStructure { distances, kpoints: pts.iter().map(|p| [p.x, p.y]).collect(), energies })
}

impl BandStructure {
    pub fn num_bands(&self) -> usize {
        self.energies.first().map_or(0, |e| e.len())
    }

    /// Span of the two bands straddling charge neutrality along the path.
    pub fn middle_bandwidth(&self) -> f64 {
        let n = self.num_bands();
        let lo = self.energies.iter().map(|e| e[n / 2 - 1]).fold(f64::INFINITY, f64::min);
        let hi = self.energies.iter().map(|e| e[n / 2]).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    /// Gap between the middle pair at sample `i`.
    pub fn middle_gap(&self, i: usize) -> f64 {
        let n = self.num_bands();
        self.energies[i][n / 2] - self.energies[i][n / 2 - 1]
    }

    /// Header row then `s,kx,ky,e1..eN`.
    pub fn to_csv(&self) -> String {
        let n = self.num_bands();
        let mut out = String::from("s,kx,ky");
        for b in 1..=n {
            out.push_str(&format!(",e{b}"));
        }
        out.push('\n');
        for ((s, k), e) in self.distances.iter().zip(&self.kpoints).zip(&self.energies) {
            out.push_str(&format!("{s:.12e},{:.12e},{:.12e}", k[0], k[1]));
            for v in e {
                out.push_str(&format!(",{v:.12e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Unit-mass Gaussian φ_ε(x) = e^{−x²/2ε²}/(√(2π) ε).
pub fn gaussian(x: f64, eps: f64) -> f64 {
    (-0.5 * (x / eps).powi(2)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * eps)
}

/// Beyond this many ε the Gaussian underflows to zero in f64.
const UNDERFLOW_SIGMAS: f64 = 39.0;

/// Σ_λ w·φ_ε(E − λ) on an ascending energy grid. Eigenvalues whose Gaussian
/// underflows everywhere on the grid are skipped.
pub fn smeared_density(eigenvalues: &[f64], weight: f64, energies: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; energies.len()];
    let reach = UNDERFLOW_SIGMAS * eps;
    let (lo, hi) = (energies[0] - reach, energies[energies.len() - 1] + reach);
    for &l in eigenvalues.iter().filter(|l| **l >= lo && **l <= hi) {
        for (d, e) in out.iter_mut().zip(energies) {
            *d += weight * gaussian(e - l, eps);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, serde::Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DosOptions {
    pub window: [f64; 2],
    #[serde(default = "default_dos_points")]
    pub points: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_nq")]
    pub nq: usize,
    /// Sample both valleys; otherwise one valley is counted twice.
    #[serde(default = "default_true")]
    pub both_valleys: bool,
}

fn default_dos_points() -> usize {
    801
}
fn default_epsilon() -> f64 {
    0.002
}
fn default_nq() -> usize {
    24
}
fn default_true() -> bool {
    true
}

impl Default for DosOptions {
    fn default() -> Self {
        Self { window: [-0.1, 0.1], points: 801, epsilon: 0.002, nq: 24, both_valleys: true }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DosCurve {
    pub energies: Vec<f64>,
    pub dos: Vec<f64>,
    pub epsilon: f64,
    #[serde(rename = "Nq")]
    pub nq: usize,
    pub valleys: usize,
    /// Per-valley contributions, each normalized like `dos`.
    #[serde(skip)]
    pub per_valley: Vec<Vec<f64>>,
    /// |D − D_half| against the interleaved half-resolution grid.
    pub noise: Vec<f64>,
    /// Largest eigenvalue step between neighbouring grid momenta over ε.
    pub resolution_ratio: f64,
}

/// Fractional offsets (i + ½)/N − ½, symmetric under f → −f.
pub fn symmetric_grid(nq: usize) -> Vec<[f64; 2]> {
    let f = |i: usize| (i as f64 + 0.5) / nq as f64 - 0.5;
    (0..nq * nq).map(|k| [f(k / nq), f(k % nq)]).collect()
}

pub fn energy_grid(window: [f64; 2], points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![window[0]];
    }
    (0..points).map(|i| window[0] + (window[1] - window[0]) * i as f64 / (points - 1) as f64).collect()
}

/// D(E) = ν*·Σ_valleys mean_q Tr φ_ε(E − H(q)), ν* = 1/(valleys × dim).
pub fn dos(valleys: &[&MomentumHamiltonian], opts: &DosOptions) -> Result<DosCurve> {
    if !(opts.epsilon > 0.0) || opts.nq == 0 || opts.points == 0 || valleys.is_empty() {
        return Err(Error::InvalidArgument("DOS needs ε > 0, Nq ≥ 1 and at least one valley".into()));
    }
    let grid = symmetric_grid(opts.nq);
    let energies = energy_grid(opts.window, opts.points);
    let jobs: Vec<(usize, usize)> = (0..valleys.len()).flat_map(|v| (0..grid.len()).map(move |k| (v, k))).collect();
    let eigs: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(v, k)| {
            let h = valleys[v];
            let q = h.basis.anchor + h.geom.theta_matrix * Vec2::new(grid[k][0], grid[k][1]);
            h.eigenvalues(&q)
        })
        .collect::<Result<_>>()?;
    let nv = valleys.len();
    let ng = grid.len();
    let dim = valleys[0].dim();
    let counted = if nv == 1 && !opts.both_valleys { 2.0 } else { nv as f64 };
    let total_valleys = if nv == 1 && !opts.both_valleys { 2 } else { nv };
    let w = 1.0 / (total_valleys as f64 * dim as f64 * ng as f64);

    let contrib = |v: usize, subset: &(dyn Fn(usize) -> bool + Sync), weight: f64| -> Vec<f64> {
        let parts: Vec<Vec<f64>> = (0..ng)
            .into_par_iter()
            .filter(|k| subset(*k))
            .map(|k| smeared_density(&eigs[v * ng + k], weight, &energies, opts.epsilon))
            .collect();
        let mut acc = vec![0.0; energies.len()];
        for p in parts {
            acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        acc
    };
    let all = |_: usize| true;
    let per_valley: Vec<Vec<f64>> = (0..nv).map(|v| contrib(v, &all, w * counted / nv as f64)).collect();
    let mut total = vec![0.0; energies.len()];
    for pv in &per_valley {
        total.iter_mut().zip(pv).for_each(|(a, b)| *a += b);
    }

    // Interleaved half grid: even (i, j) only, four times the weight.
    let n = opts.nq;
    let noise = if n >= 2 {
        let even = |k: usize| (k / n) % 2 == 0 && (k % n) % 2 == 0;
        let sub_n = n.div_ceil(2);
        let ws = w * ng as f64 / (sub_n * sub_n) as f64 * counted / nv as f64;
        let mut half = vec![0.0; energies.len()];
        for v in 0..nv {
            let c = contrib(v, &even, ws);
            half.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        total.iter().zip(&half).map(|(a, b)| (a - b).abs()).collect()
    } else {
        vec![f64::INFINITY; energies.len()]
    };

    // Eigenvalue steps between grid neighbours, for bands inside the window.
    // The wrap-around pair is skipped: a truncated basis is only approximately
    // periodic across the cell edge.
    let mut step = 0.0f64;
    for v in 0..nv {
        for k in 0..ng {
            let (i, j) = (k / n, k % n);
            if i + 1 == n {
                continue;
            }
            let nb = (i + 1) * n + j;
            let (a, b) = (&eigs[v * ng + k], &eigs[v * ng + nb]);
            for (x, y) in a.iter().zip(b) {
                if *x >= opts.window[0] && *x <= opts.window[1] {
                    step = step.max((x - y).abs());
                }
            }
        }
    }
    let resolution_ratio = step / opts.epsilon;
    if resolution_ratio > 1.0 {
        log::warn!(
            "ε = {} eV is below the eigenvalue step {:.3e} eV resolvable with Nq = {}; DOS carries quadrature noise",
            opts.epsilon,
            step,
            opts.nq
        );
    }
    Ok(DosCurve { energies, dos: total, epsilon: opts.epsilon, nq: opts.nq, valleys: total_valleys, per_valley, noise, resolution_ratio })
}

impl DosCurve {
    /// Trapezoid ∫ D dE over the grid.
    pub fn integral(&self) -> f64 {
        self.energies
            .windows(2)
            .zip(self.dos.windows(2))
            .map(|(e, d)| 0.5 * (e[1] - e[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn max_noise(&self) -> f64 {
        self.noise.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "energies": self.energies,
            "dos": self.dos,
            "epsilon": self.epsilon,
            "Nq": self.nq,
            "valleys": self.valleys,
        })
    }
}

/// L¹ distance ∫|D_a − D_b| dE of two curves on the same grid.
pub fn dos_l1(a: &DosCurve, b: &DosCurve) -> f64 {
    a.energies
        .windows(2)
        .enumerate()
        .map(|(i, e)| 0.5 * (e[1] - e[0]) * ((a.dos[i] - b.dos[i]).abs() + (a.dos[i + 1] - b.dos[i + 1]).abs()))
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpFit {
    /// Decay rate γ in ln(err) ≈ c − γx.
    pub gamma: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    pub accepted: bool,
    /// Errors decrease after the first point.
    pub monotone: bool,
    pub diagnostic: Option<String>,
}

/// Least squares on (x, ln y) for y > 0, skipping zero errors.
pub fn fit_exponential(xs: &[f64], errs: &[f64]) -> ExpFit {
    let pts: Vec<(f64, f64)> = xs.iter().zip(errs).filter(|(_, e)| **e > 0.0).map(|(x, e)| (*x, e.ln())).collect();
    let tail: Vec<f64> = errs.iter().copied().filter(|e| *e > 0.0).collect();
    let monotone = tail.len() < 3 || tail[1..].windows(2).all(|w| w[1] <= w[0]);
    let n = pts.len();
    if n < 2 {
        return ExpFit {
            gamma: f64::NAN,
            intercept: f64::NAN,
            r2: f64::NAN,
            points: n,
            accepted: false,
            monotone,
            diagnostic: Some(format!("only {n} nonzero errors to fit")),
        };
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    let mut diagnostic = None;
    if r2 < 0.9 {
        diagnostic = Some(format!("fit rejected: R² = {r2:.3} < 0.9"));
    } else if !monotone {
        diagnostic = Some("error sequence is not monotone".into());
    }
    ExpFit { gamma: -slope, intercept: my - slope * mx, r2, points: n, accepted: r2 >= 0.9, monotone, diagnostic }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub eigenvalue: f64,
    pub rel_error: f64,
    pub dim: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub theta_deg: f64,
    pub relaxed: bool,
    pub lambda_ref: f64,
    pub tau_ref: f64,
    pub reference_eigenvalue: f64,
    pub lambda_sweep: Vec<SweepPoint>,
    pub tau_sweep: Vec<SweepPoint>,
    pub gamma_lambda: ExpFit,
    pub gamma_tau: ExpFit,
}

/// |ε − ε_ref| / max(|ε_ref|, 1 meV).
pub fn relative_error(e: f64, reference: f64) -> f64 {
    (e - reference).abs() / reference.abs().max(1e-3)
}

/// Lowest eigenvalue at or above charge neutrality (index N/2) at Γ_M.
pub fn gamma_eigenvalue(h: &MomentumHamiltonian) -> Result<f64> {
    let ev = h.eigenvalues(&gamma_point(&h.geom, 1))?;
    Ok(ev[ev.len() / 2])
}

/// Γ-point convergence in Λ (at the largest τ) and in τ (at the largest Λ).
pub fn gamma_convergence(engine: &Engine, lambdas: &[f64], taus: &[f64]) -> Result<ConvergenceReport> {
    if lambdas.len() < 5 || taus.len() < 5 {
        return Err(Error::InvalidArgument("convergence sweeps need at least 5 points each".into()));
    }
    let lref = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tref = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reference = engine.with_truncation(lref, tref)?;
    let shared = reference.sample(1)?;
    let e_ref = gamma_eigenvalue(&reference.valley_with(1, shared.clone())?)?;

    let mut lambda_sweep = Vec::new();
    for &l in lambdas {
        let h = engine.with_truncation(l, tref)?.valley_with(1, shared.clone())?;
        let e = gamma_eigenvalue(&h)?;
        lambda_sweep.push(SweepPoint { value: l, eigenvalue: e, rel_error: relative_error(e, e_ref), dim: h.dim() });
    }
    let mut tau_sweep = Vec::new();
    for &t in taus {
        let h = engine.with_truncation(lref, t)?.valley(1)?;
        let e = gamma_eigenvalue(&h)?;
        tau_sweep.push(SweepPoint { value: t, eigenvalue: e, rel_error: relative_error(e, e_ref), dim: h.dim() });
    }
    let fit = |s: &[SweepPoint], r: f64| {
        let pts: Vec<&SweepPoint> = s.iter().filter(|p| p.value != r).collect();
        fit_exponential(
            &pts.iter().map(|p| p.value).collect::<Vec<_>>(),
            &pts.iter().map(|p| p.rel_error).collect::<Vec<_>>(),
        )
    };
    Ok(ConvergenceReport {
        theta_deg: engine.geom.twist_angle.to_degrees(),
        relaxed: engine.is_relaxed(),
        lambda_ref: lref,
        tau_ref: tref,
        reference_eigenvalue: e_ref,
        gamma_lambda: fit(&lambda_sweep, lref),
        gamma_tau: fit(&tau_sweep, tref),
        lambda_sweep,
        tau_sweep,
    })
}

/// Anchor of the valley path, re-exported for callers building custom paths.
pub fn path_anchor(geom: &BilayerGeometry, valley: usize) -> Vec2 {
    valley_anchor(geom, valley)
}
