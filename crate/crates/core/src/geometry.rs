//! Bilayer lattice geometry, reciprocal lattices and the moiré quantities.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_6, PI};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// Graphene lattice constant in Å.
pub const GRAPHENE_A: f64 = 2.46;

const FRAC_TOL: f64 = 1e-9;

pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Orbital {
    pub label: String,
    pub position: Vec2,
    /// Out-of-plane offset relative to the layer plane (Å).
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice2D {
    basis: Mat2,
    orbitals: Vec<Orbital>,
}

impl Lattice2D {
    pub fn new(basis: Mat2, orbitals: Vec<Orbital>) -> Result<Self> {
        let det = basis.determinant();
        if det.abs() < 1e-12 * basis.norm_squared().max(1.0) {
            return Err(Error::SingularBasis(det));
        }
        let lat = Self { basis, orbitals };
        for orb in &lat.orbitals {
            let s = lat.fractional(&orb.position);
            let inside = s.iter().all(|&c| c > -FRAC_TOL && c < 1.0 - FRAC_TOL);
            if !inside {
                return Err(Error::InvalidArgument(format!(
                    "orbital {} lies outside the unit cell (fractional {:?})",
                    orb.label,
                    [s.x, s.y]
                )));
            }
        }
        Ok(lat)
    }

    /// Hexagonal lattice with a1 = (a, 0), a2 = (a/2, a√3/2) and pz orbitals at
    /// 0 and (a1 + a2)/3.
    pub fn graphene(a: f64) -> Self {
        let basis = Mat2::new(a, 0.5 * a, 0.0, 0.5 * 3f64.sqrt() * a);
        let b_pos = (basis.column(0) + basis.column(1)) / 3.0;
        let orbitals = vec![
            Orbital { label: "A".into(), position: Vec2::zeros(), height: 0.0 },
            Orbital { label: "B".into(), position: b_pos, height: 0.0 },
        ];
        Self { basis, orbitals }
    }

    pub fn basis(&self) -> &Mat2 {
        &self.basis
    }

    pub fn orbitals(&self) -> &[Orbital] {
        &self.orbitals
    }

    pub fn num_orbitals(&self) -> usize {
        self.orbitals.len()
    }

    pub fn inverse(&self) -> Mat2 {
        self.basis.try_inverse().expect("basis checked nonsingular")
    }

    pub fn cell_area(&self) -> f64 {
        self.basis.determinant().abs()
    }

    pub fn fractional(&self, x: &Vec2) -> Vec2 {
        self.inverse() * x
    }

    pub fn point(&self, n: [i64; 2]) -> Vec2 {
        self.basis * Vec2::new(n[0] as f64, n[1] as f64)
    }

    /// Rigid rotation of the basis and all orbital positions about the origin.
    pub fn rotated(&self, angle: f64) -> Self {
        let r = rotation(angle);
        Self {
            basis: r * self.basis,
            orbitals: self
                .orbitals
                .iter()
                .map(|o| Orbital { position: r * o.position, ..o.clone() })
                .collect(),
        }
    }

    pub fn reciprocal(&self) -> ReciprocalBasis {
        let basis = 2.0 * PI * self.inverse().transpose();
        ReciprocalBasis { cell_area: basis.determinant().abs(), basis }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReciprocalBasis {
    pub basis: Mat2,
    pub cell_area: f64,
}

impl ReciprocalBasis {
    pub fn point(&self, n: [i64; 2]) -> Vec2 {
        self.basis * Vec2::new(n[0] as f64, n[1] as f64)
    }
}

pub fn reciprocal(lat: &Lattice2D) -> Result<ReciprocalBasis> {
    let det = lat.basis.determinant();
    if det.abs() < 1e-12 {
        return Err(Error::SingularBasis(det));
    }
    Ok(lat.reciprocal())
}

/// Vertices of the Wigner–Seitz cell of the lattice spanned by `basis`.
pub fn wigner_seitz_vertices(basis: &Mat2) -> Vec<Vec2> {
    let mut pts = Vec::new();
    for i in -2i64..=2 {
        for j in -2i64..=2 {
            if i != 0 || j != 0 {
                pts.push(basis * Vec2::new(i as f64, j as f64));
            }
        }
    }
    let scale = basis.norm();
    let tol = 1e-10 * scale;
    let mut verts: Vec<Vec2> = Vec::new();
    for (ia, ga) in pts.iter().enumerate() {
        for gb in pts.iter().skip(ia + 1) {
            // Intersection of the perpendicular bisectors of 0–ga and 0–gb.
            let m = Mat2::new(ga.x, ga.y, gb.x, gb.y);
            let Some(minv) = m.try_inverse() else { continue };
            let v = minv * Vec2::new(0.5 * ga.norm_squared(), 0.5 * gb.norm_squared());
            let r2 = v.norm_squared();
            let closer = pts.iter().any(|g| (v - g).norm_squared() < r2 - tol * scale);
            if !closer && !verts.iter().any(|w| (w - v).norm() < tol) {
                verts.push(v);
            }
        }
    }
    verts
}

/// Fractional coordinates (w.r.t. the reciprocal basis) of the Dirac point:
/// the Wigner–Seitz vertex of the reciprocal cell closest in polar angle to
/// the positive x axis, ties going to the counter-clockwise side.
pub fn dirac_fraction(lat: &Lattice2D) -> Vec2 {
    let rec = lat.reciprocal();
    let verts = wigner_seitz_vertices(&rec.basis);
    let key = |v: &Vec2| {
        let ang = v.y.atan2(v.x);
        (ang.abs(), -ang)
    };
    let best = verts
        .iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
        .expect("Wigner–Seitz cell has vertices");
    rec.basis.try_inverse().unwrap() * best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationConvention {
    /// Layer 1 rotated by −θ/2, layer 2 by +θ/2.
    #[default]
    Symmetric,
    /// Layer 1 fixed, layer 2 rotated by θ.
    OneSided,
}

#[derive(Clone, Debug)]
pub struct BilayerGeometry {
    pub layer1: Lattice2D,
    pub layer2: Lattice2D,
    pub twist_angle: f64,
    /// Θ₂₁ = 2π(A₂⁻ᵀ − A₁⁻ᵀ), Å⁻¹.
    pub theta_matrix: Mat2,
    pub moire_cell: Option<Mat2>,
    pub convention: RotationConvention,
    /// Dirac point in fractional reciprocal coordinates, shared by both layers.
    pub valley_frac: Vec2,
}

pub fn theta_between(from: &Lattice2D, to: &Lattice2D) -> Mat2 {
    2.0 * PI * (to.inverse().transpose() - from.inverse().transpose())
}

pub fn make_twisted_pair(
    monolayer: &Lattice2D,
    theta: f64,
    convention: RotationConvention,
) -> Result<BilayerGeometry> {
    if theta == 0.0 {
        return Err(Error::CommensurateDegenerate(theta));
    }
    if !(theta > 0.0 && theta <= FRAC_PI_6 + 1e-12) {
        return Err(Error::TwistOutOfRange(theta));
    }
    twisted_pair_unchecked(monolayer, theta, convention)
}

fn twisted_pair_unchecked(
    monolayer: &Lattice2D,
    theta: f64,
    convention: RotationConvention,
) -> Result<BilayerGeometry> {
    let (layer1, layer2) = match convention {
        RotationConvention::Symmetric => {
            (monolayer.rotated(-0.5 * theta), monolayer.rotated(0.5 * theta))
        }
        RotationConvention::OneSided => (monolayer.clone(), monolayer.rotated(theta)),
    };
    let theta_matrix = theta_between(&layer1, &layer2);
    if theta_matrix.determinant().abs() < 1e-14 {
        return Err(Error::CommensurateDegenerate(theta));
    }
    let moire_cell = (layer2.inverse() - layer1.inverse()).try_inverse();
    Ok(BilayerGeometry {
        valley_frac: dirac_fraction(monolayer),
        layer1,
        layer2,
        twist_angle: theta,
        theta_matrix,
        moire_cell,
        convention,
    })
}

impl BilayerGeometry {
    pub fn layer(&self, j: usize) -> &Lattice2D {
        match j {
            1 => &self.layer1,
            2 => &self.layer2,
            _ => panic!("layer index must be 1 or 2, got {j}"),
        }
    }

    pub fn recip1(&self) -> Mat2 {
        self.layer1.reciprocal().basis
    }

    pub fn recip2(&self) -> Mat2 {
        self.layer2.reciprocal().basis
    }

    /// Θ₂₁ n.
    pub fn moire_vector(&self, n: [i64; 2]) -> Vec2 {
        self.theta_matrix * Vec2::new(n[0] as f64, n[1] as f64)
    }

    pub fn dirac_point(&self, layer: usize) -> Vec2 {
        self.layer(layer).reciprocal().basis * self.valley_frac
    }

    pub fn moire_cell_area(&self) -> f64 {
        self.moire_cell.map(|m| m.determinant().abs()).unwrap_or(f64::INFINITY)
    }

    /// Moiré lattice constant: shortest column of the moiré cell.
    pub fn moire_length(&self) -> f64 {
        self.moire_cell
            .map(|m| m.column(0).norm().min(m.column(1).norm()))
            .unwrap_or(f64::INFINITY)
    }

    /// Largest Λ for which the basis disk stays inside one monolayer
    /// Brillouin zone: the Wigner–Seitz circumradius.
    pub fn homotopy_limit(&self) -> f64 {
        [&self.layer1, &self.layer2]
            .iter()
            .map(|l| {
                wigner_seitz_vertices(&l.reciprocal().basis)
                    .iter()
                    .map(|v| v.norm())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Shortest nonzero |Θ₂₁ n|.
    pub fn moire_reciprocal_length(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in -2i64..=2 {
            for j in -2i64..=2 {
                if i != 0 || j != 0 {
                    best = best.min(self.moire_vector([i, j]).norm());
                }
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AtomTag {
    pub layer: usize,
    pub orbital: usize,
}

#[derive(Clone, Debug)]
pub struct SupercellAtom {
    pub tag: AtomTag,
    /// Lattice point of the atom's own layer.
    pub bravais: Vec2,
    pub position: Vec2,
    pub height: f64,
}

#[derive(Clone, Debug)]
pub struct CommensurateCell {
    pub m: i64,
    pub n: i64,
    pub geometry: BilayerGeometry,
    /// Supercell lattice; orbitals are all atoms of both layers.
    pub supercell: Lattice2D,
    pub atoms: Vec<SupercellAtom>,
}

impl CommensurateCell {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// Commensurate twist angle for indices (m, n) with cos θ = (m²+4mn+n²)/(2(m²+mn+n²)).
pub fn commensurate_angle(m: i64, n: i64) -> f64 {
    let (mf, nf) = (m as f64, n as f64);
    let c = (mf * mf + 4.0 * mf * nf + nf * nf) / (2.0 * (mf * mf + mf * nf + nf * nf));
    c.clamp(-1.0, 1.0).acos()
}

/// Periodic supercell of the hexagonal bilayer twisted so that A(n, m) of
/// layer 2 lands on A(m, n) of layer 1.
pub fn commensurate_supercell(
    m: i64,
    n: i64,
    monolayer: &Lattice2D,
    convention: RotationConvention,
) -> Result<CommensurateCell> {
    if m == n {
        return Err(Error::InvalidCommensurate { m, n, reason: "m = n gives zero twist" });
    }
    if m < 0 || n < 0 {
        return Err(Error::InvalidCommensurate { m, n, reason: "indices must be non-negative" });
    }
    if gcd(m, n) != 1 {
        return Err(Error::InvalidCommensurate { m, n, reason: "indices must be coprime" });
    }
    let (m, n) = (m.min(n), m.max(n));
    let v1 = monolayer.point([m, n]);
    let v2 = monolayer.point([n, m]);
    let phi = (v2.x * v1.y - v2.y * v1.x).atan2(v2.dot(&v1));
    let geometry = twisted_pair_unchecked(monolayer, phi, convention)?;

    let frame = match convention {
        RotationConvention::Symmetric => rotation(-0.5 * phi),
        RotationConvention::OneSided => Mat2::identity(),
    };
    let s1 = frame * v1;
    let s2 = rotation(FRAC_PI_3) * s1;
    let sbasis = Mat2::from_columns(&[s1, s2]);
    let sinv = sbasis.try_inverse().ok_or(Error::SingularBasis(0.0))?;

    let mut atoms = Vec::new();
    let reach = 2 * (m + n) + 2;
    for layer in 1..=2 {
        let lat = geometry.layer(layer);
        for i in -reach..=reach {
            for j in -reach..=reach {
                let r = lat.point([i, j]);
                let f = sinv * r;
                let inside = f.iter().all(|&c| c > -FRAC_TOL && c < 1.0 - FRAC_TOL);
                if !inside {
                    continue;
                }
                for (o, orb) in lat.orbitals().iter().enumerate() {
                    let mut pos = r + orb.position;
                    // Fold back into the cell so positions stay in S·[0,1)².
                    let fp = sinv * pos;
                    let shift = Vec2::new((fp.x + FRAC_TOL).floor(), (fp.y + FRAC_TOL).floor());
                    pos -= sbasis * shift;
                    atoms.push(SupercellAtom {
                        tag: AtomTag { layer, orbital: o },
                        bravais: r - sbasis * shift,
                        position: pos,
                        height: orb.height,
                    });
                }
            }
        }
    }
    let orbitals = atoms
        .iter()
        .map(|a| Orbital {
            label: format!("L{}{}", a.tag.layer, geometry.layer(a.tag.layer).orbitals()[a.tag.orbital].label),
            position: a.position,
            height: a.height,
        })
        .collect();
    let supercell = Lattice2D::new(sbasis, orbitals)?;
    Ok(CommensurateCell { m, n, geometry, supercell, atoms })
}

/// Integer matrix N with `lattice · N = target`, if one exists within tolerance.
pub fn integer_coordinates(lattice: &Mat2, target: &Mat2, tol: f64) -> Option<Matrix2<i64>> {
    let c = lattice.try_inverse()? * target;
    let r = c.map(|x| x.round());
    if (c - r).amax() < tol {
        Some(r.map(|x| x as i64))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn moire_constant_matches_closed_form() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let g = make_twisted_pair(&mono, deg(1.1), RotationConvention::Symmetric).unwrap();
        let m = g.moire_cell.unwrap();
        let expected = GRAPHENE_A / (2.0 * (deg(1.1) / 2.0).sin());
        assert_relative_eq!(m.column(0).norm(), expected, max_relative = 1e-10);
        assert_relative_eq!(m.column(1).norm(), expected, max_relative = 1e-10);
        assert_relative_eq!(g.theta_matrix.transpose() * m, 2.0 * PI * Mat2::identity(), epsilon = 1e-9);
    }

    #[test]
    fn graphene_reciprocal_length() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let rec = reciprocal(&mono).unwrap();
        let b1 = rec.basis.column(0).norm();
        assert_relative_eq!(b1, 4.0 * PI / (3f64.sqrt() * GRAPHENE_A), max_relative = 1e-14);
        let resid = rec.basis.transpose() * mono.basis() - 2.0 * PI * Mat2::identity();
        assert!(resid.amax() < 1e-12);
    }

    #[test]
    fn square_reciprocal_and_round_trip() {
        let lat = Lattice2D::new(Mat2::identity() * 3.0, vec![]).unwrap();
        let rec = reciprocal(&lat).unwrap();
        assert_relative_eq!(rec.basis, Mat2::identity() * (2.0 * PI / 3.0), epsilon = 1e-15);
        let back = Lattice2D::new(rec.basis, vec![]).unwrap().reciprocal();
        assert_relative_eq!(back.basis, *lat.basis(), epsilon = 1e-13);
    }

    #[test]
    fn singular_basis_rejected() {
        let err = Lattice2D::new(Mat2::new(1.0, 2.0, 2.0, 4.0), vec![]);
        assert!(matches!(err, Err(Error::SingularBasis(_))));
    }

    #[test]
    fn zero_twist_is_degenerate() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let err = make_twisted_pair(&mono, 0.0, RotationConvention::Symmetric);
        assert!(matches!(err, Err(Error::CommensurateDegenerate(_))));
        assert!(make_twisted_pair(&mono, 0.6, RotationConvention::Symmetric).is_err());
    }

    #[test]
    fn dirac_point_of_graphene() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let kappa = dirac_fraction(&mono);
        assert_relative_eq!(kappa, Vec2::new(2.0 / 3.0, 1.0 / 3.0), epsilon = 1e-12);
        let g = make_twisted_pair(&mono, deg(2.0), RotationConvention::Symmetric).unwrap();
        assert_relative_eq!(g.dirac_point(1).norm(), 4.0 * PI / (3.0 * GRAPHENE_A), max_relative = 1e-12);
        assert_relative_eq!(g.homotopy_limit(), 4.0 * PI / (3.0 * GRAPHENE_A), max_relative = 1e-12);
        // K₂ − K₁ is the moiré vector Θ₂₁κ.
        assert_relative_eq!(g.dirac_point(2) - g.dirac_point(1), g.theta_matrix * kappa, epsilon = 1e-12);
    }

    #[test]
    fn theta_antisymmetric_under_exchange() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let g = make_twisted_pair(&mono, deg(1.3), RotationConvention::OneSided).unwrap();
        let t12 = theta_between(&g.layer2, &g.layer1);
        assert!((t12 + g.theta_matrix).amax() < 1e-15);
    }

    #[test]
    fn moire_vectors_lie_in_moire_reciprocal_lattice() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let g = make_twisted_pair(&mono, deg(1.1), RotationConvention::Symmetric).unwrap();
        let gm = 2.0 * PI * g.moire_cell.unwrap().try_inverse().unwrap().transpose();
        let c = gm.try_inverse().unwrap() * g.moire_vector([1, 0]);
        assert_relative_eq!(c, Vec2::new(1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn theta_norm_scales_linearly() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let ratios: Vec<f64> = [0.2, 0.5, 1.0, 2.0, 3.5, 4.9]
            .iter()
            .map(|&d| {
                let g = make_twisted_pair(&mono, deg(d), RotationConvention::Symmetric).unwrap();
                g.theta_matrix.norm() / deg(d)
            })
            .collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        assert!((hi - lo) / lo < 0.01);
    }

    #[test]
    fn commensurate_one_two() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let c = commensurate_supercell(1, 2, &mono, RotationConvention::Symmetric).unwrap();
        assert_relative_eq!(c.geometry.twist_angle.to_degrees(), 21.786_789_298, epsilon = 1e-6);
        assert_relative_eq!(c.geometry.twist_angle, commensurate_angle(1, 2), epsilon = 1e-12);
        assert_eq!(c.atom_count(), 28);
        let per_layer = c.atoms.iter().filter(|a| a.tag.layer == 1).count();
        assert_eq!(per_layer, 14);
    }

    #[test]
    fn commensurate_one_three() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        let c = commensurate_supercell(1, 3, &mono, RotationConvention::OneSided).unwrap();
        assert_eq!(c.atom_count(), 4 * 13);
        assert!(commensurate_supercell(2, 2, &mono, RotationConvention::Symmetric).is_err());
        assert!(commensurate_supercell(2, 4, &mono, RotationConvention::Symmetric).is_err());
    }

    #[test]
    fn supercell_commensurate_with_both_layers() {
        let mono = Lattice2D::graphene(GRAPHENE_A);
        for (m, n) in [(1, 2), (1, 3), (2, 3), (1, 4)] {
            let c = commensurate_supercell(m, n, &mono, RotationConvention::Symmetric).unwrap();
            let s = c.supercell.basis();
            let n1 = integer_coordinates(c.geometry.layer1.basis(), s, 1e-9).expect("layer 1");
            let n2 = integer_coordinates(c.geometry.layer2.basis(), s, 1e-9).expect("layer 2");
            let cells = (m * m + m * n + n * n) as i64;
            assert_eq!((n1[(0, 0)] * n1[(1, 1)] - n1[(0, 1)] * n1[(1, 0)]).abs(), cells);
            assert_eq!((n2[(0, 0)] * n2[(1, 1)] - n2[(0, 1)] * n2[(1, 0)]).abs(), cells);
            // Monolayer reciprocal vectors are integer combinations of the supercell ones.
            let gs = c.supercell.reciprocal().basis;
            assert!(integer_coordinates(&gs, &c.geometry.recip1(), 1e-9).is_some());
            assert!(integer_coordinates(&gs, &c.geometry.recip2(), 1e-9).is_some());
        }
    }

    proptest! {
        #[test]
        fn reciprocal_duality(a in 0.5f64..5.0, b in -2.0f64..2.0, c in 0.5f64..5.0, ang in 0.0f64..6.3) {
            let basis = rotation(ang) * Mat2::new(a, b, 0.0, c);
            let lat = Lattice2D::new(basis, vec![]).unwrap();
            let rec = reciprocal(&lat).unwrap();
            let resid = rec.basis.transpose() * lat.basis() - 2.0 * PI * Mat2::identity();
            prop_assert!(resid.amax() < 1e-12);
        }

        #[test]
        fn theta_definition_exact(theta in 0.001f64..0.5) {
            let mono = Lattice2D::graphene(GRAPHENE_A);
            let g = make_twisted_pair(&mono, theta, RotationConvention::Symmetric).unwrap();
            prop_assert!((g.theta_matrix - (g.recip2() - g.recip1())).amax() < 1e-14);
            let m = g.moire_cell.unwrap();
            let expected = GRAPHENE_A / (2.0 * (theta / 2.0).sin());
            prop_assert!((m.column(0).norm() / expected - 1.0).abs() < 1e-9);
        }
    }
}
