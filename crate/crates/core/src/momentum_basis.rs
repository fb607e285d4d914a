//! Truncated momentum basis: layer-1 elements carry momentum q + b₂n, layer-2
//! elements q − b₁n, both ≡ q + Θ₂₁n modulo their own reciprocal lattice.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{BilayerGeometry, Vec2};

#[derive(Clone, Debug, PartialEq)]
pub struct BasisElement {
    pub layer: usize,
    pub n: [i64; 2],
    /// Reciprocal vector of the partner layer: b₂n for layer 1, −b₁n for layer 2.
    pub g: Vec2,
    pub orbital: usize,
}

#[derive(Clone, Debug)]
pub struct MomentumBasis {
    pub elements: Vec<BasisElement>,
    pub lambda: f64,
    pub anchor: Vec2,
    /// Retained labels, sorted lexicographically.
    pub labels: Vec<[i64; 2]>,
    pub orbitals: [usize; 2],
    index: HashMap<(usize, [i64; 2], usize), usize>,
}

/// Labels n with |Θ₂₁n| < Λ, sorted.
pub fn retained_labels(geom: &BilayerGeometry, lambda: f64) -> Vec<[i64; 2]> {
    let tinv = geom.theta_matrix.try_inverse().expect("Θ₂₁ is invertible");
    // |n| ≤ ‖Θ⁻¹‖ Λ bounds the search box.
    let reach = (tinv.norm() * lambda).ceil() as i64 + 1;
    let mut out = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            if geom.moire_vector([i, j]).norm() < lambda {
                out.push([i, j]);
            }
        }
    }
    out.sort();
    out
}

pub fn build_basis(geom: &BilayerGeometry, lambda: f64, anchor: Vec2) -> Result<MomentumBasis> {
    let limit = geom.homotopy_limit();
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("basis radius must be positive, got {lambda}")));
    }
    if lambda > limit {
        return Err(Error::HomotopyViolation { lambda, limit });
    }
    let labels = retained_labels(geom, lambda);
    let (b1, b2) = (geom.recip1(), geom.recip2());
    let orbitals = [geom.layer1.num_orbitals(), geom.layer2.num_orbitals()];
    let mut elements = Vec::new();
    for layer in 1..=2 {
        for n in &labels {
            let nv = Vec2::new(n[0] as f64, n[1] as f64);
            let g = if layer == 1 { b2 * nv } else { -(b1 * nv) };
            for orbital in 0..orbitals[layer - 1] {
                elements.push(BasisElement { layer, n: *n, g, orbital });
            }
        }
    }
    let index = elements.iter().enumerate().map(|(i, e)| ((e.layer, e.n, e.orbital), i)).collect();
    Ok(MomentumBasis { elements, lambda, anchor, labels, orbitals, index })
}

impl MomentumBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, layer: usize, n: [i64; 2], orbital: usize) -> Option<usize> {
        self.index.get(&(layer, n, orbital)).copied()
    }

    /// Offset of the layer's block and its size.
    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        let n1 = self.labels.len() * self.orbitals[0];
        match layer {
            1 => 0..n1,
            2 => n1..n1 + self.labels.len() * self.orbitals[1],
            _ => panic!("layer index must be 1 or 2"),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_twisted_pair, Lattice2D, RotationConvention, GRAPHENE_A};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn geom(deg: f64) -> BilayerGeometry {
        make_twisted_pair(&Lattice2D::graphene(GRAPHENE_A), deg.to_radians(), RotationConvention::Symmetric).unwrap()
    }

    #[test]
    fn minimal_basis_has_four_elements() {
        let g = geom(1.1);
        let lam = 0.5 * g.moire_reciprocal_length();
        let b = build_basis(&g, lam, g.dirac_point(1)).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.labels, vec![[0, 0]]);
    }

    #[test]
    fn homotopy_guard() {
        let g = geom(1.1);
        let err = build_basis(&g, 1.05 * g.homotopy_limit(), g.dirac_point(1));
        assert!(matches!(err, Err(Error::HomotopyViolation { .. })));
    }

    #[test]
    fn count_scales_with_area() {
        let g = geom(0.5);
        let g0 = g.moire_reciprocal_length();
        let mut prev = 0;
        for k in 1..40 {
            let c = retained_labels(&g, 0.5 * k as f64 * g0).len();
            assert!(c >= prev);
            prev = c;
        }
        let lam = 40.0 * g0;
        let r = retained_labels(&g, 2.0 * lam).len() as f64 / retained_labels(&g, lam).len() as f64;
        assert!((r - 4.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn ordering_is_lexicographic() {
        let g = geom(1.0);
        let b = build_basis(&g, 3.0 * g.moire_reciprocal_length(), g.dirac_point(1)).unwrap();
        let keys: Vec<_> = b.elements.iter().map(|e| (e.layer, e.n, e.orbital)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(b.index_of(1, [0, 0], 0).is_some() && b.index_of(2, [0, 0], 1).is_some());
    }

    #[test]
    fn inversion_symmetric_label_set() {
        let g = geom(0.8);
        let labels = retained_labels(&g, 4.3 * g.moire_reciprocal_length());
        let set: HashSet<_> = labels.iter().copied().collect();
        assert!(labels.iter().all(|n| set.contains(&[-n[0], -n[1]])));
    }

    #[test]
    fn momenta_agree_with_moire_shift() {
        let g = geom(1.3);
        let b = build_basis(&g, 3.0 * g.moire_reciprocal_length(), g.dirac_point(1)).unwrap();
        for e in &b.elements {
            let lat = g.layer(e.layer);
            let diff = e.g - g.moire_vector(e.n);
            // Difference is a reciprocal vector of the element's own layer.
            let c = lat.basis().transpose() * diff / (2.0 * std::f64::consts::PI);
            assert!((c.x - c.x.round()).abs() < 1e-9 && (c.y - c.y.round()).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn all_retained_within_radius(deg in 0.3f64..3.0, k in 0.5f64..5.0) {
            let g = geom(deg);
            let lam = (k * g.moire_reciprocal_length()).min(g.homotopy_limit());
            let b = build_basis(&g, lam, g.dirac_point(1)).unwrap();
            prop_assert!(b.labels.iter().all(|n| g.moire_vector(*n).norm() < lam));
            prop_assert_eq!(b.len(), 4 * b.labels.len());
        }
    }
}
