use super::*;
use crate::geometry::{make_twisted_pair, rotation, Lattice2D, RotationConvention};
use crate::hopping::InterlayerParams;
use rand::{Rng, SeedableRng};

fn setup(deg: f64) -> (BilayerGeometry, InterlayerModel) {
    let g = make_twisted_pair(&Lattice2D::graphene(GRAPHENE_A), deg.to_radians(), RotationConvention::Symmetric)
        .unwrap();
    let m = InterlayerModel::for_geometry(InterlayerParams::default(), &g).unwrap();
    (g, m)
}

fn norm(g: &BilayerGeometry) -> f64 {
    1.0 / (g.layer1.cell_area() * g.layer2.cell_area()).sqrt()
}

fn sampled(deg: f64, tau: f64, lam_units: f64, r: usize) -> (BilayerGeometry, InterlayerModel, SampledInterlayerCoupling) {
    let (g, m) = setup(deg);
    let g0 = g.moire_reciprocal_length();
    let mut opts = CouplingOptions::new(tau, lam_units * g0);
    opts.refinement = r;
    let s = sample_interlayer(&m, None, &g, g.dirac_point(1), &opts).unwrap();
    (g, m, s)
}

#[test]
fn node_values_reproduced() {
    let (g, _, s) = sampled(1.5, 4.0, 2.0, 1);
    let isl = &s.islands[1];
    for (k, node) in isl.nodes.iter().enumerate().step_by(7) {
        let mu = Vec2::new(node[0] as f64, node[1] as f64);
        if (g.theta_matrix * mu).norm() > s.options.island_radius {
            continue;
        }
        for pair in 0..4 {
            let stored = isl.values[k * 4 + pair];
            let got = s.aligned(isl.s, &mu, pair).unwrap();
            assert!((got - stored).norm() <= 1e-12 * stored.norm().max(1e-300), "{got} vs {stored}");
            let xi = isl.center + g.theta_matrix * mu;
            let via = s.interpolate(&xi, pair, &Vec2::zeros());
            assert!((via - stored).norm() <= 1e-12 * stored.norm());
        }
    }
}

#[test]
fn orbital_shift_is_a_pure_phase() {
    let (g, _, s) = sampled(1.5, 4.0, 2.0, 1);
    let c = s.islands[0].center + g.theta_matrix * Vec2::new(0.3, -0.2);
    let delta = Vec2::new(0.7, -1.1);
    let a = s.interpolate(&c, 0, &Vec2::zeros());
    let b = s.interpolate(&c, 0, &delta);
    assert!((a.norm() - b.norm()).abs() < 1e-14 * a.norm());
    let dphi = (b / a).arg() - c.dot(&delta);
    let wrapped = (dphi + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    assert!(wrapped.abs() < 1e-12);
}

#[test]
fn interpolation_matches_direct_transform_mid_cell() {
    let (g, m, s) = sampled(1.0, 4.0, 3.0, 1);
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let nrm = norm(&g);
    for isl in s.islands.iter().take(3) {
        let peak = isl.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut pts = Vec::new();
        let mut mus = Vec::new();
        while pts.len() < 12 {
            let mu = Vec2::new(rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
            if (g.theta_matrix * mu).norm() < 2.5 * g.moire_reciprocal_length() {
                pts.push(isl.center + g.theta_matrix * mu);
                mus.push(mu);
            }
        }
        for pair in [0, 1, 3] {
            let direct = mesh_transform(&m, None, &g, &s.options.mesh, pair, &pts);
            for (mu, d) in mus.iter().zip(&direct) {
                let got = s.aligned(isl.s, mu, pair).unwrap();
                let err = (got - d * nrm).norm() / peak;
                assert!(err < 1e-4, "relative interpolation error {err:e}");
            }
        }
    }
}

#[test]
fn unrelaxed_transform_is_isotropic() {
    let (g, m) = setup(1.0);
    let k = g.dirac_point(1).norm();
    let pts: Vec<Vec2> = (0..24)
        .map(|j| rotation(0.2618 * j as f64 + 0.05) * Vec2::new(k, 0.0))
        .collect();
    let v = mesh_transform(&m, None, &g, &MeshSpec::default(), 0, &pts);
    let mean = v.iter().map(|z| z.norm()).sum::<f64>() / v.len() as f64;
    let spread = v.iter().map(|z| (z.norm() - mean).abs()).fold(0.0, f64::max);
    assert!(spread / mean < 1e-6, "anisotropy {}", spread / mean);
}

#[test]
fn threefold_equivalent_scatterings_agree() {
    let (g, _, s) = sampled(0.8, 4.0, 4.5, 1);
    let k1 = g.dirac_point(1);
    let b1inv = g.recip1().try_inverse().unwrap();
    let mut mags = Vec::new();
    for j in 0..3 {
        let p = rotation(j as f64 * std::f64::consts::TAU / 3.0) * k1;
        let sf = b1inv * (p - k1);
        let sv = [sf.x.round() as i64, sf.y.round() as i64];
        assert!((sf.x - sv[0] as f64).abs() < 1e-9 && (sf.y - sv[1] as f64).abs() < 1e-9);
        let mu = Vec2::new(-sv[0] as f64, -sv[1] as f64);
        mags.push(s.aligned(sv, &mu, 0).unwrap().norm());
    }
    assert!(mags[0] > 0.05);
    for m in &mags[1..] {
        assert!((m - mags[0]).abs() < 1e-8 * mags[0], "{mags:?}");
    }
}

#[test]
fn first_shell_magnitude_matches_calibration() {
    let (g, _, s) = sampled(1.0, 4.0, 2.0, 1);
    let isl = s.island([0, 0]).unwrap();
    let center = isl.nodes.iter().position(|m| *m == [0, 0]).unwrap();
    let w = isl.values[center * 4].norm();
    assert!((w - 0.110).abs() < 0.002, "w = {w}");
    assert!((isl.center - g.dirac_point(1)).norm() < 1e-14);
}

#[test]
fn hermitian_pairing() {
    let (g, _, s) = sampled(1.2, 4.0, 2.0, 1);
    let mu = Vec2::new(0.37, -0.61);
    for isl in &s.islands {
        for pair in 0..4 {
            let a = s.value(isl.s, &mu, pair).unwrap();
            let b = s.value_21(isl.s, &mu, pair).unwrap();
            assert!((a - b.conj()).norm() < 1e-12);
        }
    }
    let _ = g;
}

#[test]
fn truncation_flags() {
    let (g, m, s) = sampled(1.5, 3.3, 2.0, 1);
    let nrm = norm(&g);
    let (tau, w) = (s.options.tau, s.options.tau_width);
    let mut inside = 0;
    let mut outside = 0;
    for isl in &s.islands {
        let pts: Vec<Vec2> =
            isl.nodes.iter().map(|n| isl.center + g.theta_matrix * Vec2::new(n[0] as f64, n[1] as f64)).collect();
        let direct = mesh_transform(&m, None, &g, &s.options.mesh, 2, &pts);
        for (k, p) in pts.iter().enumerate() {
            let v = isl.values[k * 4 + 2];
            if p.norm() >= tau {
                assert_eq!(v, Complex64::new(0.0, 0.0));
                outside += 1;
            } else if p.norm() <= tau - w {
                assert!((v - direct[k] * nrm).norm() < 1e-14);
                inside += 1;
            }
        }
    }
    assert!(inside > 0 && outside > 0);
}

#[test]
fn islands_are_separated_at_small_angles() {
    for deg in [0.3, 0.5] {
        let (_, _, s) = sampled(deg, 4.0, 5.5, 1);
        let ratio = s.island_separation_ratio();
        assert!(ratio > 5.0, "θ = {deg}°: ratio {ratio}");
    }
}

#[test]
fn unrelaxed_mass_fraction_is_small() {
    let (_, _, s) = sampled(1.0, 4.0, 4.5, 1);
    let f = s.shell_mass_fraction();
    assert!(f > 0.0 && f < 0.05, "{f}");
}

#[test]
fn cache_round_trip_and_mismatch() {
    let (g, m, s) = sampled(2.0, 3.0, 2.0, 1);
    let dir = std::env::temp_dir().join(format!("coupling-cache-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("c.json");
    s.save(&path).unwrap();
    let back = SampledInterlayerCoupling::load(&path, &m, &g, s.anchor, &s.options, false).unwrap();
    for (a, b) in s.islands.iter().zip(&back.islands) {
        assert_eq!(a.values, b.values);
    }
    let mut other = s.options.clone();
    other.tau = 3.5;
    assert!(matches!(
        SampledInterlayerCoupling::load(&path, &m, &g, s.anchor, &other, false),
        Err(Error::SampleMismatch(_))
    ));
    let mut mesh = s.options.clone();
    mesh.mesh.spacing *= 0.5;
    assert!(matches!(
        SampledInterlayerCoupling::load(&path, &m, &g, s.anchor, &mesh, false),
        Err(Error::SampleMismatch(_))
    ));
    assert!(matches!(
        SampledInterlayerCoupling::load(&path, &m, &g, s.anchor, &s.options, true),
        Err(Error::SampleMismatch(_))
    ));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn coarse_mesh_rejected() {
    let (g, m) = setup(1.0);
    let mut opts = CouplingOptions::new(4.0, 0.1);
    opts.mesh.spacing = 1.0;
    assert!(matches!(
        sample_interlayer(&m, None, &g, g.dirac_point(1), &opts),
        Err(Error::MeshTooCoarse { .. })
    ));
}

#[test]
fn outside_islands_gives_zero() {
    let (_, _, s) = sampled(1.0, 4.0, 2.0, 1);
    let far = s.islands[0].center * 0.5;
    let mu = s.theta_inv * (far - s.islands[0].center);
    assert!(s.aligned([0, 0], &mu, 0).is_none());
    assert_eq!(s.interpolate(&Vec2::new(1e-3, 0.0), 0, &Vec2::zeros()), Complex64::new(0.0, 0.0));
}
