use super::*;
use crate::geometry::{make_twisted_pair, Lattice2D, Mat2, RotationConvention, Vec2, GRAPHENE_A};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn geom(deg: f64) -> BilayerGeometry {
    make_twisted_pair(&Lattice2D::graphene(GRAPHENE_A), deg.to_radians(), RotationConvention::Symmetric).unwrap()
}

fn random_field(g: &BilayerGeometry, cutoff: f64, amp: f64, seed: u64) -> DisplacementField {
    let modes = ModeSet::circular(g, cutoff);
    let mut f = DisplacementField::zero(g.theta_matrix, modes);
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut c = || Complex64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp));
    for k in 0..f.modes.len() {
        f.u1[k] = [c(), c()];
        f.u2[k] = [c(), c()];
    }
    f
}

/// Direct real-space average of the functional on a fine grid: displacements
/// and strains from explicit Fourier sums, stacking term from the layer
/// configurations, no FFTs and no Parseval.
fn riemann_energy(u: &DisplacementField, gsfe: &GsfeModel, el: &ElasticityTensor, g: &BilayerGeometry, n: usize) -> f64 {
    let m = g.moire_cell.unwrap();
    let (a1i, a2i) = (g.layer1.inverse(), g.layer2.inverse());
    let grad = |layer: usize, x: &Vec2| -> Mat2 {
        let mut d = Mat2::zeros();
        for (nn, c) in u.modes.modes.iter().zip(u.layer(layer)) {
            let k = g.moire_vector(*nn);
            let e = Complex64::from_polar(1.0, k.dot(x));
            let ik = Complex64::i() * e;
            for r in 0..2 {
                for col in 0..2 {
                    d[(r, col)] += 2.0 * (c[r] * ik).re * k[col];
                }
            }
        }
        d
    };
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let t = Vec2::new(i as f64 / n as f64, j as f64 / n as f64);
            let x = m * t;
            let v = u.eval(1, &x) - u.eval(2, &x);
            let s1 = t + a2i * v;
            let s2 = -t - a1i * v;
            acc += 0.5 * gsfe.value([s1.x, s1.y]) + 0.5 * gsfe.value([s2.x, s2.y]);
            for layer in 1..=2 {
                let d = grad(layer, &x);
                let e = 0.5 * (d + d.transpose());
                acc += el.energy_density([[e[(0, 0)], e[(0, 1)]], [e[(1, 0)], e[(1, 1)]]]);
            }
        }
    }
    acc / (n * n) as f64
}

#[test]
fn flat_landscape_energy_is_constant() {
    let g = geom(1.5);
    let u = DisplacementField::zero(g.theta_matrix, ModeSet::circular(&g, 3.0));
    let e = total_energy(&u, &GsfeModel::constant(0.37), &ElasticityTensor::graphene(), &g, 0).unwrap();
    assert!((e.total - 0.37).abs() < 1e-15);
    assert_eq!(e.elastic, 0.0);
}

#[test]
fn energy_matches_dense_riemann_sum() {
    let g = geom(2.0);
    let u = random_field(&g, 2.0, 0.02, 3);
    let gsfe = GsfeModel::graphene_illustrative();
    let el = ElasticityTensor::graphene();
    let problem = RelaxationProblem::new(&g, gsfe.clone(), el, el, u.modes.clone(), 0).unwrap();
    let e = problem.energy_of(&u).total;
    let oracle = riemann_energy(&u, &gsfe, &el, &g, 4 * problem.grid_size());
    assert!(((e - oracle) / oracle).abs() < 1e-8, "{e} vs {oracle}");
}

#[test]
fn aliasing_is_detected() {
    let g = geom(2.0);
    let u = random_field(&g, 2.0, 0.3, 5);
    let gsfe = GsfeModel::graphene_illustrative();
    let el = ElasticityTensor::graphene();
    let res = total_energy_checked(&u, &gsfe, &el, &g, 5, 1e-12);
    assert!(matches!(res, Err(crate::Error::Aliasing { .. })));
}

#[test]
fn gradient_matches_finite_differences() {
    let g = geom(1.5);
    let u = random_field(&g, 2.5, 0.05, 11);
    let gsfe = GsfeModel::graphene_illustrative();
    let el = ElasticityTensor::graphene();
    let p = RelaxationProblem::new(&g, gsfe, el, el, u.modes.clone(), 0).unwrap();
    for identical in [false, true] {
        let x = p.pack(&u, identical);
        let (_, grad) = p.objective_packed(&x, identical);
        let h = 1e-6;
        let mut num = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            num[i] = (p.objective_packed(&xp, identical).0 - p.objective_packed(&xm, identical).0) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / scale < 1e-5, "relative error {}", diff / scale);
    }
}

#[test]
fn elastic_gradient_is_linear() {
    let g = geom(1.5);
    let u = random_field(&g, 3.0, 0.1, 2);
    let mut u2 = u.clone();
    u2.u1.iter_mut().chain(u2.u2.iter_mut()).for_each(|c| *c = [c[0] * 2.0, c[1] * 2.0]);
    let el = ElasticityTensor::graphene();
    let p = RelaxationProblem::new(&g, GsfeModel::constant(1.0), el, el, u.modes.clone(), 0).unwrap();
    let (a1, a2) = p.gradient_of(&u);
    let (b1, b2) = p.gradient_of(&u2);
    for (a, b) in a1.iter().chain(&a2).zip(b1.iter().chain(&b2)) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn flat_gsfe_gives_zero_displacement() {
    let g = geom(1.0);
    let opts = RelaxOptions { mode_cutoff: 4.0, identical_layers: false, ..Default::default() };
    let r = relax(&GsfeModel::constant(0.2), &ElasticityTensor::graphene(), &g, &opts).unwrap();
    assert!(r.field.l2_norm() < 1e-12);
    let mut zero = RelaxationProblem::new(&g, GsfeModel::constant(0.0), ElasticityTensor::graphene(), ElasticityTensor::graphene(), r.field.modes.clone(), 0).unwrap().gradient_of(&r.field).0;
    zero.retain(|v| *v != 0.0);
    assert!(zero.is_empty());
}

#[test]
fn identical_layers_relax_antisymmetrically() {
    let g = geom(1.2);
    let opts = RelaxOptions { mode_cutoff: 4.0, identical_layers: false, ..Default::default() };
    let r = relax(&GsfeModel::graphene_illustrative(), &ElasticityTensor::graphene(), &g, &opts).unwrap();
    assert!(r.field.l2_norm() > 1e-3);
    let m = g.moire_cell.unwrap();
    let mut worst = 0.0f64;
    for i in 0..24 {
        for j in 0..24 {
            let x = m * Vec2::new(i as f64 / 24.0, j as f64 / 24.0);
            worst = worst.max((r.field.eval(1, &x) + r.field.eval(2, &x)).norm());
        }
    }
    assert!(worst < 1e-12, "max |u1 + u2| = {worst}");
    assert!(r.report.energies.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn shortcut_agrees_with_two_field_solve() {
    let g = geom(1.5);
    let gsfe = GsfeModel::graphene_illustrative();
    let el = ElasticityTensor::graphene();
    let a = relax(&gsfe, &el, &g, &RelaxOptions { mode_cutoff: 3.0, identical_layers: true, ..Default::default() }).unwrap();
    let b = relax(&gsfe, &el, &g, &RelaxOptions { mode_cutoff: 3.0, identical_layers: false, ..Default::default() }).unwrap();
    assert!((a.energy.total - b.energy.total).abs() < 1e-12);
    for (x, y) in a.field.u1.iter().zip(&b.field.u1) {
        assert!((x[0] - y[0]).norm() < 1e-6 && (x[1] - y[1]).norm() < 1e-6);
    }
}

#[test]
fn small_coupling_matches_linear_response() {
    let g = geom(2.0);
    let el = ElasticityTensor::graphene();
    let base = GsfeModel::first_star(0.0, 1e-3);
    let opts = RelaxOptions { mode_cutoff: 3.0, gradient_tol: 1e-12, ..Default::default() };
    let err = |s: f64| {
        let gsfe = base.scaled(s);
        let r = relax(&gsfe, &el, &g, &opts).unwrap();
        let lin = linear_response(&g, &gsfe, &el, &r.field.modes);
        let mut e = 0.0f64;
        let mut size = 0.0f64;
        for (k, l) in lin.iter().enumerate() {
            let v = [r.field.u1[k][0] - r.field.u2[k][0], r.field.u1[k][1] - r.field.u2[k][1]];
            e = e.max((v[0] - l[0]).norm()).max((v[1] - l[1]).norm());
            size = size.max(l[0].norm()).max(l[1].norm());
        }
        (e, size)
    };
    let (e1, s1) = err(0.02);
    let (e2, s2) = err(0.01);
    assert!((s1 / s2 - 2.0).abs() < 1e-9);
    assert!(e1 < 0.05 * s1, "linear response off by {e1} (size {s1})");
    let ratio = e1 / e2;
    assert!((ratio - 4.0).abs() < 0.4, "error ratio {ratio}");
}

#[test]
fn gauge_shift_leaves_solution_unchanged() {
    let g = geom(1.5);
    let el = ElasticityTensor::graphene();
    let gsfe = GsfeModel::graphene_illustrative();
    let mut shifted = gsfe.clone();
    shifted.c0 += 0.123;
    let opts = RelaxOptions { mode_cutoff: 3.0, ..Default::default() };
    let a = relax(&gsfe, &el, &g, &opts).unwrap();
    let b = relax(&shifted, &el, &g, &opts).unwrap();
    assert!((b.energy.total - a.energy.total - 0.123).abs() < 1e-12);
    for (x, y) in a.field.u1.iter().zip(&b.field.u1) {
        assert!((x[0] - y[0]).norm() < 1e-10 && (x[1] - y[1]).norm() < 1e-10);
    }
}

#[test]
fn field_json_round_trip() {
    let g = geom(1.1);
    let u = random_field(&g, 2.0, 0.1, 9);
    let back = DisplacementField::from_json(&u.to_json()).unwrap();
    assert_eq!(u.modes, back.modes);
    for (a, b) in u.u1.iter().zip(&back.u1) {
        assert_eq!(a, b);
    }
    let mut file = u.to_json();
    file.layer2_coeffs = None;
    let anti = DisplacementField::from_json(&file).unwrap();
    assert_eq!(anti.u2[0], [-u.u1[0][0], -u.u1[0][1]]);
}

#[test]
fn configuration_and_position_agree_on_atoms() {
    // u₁ at a layer-1 lattice point equals the configuration form at its
    // disregistry in layer 2, and likewise for layer 2.
    let g = geom(1.3);
    let u = random_field(&g, 2.0, 0.1, 4);
    for (i, j) in [(3, -7), (40, 11), (-25, 60)] {
        let b1 = g.layer1.point([i, j]);
        let s = g.layer2.fractional(&b1);
        assert!((u.eval(1, &b1) - u.eval_config(1, [s.x, s.y])).norm() < 1e-10);
        let b2 = g.layer2.point([i, j]);
        let s = g.layer1.fractional(&b2);
        assert!((u.eval(2, &b2) - u.eval_config(2, [s.x, s.y])).norm() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn real_valued_fields(seed in 0u64..1000, x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let g = geom(1.0);
        let u = random_field(&g, 3.0, 0.1, seed);
        let v = u.eval(1, &Vec2::new(x, y));
        prop_assert!(v.iter().all(|c| c.is_finite()));
        // Zero mean over the moiré cell.
        let m = g.moire_cell.unwrap();
        let n = 16;
        let mut mean = Vec2::zeros();
        for i in 0..n {
            for j in 0..n {
                mean += u.eval(1, &(m * Vec2::new(i as f64 / n as f64, j as f64 / n as f64)));
            }
        }
        prop_assert!(mean.norm() / ((n * n) as f64) < 1e-12);
    }
}
