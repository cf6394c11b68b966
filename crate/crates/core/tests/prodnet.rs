mod common;

use autostpp::prodnet::{ConstrainedTriple, Cuboid, ProdSum, ProdSumConfig};
use rand::Rng;

fn random_prodsum(seed: u64, n_terms: usize) -> ProdSum {
    let cfg = ProdSumConfig {
        n_terms,
        hidden: vec![8, 8],
        ..ProdSumConfig::default()
    };
    ProdSum::new(&cfg, &mut common::rng(seed)).unwrap()
}

fn random_box(r: &mut rand_chacha::ChaCha8Rng) -> Cuboid {
    let lo: [f64; 3] = [r.random_range(-1.0..0.5), r.random_range(-1.0..0.5), r.random_range(0.0..0.5)];
    let hi = [lo[0] + r.random_range(0.1..1.0), lo[1] + r.random_range(0.1..1.0), lo[2] + r.random_range(0.1..1.0)];
    Cuboid::new(lo, hi).unwrap()
}

#[test]
fn cuboid_integral_matches_tensor_quadrature() {
    let mut r = common::rng(1);
    for seed in 0..3 {
        let ps = random_prodsum(seed, 1 + seed as usize);
        let c = random_box(&mut r);
        let exact = ps.cuboid_integral(&c).unwrap();
        let quad = common::cube_quadrature_batch(|x| ps.influence_batch(x).unwrap(), c.lo, c.hi, 16, 5);
        assert!(common::rel_err(exact, quad, 1e-12) < 1e-9, "{exact} vs {quad}");
    }
}

#[test]
fn cuboid_integrals_are_additive() {
    let ps = random_prodsum(7, 2);
    let whole = Cuboid::new([-0.5, -0.2, 0.0], [0.7, 0.9, 1.2]).unwrap();
    let left = Cuboid::new([-0.5, -0.2, 0.0], [0.7, 0.9, 0.4]).unwrap();
    let right = Cuboid::new([-0.5, -0.2, 0.4], [0.7, 0.9, 1.2]).unwrap();
    let v = ps.cuboid_integrals(&[whole, left, right]).unwrap();
    assert!((v[0] - v[1] - v[2]).abs() < 1e-12 * v[0].abs().max(1.0));
    assert_eq!(v[0], ps.cuboid_integral(&whole).unwrap());
}

#[test]
fn constrained_influence_is_nonnegative() {
    let ps = random_prodsum(9, 3);
    assert!(ps.is_constrained());
    let mut r = common::rng(2);
    let pts = common::uniform(&mut r, &[20_000, 3], -5.0, 5.0);
    assert!(ps.influence_batch(&pts).unwrap().data().iter().all(|&v| v >= 0.0));
}

#[test]
fn triple_integral_matches_quadrature_of_its_density() {
    let mut spec = ConstrainedTriple::default_spec();
    spec.widths = vec![3, 6, 1];
    let net = ConstrainedTriple::new(spec, Some((0.0, 1.0)), &mut common::rng(3)).unwrap();
    let c = Cuboid::new([0.1, 0.2, 0.0], [0.9, 0.6, 0.7]).unwrap();
    let exact = net.cuboid_integral(&c).unwrap();
    let quad = common::cube_quadrature_batch(|x| net.density_batch(x).unwrap(), c.lo, c.hi, 12, 3);
    assert!(common::rel_err(exact, quad, 1e-12) < 1e-9, "{exact} vs {quad}");
    let d = net.density_batch(&common::uniform(&mut common::rng(4), &[2000, 3], -3.0, 3.0)).unwrap();
    assert!(d.data().iter().all(|&v| v >= 0.0));
}
