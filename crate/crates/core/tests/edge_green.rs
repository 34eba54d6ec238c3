use std::sync::OnceLock;

use bulkedge::bulk::{compute_bands, find_gap, GapInfo};
use bulkedge::coeff::{gyro_rods, CoefficientField, GyroRodsParams};
use bulkedge::edge::{edge_index, edge_index_at, in_gap_modes, mollifier, Mollifier, DEFAULT_MARGIN};
use bulkedge::grid::{assemble_dirichlet, assemble_supercell, domain_mask, DomainShape};
use bulkedge::hs::{almost_analytic, decay_probe, decay_probe_dirichlet, scalar_residue_check, verify_representation};
use bulkedge::C64;
use proptest::prelude::*;

const GYRO: GyroRodsParams = GyroRodsParams {
    a_bg: 1.0,
    a_rod: -0.9,
    gamma0: 0.095,
    r0: 0.3,
    w: 0.1,
};

fn setup() -> &'static (CoefficientField, GapInfo, Mollifier) {
    static CELL: OnceLock<(CoefficientField, GapInfo, Mollifier)> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = gyro_rods(GYRO).unwrap();
        let bands = compute_bands(&f, 8, 8, 4).unwrap();
        let gap = find_gap(&bands, 2).unwrap();
        let moll = mollifier(&gap, DEFAULT_MARGIN).unwrap();
        (f, gap, moll)
    })
}

proptest! {
    #[test]
    fn mollifier_switches_monotonically(a in -5.0..5.0f64, w in 0.1..3.0f64, t in 0.0..1.0f64, s in 0.0..1.0f64) {
        let m = Mollifier::new(a, a + w).unwrap();
        let (x, y) = (a - 0.5 + (w + 1.0) * t.min(s), a - 0.5 + (w + 1.0) * t.max(s));
        prop_assert!((0.0..=1.0).contains(&m.g(x)));
        prop_assert!(m.g(x) >= m.g(y));
        prop_assert!(m.gprime(x) <= 0.0);
        prop_assert_eq!(m.g(a - 1e-3), 1.0);
        prop_assert_eq!(m.g(a + w + 1e-3), 0.0);
    }

    #[test]
    fn residue_check_tracks_the_switch(t in -0.5..1.5f64) {
        let m = Mollifier::new(1.0, 2.0).unwrap();
        let aa = almost_analytic(m, 3, 1.0, 0.0).unwrap();
        let quad = aa.quadrature(200, 100).unwrap();
        let lambda = 1.0 + t;
        prop_assert!((scalar_residue_check(&aa, &quad, lambda) - m.g(lambda)).abs() < 1e-3);
    }
}

#[test]
fn spectral_and_resolvent_traces_agree() {
    let (f, gap, moll) = setup();
    let mask = domain_mask(DomainShape::Disk, 1.5, 6).unwrap();
    let op = assemble_dirichlet(f, &mask).unwrap();
    let report = edge_index(&op, moll).unwrap();
    let aa = almost_analytic(*moll, 3, gap.width, 0.0).unwrap();
    let check = verify_representation(&op, &aa, &aa.quadrature(200, 100).unwrap()).unwrap();
    assert_eq!(check.n_modes, report.modes.len());
    assert!((check.ei_spec - report.ei).abs() < 1e-9 * report.ei.abs().max(1.0));
    assert!(check.agrees(0.02, 1e-2), "{check:?}");
}

#[test]
fn modes_are_certified_and_orthonormal() {
    let (f, _, moll) = setup();
    let mask = domain_mask(DomainShape::Disk, 4.0, 8).unwrap();
    let op = assemble_dirichlet(f, &mask).unwrap();
    let modes = in_gap_modes(&op, moll).unwrap();
    let (below_a, below_b) = modes.inertia.expect("window certified by inertia");
    assert_eq!(below_b - below_a, modes.len());
    assert!(modes.orthonormality_deviation() < 1e-10);
    assert!(modes.eigenvalues.iter().all(|l| (moll.a..moll.b).contains(l)));
}

#[test]
fn real_operators_have_no_edge_index() {
    let f = gyro_rods(GyroRodsParams {
        a_rod: 10.0,
        gamma0: 0.0,
        r0: 0.35,
        ..GYRO
    })
    .unwrap();
    let bands = compute_bands(&f, 8, 8, 4).unwrap();
    let moll = mollifier(&find_gap(&bands, 2).unwrap(), DEFAULT_MARGIN).unwrap();
    for l in [2.0, 3.0] {
        let r = edge_index_at(&f, DomainShape::Disk, l, 8, &moll).unwrap();
        assert!(r.normalized.abs() < 1e-8, "L = {l}: {}", r.normalized);
    }
}

#[test]
fn supercell_resolvent_decays_in_the_gap() {
    let (f, gap, _) = setup();
    let (cells, n) = (16, 8);
    let op = assemble_supercell(f, cells, n).unwrap();
    let src = op.index(n / 2, n / 2);
    let zs: Vec<C64> = [0.0, 1.0, 2.0].iter().map(|&e| C64::new(gap.midpoint(), e * gap.width)).collect();
    let fits = decay_probe(&op, &zs, src).unwrap();
    for f in &fits {
        assert!(f.rate > 0.0 && f.r_squared > 0.9, "{} {} {}", f.z_im, f.rate, f.r_squared);
    }
    assert!(fits.windows(2).all(|w| w[1].rate >= w[0].rate));

    // an edge-mode energy on a truncated domain: boundary transport spoils the decay
    let mask = domain_mask(DomainShape::Disk, 4.0, n).unwrap();
    let dop = assemble_dirichlet(f, &mask).unwrap();
    let moll = mollifier(gap, DEFAULT_MARGIN).unwrap();
    let modes = in_gap_modes(&dop, &moll).unwrap();
    let lambda = modes.eigenvalues[0];
    let edge_src = (0..dop.dim())
        .min_by(|&a, &b| mask.boundary_distance[a].total_cmp(&mask.boundary_distance[b]))
        .unwrap();
    let fit = decay_probe_dirichlet(&dop, C64::new(lambda, 1e-3 * gap.width), edge_src).unwrap();
    assert!(fit.rate < 0.5 * fits[0].rate, "edge rate {} vs bulk {}", fit.rate, fits[0].rate);
}
