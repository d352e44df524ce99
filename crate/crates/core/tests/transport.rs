mod common;

use common::{bump2d, jacobian_check, GAUSSIANS};
use seiswass::grid::Grid2D;
use seiswass::preprocess::{convexify, prepare_pair, PreprocessConfig, SignedSignal};
use seiswass::seismic::{synthesize_panel, AcquisitionGeometry, LayerModel};
use seiswass::solver::{solve_monge_ampere, SolverConfig};
use seiswass::transport2d::{displacement_field, pushforward_defect, registered_amplitude, w2_signed, w2_from_potential};

fn unit_grid(n: usize) -> Grid2D {
    Grid2D::new(n, n, 0.0, 1.0, 0.0, 1.0).unwrap()
}

#[test]
fn jacobian_matches_finite_differences() {
    let g = unit_grid(33);
    let blobs = convexify(&bump2d(g, (0.41, 0.52), 0.2), &bump2d(g, (0.57, 0.46), 0.25), 0.05).unwrap();
    for (pair, name) in [(GAUSSIANS.pair(17), "gaussians"), (blobs, "blobs")] {
        for filtered in [false, true] {
            let cfg = SolverConfig { use_filtered: filtered, ..Default::default() };
            for seed in 0..10 {
                let c = jacobian_check(&pair, &cfg, seed);
                assert!(c.max_rel_err < 1e-6, "{name} filtered={filtered} seed {seed}: {c:?}");
                assert!(c.kink_rows * 20 < c.rows, "{name} seed {seed}: too many branch switches {c:?}");
            }
        }
    }
}

#[test]
fn converged_residual_is_below_tolerance() {
    let pair = GAUSSIANS.pair(33);
    for filtered in [false, true] {
        let cfg = SolverConfig { use_filtered: filtered, ..Default::default() };
        let (_, rep) = solve_monge_ampere(&pair, &cfg).unwrap();
        assert!(rep.converged && rep.iterations <= 10, "{rep:?}");
        assert!(rep.residual_history.iter().all(|r| r.is_finite()));
        assert!(*rep.residual_history.last().unwrap() <= cfg.newton_tol);
    }
}

#[test]
fn translation_covariance() {
    let g = unit_grid(48);
    let dx = g.dx;
    let (c, s) = ((0.3, 0.45), (0.17, 0.05));
    let solve = |t: (f64, f64)| {
        let f = bump2d(g, (c.0 + t.0, c.1 + t.1), 0.15);
        let h = bump2d(g, (c.0 + s.0 + t.0, c.1 + s.1 + t.1), 0.15);
        let pair = convexify(&f, &h, 0.1).unwrap();
        let (u, _) = solve_monge_ampere(&pair, &SolverConfig::default()).unwrap();
        (displacement_field(&u, &pair, false), pair.x_rect)
    };
    let (a, ra) = solve((0.0, 0.0));
    let (b, rb) = solve((4.0 * dx, 3.0 * dx));
    assert_eq!((rb.i0, rb.j0), (ra.i0 + 4, ra.j0 + 3));
    assert_eq!(a.displacement.len(), b.displacement.len());
    for (p, q) in a.displacement.iter().zip(&b.displacement) {
        assert!((p.0 - q.0).abs() < 1e-8 && (p.1 - q.1).abs() < 1e-8, "{p:?} {q:?}");
    }
    assert!((a.w2_squared - b.w2_squared).abs() < 1e-10);
}

#[test]
fn gaussian_map_and_amplitude_match_the_separable_oracle() {
    let pair = GAUSSIANS.pair(65);
    let (m1, m2) = GAUSSIANS.axis_maps();
    let (u, _) = solve_monge_ampere(&pair, &SolverConfig::default()).unwrap();
    let g = *u.u.grid();
    let amp = registered_amplitude(&u).unwrap();
    let (mut map_err, mut amp_err) = (0.0f64, 0.0f64);
    for j in 1..g.n2 - 1 {
        for i in 1..g.n1 - 1 {
            let (x1, x2) = g.position(i, j);
            let (p1, p2) = u.gradient(i, j);
            map_err = map_err.max((p1 - m1.map(x1)).abs()).max((p2 - m2.map(x2)).abs());
            let det = m1.slope(x1) * m2.slope(x2);
            amp_err = amp_err.max((amp.get(i - 1, j - 1) - det).abs() / det);
        }
    }
    assert!(map_err < 2.0 * g.dx, "map error {map_err}");
    assert!(amp_err < 0.1, "amplitude error {amp_err}");
    let w = w2_from_potential(&u, &pair);
    let exact = GAUSSIANS.w2_squared();
    assert!((w - exact).abs() < 0.01 * exact, "{w} vs {exact}");
}

#[test]
fn pushforward_reproduces_target_moments() {
    let g = unit_grid(41);
    let blobs = convexify(&bump2d(g, (0.4, 0.55), 0.2), &bump2d(g, (0.6, 0.45), 0.28), 0.05).unwrap();
    for pair in [GAUSSIANS.pair(33), blobs] {
        let (u, _) = solve_monge_ampere(&pair, &SolverConfig::default()).unwrap();
        let tests: [&dyn Fn(f64, f64) -> f64; 5] =
            [&|a, _| a, &|_, b| b, &|a, _| a * a, &|_, b| b * b, &|a, b| a * b];
        for phi in tests {
            let d = pushforward_defect(&u, &pair, phi);
            assert!(d.abs() <= 0.05, "defect {d}");
        }
    }
}

#[test]
fn w2_is_nearly_symmetric() {
    let g = unit_grid(48);
    let (f, h) = (bump2d(g, (0.35, 0.5), 0.18), bump2d(g, (0.62, 0.44), 0.24));
    let cfg = PreprocessConfig::default();
    let cost = |a, b| {
        let pair = prepare_pair(a, b, &cfg).unwrap();
        let (u, _) = solve_monge_ampere(&pair, &SolverConfig::default()).unwrap();
        w2_from_potential(&u, &pair)
    };
    let (ab, ba) = (cost(&f, &h), cost(&h, &f));
    assert!((ab - ba).abs() <= 0.05 * ab.max(ba), "{ab} vs {ba}");
}

#[test]
fn panel_displacement_follows_the_moveout() {
    // A deeper first interface delays both events: mass moves to later times.
    let geom = AcquisitionGeometry::default();
    let reference = synthesize_panel(&LayerModel::REFERENCE, &geom).unwrap();
    let deeper = synthesize_panel(&LayerModel::REFERENCE.with(seiswass::seismic::Param::D1, 1.1), &geom).unwrap();
    let t = w2_signed(&SignedSignal(reference), &SignedSignal(deeper), &PreprocessConfig::default(), &SolverConfig::default())
        .unwrap();
    let plus = t.plus.unwrap();
    let field = displacement_field(&plus.potential, &plus.pair, true);
    let (mut d1, mut d2) = (0.0, 0.0);
    for (d, f) in field.displacement.iter().zip(&field.f_values) {
        d1 += d.0 * f;
        d2 += d.1 * f;
    }
    let angle = d1.atan2(d2).abs().to_degrees();
    assert!(d2 > 0.0 && angle <= 30.0, "mean displacement ({d1}, {d2}), {angle} degrees off the time axis");
}

#[test]
fn solves_are_bit_for_bit_reproducible() {
    let pair = GAUSSIANS.pair(33);
    let cfg = SolverConfig { use_filtered: true, ..Default::default() };
    let (a, ra) = solve_monge_ampere(&pair, &cfg).unwrap();
    let (b, rb) = solve_monge_ampere(&pair, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert!(a.u.values().iter().zip(b.u.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
