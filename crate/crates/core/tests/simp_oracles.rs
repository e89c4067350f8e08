mod common;

use common::cantilever;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topo_core::fem::*;
use topo_core::problems::{build_instance, Family, FamilyConfig, ParamVector};
use topo_core::simp::*;

fn compliance(mesh: &GridMesh, x: &[f64], bcs: &BoundaryConditions) -> f64 {
    let k = assemble_stiffness(mesh, x, &Material::default()).unwrap();
    let u = solve_equilibrium(&k, bcs).unwrap().values;
    let f = bcs.load_vector(mesh.num_dofs());
    u.iter().zip(&f).map(|(a, b)| a * b).sum()
}

fn random_field(n: usize, lo: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..1.0)).collect()
}

fn assert_fd_close(analytic: &[f64], fd: &[f64]) {
    for (e, (a, f)) in analytic.iter().zip(fd).enumerate() {
        let rel = (a - f).abs() / a.abs().max(1e-12);
        assert!(rel <= 1e-4, "element {e}: analytic {a} vs finite difference {f}");
    }
}

#[test]
fn compliance_sensitivity_matches_finite_differences_2d() {
    let mesh = GridMesh::new(&[6, 4], 1.0).unwrap();
    let bcs = cantilever(&mesh);
    let x = random_field(mesh.num_elements(), 0.3, 11);
    let k = assemble_stiffness(&mesh, &x, &Material::default()).unwrap();
    let u = solve_equilibrium(&k, &bcs).unwrap().values;
    let dc = compliance_sensitivity(&x, &u, &Material::default(), &mesh);
    assert!(dc.iter().all(|&d| d <= 0.0));
    let step = 1e-6;
    let fd: Vec<f64> = (0..x.len())
        .map(|e| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[e] += step;
            xm[e] -= step;
            (compliance(&mesh, &xp, &bcs) - compliance(&mesh, &xm, &bcs)) / (2.0 * step)
        })
        .collect();
    assert_fd_close(&dc, &fd);
}

#[test]
fn density_filtered_gradient_matches_finite_differences_3d() {
    let mesh = GridMesh::new(&[6, 4, 2], 1.0).unwrap();
    let bcs = cantilever(&mesh);
    let w = build_filter_weights(&mesh, 3f64.sqrt()).unwrap();
    let x = random_field(mesh.num_elements(), 0.2, 5);
    let c_of = |x: &[f64]| compliance(&mesh, &density_filter(x, &w), &bcs);
    let xt = density_filter(&x, &w);
    let k = assemble_stiffness(&mesh, &xt, &Material::default()).unwrap();
    let u = solve_equilibrium(&k, &bcs).unwrap().values;
    let grad = chain_rule_backfilter(&compliance_sensitivity(&xt, &u, &Material::default(), &mesh), &w);
    let step = 1e-6;
    let fd: Vec<f64> = (0..x.len())
        .map(|e| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[e] += step;
            xm[e] -= step;
            (c_of(&xp) - c_of(&xm)) / (2.0 * step)
        })
        .collect();
    assert_fd_close(&grad, &fd);
}

/// All-pairs weight table from element centers.
fn brute_weights(mesh: &GridMesh, r_min: f64) -> Vec<Vec<f64>> {
    let n = mesh.num_elements();
    (0..n)
        .map(|e| {
            let a = mesh.element_coords(e);
            (0..n)
                .map(|j| {
                    let b = mesh.element_coords(j);
                    let d2: f64 = (0..3).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum();
                    (r_min - d2.sqrt()).max(0.0)
                })
                .collect()
        })
        .collect()
}

#[test]
fn weight_table_matches_all_pairs_oracle() {
    for (dims, r) in [(vec![5usize, 5], 1.5), (vec![4, 4, 2], 3f64.sqrt()), (vec![7, 3], 2.5)] {
        let mesh = GridMesh::new(&dims, 1.0).unwrap();
        let w = build_filter_weights(&mesh, r).unwrap();
        let oracle = brute_weights(&mesh, r);
        for e in 0..mesh.num_elements() {
            for j in 0..mesh.num_elements() {
                assert_eq!(w.weight(e, j), oracle[e][j]);
            }
            let sum: f64 = oracle[e].iter().sum();
            assert!((w.row_sum(e) - sum).abs() < 1e-14);
        }
    }
}

#[test]
fn sensitivity_filter_matches_double_loop() {
    let mesh = GridMesh::new(&[5, 5], 1.0).unwrap();
    let w = build_filter_weights(&mesh, 1.5).unwrap();
    let h = brute_weights(&mesh, 1.5);
    let x = random_field(25, 0.0, 1);
    let dc: Vec<f64> = random_field(25, 0.0, 2).iter().map(|v| -v * 10.0).collect();
    let out = sensitivity_filter(&dc, &x, &w, 1e-3);
    for e in 0..25 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..25 {
            num += h[e][j] * x[j] * dc[j];
            den += h[e][j];
        }
        let expected = num / (x[e].max(1e-3) * den);
        assert!((out[e] - expected).abs() < 1e-12);
    }
}

#[test]
fn density_filter_matches_double_loop() {
    let mesh = GridMesh::new(&[4, 4, 2], 1.0).unwrap();
    let r = 3f64.sqrt();
    let w = build_filter_weights(&mesh, r).unwrap();
    let h = brute_weights(&mesh, r);
    let x = random_field(32, 0.0, 3);
    let out = density_filter(&x, &w);
    for e in 0..32 {
        let num: f64 = (0..32).map(|j| h[e][j] * x[j]).sum();
        let den: f64 = h[e].iter().sum();
        assert!((out[e] - num / den).abs() < 1e-12);
    }
}

#[test]
fn backfilter_is_adjoint_of_density_filter() {
    let mesh = GridMesh::new(&[5, 3], 1.0).unwrap();
    let w = build_filter_weights(&mesh, 1.5).unwrap();
    for seed in 0..5 {
        let a = random_field(15, -1.0, seed);
        let b = random_field(15, -1.0, seed + 100);
        let lhs: f64 = density_filter(&a, &w).iter().zip(&b).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.iter().zip(chain_rule_backfilter(&b, &w)).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

fn has_checkerboard(x: &[f64], nx: usize, ny: usize) -> bool {
    let b = |i: usize, j: usize| x[j * nx + i] > 0.5;
    (0..nx - 1).any(|i| {
        (0..ny - 1).any(|j| {
            let (a, c, d, e) = (b(i, j), b(i + 1, j), b(i, j + 1), b(i + 1, j + 1));
            a == e && c == d && a != c
        })
    })
}

#[test]
fn mbb_reduced_grid_converges() {
    let cfg = FamilyConfig::mbb_with_grid(60, 20);
    let inst = build_instance(&cfg, &ParamVector::new(Family::Mbb, vec![30.0, 20.0, 0.0])).unwrap();
    let res = optimize(&inst, &cfg.simp).unwrap();
    assert!(res.converged, "not converged after {} iterations", res.iterations);
    assert!(res.iterations <= 200);
    assert!((res.volume() - 0.5).abs() <= 1e-4);
    assert!(res.densities.iter().all(|&x| (0.0..=1.0).contains(&x)));
    assert!(!has_checkerboard(&res.densities, 60, 20));
    let near_binary =
        res.densities.iter().filter(|&&x| x <= 0.1 || x >= 0.9).count() as f64 / res.densities.len() as f64;
    assert!(near_binary >= 0.6, "only {near_binary:.3} of elements near 0/1");
    let hist = res.compliance_history();
    assert!(res.compliance < hist[0]);
    println!(
        "mbb 60x20 mid-top load: compliance {:.4} after {} iterations",
        res.compliance, res.iterations
    );
}

#[test]
fn bridge_passive_elements_stay_pinned() {
    let cfg = FamilyConfig::bridge();
    let inst = build_instance(&cfg, &ParamVector::new(Family::Bridge, vec![20.0, 40.0, 5.0, 55.0])).unwrap();
    let settings = SimpSettings {
        max_iters: 3,
        ..cfg.simp.clone()
    };
    let res = optimize(&inst, &settings).unwrap();
    for e in 0..res.densities.len() {
        if inst.passive_solid[e] {
            assert_eq!(res.densities[e], 1.0);
            assert_eq!(res.design[e], 1.0);
        }
        if inst.passive_void[e] {
            assert_eq!(res.densities[e], 0.0);
            assert_eq!(res.design[e], 0.0);
        }
    }
    assert!((res.volume() - 0.12).abs() <= 1e-4);
    for r in &res.history {
        assert!((r.volume - 0.12).abs() <= 1e-4);
    }
}

#[test]
fn reduced_bridge_runs_at_its_volume_fraction() {
    let cfg = FamilyConfig::bridge_reduced();
    let inst = build_instance(&cfg, &ParamVector::new(Family::Bridge, vec![20.0, 40.0, 5.0, 55.0])).unwrap();
    let settings = SimpSettings {
        max_iters: 20,
        ..cfg.simp.clone()
    };
    let res = optimize(&inst, &settings).unwrap();
    assert!((res.volume() - cfg.simp.volfrac).abs() <= 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oc_step_keeps_volume_move_limit_and_range(
        seed in 0u64..10_000, n in 4usize..60, f in 0.2f64..0.8
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| (f + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0)).collect();
        let dc: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-3..10.0)).collect();
        let settings = OcSettings { volfrac: f, ..OcSettings::default() };
        let step = oc_update(&x, &dc, &vec![1.0; n], &settings).unwrap();
        let mean = step.x_new.iter().sum::<f64>() / n as f64;
        prop_assert!((mean - f).abs() <= 1e-4);
        for (a, b) in step.x_new.iter().zip(&x) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - b).abs() <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn oc_volume_is_monotone_in_lambda(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dc: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..5.0)).collect();
        let mut prev = f64::INFINITY;
        for i in -9..=9 {
            let lambda = 10f64.powi(i);
            let v: f64 = x.iter().zip(&dc).map(|(&a, &d)| oc_candidate(a, d, 1.0, lambda, 0.2, 0.5)).sum();
            prop_assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn filter_weights_invariants(nx in 1usize..7, ny in 1usize..6, nz in 1usize..3, r in 0.5f64..3.0) {
        let mesh = GridMesh::new(&[nx, ny, nz], 1.0).unwrap();
        let w = build_filter_weights(&mesh, r).unwrap();
        for e in 0..mesh.num_elements() {
            prop_assert_eq!(w.weight(e, e), r);
            for (j, h) in w.row(e) {
                prop_assert!(h > 0.0);
                prop_assert_eq!(w.weight(j, e), h);
            }
        }
    }

    #[test]
    fn density_filter_preserves_range(seed in 0u64..1000) {
        let mesh = GridMesh::new(&[6, 5], 1.0).unwrap();
        let w = build_filter_weights(&mesh, 1.5).unwrap();
        let x = random_field(30, 0.0, seed);
        for v in density_filter(&x, &w) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn filters_leave_constants_unchanged(c in 0.01f64..1.0, d in -5.0f64..-0.01) {
        let mesh = GridMesh::new(&[5, 4, 2], 1.0).unwrap();
        let w = build_filter_weights(&mesh, 1.5).unwrap();
        let n = mesh.num_elements();
        for v in sensitivity_filter(&vec![d; n], &vec![c; n], &w, 1e-3) {
            prop_assert!((v - d * c / c.max(1e-3)).abs() < 1e-12);
        }
        for v in density_filter(&vec![c; n], &w) {
            prop_assert!((v - c).abs() < 1e-12);
        }
    }
}
