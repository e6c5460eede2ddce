use coupled_source::config::{parse_config, Expr, RunConfig};
use coupled_source::control::ControlProblem;
use coupled_source::fem::{assemble_mass, assemble_stiffness, assemble_weighted_mass};
use coupled_source::forward::{solve_forward, CouplingMatrix, SigmaProfile, TimeGrid};
use coupled_source::mesh::{build_interval_mesh, build_rect_mesh, mask_from_boxes, ObsBox};
use coupled_source::optimize::relative_error;
use coupled_source::volterra::{solve_volterra, TimeSeriesField};
use proptest::prelude::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn element_measures_partition_the_domain(a in -3.0f64..3.0, len in 0.1f64..5.0, n in 1usize..200,
                                              nx in 1usize..20, ny in 1usize..20, lx in 0.1f64..4.0, ly in 0.1f64..4.0) {
        let m = build_interval_mesh(a, a + len, n).unwrap();
        let total: f64 = (0..m.element_count()).map(|e| m.element_measure(e)).sum();
        prop_assert!((total / len - 1.0).abs() <= 1e-12);
        let r = build_rect_mesh(nx, ny, (lx, ly)).unwrap();
        let total: f64 = (0..r.element_count()).map(|e| r.element_measure(e)).sum();
        prop_assert!((total / (lx * ly) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn enlarging_a_box_keeps_flagged_nodes(x0 in 0.0f64..0.8, w in 0.0f64..0.5, grow in 0.0f64..0.3, n in 4usize..120,
                                           y0 in 0.0f64..0.5, h in 0.1f64..0.5) {
        let m = build_interval_mesh(0.0, 1.0, n).unwrap();
        let small = mask_from_boxes(&m, &[ObsBox::interval(x0, (x0 + w).min(1.0))]);
        let big = mask_from_boxes(&m, &[ObsBox::interval((x0 - grow).max(0.0), (x0 + w + grow).min(1.0))]).unwrap();
        if let Ok(small) = small {
            prop_assert!(small.node_flags.iter().zip(&big.node_flags).all(|(s, b)| !*s || *b));
        }
        let r = build_rect_mesh(10, 10, (1.0, 1.0)).unwrap();
        let small = mask_from_boxes(&r, &[ObsBox::rect((x0, (x0 + w).min(1.0)), (y0, y0 + h))]);
        let big = mask_from_boxes(&r, &[ObsBox::rect(((x0 - grow).max(0.0), (x0 + w + grow).min(1.0)), ((y0 - grow).max(0.0), (y0 + h + grow).min(1.0)))]).unwrap();
        if let Ok(small) = small {
            prop_assert!(small.node_flags.iter().zip(&big.node_flags).all(|(s, b)| !*s || *b));
        }
    }

    #[test]
    fn doubled_interval_meshes_nest(n in 1usize..100, a in -1.0f64..1.0, len in 0.5f64..3.0) {
        let coarse = build_interval_mesh(a, a + len, n).unwrap();
        let fine = build_interval_mesh(a, a + len, 2 * n).unwrap();
        for (i, p) in coarse.nodes().iter().enumerate() {
            prop_assert!((fine.node(2 * i)[0] - p[0]).abs() <= 1e-12 * (1.0 + p[0].abs()));
        }
    }

    #[test]
    fn assembly_is_bitwise_reproducible(n in 2usize..60, nu in 0.01f64..2.0, c in -3.0f64..3.0) {
        let m = build_interval_mesh(0.0, 1.0, n).unwrap();
        let q: Vec<f64> = m.nodes().iter().map(|p| c * p[0] * p[0] - 1.0).collect();
        prop_assert_eq!(assemble_mass(&m).to_coo_string(), assemble_mass(&m).to_coo_string());
        prop_assert_eq!(assemble_stiffness(&m, nu).unwrap().to_coo_string(), assemble_stiffness(&m, nu).unwrap().to_coo_string());
        prop_assert_eq!(assemble_weighted_mass(&m, &q).unwrap().to_coo_string(), assemble_weighted_mass(&m, &q).unwrap().to_coo_string());
    }
}

proptest! {
    #![proptest_config(cases(24))]

    /// Without coupling, the mass norm grows by at most `dt·|σ|·‖F‖` per step.
    #[test]
    fn implicit_euler_is_stable_for_any_step(steps in 1usize..80, t in 0.05f64..2.0, nu in 0.001f64..1.0,
                                             amp in 0.1f64..10.0, k in 1u32..6) {
        let mesh = build_interval_mesh(0.0, 1.0, 30).unwrap();
        let grid = TimeGrid::new(t, steps).unwrap();
        let sigma = SigmaProfile::from_fn(&grid, |s| 1.0 + 0.5 * (7.0 * s).sin(), |s| 3.5 * (7.0 * s).cos());
        let f: Vec<f64> = mesh.nodes().iter().map(|p| amp * (k as f64 * std::f64::consts::PI * p[0]).sin()).collect();
        let y = solve_forward(&mesh, &CouplingMatrix::zeros(1), nu, &sigma, &[f.clone()], grid).unwrap();
        let mass = assemble_mass(&mesh);
        let fnorm = mass.inner(&f, &f).sqrt();
        let bound: f64 = (1..=steps).map(|m| grid.dt() * sigma.at(m).abs()).sum::<f64>() * fnorm;
        for m in 0..grid.n_times() {
            let s = y.comp(m, 0);
            prop_assert!(mass.inner(s, s).sqrt() <= bound * (1.0 + 1e-10) + 1e-14);
        }
    }

    #[test]
    fn forward_map_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, q in -5.0f64..5.0) {
        let mesh = build_interval_mesh(0.0, 1.0, 20).unwrap();
        let grid = TimeGrid::new(0.5, 10).unwrap();
        let sigma = SigmaProfile::oscillating(&grid, 0.05).unwrap();
        let cq = CouplingMatrix::constant(2, &[0.0, q, -q, 1.0]).unwrap();
        let f: Vec<Vec<f64>> = vec![mesh.nodes().iter().map(|p| p[0]).collect(), mesh.nodes().iter().map(|p| p[0] * p[0]).collect()];
        let g: Vec<Vec<f64>> = vec![mesh.nodes().iter().map(|p| (3.0 * p[0]).cos()).collect(), vec![1.0; 21]];
        let mix: Vec<Vec<f64>> = f.iter().zip(&g).map(|(u, v)| u.iter().zip(v).map(|(x, y)| a * x + b * y).collect()).collect();
        let yf = solve_forward(&mesh, &cq, 0.1, &sigma, &f, grid).unwrap();
        let yg = solve_forward(&mesh, &cq, 0.1, &sigma, &g, grid).unwrap();
        let ym = solve_forward(&mesh, &cq, 0.1, &sigma, &mix, grid).unwrap();
        let scale = 1.0 + ym.max_abs();
        for ((x, y), z) in yf.data().iter().zip(yg.data()).zip(ym.data()) {
            prop_assert!((a * x + b * y - z).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn volterra_solve_is_linear(c1 in -5.0f64..5.0, c2 in -5.0f64..5.0, w in 0.5f64..6.0, n in 10usize..200) {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let sigma = SigmaProfile::from_fn(&grid, |s| 1.5 + 0.5 * (w * s).cos(), |s| -0.5 * w * (w * s).sin());
        let e1 = TimeSeriesField::from_fn(grid, 2, |t, i| c1 * (t + i as f64).sin());
        let e2 = TimeSeriesField::from_fn(grid, 2, |t, i| c2 * t * t - i as f64);
        let sum = TimeSeriesField::from_fn(grid, 2, |t, i| c1 * (t + i as f64).sin() + c2 * t * t - i as f64);
        let (a, b, s) = (solve_volterra(&e1, &sigma).unwrap(), solve_volterra(&e2, &sigma).unwrap(), solve_volterra(&sum, &sigma).unwrap());
        let scale = 1.0 + s.max_abs();
        for ((x, y), z) in a.values().iter().zip(b.values()).zip(s.values()) {
            prop_assert!((x + y - z).abs() <= 1e-9 * scale);
        }
    }

    /// Controls vanish exactly off the observation region.
    #[test]
    fn controls_live_on_the_observation_region(x0 in 0.1f64..0.5, w in 0.2f64..0.4, q in 1.0f64..6.0, eps_exp in 2i32..6) {
        let mesh = build_interval_mesh(0.0, 1.0, 24).unwrap();
        let grid = TimeGrid::new(0.3, 12).unwrap();
        let mask = mask_from_boxes(&mesh, &[ObsBox::interval(x0, x0 + w)]).unwrap();
        let qt = CouplingMatrix::constant(2, &[0.0, 0.0, q, 0.0]).unwrap().transpose();
        let p = ControlProblem::new(&mesh, &qt, 0.1, grid, &mask).unwrap();
        let psi0: Vec<f64> = (0..2).flat_map(|_| mesh.nodes().iter().map(|x| (std::f64::consts::PI * x[0]).sin())).collect();
        let (u, _, _) = p.solve_cg(&psi0, 10f64.powi(-eps_exp)).unwrap();
        for m in 0..grid.n_steps() {
            for (i, v) in u.step(m).iter().enumerate() {
                if !mask.node_flags[i] {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn relative_error_is_scale_free(s in 0.01f64..100.0, d in -1.0f64..1.0) {
        let mesh = build_interval_mesh(0.0, 1.0, 20).unwrap();
        let mass = assemble_mass(&mesh);
        let t: Vec<Vec<f64>> = vec![mesh.nodes().iter().map(|p| (6.0 * p[0]).sin()).collect()];
        let r: Vec<Vec<f64>> = vec![t[0].iter().map(|v| v * (1.0 + d)).collect()];
        let scale = |f: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { f.iter().map(|c| c.iter().map(|v| s * v).collect()).collect() };
        let e1 = relative_error(&mass, &r, &t).unwrap();
        let e2 = relative_error(&mass, &scale(&r), &scale(&t)).unwrap();
        prop_assert!((e1 - d.abs()).abs() <= 1e-12 && (e1 - e2).abs() <= 1e-12);
    }
}

fn arb_expr() -> impl Strategy<Value = String> {
    prop_oneof![
        (-10.0f64..10.0).prop_map(|c| format!("{c}")),
        (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| format!("{a}*x + {b}")),
        (1u32..5).prop_map(|k| format!("sin({k}*pi*x)")),
        (0.1f64..0.4, 0.5f64..0.9).prop_map(|(a, b)| format!("1 on ({a},{b}); 0 else")),
    ]
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn configs_survive_emit_and_parse(elements in 1usize..400, nu in 0.001f64..5.0, steps in 1usize..500, t in 0.01f64..10.0,
                                      q12 in arb_expr(), f1 in arb_expr(), f2 in arb_expr(), k in 1.0f64..1e8,
                                      iters in 1usize..5000, seed in any::<u64>(), a in 0.0f64..0.5, first in any::<bool>()) {
        let mut c = RunConfig::benchmark_1d();
        c.domain.elements = [elements, 0];
        c.domain.nu = nu;
        c.time.steps = steps;
        c.time.t_final = t;
        c.time.t0 = t / 10.0;
        c.coupling.entries.insert((0, 1), Expr::parse(&q12).unwrap());
        c.source.insert(0, Expr::parse(&f1).unwrap());
        c.source.insert(1, Expr::parse(&f2).unwrap());
        c.observation.boxes = vec![ObsBox::interval(a, a + 0.3)];
        c.observation.observed = if first { vec![0] } else { vec![0, 1] };
        c.optimizer.k = k;
        c.optimizer.iters = iters;
        c.seed = seed;
        let back = parse_config(&c.emit()).unwrap();
        prop_assert_eq!(back, c);
    }
}
