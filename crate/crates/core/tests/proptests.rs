//! Property tests for invariants of the geometry, discretization and solvers.

use std::sync::OnceLock;

use fractal_homog::analysis::{fit_geometric_factor, norm_breakdown, prolongation_isometry_defect};
use fractal_homog::assembly::{local_jump_kernel, local_stiffness_kernel, EnergyForm, Source};
use fractal_homog::cli::{validate_config, CoefficientSpec, ExperimentConfig, NestedMode, SourceSpec, StudyKind};
use fractal_homog::geometry::{
    build_cantor_network, build_layered_network, compute_cell_partition, network_to_string, parse_network,
    LayeredNetworkConfig, NetworkKind,
};
use fractal_homog::problem::Hierarchy;
use fractal_homog::solve::{compute_reduction_factors, solve_reference, InitialGuess, ReferenceOptions};
use proptest::prelude::*;

fn hierarchy() -> &'static Hierarchy {
    static H: OnceLock<Hierarchy> = OnceLock::new();
    H.get_or_init(|| Hierarchy::build(build_cantor_network(4), 0.5, EnergyForm::default(), Source::Constant(1.0), 4).unwrap())
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    let geometry = prop_oneof![Just(NetworkKind::Cantor), Just(NetworkKind::Layered)];
    let study = prop_oneof![
        Just(StudyKind::Convergence),
        Just(StudyKind::Preconditioner),
        Just(StudyKind::Nested),
        Just(StudyKind::Properties)
    ];
    let source = prop_oneof![
        (-4.0f64..4.0).prop_map(SourceSpec::Constant),
        prop::array::uniform3(-4.0f64..4.0).prop_map(SourceSpec::Affine)
    ];
    let coefficient = prop_oneof![
        (0.1f64..10.0).prop_map(CoefficientSpec::Constant),
        prop::collection::vec(0.1f64..10.0, 1..5).prop_map(CoefficientSpec::PerLevel)
    ];
    let nested = prop_oneof![Just(NestedMode::Verify), (1usize..9).prop_map(NestedMode::Fixed)];
    (
        (geometry, study, 1u32..4, prop::option::of(0u32..4), prop::option::of(0i32..6), 0.01f64..10.0),
        (source, coefficient, prop::option::of(prop::collection::vec(1u64..100, 1..8)), any::<u64>()),
        (any::<bool>(), 1usize..20, any::<bool>(), nested, 1usize..5000),
    )
        .prop_map(|((geometry, study, k_max, k_min, p, c), (f, a, crossing, seed), (pre, steps, zero, nested, samples))| {
            ExperimentConfig {
                geometry,
                study,
                k_max: Some(k_max + 1),
                k_min: k_min.map(|k| 1 + k.min(k_max)),
                h1: p.map(|p| 2f64.powi(-p)),
                c,
                f,
                a,
                crossing,
                seed,
                preconditioner: pre,
                pcg_steps: steps,
                initial: if zero { InitialGuess::Zero } else { InitialGuess::Coarse },
                nested,
                samples,
                ..ExperimentConfig::default()
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_round_trips(cfg in config()) {
        let text = cfg.to_config_string();
        let parsed = validate_config(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_config_string(), text);
    }

    #[test]
    fn network_text_round_trips(levels in 1u32..5, seed in any::<u64>(), cantor in any::<bool>()) {
        let net = if cantor {
            build_cantor_network(levels)
        } else {
            build_layered_network(&LayeredNetworkConfig { seed, ..Default::default() }, levels).unwrap()
        };
        prop_assert_eq!(parse_network(&network_to_string(&net)).unwrap(), net);
    }

    #[test]
    fn layered_partitions_are_simply_connected_and_shrinking(seed in any::<u64>()) {
        let net = build_layered_network(&LayeredNetworkConfig { seed, ..Default::default() }, 4).unwrap();
        let d: Vec<f64> = (1..=3).map(|k| compute_cell_partition(&net, k).unwrap().d_k).collect();
        prop_assert!(d.windows(2).all(|w| w[1] <= w[0]), "{:?}", d);
    }

    #[test]
    fn jump_kernel_is_positive_semidefinite(
        length in 1e-3f64..2.0, weight in 1e-2f64..1e3, a in 0.1f64..10.0, v in prop::array::uniform4(-1.0f64..1.0)
    ) {
        let k = local_jump_kernel(length, weight, a);
        let q: f64 = (0..4).map(|i| (0..4).map(|j| v[i] * k[i][j] * v[j]).sum::<f64>()).sum();
        prop_assert!(q >= -1e-12 * weight * a * length);
        let continuous = [v[0], v[1], v[0], v[1]];
        let q0: f64 = (0..4).map(|i| (0..4).map(|j| continuous[i] * k[i][j] * continuous[j]).sum::<f64>()).sum();
        prop_assert!(q0.abs() <= 1e-12 * weight * a * length);
    }

    #[test]
    fn stiffness_kernel_annihilates_constants(c in prop::array::uniform3(prop::array::uniform2(-1.0f64..1.0))) {
        let twice_area = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
        prop_assume!(twice_area.abs() > 1e-3);
        let k = local_stiffness_kernel(c).unwrap();
        for (i, row) in k.iter().enumerate() {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
            prop_assert!((0..3).all(|j| (k[i][j] - k[j][i]).abs() < 1e-12 * row[i].max(1.0)));
            prop_assert!(row[i] >= 0.0);
        }
    }

    #[test]
    fn prolongation_preserves_the_norm(v in vector(hierarchy().dofmap(2).total_dofs())) {
        let h = hierarchy();
        prop_assert!(prolongation_isometry_defect(h, &v, 2, 4).unwrap() < 1e-12);
    }

    #[test]
    fn norm_splits_into_gradient_and_jumps(v in vector(hierarchy().dofmap(3).total_dofs())) {
        let h = hierarchy();
        let b = norm_breakdown(&h.view(3), h.form(), &v).unwrap();
        let q = h.norm(3).quadratic_form(&v);
        prop_assert!((b.total - q).abs() <= 1e-12 * q.max(1.0));
        prop_assert!((b.gradient + b.jumps.iter().sum::<f64>() - b.total).abs() <= 1e-12 * q.max(1.0));
        prop_assert!(b.jumps.iter().all(|&j| j >= 0.0));
    }

    #[test]
    fn solution_scales_with_the_source(s in -5.0f64..5.0) {
        let h = hierarchy();
        let m = &h.energy(3).matrix;
        let u = solve_reference(m, h.load(3), &ReferenceOptions::default()).unwrap();
        let scaled: Vec<f64> = h.load(3).iter().map(|b| s * b).collect();
        let us = solve_reference(m, &scaled, &ReferenceOptions::default()).unwrap();
        let scale = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        prop_assert!(u.iter().zip(&us).all(|(a, b)| (s * a - b).abs() <= 1e-10 * scale.max(1.0)));
    }

    #[test]
    fn geometric_fit_recovers_the_factor(q in 0.05f64..0.95, a in 0.1f64..10.0, n in 3usize..10) {
        let levels: Vec<u32> = (1..=n as u32).collect();
        let values: Vec<f64> = levels.iter().map(|&k| a * q.powi(k as i32)).collect();
        let fit = fit_geometric_factor(&levels, &values).unwrap();
        prop_assert!((fit.factor - q).abs() < 1e-10 && fit.residual < 1e-10);
        let (rho, avg) = compute_reduction_factors(&values);
        prop_assert!(rho.iter().all(|r| (r - q).abs() < 1e-10));
        prop_assert!((avg.unwrap() - q).abs() < 1e-10);
    }
}
