//! Acceptance suite: one test per asserted property of the engine, named
//! criterion_01 .. criterion_10 so the harness prints one pass/fail line
//! each. Tolerances are stated inline next to each assertion.

use nalgebra::{Complex, DVector};
use nilgeo_core::algebra::load_bundled;
use nilgeo_core::controls::{
    endpoint_product, endpoint_step2, energy, fourier_endpoint_complex, fourier_endpoint_real,
    fourier_to_sampled, FourierControl, SampledControl,
};
use nilgeo_core::experiments::{
    ballbox_check, engel_gap, finsler_linf_volume, gap_scan, heisenberg_ball_volume,
    heisenberg_volume, mc_ball_volume, rough_isometry_scan, BallboxConfig, EngelGapConfig,
    FinslerConfig, GapScanConfig, McVolumeConfig, RoughIsometryConfig, VolumeConfig,
};
use nilgeo_core::geodesics::heisenberg_sr_distance;
use nilgeo_core::metrics::distance_upper;
use nilgeo_core::perturbation::{build_perturbation, verify_perturbation};
use nilgeo_core::rng::rng_for;
use nilgeo_core::SolverBudget;
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Random smooth control: constant plus `modes` trig modes with 1/m decay.
fn random_smooth_control(
    k: usize,
    grid: usize,
    modes: usize,
    scale: f64,
    seed: u64,
    stream: u64,
) -> SampledControl {
    let mut rng = rng_for(seed, stream);
    let mut coef = vec![vec![0.0f64; k]; 1 + 2 * modes];
    for block in coef.iter_mut() {
        for c in block.iter_mut() {
            *c = rng.gen_range(-1.0..1.0) * scale;
        }
    }
    SampledControl::from_fn(grid, k, |t| {
        let mut v = DVector::from_row_slice(&coef[0]);
        for m in 1..=modes {
            let w = 2.0 * PI * m as f64 * t;
            for j in 0..k {
                v[j] +=
                    coef[2 * m - 1][j] * w.cos() / m as f64 + coef[2 * m][j] * w.sin() / m as f64;
            }
        }
        v
    })
    .unwrap()
}

#[test]
fn criterion_01_perturbation_certificates() {
    // 200 random (u, zeta) per spec: endpoint shift residual <= 1e-6,
    // orthogonality residual <= 1e-8, energy(v) <= 4 pi K N |zeta|.
    for name in ["heisenberg", "hxr_riemannian", "free23"] {
        let s = load_bundled(name).unwrap();
        let k = s.k();
        let dd = s.algebra.derived_indices.len();
        let violations: usize = (0..200u64)
            .into_par_iter()
            .map(|i| {
                let u = random_smooth_control(k, 257, 3, 1.5, 42, i);
                let mut rng = rng_for(42, 10_000 + i);
                let zeta = DVector::from_fn(dd, |_, _| rng.gen_range(-1.0..1.0));
                let res = build_perturbation(&s, &u, &zeta).unwrap();
                let check = verify_perturbation(&s, &u, &res, &zeta).unwrap();
                usize::from(!check.pass())
            })
            .sum();
        assert_eq!(violations, 0, "perturbation violations on {name}");
    }
}

#[test]
fn criterion_02_endpoint_oracle_equivalence() {
    // Closed-form step-2 endpoint vs product integrator, 100 controls per
    // spec on the 4097-point grid, within 1e-7.
    for name in ["heisenberg", "hxr_riemannian", "free23"] {
        let s = load_bundled(name).unwrap();
        let k = s.k();
        let worst = (0..100u64)
            .into_par_iter()
            .map(|i| {
                let u = random_smooth_control(k, 4097, 4, 1.0, 7, i);
                let a = endpoint_step2(&s, &u).unwrap();
                let b = endpoint_product(&s, &u);
                (a - b).norm()
            })
            .reduce(|| 0.0, f64::max);
        assert!(worst <= 1e-7, "endpoint mismatch {worst:.3e} on {name}");
    }
}

#[test]
fn criterion_03_fourier_closed_forms() {
    // Closed-form Fourier endpoint and energy vs grid quadrature, support
    // up to 32 modes, within 1e-8.
    let s = load_bundled("heisenberg").unwrap();
    let k = s.k();
    for trial in 0..20u64 {
        let mut rng = rng_for(11, trial);
        let support = rng.gen_range(1..=32usize);
        let mut pos = BTreeMap::new();
        for _ in 0..support {
            let n = rng.gen_range(1..=32i64);
            let c = DVector::from_fn(k, |_, _| {
                Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            pos.insert(n, c);
        }
        let v = FourierControl::new(pos.clone()).unwrap();
        let (endpoint, e_closed) = fourier_endpoint_real(&s, &v).unwrap();
        let sampled = fourier_to_sampled(&v, k, 4097).unwrap();
        let quad = endpoint_step2(&s, &sampled).unwrap();
        let e_quad = energy(&s, &sampled);
        assert!(
            (endpoint - quad).norm() <= 1e-8,
            "real-form endpoint mismatch at trial {trial}"
        );
        assert!(
            (e_closed - e_quad).abs() <= 1e-8 * e_closed.max(1.0),
            "real-form energy mismatch at trial {trial}"
        );

        // Complex form of the same real control: c_{-n} = conj(c_n) / 2.
        let mut coeffs = BTreeMap::new();
        for (&n, c) in &pos {
            coeffs.insert(n, c.map(|x| x / Complex::new(2.0, 0.0)));
            coeffs.insert(-n, c.map(|x| x.conj() / Complex::new(2.0, 0.0)));
        }
        let vc = FourierControl::new(coeffs).unwrap();
        let (endpoint_c, e_c) = fourier_endpoint_complex(&s, &vc).unwrap();
        let imag = endpoint_c.iter().map(|x| x.im.abs()).fold(0.0, f64::max);
        let diff = (endpoint_c.map(|x| x.re) - &quad).norm();
        assert!(imag <= 1e-10 && diff <= 1e-8, "complex-form endpoint");
        assert!((e_c - e_quad).abs() <= 1e-8 * e_quad.max(1.0), "complex-form energy");
    }
}

#[test]
fn criterion_04_exact_heisenberg_values() {
    let s = load_bundled("heisenberg").unwrap();
    let budget = SolverBudget::default();
    // Straight horizontal segment: distance exactly 1.
    let d1 = distance_upper(&s, &DVector::from_vec(vec![1.0, 0.0, 0.0]), &budget, 1)
        .unwrap()
        .upper;
    assert!((d1 - 1.0).abs() <= 1e-4, "d(1,0,0) = {d1}");
    // Vertical point: distance exactly 2 sqrt(pi).
    let dz = distance_upper(&s, &DVector::from_vec(vec![0.0, 0.0, 1.0]), &budget, 1)
        .unwrap()
        .upper;
    let oracle = 2.0 * PI.sqrt();
    assert!((dz - oracle).abs() <= 1e-3, "d(0,0,1) = {dz} vs {oracle}");

    // 100 random targets against the closed-form solver, 1e-3 relative.
    let mut quick = SolverBudget::quick();
    quick.refine_modes = 64;
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(23, i);
            let t = DVector::from_vec(vec![
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-10.0..10.0),
            ]);
            let exact = heisenberg_sr_distance(&t);
            let est = distance_upper(&s, &t, &quick, 1000 + i).unwrap().upper;
            (est - exact).abs() / exact
        })
        .reduce(|| 0.0, f64::max);
    assert!(worst <= 1e-3, "worst relative error {worst:.3e}");
}

#[test]
fn criterion_05_riemannian_heisenberg_volume() {
    let s = load_bundled("heisenberg_riemannian").unwrap();
    let rep = heisenberg_volume("heisenberg_riemannian", &s, &VolumeConfig::default(), 1).unwrap();
    let fit = rep.summary["fit_residual_rel"].as_f64().unwrap();
    assert!(fit <= 1e-9, "quartic fit residual {fit:.3e}");
    let c0 = rep.summary["c0"].as_f64().unwrap();
    assert!((c0 + 2.0 * PI * PI).abs() <= 1e-6, "c0 = {c0}");
    let small = rep.summary["small_r_v_over_r3_max"].as_f64().unwrap();
    assert!(small.is_finite() && small < 10.0, "V/r^3 bound {small}");

    // Monte Carlo cross-validation at r = 8 within 3 combined sigma.
    let cfg = McVolumeConfig {
        r: 8.0,
        samples: 40_000,
        strata: 8,
    };
    let mc = mc_ball_volume(
        "heisenberg_riemannian",
        &s,
        &cfg,
        &SolverBudget::quick(),
        2,
    )
    .unwrap();
    let v_mc = mc.summary["volume"].as_f64().unwrap();
    let sigma = mc.summary["sigma_stat"].as_f64().unwrap()
        + mc.summary["ambiguity"].as_f64().unwrap();
    let v_exact = heisenberg_ball_volume(8.0);
    assert!(
        (v_mc - v_exact).abs() <= 3.0 * sigma,
        "MC {v_mc} vs exact {v_exact}, sigma {sigma}"
    );
}

#[test]
fn criterion_06_finsler_linf_law() {
    let s = load_bundled("heisenberg").unwrap();
    let rep = finsler_linf_volume("heisenberg", &s, &FinslerConfig::default(), 1).unwrap();
    let d = rep.summary["cubic_coefficient"].as_f64().unwrap();
    assert!(
        (d - 2.0 * PI).abs() / (2.0 * PI) <= 1e-3,
        "cubic coefficient {d} vs 2 pi"
    );
    assert!(rep.passed(), "{}", rep.summary);
}

#[test]
fn criterion_07_bounded_gap_signature() {
    let budget = SolverBudget::quick();
    let cfg = GapScanConfig {
        scales: (1..=20).map(|i| 2.0 * i as f64).collect(),
        random_per_scale: 2,
        mismatch: 1.0,
    };
    // Bounded signature on both Riemannian specs.
    for name in ["heisenberg_riemannian", "hxr_riemannian"] {
        let s = load_bundled(name).unwrap();
        let rep = gap_scan(name, &s, &cfg, &budget, 7).unwrap();
        assert!(
            rep.summary["bounded_signature"].as_bool().unwrap(),
            "{name}: {}",
            rep.summary
        );
    }
    // Mismatched-norm control must diverge superlinearly.
    let s = load_bundled("heisenberg_riemannian").unwrap();
    let mis = GapScanConfig {
        mismatch: 1.3,
        ..cfg.clone()
    };
    let rep = gap_scan("heisenberg_riemannian", &s, &mis, &budget, 7).unwrap();
    assert!(
        rep.summary["loglog_slope"].as_f64().unwrap() > 1.2,
        "mismatch control: {}",
        rep.summary
    );
    // Carnot spec: certified gap intervals contain zero at all scales.
    let s = load_bundled("heisenberg").unwrap();
    let rep = gap_scan("heisenberg", &s, &cfg, &budget, 7).unwrap();
    assert!(
        rep.summary["contains_zero_all"].as_bool().unwrap(),
        "carnot: {}",
        rep.summary
    );
}

#[test]
fn criterion_08_improved_ball_box() {
    let s = load_bundled("heisenberg").unwrap();
    let cfg = BallboxConfig {
        samples: 200,
        ..BallboxConfig::default()
    };
    let rep = ballbox_check("heisenberg", &s, &cfg, &SolverBudget::quick(), 3).unwrap();
    assert_eq!(
        rep.summary["violations"].as_u64().unwrap(),
        0,
        "{}",
        rep.summary
    );
    assert!(rep.summary["worst_slack"].as_f64().unwrap() >= 0.0);
}

#[test]
fn criterion_09_engel_growth_signature() {
    let s = load_bundled("engel_riemannian").unwrap();
    let cfg = EngelGapConfig::default();
    let rep = engel_gap(
        "engel_riemannian",
        &s,
        &cfg,
        &SolverBudget::default(),
        9,
    )
    .unwrap();
    assert!(
        rep.summary["straight_line_bound_ok"].as_bool().unwrap(),
        "{}",
        rep.summary
    );
    assert!(
        rep.summary["strictly_increasing"].as_bool().unwrap(),
        "gap not increasing: {}",
        rep.summary
    );
    assert!(
        rep.summary["positive_at_last"].as_bool().unwrap(),
        "gap not positive at n = 256: {}",
        rep.summary
    );
}

#[test]
fn criterion_10_rough_isometry_scans() {
    let budget = SolverBudget::quick();
    // Shear on H x R: bounded difference.
    let s = load_bundled("hxr_riemannian").unwrap();
    let cfg = RoughIsometryConfig {
        map: "shear".into(),
        scales: (1..=12).map(|i| 2.0 * i as f64).collect(),
        random_per_scale: 1,
        stretch: 2.0,
    };
    let rep = rough_isometry_scan("hxr_riemannian", &s, &cfg, &budget, 5).unwrap();
    assert!(
        rep.summary["bounded_signature"].as_bool().unwrap(),
        "shear: {}",
        rep.summary
    );
    // Abelianization stretch: linear growth at the submetry slope.
    let s = load_bundled("heisenberg").unwrap();
    let cfg = RoughIsometryConfig {
        map: "stretch".into(),
        scales: (1..=10).map(|i| 4.0 * i as f64).collect(),
        random_per_scale: 0,
        stretch: 2.0,
    };
    let rep = rough_isometry_scan("heisenberg", &s, &cfg, &budget, 5).unwrap();
    let slope = rep.summary["radial_slope"].as_f64().unwrap();
    let predicted = rep.summary["submetry_prediction"].as_f64().unwrap();
    assert!(
        (slope - predicted).abs() / predicted <= 0.10,
        "slope {slope} vs predicted {predicted}"
    );
}
