//! Filtering checked against independent reference computations.

use dlsplan_core::filtering::{
    kf_predict, kf_update_info, logdet, mutual_information, BeliefCov, InfoMatrix, Mat, TargetModel,
};
use dlsplan_core::objective::SolutionSet;
use dlsplan_core::verify::{gain_form_update, random_instance};
use dlsplan_core::world::{double_integrator_model, sensor_info_matrix, stack_models};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.2
}

fn cofactor_det(m: &Mat) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return m[(0, 0)];
    }
    (0..n)
        .map(|j| {
            let minor = m.clone().remove_row(0).remove_column(j);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[(0, j)] * cofactor_det(&minor)
        })
        .sum()
}

#[test]
fn logdet_matches_cofactor_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let d = rng.gen_range(1..=5);
        let s = random_spd(&mut rng, d);
        let expected = cofactor_det(&s).ln();
        assert!((logdet(&s).unwrap() - expected).abs() < 1e-10);
    }
}

#[test]
fn logdet_rejects_indefinite() {
    let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(logdet(&m).is_err());
}

#[test]
fn information_form_matches_gain_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let d = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let p = random_spd(&mut rng, d);
        let h = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-2.0..2.0));
        let v = random_spd(&mut rng, m);
        let info = InfoMatrix(h.transpose() * v.clone().try_inverse().unwrap() * &h);
        let a = kf_update_info(&p, &[info]).unwrap();
        let b = gain_form_update(&p, &h, &v);
        assert!((&a - &b).abs().max() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn scalar_example_half_log_three() {
    let model = TargetModel::constant(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
    let mi = mutual_information(&model, &BeliefCov::new(DMatrix::identity(1, 1)), 1, |_| {
        vec![InfoMatrix(DMatrix::identity(1, 1))]
    })
    .unwrap();
    assert!((mi - 0.549_306_144_334_054_8).abs() < 1e-12);
}

#[test]
fn process_noise_matches_quadrature() {
    // W = ∫₀^τ e^{A s} G Q Gᵀ e^{Aᵀ s} ds for the continuous double integrator.
    let (tau, q) = (0.5, 1.3);
    let mut ac = Mat::zeros(4, 4);
    ac[(0, 2)] = 1.0;
    ac[(1, 3)] = 1.0;
    let mut g = Mat::zeros(4, 2);
    g[(2, 0)] = 1.0;
    g[(3, 1)] = 1.0;
    let gqg = &g * g.transpose() * q;
    let steps = 2000;
    let h = tau / steps as f64;
    let f = |s: f64| {
        let e = (&ac * s).exp();
        &e * &gqg * e.transpose()
    };
    let mut w = Mat::zeros(4, 4);
    for k in 0..=steps {
        let c = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        w += f(k as f64 * h) * c;
    }
    w *= h / 3.0;
    let model = double_integrator_model(tau, q).unwrap();
    let (a, wm) = model.at(0);
    assert!((wm - &w).abs().max() < 1e-12, "{wm} vs {w}");
    assert!((a - (&ac * tau).exp()).abs().max() < 1e-12);
}

#[test]
fn prediction_example() {
    let model = double_integrator_model(0.5, 0.0).unwrap();
    let x = nalgebra::DVector::from_vec(vec![0.0, 0.0, 2.0, 0.0]);
    let y = model.at(0).0 * x;
    assert_eq!(y.as_slice(), &[1.0, 0.0, 2.0, 0.0]);
    let p = kf_predict(&Mat::identity(4, 4), &model, 0).unwrap();
    assert!((p[(0, 0)] - 1.25).abs() < 1e-15);
}

/// Joint filter over all targets stacked into one state; must equal the
/// per-target sum the objective computes.
fn dense_joint_mi(obj: &dlsplan_core::Objective, s: &SolutionSet) -> f64 {
    let p = obj.problem();
    let models: Vec<TargetModel> = p.targets.iter().map(|t| t.model.clone()).collect();
    let joint = stack_models(&models).unwrap();
    let dim = joint.dim();
    let mut prior = Mat::zeros(dim, dim);
    let mut offsets = Vec::new();
    let mut off = 0;
    for t in &p.targets {
        let d = t.dim();
        prior.view_mut((off, off), (d, d)).copy_from(&t.prior.sigma);
        offsets.push(off);
        off += d;
    }
    let means: Vec<_> = p.targets.iter().map(|t| t.mean_positions(p.horizon)).collect();
    mutual_information(&joint, &BeliefCov::new(prior), p.horizon, |t| {
        let mut total = Mat::zeros(dim, dim);
        for (r, id) in s.assigned() {
            let x = obj.trajectory(id).states[t - 1];
            for (j, tg) in p.targets.iter().enumerate() {
                let m = sensor_info_matrix(&x, &means[j][t], &p.robots[r].sensor, tg.dim());
                let d = tg.dim();
                let mut view = total.view_mut((offsets[j], offsets[j]), (d, d));
                view += &m.0;
            }
        }
        vec![InfoMatrix(total)]
    })
    .unwrap()
}

#[test]
fn block_mutual_information_equals_dense_joint() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for _ in 0..60 {
        let obj = random_instance(&mut rng, 3, 3).unwrap();
        for s in dlsplan_core::verify::all_sets(&obj) {
            let a = obj.mutual_information(&s).unwrap();
            let b = dense_joint_mi(&obj, &s);
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            compared += 1;
        }
    }
    assert!(compared > 100);
}
