mod common;

use common::{config, random_real, DESK, LONG_RANGE};
use hullkam::fourier::{gevrey_norm, shift, weighted_norm, FourierSeries};
use hullkam::model::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk() -> Model {
    config(DESK).build_model().unwrap()
}

fn hulls(model: &Model, count: usize, seed: u64) -> Vec<FourierSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut h = random_real(&mut rng, model.dim(), model.cutoff, 4, 0.02, 0.6);
            h.set_average(0.0.into());
            h
        })
        .collect()
}

#[test]
fn weighted_residual_has_zero_average() {
    for model in [desk(), config(LONG_RANGE).build_model().unwrap()] {
        for h in hulls(&model, 20, 1) {
            let ctx = model.at(&h).unwrap();
            let (e, _) = ctx.residual().unwrap();
            let (le, _) = model.grid.multiply(&ctx.l, &e).unwrap();
            let en = gevrey_norm(&e, &model.gevrey);
            assert!(le.average().norm() <= 1e-9 * en, "{:e} vs {en:e}", le.average().norm());
        }
    }
}

#[test]
fn residual_derivative_is_linearization_along_l() {
    let model = desk();
    for h in hulls(&model, 20, 2) {
        let ctx = model.at(&h).unwrap();
        let lhs = model.residual_theta_derivative(&h).unwrap();
        let (rhs, _) = ctx.linearized_apply(&ctx.l).unwrap();
        let err = gevrey_norm(&(&lhs - &rhs), &model.gevrey);
        assert!(err <= 1e-8 * gevrey_norm(&lhs, &model.gevrey), "{err:e}");
    }
}

#[test]
fn linearization_remainder_is_quadratic() {
    let model = config(LONG_RANGE).build_model().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = hulls(&model, 1, 4).remove(0);
    let delta = random_real(&mut rng, 2, model.cutoff, 4, 1.0, 0.6);
    let e0 = model.residual(&h).unwrap();
    let de = model.linearized_apply(&h, &delta).unwrap();
    let remainder = |t: f64| {
        let et = model.residual(&(&h + &delta.scale(t))).unwrap();
        let r = &(&et - &e0) - &de.scale(t);
        weighted_norm(&r, model.gevrey.beta, 0.0)
    };
    let slope = (remainder(1e-2) / remainder(1e-3)).log10();
    assert!(slope >= 1.9, "slope {slope}");
}

#[test]
fn residual_is_translation_covariant() {
    let model = desk();
    for h in hulls(&model, 5, 5) {
        let e = model.residual(&h).unwrap();
        for phi in [0.1, 0.3, 0.7] {
            let t: Vec<f64> = model.freq.alpha.iter().map(|a| a * phi).collect();
            let mut moved = shift(&h, &t).unwrap();
            moved.add_constant(phi);
            let lhs = model.residual(&moved).unwrap();
            let rhs = shift(&e, &t).unwrap();
            assert!((&lhs - &rhs).max_abs() <= 1e-13, "{:e}", (&lhs - &rhs).max_abs());
        }
    }
}

#[test]
fn zero_hull_residual_of_desk_model() {
    let model = desk();
    let e = model.residual(&FourierSeries::zeros(2, model.cutoff)).unwrap();
    let eps = 0.01;
    for (k, c) in e.nonzero_modes() {
        if c.norm() > 1e-15 {
            assert_eq!(k[1], 0, "{k:?}");
            assert_eq!(k[0].abs(), 1, "{k:?}");
        }
    }
    // ∂₁ of ε cos(σ₁) is −ε sin(σ₁): coefficient ±iε/2 on k=(±1,0).
    assert!((e.coeff(&[1, 0]).im - 0.5 * eps).abs() < 1e-15);
}
