//! Randomized invariants over the numeric core, checked with proptest.

use proptest::prelude::*;

use properpo::constructors::phi_po_build;
use properpo::core_math::{quad, simplex_grid, sigmoid, ProbVector};
use properpo::loss_catalog::{self, CatalogId, Params};
use properpo::pipeline::{length_normalize, LengthNorm};
use properpo::proper_loss::{check_proper, margin_transform, canonical_link};
use properpo::constructors::EligiblePotential;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // every simplex grid point is a valid distribution, and the grid size
    // matches the stars-and-bars count
    #[test]
    fn simplex_grid_points_are_distributions(n in 2usize..5, r in 1usize..12) {
        let grid = simplex_grid(n, r).unwrap();
        let expected = properpo::core_math::composition_count(n, r);
        prop_assert_eq!(grid.len() as u128, expected);
        for p in &grid {
            prop_assert_eq!(p.dim(), n);
            let s: f64 = p.entries().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.entries().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    // adaptive quadrature is additive over interval splits
    #[test]
    fn quadrature_is_additive(a in -2.0f64..0.0, b in 0.5f64..3.0, c in 0.0f64..0.5) {
        let f = |x: f64| (x * x + 1.0).ln() * x.cos();
        let whole = quad(&f, a, b, 1e-11).unwrap();
        let split = quad(&f, a, c, 1e-11).unwrap() + quad(&f, c, b, 1e-11).unwrap();
        prop_assert!((whole - split).abs() < 1e-8, "whole {whole} vs split {split}");
    }

    // the canonical link and its inverse round-trip through probability
    #[test]
    fn link_round_trip(p in 0.02f64..0.98) {
        for pot in [EligiblePotential::neg_entropy(), EligiblePotential::square(),
                    EligiblePotential::exponential()] {
            let z = pot.h.eval(p);
            let back = pot.h_inverse.eval(z);
            prop_assert!((back - p).abs() < 1e-9, "{}: {p} -> {z} -> {back}", pot.id);
        }
    }

    // the affine margin transform preserves the properness verdict
    #[test]
    fn margin_transform_preserves_verdict(a in 0.2f64..3.0, c in -0.5f64..1.5) {
        let log = loss_catalog::get(CatalogId::Log, &Params::default()).unwrap().binary;
        let moved = margin_transform(&log, a, c).unwrap();
        let before = check_proper(&log.to_multiclass(), 12, 1e-9).unwrap();
        let after = check_proper(&moved.loss.to_multiclass(), 12, 1e-9).unwrap();
        prop_assert_eq!(before.passed(), after.passed());
        prop_assert_eq!(moved.klst_compliant, c / a >= 0.0);
    }

    // generalized means stay inside the factor range, and the plain product
    // never exceeds either mean
    #[test]
    fn length_normalization_is_a_mean(factors in prop::collection::vec(0.05f64..1.0, 1..8)) {
        let lo = factors.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = factors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let product = length_normalize(&factors, LengthNorm::None).unwrap().value;
        for mode in [LengthNorm::KlGeometric, LengthNorm::IsHarmonic] {
            let v = length_normalize(&factors, mode).unwrap().value;
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{mode:?}: {v} outside [{lo}, {hi}]");
            prop_assert!(v >= product - 1e-12);
        }
    }

    // potential-built losses keep the Savage relation H = l0 - l1
    #[test]
    fn potential_build_link_identity(p in 0.05f64..0.95) {
        let pot = EligiblePotential::neg_entropy();
        let loss = phi_po_build(&pot).unwrap();
        let h = canonical_link(&loss).unwrap();
        prop_assert!((h.eval(p) - pot.h.eval(p)).abs() < 1e-8);
    }

    // the logistic choice probability and its complement sum to one
    #[test]
    fn sigmoid_is_a_fair_choice_function(z in -30.0f64..30.0) {
        prop_assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-12);
    }

    // normalization of positive weights is scale invariant
    #[test]
    fn prob_vector_normalization_scale_invariant(
        w in prop::collection::vec(0.01f64..10.0, 2..6),
        s in 0.1f64..10.0,
    ) {
        let base = ProbVector::normalized(&w).unwrap();
        let scaled_w: Vec<f64> = w.iter().map(|x| x * s).collect();
        let scaled = ProbVector::normalized(&scaled_w).unwrap();
        for (a, b) in base.entries().iter().zip(scaled.entries()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
