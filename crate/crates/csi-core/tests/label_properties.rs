//! Property tests for label padding and phase-ratio output range.

use csi_core::{pad_label_set, phase_ratio_preprocess, CsiTensor, PaddedLabelVector};
use ndarray::Array4;
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

proptest! {
    /// Padding then stripping the fills recovers the input multiset.
    #[test]
    fn pad_then_strip_recovers_multiset(
        acts in proptest::collection::vec(0usize..9, 0..6),
        extra in 0usize..4,
    ) {
        let m = acts.len() + extra;
        let padded = pad_label_set(&acts, m).unwrap();
        let mut want = acts.clone();
        want.sort_unstable();
        prop_assert_eq!(padded.activities(), want);
        prop_assert_eq!(padded.occupancy(), acts.len());
        prop_assert_eq!(padded.m(), m);
    }

    /// Multiset equality is invariant under slot permutation.
    #[test]
    fn multiset_equality_ignores_slot_order(
        acts in proptest::collection::vec(0usize..5, 0..5),
        swap in (0usize..5, 0usize..5),
    ) {
        let m = 5;
        let padded = pad_label_set(&acts, m).unwrap();
        let mut slots = padded.slots().to_vec();
        let (i, j) = swap;
        slots.swap(i.min(m - 1), j.min(m - 1));
        let permuted = PaddedLabelVector::from_slots(slots);
        prop_assert!(padded.multiset_eq(&permuted));
    }

    /// Every phase-ratio cell lies in (-pi, pi].
    #[test]
    fn phase_ratio_range(
        vals in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 24),
    ) {
        let mut it = vals.into_iter();
        let raw = Array4::from_shape_fn((3, 2, 1, 4), |_| {
            let (re, im) = it.next().unwrap();
            Complex64::new(re, im)
        });
        let t = CsiTensor::new(raw, 10.0, 2.4e9).unwrap();
        let (feats, _) = phase_ratio_preprocess(&t, 1, 3).unwrap();
        for &x in feats.iter() {
            prop_assert!(x > -PI && x <= PI, "angle {} out of range", x);
        }
    }
}
