//! Raw CSI blocks, feature samples, and padded label vectors.

use crate::CsiError;
use ndarray::{Array3, Array4};
use num_complex::Complex64;

/// One raw CSI capture: complex channel frequency response over
/// (time, rx antenna, tx antenna, subcarrier).
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTensor {
    pub values: Array4<Complex64>,
    pub sample_rate_hz: f64,
    pub carrier_hz: f64,
}

impl CsiTensor {
    pub fn new(
        values: Array4<Complex64>,
        sample_rate_hz: f64,
        carrier_hz: f64,
    ) -> Result<Self, CsiError> {
        if !(sample_rate_hz > 0.0) || !(carrier_hz > 0.0) {
            return Err(CsiError::Profile(
                "sample_rate_hz and carrier_hz must be positive".into(),
            ));
        }
        if values.shape().iter().any(|&d| d == 0) {
            return Err(CsiError::Profile("all axis lengths must be >= 1".into()));
        }
        if values.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(CsiError::NonFinite("CsiTensor values".into()));
        }
        Ok(CsiTensor {
            values,
            sample_rate_hz,
            carrier_hz,
        })
    }

    /// (T, N_r, N_t, N_sc)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }

    /// Snap every component to the nearest f32, so the tensor equals what a
    /// complex64 blob can store. Datasets are built from quantized tensors;
    /// that is what makes write-then-read round trips bit-exact.
    pub fn quantize_c64(&mut self) {
        self.values
            .mapv_inplace(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64));
    }
}

/// Slot content of a padded label vector: a concrete activity or the
/// "no person" fill.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotLabel {
    Activity(usize),
    NoPerson,
}

/// Ground-truth activity multiset padded to a fixed number of slots.
/// Slot order carries no meaning; equality of label content is multiset
/// equality via [`PaddedLabelVector::multiset_eq`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedLabelVector {
    slots: Vec<SlotLabel>,
}

/// Pad an activity multiset to `m` slots: activities first, then "no person"
/// fills. Duplicate activities are permitted (two people doing the same
/// thing).
pub fn pad_label_set(activities: &[usize], m: usize) -> Result<PaddedLabelVector, CsiError> {
    if activities.len() > m {
        return Err(CsiError::Capacity {
            given: activities.len(),
            capacity: m,
        });
    }
    let mut slots: Vec<SlotLabel> = activities.iter().map(|&a| SlotLabel::Activity(a)).collect();
    slots.resize(m, SlotLabel::NoPerson);
    Ok(PaddedLabelVector { slots })
}

impl PaddedLabelVector {
    pub fn from_slots(slots: Vec<SlotLabel>) -> Self {
        PaddedLabelVector { slots }
    }

    pub fn slots(&self) -> &[SlotLabel] {
        &self.slots
    }

    pub fn m(&self) -> usize {
        self.slots.len()
    }

    /// Number of occupied slots.
    pub fn occupancy(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, SlotLabel::Activity(_)))
            .count()
    }

    /// The activity multiset, sorted (strips the padding).
    pub fn activities(&self) -> Vec<usize> {
        let mut acts: Vec<usize> = self
            .slots
            .iter()
            .filter_map(|s| match s {
                SlotLabel::Activity(a) => Some(*a),
                SlotLabel::NoPerson => None,
            })
            .collect();
        acts.sort_unstable();
        acts
    }

    /// Label equality as multisets: slot order is irrelevant.
    pub fn multiset_eq(&self, other: &PaddedLabelVector) -> bool {
        if self.m() != other.m() {
            return false;
        }
        let mut a = self.slots.clone();
        let mut b = other.slots.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    /// Class-index encoding with `k` activities: activity a -> a, no-person
    /// -> k. Fails if any activity index is out of range.
    pub fn to_class_indices(&self, k: usize) -> Result<Vec<usize>, CsiError> {
        self.slots
            .iter()
            .map(|s| match s {
                SlotLabel::Activity(a) if *a < k => Ok(*a),
                SlotLabel::Activity(a) => Err(CsiError::Profile(format!(
                    "activity index {a} out of range for K={k}"
                ))),
                SlotLabel::NoPerson => Ok(k),
            })
            .collect()
    }

    /// Inverse of [`PaddedLabelVector::to_class_indices`].
    pub fn from_class_indices(indices: &[usize], k: usize) -> Result<Self, CsiError> {
        let slots = indices
            .iter()
            .map(|&v| {
                if v < k {
                    Ok(SlotLabel::Activity(v))
                } else if v == k {
                    Ok(SlotLabel::NoPerson)
                } else {
                    Err(CsiError::Profile(format!(
                        "label value {v} exceeds no-person index {k}"
                    )))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PaddedLabelVector { slots })
    }
}

/// Where a sample comes from: which environment, at which carrier, and on
/// which side of the adaptation split.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDescriptor {
    pub environment_id: String,
    pub carrier_hz: f64,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Source,
    Target,
}

/// Counters for values the preprocessing had to repair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PreprocessQuality {
    /// Phase-ratio cells whose denominator antenna read exactly zero; the
    /// angle was substituted with 0.
    pub zero_denominator_cells: usize,
}

/// One model-ready sample: canonical `(1, F, T)` feature grid plus labels
/// and provenance.
#[derive(Clone, Debug)]
pub struct Sample {
    pub features: Array3<f64>,
    pub labels: PaddedLabelVector,
    pub domain: DomainDescriptor,
    pub quality: PreprocessQuality,
}

impl Sample {
    /// (F, T) of the canonical feature grid.
    pub fn feature_dims(&self) -> (usize, usize) {
        let d = self.features.dim();
        (d.1, d.2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_fills_with_no_person() {
        let v = pad_label_set(&[2], 3).unwrap();
        assert_eq!(
            v.slots(),
            &[
                SlotLabel::Activity(2),
                SlotLabel::NoPerson,
                SlotLabel::NoPerson
            ]
        );
        assert_eq!(v.occupancy(), 1);
    }

    #[test]
    fn pad_empty_set_is_all_no_person() {
        let v = pad_label_set(&[], 6).unwrap();
        assert_eq!(v.occupancy(), 0);
        assert!(v.slots().iter().all(|s| *s == SlotLabel::NoPerson));
    }

    #[test]
    fn pad_keeps_duplicates_and_compares_as_multiset() {
        let v = pad_label_set(&[1, 1, 4], 6).unwrap();
        let w = PaddedLabelVector::from_slots(vec![
            SlotLabel::NoPerson,
            SlotLabel::Activity(4),
            SlotLabel::Activity(1),
            SlotLabel::NoPerson,
            SlotLabel::Activity(1),
            SlotLabel::NoPerson,
        ]);
        assert!(v.multiset_eq(&w));
        assert_eq!(v.activities(), vec![1, 1, 4]);
    }

    #[test]
    fn pad_rejects_overfull_sets() {
        assert!(matches!(
            pad_label_set(&[0, 1, 2, 3], 3),
            Err(CsiError::Capacity {
                given: 4,
                capacity: 3
            })
        ));
    }

    #[test]
    fn class_indices_round_trip() {
        let v = pad_label_set(&[0, 5], 4).unwrap();
        let idx = v.to_class_indices(6).unwrap();
        assert_eq!(idx, vec![0, 5, 6, 6]);
        let back = PaddedLabelVector::from_class_indices(&idx, 6).unwrap();
        assert!(v.multiset_eq(&back));
        assert!(PaddedLabelVector::from_class_indices(&[7], 6).is_err());
    }
}
