use crate::error::{Error, Result};
use crate::model::ClassCatalog;

/// Probability vector aligned with a [`ClassCatalog`]'s order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn uniform(n_classes: usize) -> Self {
        assert!(n_classes > 0, "uniform distribution over zero classes");
        Self {
            probs: vec![1.0 / n_classes as f64; n_classes],
        }
    }

    /// Wraps probabilities that are already normalized. Use [`normalize`]
    /// for raw weights.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("not a distribution: {probs:?}")));
        }
        Ok(Self { probs })
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Dense index and probability of the most probable class; ties go to
    /// the lowest index.
    pub fn argmax_index(&self) -> (usize, f64) {
        let mut best = (0, self.probs[0]);
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }
}

/// Scales nonnegative weights to sum to one.
pub fn normalize(weights: &[f64]) -> Result<LabelDistribution> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::NonPositiveInput("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroWeights);
    }
    Ok(LabelDistribution {
        probs: weights.iter().map(|w| w / total).collect(),
    })
}

/// Most probable class id and its probability. Ties go to the lowest class id.
pub fn argmax_with_confidence(dist: &LabelDistribution, catalog: &ClassCatalog) -> (u32, f64) {
    debug_assert_eq!(dist.len(), catalog.len());
    let mut best: Option<(u32, f64)> = None;
    for (i, &p) in dist.probs().iter().enumerate() {
        let id = catalog.id_at(i);
        best = match best {
            Some((bid, bp)) if bp > p || (bp == p && bid < id) => Some((bid, bp)),
            _ => Some((id, p)),
        };
    }
    best.expect("non-empty distribution")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
        let d = normalize(&[0.81, 0.01]).unwrap();
        assert!((d.probs()[0] - 0.987804878).abs() < 1e-9);
        assert!((d.probs()[1] - 0.012195122).abs() < 1e-9);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::AllZeroWeights)));
    }

    #[test]
    fn argmax_examples() {
        let cat3 = ClassCatalog::from_names(&["a", "b", "c"]).unwrap();
        let d = LabelDistribution::from_probs(vec![0.2, 0.7, 0.1]).unwrap();
        assert_eq!(argmax_with_confidence(&d, &cat3), (2, 0.7));

        let cat2 = ClassCatalog::from_names(&["a", "b"]).unwrap();
        let d = LabelDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_with_confidence(&d, &cat2), (1, 0.5));

        let cat6 = ClassCatalog::from_names(&["a", "b", "c", "d", "e", "f"]).unwrap();
        let (id, p) = argmax_with_confidence(&LabelDistribution::uniform(6), &cat6);
        assert_eq!(id, 1);
        assert!((p - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_tie_uses_class_id_not_position() {
        let cat = ClassCatalog::new(vec![
            crate::model::ClassEntry {
                id: 9,
                name: "x".into(),
            },
            crate::model::ClassEntry {
                id: 3,
                name: "y".into(),
            },
        ])
        .unwrap();
        let d = LabelDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_with_confidence(&d, &cat).0, 3);
    }

    fn weights() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 2..9).prop_filter("some weight positive", |w| w.iter().any(|&x| x > 1e-6))
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(w in weights()) {
            let once = normalize(&w).unwrap();
            let twice = normalize(once.probs()).unwrap();
            for (a, b) in once.probs().iter().zip(twice.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalize_is_scale_invariant(w in weights(), k in 1e-3f64..1e3) {
            let a = normalize(&w).unwrap();
            let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
            let b = normalize(&scaled).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn argmax_survives_normalization(w in weights()) {
            let cat = ClassCatalog::from_names(
                &(0..w.len()).map(|i| format!("c{i}")).collect::<Vec<_>>(),
            ).unwrap();
            let mut raw_best = 0;
            for i in 1..w.len() {
                if w[i] > w[raw_best] {
                    raw_best = i;
                }
            }
            let (id, _) = argmax_with_confidence(&normalize(&w).unwrap(), &cat);
            // normalization may merge near-ties; require the chosen class to be maximal
            let idx = cat.index_of(id).unwrap();
            prop_assert!(w[idx] >= w[raw_best] * (1.0 - 1e-12));
        }
    }
}
