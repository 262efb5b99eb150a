//! Bags of instances, their aggregation weights, and the label oracle that
//! reveals only weighted sums.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// A set of pool instances whose outputs are only observable as
/// `sum_n weights[n] * y[instances[n]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: usize,
    pub instances: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Bag {
    pub fn new(id: usize, instances: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let bag = Self {
            id,
            instances,
            weights,
        };
        bag.validate()?;
        Ok(bag)
    }

    /// Sum aggregation: every weight is one.
    pub fn summed(id: usize, instances: Vec<usize>) -> Result<Self> {
        let weights = vec![1.0; instances.len()];
        Self::new(id, instances, weights)
    }

    /// Checks the invariants; bags read from JSON should go through this.
    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::invalid(format!("bag {} is empty", self.id)));
        }
        if self.weights.len() != self.instances.len() {
            return Err(Error::invalid(format!(
                "bag {}: {} weights for {} instances",
                self.id,
                self.weights.len(),
                self.instances.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("bag {}: non-finite weight", self.id)));
        }
        if self.weight_norm_sq() <= 0.0 {
            return Err(Error::invalid(format!("bag {}: all weights are zero", self.id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBag {
    pub bag: Bag,
    pub aggregated_output: f64,
}

/// Holds the hidden per-instance labels and answers aggregate queries.
///
/// There is deliberately no method returning an individual label.
#[derive(Debug, Clone)]
pub struct Oracle {
    hidden_labels: Vec<f64>,
    query_log: Vec<usize>,
}

impl Oracle {
    pub fn new(hidden_labels: Vec<f64>) -> Self {
        Self {
            hidden_labels,
            query_log: Vec::new(),
        }
    }

    pub fn pool_len(&self) -> usize {
        self.hidden_labels.len()
    }

    /// Returns the weighted sum of the bag's hidden labels and logs the query.
    pub fn query(&mut self, bag: &Bag) -> Result<f64> {
        let value = aggregate(&self.hidden_labels, bag)?;
        self.query_log.push(bag.id);
        Ok(value)
    }

    pub fn query_log(&self) -> &[usize] {
        &self.query_log
    }

    pub fn query_count(&self) -> usize {
        self.query_log.len()
    }
}

fn aggregate(labels: &[f64], bag: &Bag) -> Result<f64> {
    if bag.weights.len() != bag.instances.len() {
        return Err(Error::Dimension {
            expected: bag.instances.len(),
            got: bag.weights.len(),
        });
    }
    bag.instances
        .iter()
        .zip(&bag.weights)
        .map(|(&i, &w)| {
            labels.get(i).map(|y| w * y).ok_or_else(|| {
                Error::invalid(format!("bag {}: instance {i} out of range", bag.id))
            })
        })
        .sum()
}

/// Partitions `train_indices` into sum-aggregated bags.
///
/// The indices are shuffled, then bag sizes are drawn uniformly from
/// `[min_size, max_size]`; once a draw reaches the remaining count the last
/// bag takes everything left (so it may be smaller than `min_size`).
pub fn generate_bags(
    train_indices: &[usize],
    min_size: usize,
    max_size: usize,
    seed: u64,
) -> Result<Vec<Bag>> {
    if train_indices.is_empty() {
        return Err(Error::invalid("cannot generate bags from an empty training set"));
    }
    if min_size < 1 || min_size > max_size || max_size > train_indices.len() {
        return Err(Error::invalid(format!(
            "invalid bag size bounds [{min_size}, {max_size}] for {} instances",
            train_indices.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut order = train_indices.to_vec();
    order.shuffle(&mut rng);

    let mut bags = Vec::new();
    let mut rest = order.as_slice();
    while !rest.is_empty() {
        let size = rng.random_range(min_size..=max_size);
        let take = size.min(rest.len());
        let (head, tail) = rest.split_at(take);
        bags.push(Bag::summed(bags.len(), head.to_vec())?);
        rest = tail;
    }
    Ok(bags)
}

/// Converts an observed average over `n` instances into the equivalent sum.
pub fn average_to_sum(avg_value: f64, n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("average over zero instances"));
    }
    Ok(avg_value * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    impl Oracle {
        // test-only view of the ground truth
        fn peek(&self, i: usize) -> f64 {
            self.hidden_labels[i]
        }
    }

    #[test]
    fn partition_with_remainder() {
        let bags = generate_bags(&[10, 11, 12, 13, 14], 2, 2, 3).unwrap();
        let sizes: Vec<usize> = bags.iter().map(Bag::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let mut all: Vec<usize> = bags.iter().flat_map(|b| b.instances.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, vec![10, 11, 12, 13, 14]);
        assert!(bags.iter().all(|b| b.weights.iter().all(|&w| w == 1.0)));
        assert_eq!(bags.iter().map(|b| b.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn singleton_bags() {
        let idx: Vec<usize> = (0..17).collect();
        let bags = generate_bags(&idx, 1, 1, 9).unwrap();
        assert_eq!(bags.len(), 17);
        assert!(bags.iter().all(|b| b.len() == 1));
    }

    #[test]
    fn bag_generation_is_deterministic() {
        let idx: Vec<usize> = (0..200).collect();
        assert_eq!(
            generate_bags(&idx, 1, 20, 5).unwrap(),
            generate_bags(&idx, 1, 20, 5).unwrap()
        );
        assert_ne!(
            generate_bags(&idx, 1, 20, 5).unwrap(),
            generate_bags(&idx, 1, 20, 6).unwrap()
        );
    }

    #[test]
    fn bag_generation_errors() {
        assert!(generate_bags(&[], 1, 1, 0).is_err());
        assert!(generate_bags(&[1, 2], 0, 1, 0).is_err());
        assert!(generate_bags(&[1, 2], 2, 1, 0).is_err());
        assert!(generate_bags(&[1, 2], 1, 3, 0).is_err());
    }

    #[test]
    fn oracle_aggregates() {
        let mut oracle = Oracle::new(vec![1.0, 2.0, 3.0]);
        let sum = Bag::summed(4, vec![0, 1, 2]).unwrap();
        assert_eq!(oracle.query(&sum).unwrap(), 6.0);
        let avg = Bag::new(5, vec![0, 1, 2], vec![1.0 / 3.0; 3]).unwrap();
        assert!((oracle.query(&avg).unwrap() - 2.0).abs() < 1e-15);
        let pick = Bag::new(6, vec![0, 1, 2], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(oracle.query(&pick).unwrap(), oracle.peek(1));
        assert_eq!(oracle.query_log(), &[4, 5, 6]);

        let bad = Bag::summed(7, vec![3]).unwrap();
        assert!(oracle.query(&bad).is_err());
        assert_eq!(oracle.query_count(), 3);
    }

    #[test]
    fn bag_invariants() {
        assert!(Bag::new(0, vec![1, 2], vec![1.0]).is_err());
        assert!(Bag::new(0, vec![1, 2], vec![0.0, 0.0]).is_err());
        assert!(Bag::new(0, vec![], vec![]).is_err());
    }

    #[test]
    fn average_to_sum_examples() {
        assert_eq!(average_to_sum(2.0, 3).unwrap(), 6.0);
        assert_eq!(average_to_sum(1.25, 1).unwrap(), 1.25);
        assert_eq!(average_to_sum(0.0, 9).unwrap(), 0.0);
        assert!(average_to_sum(1.0, 0).is_err());
    }

    #[test]
    fn bag_json_shape() {
        let bag = Bag::summed(3, vec![7, 9]).unwrap();
        let json = serde_json::to_string(&bag).unwrap();
        assert_eq!(json, r#"{"id":3,"instances":[7,9],"weights":[1.0,1.0]}"#);
    }

    proptest! {
        #[test]
        fn bags_partition_training_set(
            n in 1usize..300, lo in 1usize..6, span in 0usize..15, seed in any::<u64>()
        ) {
            let hi = (lo + span).min(n);
            let lo = lo.min(hi);
            let idx: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
            let bags = generate_bags(&idx, lo, hi, seed).unwrap();
            let mut all: Vec<usize> = bags.iter().flat_map(|b| b.instances.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, idx);
            for b in &bags[..bags.len() - 1] {
                prop_assert!(b.len() >= lo && b.len() <= hi);
            }
        }

        #[test]
        fn oracle_is_linear_in_weights(
            labels in prop::collection::vec(-10.0f64..10.0, 1..20),
            w1 in prop::collection::vec(-3.0f64..3.0, 20),
            w2 in prop::collection::vec(-3.0f64..3.0, 20),
        ) {
            let n = labels.len();
            let ids: Vec<usize> = (0..n).collect();
            let mut oracle = Oracle::new(labels);
            let sum_w: Vec<f64> = (0..n).map(|i| w1[i] + w2[i]).collect();
            let q = |o: &mut Oracle, w: Vec<f64>| {
                let bag = Bag { id: 0, instances: ids.clone(), weights: w };
                o.query(&bag).unwrap()
            };
            let a = q(&mut oracle, w1[..n].to_vec());
            let b = q(&mut oracle, w2[..n].to_vec());
            let c = q(&mut oracle, sum_w);
            prop_assert!((a + b - c).abs() < 1e-12 * (1.0 + c.abs().max(a.abs())));
        }
    }
}
