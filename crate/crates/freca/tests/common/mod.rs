//! Independent oracles shared by the acceptance suite: a finite-difference
//! gradient, a permutation-enumeration Shapley value, and a counting
//! table-backed utility. None of these reuse the implementation paths
//! they check.

use std::cell::Cell;

use freca::contribution::{ContributionError, SubsetUtility};
use freca::model::{loss_and_gradient, LabeledDataset, ModelSpec};
use freca::params::ParamVector;

/// Central finite differences of the batch loss w.r.t. every parameter.
pub fn fd_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &LabeledDataset,
    step: f64,
) -> Vec<f64> {
    let base = params.as_slice().to_vec();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += step;
            minus[i] -= step;
            let (loss_plus, _) =
                loss_and_gradient(spec, &ParamVector::new(plus).unwrap(), batch).unwrap();
            let (loss_minus, _) =
                loss_and_gradient(spec, &ParamVector::new(minus).unwrap(), batch).unwrap();
            (loss_plus - loss_minus) / (2.0 * step)
        })
        .collect()
}

/// Coalition utility given by an explicit table indexed by bitmask, with
/// a call counter.
pub struct TableUtility {
    pub table: Vec<f64>,
    pub calls: Cell<u64>,
}

impl TableUtility {
    pub fn new(table: Vec<f64>) -> Self {
        assert!(table.len().is_power_of_two() && table.len() >= 2);
        Self {
            table,
            calls: Cell::new(0),
        }
    }

    pub fn n(&self) -> usize {
        self.table.len().trailing_zeros() as usize
    }
}

impl SubsetUtility for TableUtility {
    fn player_count(&self) -> usize {
        self.n()
    }
    fn utility(&self, mask: u64) -> Result<f64, ContributionError> {
        self.calls.set(self.calls.get() + 1);
        Ok(self.table[mask as usize])
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut all = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    fn heap(k: usize, current: &mut Vec<usize>, all: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            all.push(current.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, current, all);
            if k.is_multiple_of(2) {
                current.swap(i, k - 1);
            } else {
                current.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut current, &mut all);
    all
}

/// Shapley values by brute enumeration of all n! join orders: each
/// player's value is its marginal contribution averaged over
/// permutations.
pub fn permutation_shapley(table: &[f64]) -> Vec<f64> {
    let n = table.len().trailing_zeros() as usize;
    let mut totals = vec![0.0; n];
    let perms = permutations(n);
    for perm in &perms {
        let mut mask = 0u64;
        for &player in perm {
            let before = table[mask as usize];
            mask |= 1 << player;
            totals[player] += table[mask as usize] - before;
        }
    }
    totals.iter().map(|t| t / perms.len() as f64).collect()
}
