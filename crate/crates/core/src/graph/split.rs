//! Semi-supervised node split: a fixed number of training nodes per class,
//! then validation and test nodes drawn uniformly from the remaining
//! labeled nodes.

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const TRAIN_PER_CLASS: usize = 20;
pub const VAL_SIZE: usize = 500;
pub const TEST_SIZE: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub seed: u64,
    /// Set when the graph was too small for 500/1000 and the validation and
    /// test sizes were scaled down proportionally.
    pub scaled: bool,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

impl Split {
    pub fn train_indices(&self) -> Vec<usize> {
        indices(&self.train_mask)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        indices(&self.val_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices(&self.test_mask)
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_indices().len(), self.val_indices().len(), self.test_indices().len())
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let lens = [self.train_mask.len(), self.val_mask.len(), self.test_mask.len()];
        if lens.iter().any(|&l| l != n_nodes) {
            return Err(Error::Split(format!("mask lengths {lens:?} for {n_nodes} nodes")));
        }
        for i in 0..n_nodes {
            let count = [self.train_mask[i], self.val_mask[i], self.test_mask[i]]
                .iter()
                .filter(|&&m| m)
                .count();
            if count > 1 {
                return Err(Error::Split(format!("node {i} is in more than one mask")));
            }
        }
        Ok(())
    }
}

/// Deterministic split under `seed`. Nodes labeled `-1` never enter a mask.
pub fn make_split(g: &Graph, seed: u64) -> Result<Split> {
    let n = g.n_nodes();
    let mut rng = Rng::derive(seed, 0x5317);
    let mut train_mask = vec![false; n];
    for class in 0..g.n_classes() {
        let mut members: Vec<usize> = (0..n).filter(|&i| g.labels()[i] == class as i64).collect();
        if members.len() < TRAIN_PER_CLASS {
            return Err(Error::Split(format!(
                "class {class} has {} labeled nodes, needs at least {TRAIN_PER_CLASS}",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for &i in &members[..TRAIN_PER_CLASS] {
            train_mask[i] = true;
        }
    }

    let mut pool: Vec<usize> = (0..n).filter(|&i| g.labels()[i] >= 0 && !train_mask[i]).collect();
    let (val_size, test_size, scaled) = if pool.len() >= VAL_SIZE + TEST_SIZE {
        (VAL_SIZE, TEST_SIZE, false)
    } else {
        let val = pool.len() * VAL_SIZE / (VAL_SIZE + TEST_SIZE);
        let test = pool.len() * TEST_SIZE / (VAL_SIZE + TEST_SIZE);
        (val, test, true)
    };
    if val_size == 0 || test_size == 0 {
        return Err(Error::Split(format!(
            "only {} labeled nodes remain after training selection; no room for validation/test",
            pool.len()
        )));
    }
    rng.shuffle(&mut pool);
    let mut val_mask = vec![false; n];
    let mut test_mask = vec![false; n];
    for &i in &pool[..val_size] {
        val_mask[i] = true;
    }
    for &i in &pool[val_size..val_size + test_size] {
        test_mask[i] = true;
    }
    Ok(Split { train_mask, val_mask, test_mask, seed, scaled })
}
