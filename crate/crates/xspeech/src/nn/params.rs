//! Named parameter storage shared by the trainable models.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mat, Var};

/// Flat store of named parameter matrices. Models keep indices into it.
#[derive(Default, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Mat)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Mat) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.entries.len();
        self.entries.push((name.to_string(), value));
        self.index.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Mat {
        &self.entries[idx].1
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Mat {
        &mut self.entries[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, &Mat)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, m))| (i, n.as_str(), m))
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }
}

/// Bind every parameter into a graph as a leaf; `vars[i]` matches store slot i.
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn new(graph: &mut Graph, store: &ParamStore) -> Self {
        let vars = store
            .iter()
            .map(|(i, _, m)| graph.param(i, m.clone()))
            .collect();
        Self { vars }
    }

    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

/// Gaussian init, Box-Muller from a seeded ChaCha stream.
pub fn normal_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    use rand::Rng;
    Mat::from_shape_fn((rows, cols), |_| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

pub fn zeros_mat(rows: usize, cols: usize) -> Mat {
    Mat::zeros((rows, cols))
}

pub fn ones_mat(rows: usize, cols: usize) -> Mat {
    Mat::from_elem((rows, cols), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn store_roundtrip_and_counts() {
        let mut s = ParamStore::new();
        let a = s.add("w", zeros_mat(2, 3));
        let b = s.add("b", ones_mat(1, 3));
        assert_eq!(s.lookup("w"), Some(a));
        assert_eq!(s.lookup("b"), Some(b));
        assert_eq!(s.num_scalars(), 9);
        assert!(s.all_finite());
    }

    #[test]
    fn normal_init_is_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = normal_mat(&mut r1, 4, 4, 0.02);
        let b = normal_mat(&mut r2, 4, 4, 0.02);
        assert_eq!(a, b);
    }
}
