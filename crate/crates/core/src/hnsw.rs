//! Hierarchical navigable small world graph over unit vectors.
//!
//! The index stores only the graph; vectors stay in the owning collection and
//! are passed in by id. Distance is `1 - dot`, i.e. cosine distance for unit
//! vectors. Level assignment draws from a seeded ChaCha stream, so an index
//! built from the same records in the same order is always the same graph.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct HnswParams {
    /// Graph degree on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construct: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self { m: 16, ef_construct: 100, ef_search: 100, seed: 0x5eed }
    }
}

impl HnswParams {
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if self.m < 2 {
            bad.push("m");
        }
        if self.ef_construct == 0 {
            bad.push("ef_construct");
        }
        if self.ef_search == 0 {
            bad.push("ef_search");
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_fields();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid hnsw parameters: {}", bad.join(", "))))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    dist: f64,
    id: usize,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct Hnsw {
    params: HnswParams,
    /// `links[node][layer]` lists neighbor ids.
    links: Vec<Vec<Vec<usize>>>,
    entry: Option<usize>,
    top_layer: usize,
    rng: ChaCha8Rng,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b)
}

impl Hnsw {
    pub fn new(params: HnswParams) -> Self {
        Self { params, links: Vec::new(), entry: None, top_layer: 0, rng: ChaCha8Rng::seed_from_u64(params.seed) }
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn random_level(&mut self) -> usize {
        let ml = 1.0 / libm::log(self.params.m as f64);
        let u: f64 = self.rng.random();
        let level = -libm::log(1.0 - u) * ml;
        (level as usize).min(32)
    }

    /// Beam search on one layer, returning up to `ef` nearest found, closest first.
    fn search_layer(&self, q: &[f64], entries: &[Scored], ef: usize, layer: usize, vectors: &[&[f64]]) -> Vec<Scored> {
        let mut visited = vec![false; self.links.len()];
        let mut candidates: BinaryHeap<core::cmp::Reverse<Scored>> = BinaryHeap::new();
        let mut found: BinaryHeap<Scored> = BinaryHeap::new();
        for e in entries {
            if !visited[e.id] {
                visited[e.id] = true;
                candidates.push(core::cmp::Reverse(*e));
                found.push(*e);
            }
        }
        while found.len() > ef {
            found.pop();
        }
        while let Some(core::cmp::Reverse(c)) = candidates.pop() {
            let worst = found.peek().map_or(f64::INFINITY, |s| s.dist);
            if c.dist > worst && found.len() >= ef {
                break;
            }
            for &n in &self.links[c.id][layer] {
                if visited[n] {
                    continue;
                }
                visited[n] = true;
                let s = Scored { dist: distance(q, vectors[n]), id: n };
                let worst = found.peek().map_or(f64::INFINITY, |w| w.dist);
                if found.len() < ef || s.dist < worst {
                    candidates.push(core::cmp::Reverse(s));
                    found.push(s);
                    if found.len() > ef {
                        found.pop();
                    }
                }
            }
        }
        found.into_sorted_vec()
    }

    /// Neighbor selection heuristic: keep a candidate only if it is closer to
    /// the base than to every neighbor already kept, then top up with the
    /// closest discarded ones.
    fn select_neighbors(&self, candidates: &[Scored], m: usize, vectors: &[&[f64]]) -> Vec<usize> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut discarded = Vec::new();
        for &c in candidates {
            if kept.len() >= m {
                break;
            }
            if kept.iter().all(|k| distance(vectors[c.id], vectors[k.id]) > c.dist) {
                kept.push(c);
            } else {
                discarded.push(c);
            }
        }
        for c in discarded {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept.into_iter().map(|s| s.id).collect()
    }

    /// Add node `id`; `vectors[id]` must be its vector and ids must arrive in
    /// order `0, 1, 2, ...`.
    pub fn insert(&mut self, id: usize, vectors: &[&[f64]]) {
        debug_assert_eq!(id, self.links.len());
        let level = self.random_level();
        self.links.push(vec![Vec::new(); level + 1]);
        let q = vectors[id];
        let Some(entry) = self.entry else {
            self.entry = Some(id);
            self.top_layer = level;
            return;
        };
        let mut eps = vec![Scored { dist: distance(q, vectors[entry]), id: entry }];
        for layer in (level + 1..=self.top_layer).rev() {
            eps = self.search_layer(q, &eps, 1, layer, vectors);
        }
        for layer in (0..=level.min(self.top_layer)).rev() {
            let found = self.search_layer(q, &eps, self.params.ef_construct, layer, vectors);
            let neighbors = self.select_neighbors(&found, self.params.m, vectors);
            for &n in &neighbors {
                self.links[n][layer].push(id);
                let cap = self.max_degree(layer);
                if self.links[n][layer].len() > cap {
                    let base = vectors[n];
                    let mut scored: Vec<Scored> = self.links[n][layer]
                        .iter()
                        .map(|&x| Scored { dist: distance(base, vectors[x]), id: x })
                        .collect();
                    scored.sort();
                    self.links[n][layer] = self.select_neighbors(&scored, cap, vectors);
                }
            }
            self.links[id][layer] = neighbors;
            eps = found;
        }
        if level > self.top_layer {
            self.top_layer = level;
            self.entry = Some(id);
        }
    }

    /// Ids of (approximately) the `k` nearest nodes, closest first.
    pub fn search(&self, q: &[f64], k: usize, vectors: &[&[f64]]) -> Vec<usize> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut eps = vec![Scored { dist: distance(q, vectors[entry]), id: entry }];
        for layer in (1..=self.top_layer).rev() {
            eps = self.search_layer(q, &eps, 1, layer, vectors);
        }
        let ef = self.params.ef_search.max(k);
        let mut found = self.search_layer(q, &eps, ef, 0, vectors);
        found.truncate(k);
        found.into_iter().map(|s| s.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let n = libm::sqrt(dot(&v, &v));
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    }

    #[test]
    fn duplicates_are_found() {
        let data = unit_vectors(300, 16, 1);
        let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let mut h = Hnsw::new(HnswParams::default());
        for i in 0..refs.len() {
            h.insert(i, &refs);
        }
        for i in (0..300).step_by(17) {
            assert_eq!(h.search(refs[i], 1, &refs), [i]);
        }
    }

    #[test]
    fn degree_is_bounded() {
        let data = unit_vectors(500, 8, 2);
        let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let p = HnswParams { m: 4, ..Default::default() };
        let mut h = Hnsw::new(p);
        for i in 0..refs.len() {
            h.insert(i, &refs);
        }
        for node in &h.links {
            for (layer, l) in node.iter().enumerate() {
                assert!(l.len() <= h.max_degree(layer));
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(HnswParams::default().validate().is_ok());
        assert_eq!(HnswParams { m: 1, ef_search: 0, ..Default::default() }.invalid_fields(), ["m", "ef_search"]);
    }
}
