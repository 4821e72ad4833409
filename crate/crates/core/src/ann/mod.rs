//! Hierarchical navigable small-world graph over unit vectors, plus the exact
//! scan used to measure its recall.

mod io;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::vector::dot_f32;
use crate::model::DenseVector;

pub use io::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum HnswError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("vector for id {id} is not unit-norm (norm {norm})")]
    NotUnit { id: u64, norm: f64 },
    #[error("id {0} is already in the index")]
    DuplicateId(u64),
    #[error("vector has {actual} dims, index expects {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    Version(u32),
    #[error("index file is truncated")]
    Truncated,
    #[error("malformed index file: {0}")]
    Malformed(String),
}

const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub ml: f64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self::with_m(16, 200, 100)
    }
}

impl HnswParams {
    pub fn with_m(m: usize, ef_construction: usize, ef_search: usize) -> Self {
        Self {
            m,
            ef_construction,
            ef_search,
            ml: 1.0 / (m as f64).ln(),
        }
    }

    pub fn validate(&self) -> Result<(), HnswError> {
        if self.m < 2 {
            return Err(HnswError::InvalidParams(format!("M = {} < 2", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(HnswError::InvalidParams(format!(
                "ef_construction = {} < M = {}",
                self.ef_construction, self.m
            )));
        }
        if self.ef_search < 1 {
            return Err(HnswError::InvalidParams("ef_search = 0".into()));
        }
        if !(self.ml > 0.0) || !self.ml.is_finite() {
            return Err(HnswError::InvalidParams(format!("mL = {}", self.ml)));
        }
        Ok(())
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub similarity: f32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub distance_computations: usize,
}

/// Distance-ordered candidate with a deterministic tie-break on node index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    dist: f32,
    node: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> Ordering {
        self.dist.total_cmp(&o.dist).then(self.node.cmp(&o.node))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    seed: u64,
    rng: ChaCha8Rng,
    ids: Vec<u64>,
    /// Row-major, `dim` floats per node.
    data: Vec<f32>,
    /// `links[node][layer]`; a node's length is its level + 1.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    index_of: HashMap<u64, u32>,
}

impl PartialEq for HnswIndex {
    fn eq(&self, o: &Self) -> bool {
        self.params == o.params
            && self.dim == o.dim
            && self.seed == o.seed
            && self.rng.get_word_pos() == o.rng.get_word_pos()
            && self.ids == o.ids
            && self.data == o.data
            && self.links == o.links
            && self.entry == o.entry
    }
}

fn check_unit(id: u64, v: &[f32]) -> Result<(), HnswError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(HnswError::NotUnit { id, norm: f64::NAN });
    }
    let norm = crate::model::vector::l2_norm(v);
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(HnswError::NotUnit { id, norm });
    }
    Ok(())
}

/// Builds an index by inserting `vectors` in iteration order.
pub fn build(
    vectors: impl IntoIterator<Item = (u64, DenseVector)>,
    params: HnswParams,
    seed: u64,
) -> Result<HnswIndex, HnswError> {
    let mut index = HnswIndex::new(params, seed)?;
    for (id, v) in vectors {
        index.insert(id, &v)?;
    }
    Ok(index)
}

/// Exact top-`k` by cosine; ties go to the lower id.
pub fn brute_force_search(
    vectors: &[(u64, DenseVector)],
    query: &DenseVector,
    k: usize,
) -> Result<Vec<Neighbor>, HnswError> {
    let mut out = Vec::with_capacity(vectors.len());
    for (id, v) in vectors {
        if v.dim() != query.dim() {
            return Err(HnswError::DimMismatch {
                expected: v.dim(),
                actual: query.dim(),
            });
        }
        out.push(Neighbor {
            id: *id,
            similarity: dot_f32(v.values(), query.values()),
        });
    }
    sort_neighbors(&mut out);
    out.truncate(k);
    Ok(out)
}

fn sort_neighbors(v: &mut [Neighbor]) {
    v.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id)));
}

impl HnswIndex {
    pub fn new(params: HnswParams, seed: u64) -> Result<Self, HnswError> {
        params.validate()?;
        Ok(Self {
            params,
            dim: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ids: Vec::new(),
            data: Vec::new(),
            links: Vec::new(),
            entry: None,
            index_of: HashMap::new(),
        })
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Zero until the first insert fixes it.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn entry_point(&self) -> Option<u64> {
        self.entry.map(|e| self.ids[e as usize])
    }

    pub fn max_level(&self) -> Option<usize> {
        self.entry.map(|e| self.links[e as usize].len() - 1)
    }

    pub fn level_of(&self, id: u64) -> Option<usize> {
        self.index_of.get(&id).map(|&i| self.links[i as usize].len() - 1)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index_of.contains_key(&id)
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.index_of.get(&id).map(|&i| self.row(i))
    }

    /// Neighbor ids of `id` at `layer`, in stored order.
    pub fn neighbors(&self, id: u64, layer: usize) -> Option<Vec<u64>> {
        let i = *self.index_of.get(&id)?;
        self.links[i as usize]
            .get(layer)
            .map(|ns| ns.iter().map(|&n| self.ids[n as usize]).collect())
    }

    fn row(&self, i: u32) -> &[f32] {
        let s = i as usize * self.dim;
        &self.data[s..s + self.dim]
    }

    fn dist_to(&self, q: &[f32], i: u32, stats: &mut SearchStats) -> f32 {
        stats.distance_computations += 1;
        1.0 - dot_f32(q, self.row(i))
    }

    fn dist_nodes(&self, a: u32, b: u32) -> f32 {
        1.0 - dot_f32(self.row(a), self.row(b))
    }

    fn draw_level(&mut self) -> usize {
        // 1 − U lies in (0, 1], so the log is finite.
        let u: f64 = 1.0 - self.rng.random::<f64>();
        (-u.ln() * self.params.ml).floor() as usize
    }

    pub fn insert(&mut self, id: u64, vector: &DenseVector) -> Result<(), HnswError> {
        if self.index_of.contains_key(&id) {
            return Err(HnswError::DuplicateId(id));
        }
        if self.dim != 0 && vector.dim() != self.dim {
            return Err(HnswError::DimMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        check_unit(id, vector.values())?;
        if self.dim == 0 {
            self.dim = vector.dim();
        }
        let level = self.draw_level();
        let node = self.ids.len() as u32;
        self.ids.push(id);
        self.data.extend_from_slice(vector.values());
        self.links.push(vec![Vec::new(); level + 1]);
        self.index_of.insert(id, node);

        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return Ok(());
        };
        let q = vector.values().to_vec();
        let top = self.links[entry as usize].len() - 1;
        let mut stats = SearchStats::default();
        let mut ep = Cand {
            dist: self.dist_to(&q, entry, &mut stats),
            node: entry,
        };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy(&q, ep, layer, &mut stats);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&q, &eps, self.params.ef_construction, layer, &mut stats);
            // New nodes fill the full layer capacity (2M on layer 0).
            let chosen = self.select_heuristic(&found, self.params.max_degree(layer));
            self.links[node as usize][layer] = chosen.iter().map(|c| c.node).collect();
            for c in &chosen {
                self.link_back(c.node, node, c.dist, layer);
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(node);
        }
        Ok(())
    }

    /// Adds `node` to `target`'s list at `layer`, pruning with the heuristic
    /// when the list overflows.
    fn link_back(&mut self, target: u32, node: u32, dist: f32, layer: usize) {
        let cap = self.params.max_degree(layer);
        let list = &self.links[target as usize][layer];
        if list.len() < cap {
            self.links[target as usize][layer].push(node);
            return;
        }
        let mut cands: Vec<Cand> = list
            .iter()
            .map(|&n| Cand {
                dist: self.dist_nodes(target, n),
                node: n,
            })
            .collect();
        cands.push(Cand { dist, node });
        cands.sort();
        let kept = self.select_heuristic(&cands, cap);
        self.links[target as usize][layer] = kept.iter().map(|c| c.node).collect();
    }

    /// Keeps a candidate only if it is closer to the base than to every
    /// neighbor already kept. `cands` must be sorted by ascending distance.
    fn select_heuristic(&self, cands: &[Cand], m: usize) -> Vec<Cand> {
        let mut out: Vec<Cand> = Vec::with_capacity(m);
        for &c in cands {
            if out.len() >= m {
                break;
            }
            if out.iter().all(|r| self.dist_nodes(c.node, r.node) > c.dist) {
                out.push(c);
            }
        }
        out
    }

    fn greedy(&self, q: &[f32], mut ep: Cand, layer: usize, stats: &mut SearchStats) -> Cand {
        loop {
            let mut moved = false;
            for &n in &self.links[ep.node as usize][layer] {
                let d = self.dist_to(q, n, stats);
                let c = Cand { dist: d, node: n };
                if c < ep {
                    ep = c;
                    moved = true;
                }
            }
            if !moved {
                return ep;
            }
        }
    }

    /// Best-first search on one layer; returns up to `ef` nodes sorted by
    /// ascending distance.
    fn search_layer(&self, q: &[f32], eps: &[Cand], ef: usize, layer: usize, stats: &mut SearchStats) -> Vec<Cand> {
        let mut visited = vec![false; self.ids.len()];
        let mut candidates: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut results: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in eps {
            if !visited[e.node as usize] {
                visited[e.node as usize] = true;
                candidates.push(Reverse(e));
                results.push(e);
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(Reverse(c)) = candidates.pop() {
            let worst = results.peek().expect("non-empty");
            if c.dist > worst.dist && results.len() >= ef {
                break;
            }
            for &n in &self.links[c.node as usize][layer] {
                if visited[n as usize] {
                    continue;
                }
                visited[n as usize] = true;
                let d = self.dist_to(q, n, stats);
                let cand = Cand { dist: d, node: n };
                if results.len() < ef || cand < *results.peek().expect("non-empty") {
                    candidates.push(Reverse(cand));
                    results.push(cand);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    pub fn search(&self, query: &DenseVector, k: usize, ef_search: usize) -> Result<Vec<Neighbor>, HnswError> {
        self.search_with_stats(query, k, ef_search).map(|(r, _)| r)
    }

    /// Results sorted by descending similarity, ties to the lower id. The
    /// layer-0 beam is `max(ef_search, k)`.
    pub fn search_with_stats(
        &self,
        query: &DenseVector,
        k: usize,
        ef_search: usize,
    ) -> Result<(Vec<Neighbor>, SearchStats), HnswError> {
        let mut stats = SearchStats::default();
        let Some(entry) = self.entry else {
            return Ok((Vec::new(), stats));
        };
        if query.dim() != self.dim {
            return Err(HnswError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if k == 0 {
            return Ok((Vec::new(), stats));
        }
        let q = query.values();
        let mut ep = Cand {
            dist: self.dist_to(q, entry, &mut stats),
            node: entry,
        };
        for layer in (1..self.links[entry as usize].len()).rev() {
            ep = self.greedy(q, ep, layer, &mut stats);
        }
        let found = self.search_layer(q, &[ep], ef_search.max(k).max(1), 0, &mut stats);
        let mut out: Vec<Neighbor> = found
            .iter()
            .map(|c| Neighbor {
                id: self.ids[c.node as usize],
                similarity: dot_f32(q, self.row(c.node)),
            })
            .collect();
        sort_neighbors(&mut out);
        out.truncate(k);
        Ok((out, stats))
    }

    /// Exact scan over the stored vectors.
    pub fn brute_force(&self, query: &DenseVector, k: usize) -> Result<Vec<Neighbor>, HnswError> {
        if !self.is_empty() && query.dim() != self.dim {
            return Err(HnswError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let mut out: Vec<Neighbor> = (0..self.ids.len() as u32)
            .map(|i| Neighbor {
                id: self.ids[i as usize],
                similarity: dot_f32(query.values(), self.row(i)),
            })
            .collect();
        sort_neighbors(&mut out);
        out.truncate(k);
        Ok(out)
    }

    /// Full scan of the structural invariants; returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.ids.len();
        if n == 0 {
            return if self.entry.is_none() {
                Ok(())
            } else {
                Err("empty index has an entry point".into())
            };
        }
        let entry = self.entry.ok_or("non-empty index without entry point")?;
        let top = self.links[entry as usize].len() - 1;
        for (i, layers) in self.links.iter().enumerate() {
            if layers.is_empty() {
                return Err(format!("node {} has no layers", self.ids[i]));
            }
            if layers.len() - 1 > top {
                return Err(format!("node {} is above the entry point level", self.ids[i]));
            }
            for (l, ns) in layers.iter().enumerate() {
                if ns.len() > self.params.max_degree(l) {
                    return Err(format!("node {} has degree {} at layer {l}", self.ids[i], ns.len()));
                }
                let mut seen = std::collections::HashSet::new();
                for &nb in ns {
                    if nb as usize >= n {
                        return Err(format!("node {} links to missing node", self.ids[i]));
                    }
                    if nb as usize == i {
                        return Err(format!("node {} links to itself", self.ids[i]));
                    }
                    if self.links[nb as usize].len() <= l {
                        return Err(format!(
                            "node {} links at layer {l} to {} which is absent there",
                            self.ids[i], self.ids[nb as usize]
                        ));
                    }
                    if !seen.insert(nb) {
                        return Err(format!("node {} has a duplicate edge", self.ids[i]));
                    }
                }
            }
        }
        for (i, &id) in self.ids.iter().enumerate() {
            if self.index_of.get(&id) != Some(&(i as u32)) {
                return Err(format!("id table disagrees for {id}"));
            }
        }
        Ok(())
    }
}
