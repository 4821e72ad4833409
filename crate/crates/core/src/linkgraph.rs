//! Pin and collection pages as a directed link graph, authority by PageRank,
//! and the crawl-facing exports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::collections::{html_escape, slugify, Collection};
use crate::model::records::Signature;
use crate::ranker::Annotation;

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("self-loop on {0}")]
    SelfLoop(PageId),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("damping must lie in (0, 1), got {0}")]
    InvalidDamping(f64),
    #[error("invalid base url {url:?}: {reason}")]
    InvalidBaseUrl { url: String, reason: String },
    #[error("cannot parse page id {0:?}")]
    BadPageId(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Collections sort before pins, so ordered traversals list hubs first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PageId {
    Collection(String),
    Pin(Signature),
}

impl PageId {
    pub fn is_pin(&self) -> bool {
        matches!(self, PageId::Pin(_))
    }

    pub fn path(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PageId::Collection(slug) => write!(f, "/collection/{slug}"),
            PageId::Pin(sig) => write!(f, "/pin/{sig}"),
        }
    }
}

impl FromStr for PageId {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(slug) = s.strip_prefix("/collection/") {
            if !slug.is_empty() && slugify(slug) == slug {
                return Ok(PageId::Collection(slug.to_string()));
            }
        } else if let Some(sig) = s.strip_prefix("/pin/") {
            if let Ok(sig) = sig.parse() {
                return Ok(PageId::Pin(sig));
            }
        }
        Err(LinkError::BadPageId(s.to_string()))
    }
}

impl Serialize for PageId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PageId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Directed graph without self-loops or parallel edges. Both adjacency
/// directions are kept in sorted sets so every traversal is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkGraph {
    out: BTreeMap<PageId, BTreeSet<PageId>>,
    inc: BTreeMap<PageId, BTreeSet<PageId>>,
    edges: usize,
}

impl LinkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: PageId) {
        self.inc.entry(id.clone()).or_default();
        self.out.entry(id).or_default();
    }

    /// Adds both endpoints if needed. Returns false when the edge already existed.
    pub fn add_edge(&mut self, from: PageId, to: PageId) -> Result<bool, LinkError> {
        if from == to {
            return Err(LinkError::SelfLoop(from));
        }
        self.add_node(from.clone());
        self.add_node(to.clone());
        let fresh = self.out.get_mut(&from).expect("added").insert(to.clone());
        if fresh {
            self.inc.get_mut(&to).expect("added").insert(from);
            self.edges += 1;
        }
        Ok(fresh)
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PageId> {
        self.out.keys()
    }

    pub fn contains(&self, id: &PageId) -> bool {
        self.out.contains_key(id)
    }

    pub fn has_edge(&self, from: &PageId, to: &PageId) -> bool {
        self.out.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&PageId, &PageId)> {
        self.out.iter().flat_map(|(a, bs)| bs.iter().map(move |b| (a, b)))
    }

    pub fn successors(&self, id: &PageId) -> impl Iterator<Item = &PageId> {
        self.out.get(id).into_iter().flatten()
    }

    pub fn predecessors(&self, id: &PageId) -> impl Iterator<Item = &PageId> {
        self.inc.get(id).into_iter().flatten()
    }

    pub fn out_degree(&self, id: &PageId) -> usize {
        self.out.get(id).map_or(0, BTreeSet::len)
    }

    pub fn in_degree(&self, id: &PageId) -> usize {
        self.inc.get(id).map_or(0, BTreeSet::len)
    }

    pub fn orphan_pins(&self) -> Vec<Signature> {
        self.inc
            .iter()
            .filter_map(|(id, preds)| match id {
                PageId::Pin(s) if preds.is_empty() => Some(*s),
                _ => None,
            })
            .collect()
    }

    /// One `{"source", "target"}` object per line, in sorted edge order.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), LinkError> {
        let mut w = BufWriter::new(File::create(path)?);
        for (a, b) in self.edges() {
            serde_json::to_writer(&mut w, &EdgeLine { source: a.clone(), target: b.clone() })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLine {
    pub source: PageId,
    pub target: PageId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DanglingAnnotation {
    pub pin_signature: Signature,
    pub query_text: String,
    pub slug: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub resolved: usize,
    pub dangling: Vec<DanglingAnnotation>,
}

/// Every pin in `pins` gets a page. Collections link to their members. An
/// annotation whose query slug names a collection links the pin to that
/// collection, and the collection page lists the pin in return.
pub fn build_link_graph(
    pins: &[Signature],
    annotations: &[Annotation],
    collections: &[Collection],
) -> (LinkGraph, BuildReport) {
    let mut g = LinkGraph::new();
    for &p in pins {
        g.add_node(PageId::Pin(p));
    }
    let mut by_slug = HashMap::new();
    for c in collections {
        let hub = PageId::Collection(c.slug.clone());
        g.add_node(hub.clone());
        by_slug.insert(c.slug.as_str(), hub.clone());
        for sig in c.signatures() {
            g.add_edge(hub.clone(), PageId::Pin(sig)).expect("distinct kinds");
        }
    }
    let mut report = BuildReport::default();
    for a in annotations {
        let pin = PageId::Pin(a.pin_signature);
        g.add_node(pin.clone());
        let slug = slugify(&a.query_text);
        match by_slug.get(slug.as_str()) {
            Some(hub) => {
                g.add_edge(pin.clone(), hub.clone()).expect("distinct kinds");
                g.add_edge(hub.clone(), pin).expect("distinct kinds");
                report.resolved += 1;
            }
            None => report.dangling.push(DanglingAnnotation {
                pin_signature: a.pin_signature,
                query_text: a.query_text.clone(),
                slug,
            }),
        }
    }
    (g, report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthorityScores {
    /// Node order of the graph (collections by slug, then pins).
    pub nodes: Vec<PageId>,
    pub scores: Vec<f64>,
    pub damping: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl AuthorityScores {
    pub fn get(&self, id: &PageId) -> Option<f64> {
        self.nodes.binary_search(id).ok().map(|i| self.scores[i])
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    pub fn mean_over(&self, pred: impl Fn(&PageId) -> bool) -> f64 {
        let (sum, n) = self
            .nodes
            .iter()
            .zip(&self.scores)
            .filter(|(id, _)| pred(id))
            .fold((0.0, 0usize), |(s, n), (_, &x)| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Power iteration with uniform teleport. Dangling pages spread their mass
/// uniformly over all pages. Stops when the L1 change drops below `tol`;
/// reaching `max_iter` first returns with `converged = false`.
pub fn pagerank(graph: &LinkGraph, damping: f64, tol: f64, max_iter: usize) -> Result<AuthorityScores, LinkError> {
    if graph.is_empty() {
        return Err(LinkError::EmptyGraph);
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(LinkError::InvalidDamping(damping));
    }
    let nodes: Vec<PageId> = graph.nodes().cloned().collect();
    let n = nodes.len();
    let pos: HashMap<&PageId, usize> = nodes.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let preds: Vec<Vec<usize>> = nodes.iter().map(|id| graph.predecessors(id).map(|p| pos[p]).collect()).collect();
    let outdeg: Vec<usize> = nodes.iter().map(|id| graph.out_degree(id)).collect();
    let nf = n as f64;

    let mut r = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let dangling: f64 = r.iter().zip(&outdeg).filter(|(_, &d)| d == 0).map(|(x, _)| x).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        for (v, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = preds[v].iter().map(|&u| r[u] / outdeg[u] as f64).sum();
            *slot = base + damping * inflow;
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = r.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut r, &mut next);
        if residual < tol {
            break;
        }
    }
    Ok(AuthorityScores {
        nodes,
        scores: r,
        damping,
        iterations,
        residual,
        converged: residual < tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPage {
    pub page: PageId,
    pub authority: f64,
    pub in_degree: usize,
    pub out_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub nodes: usize,
    pub edges: usize,
    pub pins: usize,
    pub collections: usize,
    pub orphan_pins: usize,
    pub mean_collection_authority: f64,
    pub mean_pin_authority: f64,
    pub damping: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// degree → number of pages with that degree
    pub in_degree_histogram: BTreeMap<usize, usize>,
    pub out_degree_histogram: BTreeMap<usize, usize>,
    /// Crawl order: descending authority, ties in node order.
    pub ranking: Vec<RankedPage>,
}

pub fn link_report(graph: &LinkGraph, scores: &AuthorityScores) -> LinkReport {
    let mut in_h = BTreeMap::new();
    let mut out_h = BTreeMap::new();
    let mut ranking: Vec<RankedPage> = Vec::with_capacity(graph.node_count());
    for id in graph.nodes() {
        let (i, o) = (graph.in_degree(id), graph.out_degree(id));
        *in_h.entry(i).or_insert(0) += 1;
        *out_h.entry(o).or_insert(0) += 1;
        ranking.push(RankedPage {
            page: id.clone(),
            authority: scores.get(id).unwrap_or(0.0),
            in_degree: i,
            out_degree: o,
        });
    }
    ranking.sort_by(|a, b| b.authority.total_cmp(&a.authority).then_with(|| a.page.cmp(&b.page)));
    let pins = graph.nodes().filter(|id| id.is_pin()).count();
    LinkReport {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        pins,
        collections: graph.node_count() - pins,
        orphan_pins: graph.orphan_pins().len(),
        mean_collection_authority: scores.mean_over(|id| !id.is_pin()),
        mean_pin_authority: scores.mean_over(PageId::is_pin),
        damping: scores.damping,
        iterations: scores.iterations,
        residual: scores.residual,
        converged: scores.converged,
        in_degree_histogram: in_h,
        out_degree_histogram: out_h,
        ranking,
    }
}

fn parse_base(base_url: &str) -> Result<Url, LinkError> {
    let bad = |reason: &str| LinkError::InvalidBaseUrl {
        url: base_url.to_string(),
        reason: reason.to_string(),
    };
    let mut url = Url::parse(base_url).map_err(|e| bad(&e.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(bad("scheme must be http or https"));
    }
    if url.cannot_be_a_base() || url.host().is_none() {
        return Err(bad("not a hierarchical url"));
    }
    if url.query().is_some() || url.fragment().is_some() {
        return Err(bad("query and fragment are not allowed"));
    }
    if !url.path().ends_with('/') {
        let p = format!("{}/", url.path());
        url.set_path(&p);
    }
    Ok(url)
}

/// Sitemap XML with one `<url>` per page, collections first by slug, then
/// pins by signature.
pub fn export_sitemap(graph: &LinkGraph, base_url: &str) -> Result<String, LinkError> {
    let base = parse_base(base_url)?;
    let mut s = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<urlset xmlns=\"http://www.sitemaps.org/schemas/sitemap/0.9\">\n",
    );
    for id in graph.nodes() {
        let rel = &id.path()[1..];
        let loc = base.join(rel).map_err(|e| LinkError::InvalidBaseUrl {
            url: base_url.to_string(),
            reason: e.to_string(),
        })?;
        s.push_str("  <url><loc>");
        s.push_str(&html_escape(loc.as_str()));
        s.push_str("</loc></url>\n");
    }
    s.push_str("</urlset>\n");
    Ok(s)
}
