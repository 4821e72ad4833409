//! Clustered synthetic corpus generator.
//!
//! Every cluster is a topic built from a subject noun plus a color, style,
//! material and occasion drawn without replacement, so clusters share no
//! topical tokens. Pins get a noisy copy of their cluster's visual centroid and
//! a hashed embedding of their title and description; queries are templated
//! from the cluster tokens. Engagement favors a few head queries per cluster,
//! which gives the retention filter something to separate.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::agent::{Taxonomy, TrendFeedRecord};
use crate::model::corpus::{write_jsonl, Corpus, CorpusError, CorpusManifest, Dims};
use crate::model::records::{
    EngagementRecord, Label, LabeledPair, PairSource, PinRecord, QueryCategory, QueryRecord,
    Signature,
};
use crate::model::seed::{stage_rng, Stage};
use crate::model::text::HashingEmbedder;

const SUBJECTS: [(&str, &str); 40] = [
    ("dress", "fashion"),
    ("sofa", "home"),
    ("cake", "food"),
    ("nails", "beauty"),
    ("planter", "diy"),
    ("jacket", "fashion"),
    ("bedroom", "home"),
    ("salad", "food"),
    ("hairstyle", "beauty"),
    ("wreath", "diy"),
    ("sneakers", "fashion"),
    ("kitchen", "home"),
    ("pasta", "food"),
    ("makeup", "beauty"),
    ("quilt", "diy"),
    ("scarf", "fashion"),
    ("bookshelf", "home"),
    ("cookies", "food"),
    ("eyeliner", "beauty"),
    ("candle", "diy"),
    ("jeans", "fashion"),
    ("lamp", "home"),
    ("smoothie", "food"),
    ("skincare", "beauty"),
    ("terrarium", "diy"),
    ("blazer", "fashion"),
    ("rug", "home"),
    ("tacos", "food"),
    ("braids", "beauty"),
    ("pottery", "diy"),
    ("skirt", "fashion"),
    ("patio", "home"),
    ("soup", "food"),
    ("lipstick", "beauty"),
    ("macrame", "diy"),
    ("sweater", "fashion"),
    ("bathroom", "home"),
    ("bread", "food"),
    ("manicure", "beauty"),
    ("garden", "diy"),
];

const COLORS: [&str; 40] = [
    "sage", "terracotta", "navy", "blush", "mustard", "emerald", "ivory", "charcoal", "lavender",
    "cobalt", "burgundy", "olive", "coral", "teal", "taupe", "lilac", "crimson", "mint", "ochre",
    "plum", "amber", "indigo", "peach", "slate", "scarlet", "cream", "mauve", "saffron", "jade",
    "rust", "sapphire", "tangerine", "periwinkle", "khaki", "magenta", "turquoise", "sepia",
    "cerulean", "marigold", "fuchsia",
];

const STYLES: [&str; 40] = [
    "boho", "minimalist", "vintage", "rustic", "scandinavian", "preppy", "glam", "coastal",
    "industrial", "cottagecore", "retro", "modern", "farmhouse", "grunge", "romantic", "tropical",
    "gothic", "artdeco", "japandi", "victorian", "western", "nautical", "whimsical", "sporty",
    "baroque", "bauhaus", "eclectic", "mediterranean", "maximalist", "shabby", "utilitarian",
    "streetwear", "parisian", "zen", "punk", "safari", "tuscan", "nordic", "moroccan", "mod",
];

const MATERIALS: [&str; 40] = [
    "linen", "velvet", "rattan", "marble", "denim", "wool", "leather", "ceramic", "bamboo",
    "copper", "silk", "jute", "oak", "glass", "cotton", "brass", "suede", "wicker", "concrete",
    "tweed", "cashmere", "satin", "walnut", "terrazzo", "corduroy", "chiffon", "pewter", "cork",
    "mohair", "tulle", "sisal", "granite", "seagrass", "chenille", "slate", "teak", "flannel",
    "lace", "mesh", "burlap",
];

const OCCASIONS: [&str; 40] = [
    "wedding", "brunch", "holiday", "office", "summer", "autumn", "birthday", "picnic", "weekend",
    "graduation", "winter", "spring", "date", "vacation", "festival", "housewarming", "christmas",
    "halloween", "thanksgiving", "valentines", "camping", "beach", "gameday", "babyshower",
    "prom", "anniversary", "easter", "retirement", "reunion", "concert", "interview", "cruise",
    "hanukkah", "diwali", "newyear", "engagement", "recital", "roadtrip", "ski", "garden party",
];

const FILLERS: [&str; 6] = ["beautiful", "easy", "cute", "simple", "favorite", "stunning"];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub pins: usize,
    pub clusters: usize,
    pub dims: Dims,
    pub boards_per_cluster: usize,
    /// Norm of the isotropic visual noise added to a unit cluster centroid.
    pub visual_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pins: 1000,
            clusters: 20,
            dims: Dims::default(),
            boards_per_cluster: 5,
            visual_noise: 0.7,
            seed: 42,
        }
    }
}

/// One topical cluster of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub category: String,
    pub subject: String,
    pub color: String,
    pub style: String,
    pub material: String,
    pub occasion: String,
    /// Canonical topic phrase, e.g. "sage boho dress".
    pub topic: String,
    pub queries: Vec<QueryRecord>,
    /// Indices into `queries` of the high-traffic head queries.
    pub head: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub clusters: Vec<ClusterSpec>,
    pub pin_cluster: HashMap<Signature, usize>,
    pub trends: Vec<TrendFeedRecord>,
    pub taxonomy: Taxonomy,
}

impl SynthCorpus {
    /// Writes the corpus files, `trends.jsonl`, `taxonomy.json` and
    /// `manifest.txt` into `dir`, returning the manifest.
    pub fn write(&self, dir: &Path) -> Result<CorpusManifest, CorpusError> {
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let manifest = CorpusManifest::in_dir(dir, self.corpus.dims, self.corpus.seed);
        crate::model::save_corpus(&self.corpus, &manifest)?;
        let trends = manifest.trends.as_ref().expect("in_dir sets trends");
        write_jsonl(trends, &self.trends)?;
        let taxonomy = manifest.taxonomy.as_ref().expect("in_dir sets taxonomy");
        let json = serde_json::to_string_pretty(&self.taxonomy).expect("taxonomy serializes");
        std::fs::write(taxonomy, json + "\n").map_err(|e| CorpusError::Io {
            path: taxonomy.clone(),
            source: e,
        })?;
        manifest.save(&dir.join("manifest.txt"))?;
        Ok(manifest)
    }

    pub fn cluster_of(&self, signature: Signature) -> Option<&ClusterSpec> {
        self.pin_cluster.get(&signature).map(|&c| &self.clusters[c])
    }
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    assert!(config.clusters >= 1 && config.clusters <= SUBJECTS.len());
    let mut rng = stage_rng(config.seed, Stage::Corpus);
    let embedder = HashingEmbedder::new(config.dims.text);

    let clusters = make_clusters(config.clusters, &mut rng, &embedder);

    let centroids: Vec<Vec<f64>> = (0..config.clusters)
        .map(|_| unit_gaussian(config.dims.visual, &mut rng))
        .collect();

    let mut used = HashSet::new();
    let mut pins = Vec::with_capacity(config.pins);
    let mut pin_cluster = HashMap::new();
    for i in 0..config.pins {
        let c = i % config.clusters;
        let spec = &clusters[c];
        let signature = loop {
            let s: u64 = rng.random_range(1..=u64::MAX >> 11);
            if used.insert(s) {
                break s;
            }
        };
        let (title, description) = pin_text(spec, &mut rng);
        let text_embedding = embedder.embed(&format!("{title} {description}"));
        let noise_scale = config.visual_noise / (config.dims.visual as f64).sqrt();
        let raw: Vec<f64> = centroids[c]
            .iter()
            .map(|&x| {
                let n: f64 = StandardNormal.sample(&mut rng);
                x + noise_scale * n
            })
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let visual_embedding = raw.iter().map(|x| (x / norm) as f32).collect();
        let board = rng.random_range(0..config.boards_per_cluster.max(1));
        let board_id = (rng.random::<f64>() >= 0.1)
            .then_some((c * config.boards_per_cluster.max(1) + board) as u64 + 1);
        let perception_score = (0.3 + 0.7 * rng.random::<f64>()) as f32;
        pin_cluster.insert(signature, c);
        pins.push(PinRecord {
            signature,
            visual_embedding,
            text_embedding,
            perception_score,
            title,
            description,
            board_id,
            category: spec.category.clone(),
            language: "en-US".into(),
        });
    }
    pins.sort_by_key(|p| p.signature);

    let mut engagement = Vec::new();
    let mut labels = Vec::new();
    for pin in &pins {
        let c = pin_cluster[&pin.signature];
        let spec = &clusters[c];
        for (qi, q) in spec.queries.iter().enumerate() {
            if rng.random::<f64>() >= 0.8 {
                continue;
            }
            let head = spec.head.contains(&qi);
            engagement.push(engagement_record(&q.text, pin.signature, head, &mut rng));
        }
        for _ in 0..2 {
            let other = (c + rng.random_range(1..config.clusters.max(2))) % config.clusters;
            if other == c {
                continue;
            }
            let q = clusters[other].queries.choose(&mut rng).expect("non-empty");
            let impressions = rng.random_range(0..30u64);
            engagement.push(EngagementRecord {
                query_text: q.text.clone(),
                pin_signature: pin.signature,
                impressions,
                clicks: 0,
                avg_position: 30.0 + 50.0 * rng.random::<f64>(),
            });
        }
        if rng.random::<f64>() < 0.3 {
            let use_cases: Vec<&QueryRecord> = spec
                .queries
                .iter()
                .filter(|q| q.category == QueryCategory::UseCase)
                .collect();
            let pos = use_cases.choose(&mut rng).expect("every cluster has use cases");
            labels.push(LabeledPair {
                pin_signature: pin.signature,
                query: (*pos).clone(),
                label: Label::Positive,
                navboost_coverage: round4(rng.random::<f64>()),
                source: PairSource::Synthetic,
            });
            let neg = spec.queries.choose(&mut rng).expect("non-empty");
            labels.push(LabeledPair {
                pin_signature: pin.signature,
                query: neg.clone(),
                label: Label::Negative,
                navboost_coverage: round4(0.3 + 0.5 * rng.random::<f64>()),
                source: PairSource::Synthetic,
            });
        }
    }

    let queries: Vec<QueryRecord> = clusters.iter().flat_map(|c| c.queries.clone()).collect();
    let trends = make_trends(&clusters, &mut rng);
    let mut taxonomy = BTreeMap::<String, Vec<String>>::new();
    for c in &clusters {
        let terms = taxonomy.entry(c.category.clone()).or_default();
        terms.push(c.topic.clone());
        terms.push(c.subject.clone());
    }

    SynthCorpus {
        corpus: Corpus {
            dims: config.dims,
            seed: config.seed,
            pins,
            queries,
            engagement,
            labels,
        },
        clusters,
        pin_cluster,
        trends,
        taxonomy: Taxonomy::new(taxonomy),
    }
}

/// Topics of clusters the corpus does not contain. Their subjects, colors
/// and styles never appear in any pin text of `generate(config)`.
pub fn held_out_topics(config: &SynthConfig, n: usize) -> Vec<String> {
    let total = config.clusters + n;
    assert!(total <= SUBJECTS.len());
    let mut rng = stage_rng(config.seed, Stage::Corpus);
    let embedder = HashingEmbedder::new(config.dims.text);
    make_clusters(total, &mut rng, &embedder)
        .into_iter()
        .skip(config.clusters)
        .map(|c| c.topic)
        .collect()
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn make_clusters(n: usize, rng: &mut ChaCha8Rng, embedder: &HashingEmbedder) -> Vec<ClusterSpec> {
    let mut colors = COLORS.to_vec();
    let mut styles = STYLES.to_vec();
    let mut materials = MATERIALS.to_vec();
    let mut occasions = OCCASIONS.to_vec();
    colors.shuffle(rng);
    styles.shuffle(rng);
    materials.shuffle(rng);
    occasions.shuffle(rng);
    (0..n)
        .map(|i| {
            let (subject, category) = SUBJECTS[i];
            let (color, style, material, occasion) =
                (colors[i], styles[i], materials[i], occasions[i]);
            let topic = format!("{color} {style} {subject}");
            use QueryCategory::*;
            let templates: [(String, QueryCategory); 11] = [
                (format!("{color} {subject}"), Description),
                (format!("{material} {subject}"), Description),
                (format!("{style} {subject}"), Description),
                (format!("{subject} {color}"), Description),
                (format!("{color} {style} look"), StyleDetail),
                (format!("{material} {subject} details"), StyleDetail),
                (format!("{color} {material} {style} {subject}"), StyleDetail),
                (format!("{subject} ideas for {occasion}"), UseCase),
                (format!("{occasion} {subject} inspiration"), UseCase),
                (format!("how to style {subject} for {occasion}"), UseCase),
                (format!("{style} {subject} for {occasion}"), UseCase),
            ];
            let queries = templates
                .iter()
                .map(|(t, cat)| {
                    QueryRecord::new(t, *cat, "en-US")
                        .expect("templates are non-empty")
                        .with_embedding(embedder.embed(t))
                })
                .collect();
            ClusterSpec {
                category: category.to_string(),
                subject: subject.to_string(),
                color: color.to_string(),
                style: style.to_string(),
                material: material.to_string(),
                occasion: occasion.to_string(),
                topic,
                queries,
                head: vec![0, 6, 7],
            }
        })
        .collect()
}

fn pin_text(spec: &ClusterSpec, rng: &mut ChaCha8Rng) -> (String, String) {
    let (s, c, st, m, o) = (
        &spec.subject,
        &spec.color,
        &spec.style,
        &spec.material,
        &spec.occasion,
    );
    let title = match rng.random_range(0..4) {
        0 => format!("{c} {st} {s}"),
        1 => format!("{c} {m} {s}"),
        2 => format!("{st} {m} {s}"),
        _ => format!("{c} {s}"),
    };
    let filler = FILLERS.choose(rng).expect("non-empty");
    let description = match rng.random_range(0..3) {
        0 => format!("{filler} {s} for {o} with {m} details"),
        1 => format!("{filler} {st} {s} in {c}"),
        _ => format!("{o} {s} {filler} {m}"),
    };
    (title, description)
}

fn engagement_record(
    query: &str,
    pin: Signature,
    head: bool,
    rng: &mut ChaCha8Rng,
) -> EngagementRecord {
    let (impressions, position) = if head {
        (
            rng.random_range(400..5000u64),
            1.0 + 14.0 * rng.random::<f64>(),
        )
    } else {
        (rng.random_range(0..300u64), 5.0 + 55.0 * rng.random::<f64>())
    };
    let ctr = if rng.random::<f64>() < 0.05 {
        0.8 + 0.2 * rng.random::<f64>()
    } else {
        0.2 * rng.random::<f64>()
    };
    let clicks = ((impressions as f64) * ctr).floor() as u64;
    EngagementRecord {
        query_text: query.to_string(),
        pin_signature: pin,
        impressions,
        clicks: clicks.min(impressions),
        avg_position: (position * 100.0).round() / 100.0,
    }
}

fn make_trends(clusters: &[ClusterSpec], rng: &mut ChaCha8Rng) -> Vec<TrendFeedRecord> {
    let regions = ["US", "GB"];
    let spans = ["7d", "30d"];
    let mut out = Vec::new();
    for (i, c) in clusters.iter().enumerate() {
        out.push(TrendFeedRecord {
            term: format!("{} {}", c.color, c.subject),
            region: regions[i % 2].to_string(),
            timespan: spans[(i / 2) % 2].to_string(),
            category: c.category.clone(),
            velocity: Some(round4(1.5 * rng.random::<f64>())),
            lifecycle: None,
        });
    }
    // A lifecycle-only record: velocity is derived from the last two points.
    if let Some(c) = clusters.first() {
        out.push(TrendFeedRecord {
            term: format!("{} {}", c.occasion, c.subject),
            region: "US".into(),
            timespan: "7d".into(),
            category: c.category.clone(),
            velocity: None,
            lifecycle: Some(vec![10.0, 14.0, 21.0]),
        });
    }
    for (term, category) in [
        ("election results", "politics"),
        ("football scores", "sports"),
        ("breaking news today", "news"),
    ] {
        out.push(TrendFeedRecord {
            term: term.into(),
            region: "US".into(),
            timespan: "7d".into(),
            category: category.into(),
            velocity: Some(2.5),
            lifecycle: None,
        });
    }
    out
}
