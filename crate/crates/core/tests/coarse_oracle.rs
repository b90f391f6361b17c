//! `top_k` against an exhaustive re-implementation: tf-idf weighted mean
//! vectors, cosine against every scenario, full sort by (score desc, id
//! asc), first k.

use std::collections::{HashMap, HashSet};

use ics_core::coarse::{CoarseRanker, ScenarioIndex};
use ics_core::text::{tokenize, EmbeddingTable, TfIdfModel};
use ics_core::ScenarioId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CATALOGS: usize = 200;

const WORDS: [&str; 10] = ["refund", "parcel", "late", "cancel", "order", "address", "change", "broken", "coupon", "invoice"];

struct Oracle {
    vectors: HashMap<String, Vec<f64>>,
    docs: Vec<Vec<String>>,
}

impl Oracle {
    fn idf(&self, t: &str) -> f64 {
        let df = self.docs.iter().filter(|d| d.iter().any(|x| x == t)).count() as f64;
        let n = self.docs.len() as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    fn represent(&self, text: &str, dim: usize) -> Vec<f64> {
        let tokens = tokenize(text);
        let mut order: Vec<&String> = Vec::new();
        for t in &tokens {
            if !order.contains(&t) {
                order.push(t);
            }
        }
        let weighted: Vec<(&Vec<f64>, f64)> = order
            .into_iter()
            .filter_map(|t| {
                let tf = tokens.iter().filter(|x| *x == t).count() as f64;
                self.vectors.get(t.as_str()).map(|v| (v, tf * self.idf(t)))
            })
            .collect();
        let total: f64 = weighted.iter().map(|w| w.1).sum();
        let mut out = vec![0.0; dim];
        if weighted.is_empty() || total <= 0.0 {
            return out;
        }
        for (v, w) in weighted {
            let share = w / total;
            for (o, x) in out.iter_mut().zip(v) {
                *o += share * x;
            }
        }
        out
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn random_text(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let n = rng.gen_range(1..5);
    (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// One random catalog; returns the number of tied scores it exercised.
pub fn trial(seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(2..4);
    // a few words have no vector at all
    let with_vectors: Vec<&str> = WORDS.iter().copied().filter(|_| rng.gen_bool(0.85)).collect();
    let mut table = format!("{} {dim}\n", with_vectors.len());
    let mut vectors = HashMap::new();
    for w in &with_vectors {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1..=1) as f64).collect();
        table += &format!("{w} {}\n", v.iter().map(f64::to_string).collect::<Vec<_>>().join(" "));
        vectors.insert(w.to_string(), v);
    }
    let embeddings = EmbeddingTable::parse(table.as_bytes()).unwrap();

    let n = rng.gen_range(1..40);
    let mut ids: Vec<usize> = (0..n * 3).collect();
    ids.shuffle(&mut rng);
    let mut catalog: Vec<(ScenarioId, String)> = Vec::new();
    for &i in &ids[..n] {
        // repeat an earlier description now and then to force exact ties
        let desc = match catalog.choose(&mut rng) {
            Some((_, d)) if rng.gen_bool(0.3) => d.clone(),
            _ => random_text(&mut rng, &WORDS),
        };
        catalog.push((ScenarioId::from(format!("s{i:03}")), desc));
    }
    let docs: Vec<Vec<String>> = catalog.iter().map(|(_, d)| tokenize(d)).collect();
    let tfidf = TfIdfModel::fit(docs.iter().map(Vec::as_slice)).unwrap();
    let ranker = CoarseRanker::new(embeddings, tfidf);
    let index = ScenarioIndex::build(&ranker, catalog.iter().map(|(id, d)| (id, d.as_str()))).unwrap();
    let oracle = Oracle { vectors, docs };

    let mut ties = 0;
    for _ in 0..5 {
        let query = random_text(&mut rng, &[&WORDS[..], &["unknown", "hello"]].concat());
        let k = rng.gen_range(1..=n + 3);
        let q = oracle.represent(&query, dim);
        let mut all: Vec<(ScenarioId, f64)> = catalog.iter().map(|(id, d)| (id.clone(), cos(&q, &oracle.represent(d, dim)))).collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let distinct: HashSet<u64> = all.iter().map(|x| x.1.to_bits()).collect();
        ties += all.len() - distinct.len();
        all.truncate(k);
        let got = index.top_k(&ranker, &query, k).unwrap();
        assert_eq!(got, all, "seed {seed}, query {query:?}, k {k}");
    }
    ties
}

#[test]
fn top_k_equals_exhaustive_ranking_on_random_catalogs() {
    let ties: usize = (0..CATALOGS as u64).map(trial).sum();
    assert!(ties > 100, "the trials should exercise tie-breaking, saw {ties} tied scores");
}

#[test]
fn k_at_catalog_size_returns_everything() {
    let embeddings = EmbeddingTable::parse("2 2\nrefund 1 0\nparcel 0 1\n".as_bytes()).unwrap();
    let catalog = [("b", "refund"), ("a", "parcel"), ("c", "refund parcel")];
    let docs: Vec<Vec<String>> = catalog.iter().map(|(_, d)| tokenize(d)).collect();
    let ranker = CoarseRanker::new(embeddings, TfIdfModel::fit(docs.iter().map(Vec::as_slice)).unwrap());
    let ids: Vec<ScenarioId> = catalog.iter().map(|(i, _)| ScenarioId::from(*i)).collect();
    let index = ScenarioIndex::build(&ranker, ids.iter().zip(catalog.iter().map(|c| c.1))).unwrap();
    let got: Vec<String> = index.top_k(&ranker, "refund", 3).unwrap().into_iter().map(|(i, _)| i.0).collect();
    assert_eq!(got, ["b", "c", "a"]);
    assert_eq!(index.top_k(&ranker, "refund", 10).unwrap().len(), 3);
    assert!(index.top_k(&ranker, "refund", 0).is_err());
}
