//! Small vocabulary-indexed TF-IDF used for template grouping, partition
//! certification and the outlier baseline. IDF is smoothed:
//! `ln((1 + n) / (1 + df)) + 1`.

use std::collections::{BTreeSet, HashMap};

use crate::drain::WILDCARD;

/// Sparse vector sorted by term index.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Clone, Debug, Default)]
pub struct TfIdf {
    vocab: HashMap<String, u32>,
    idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit<D, T>(docs: &[D]) -> Self
    where
        D: AsRef<[T]>,
        T: AsRef<str>,
    {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        for doc in docs {
            let terms: BTreeSet<&str> = doc.as_ref().iter().map(AsRef::as_ref).filter(|t| *t != WILDCARD).collect();
            for t in terms {
                let next = vocab.len() as u32;
                let id = *vocab.entry(t.to_string()).or_insert(next);
                if id as usize == df.len() {
                    df.push(0);
                }
                df[id as usize] += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        TfIdf { vocab, idf }
    }

    pub fn vocab_len(&self) -> usize {
        self.idf.len()
    }

    /// L2-normalized TF-IDF vector; out-of-vocabulary terms are ignored.
    pub fn transform<T: AsRef<str>>(&self, doc: &[T]) -> SparseVec {
        let mut tf: HashMap<u32, f64> = HashMap::new();
        for t in doc {
            if let Some(&id) = self.vocab.get(t.as_ref()) {
                *tf.entry(id).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = tf.into_iter().map(|(id, c)| (id, c * self.idf[id as usize])).collect();
        v.sort_unstable_by_key(|&(id, _)| id);
        normalize(&mut v);
        v
    }
}

pub fn normalize(v: &mut SparseVec) {
    let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, x)| *x /= norm);
    }
}

pub fn dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Mean of the given vectors (not renormalized).
pub fn centroid<'a>(vectors: impl IntoIterator<Item = &'a SparseVec>) -> SparseVec {
    let mut acc: HashMap<u32, f64> = HashMap::new();
    let mut n = 0usize;
    for v in vectors {
        n += 1;
        for &(id, x) in v {
            *acc.entry(id).or_default() += x;
        }
    }
    let mut out: SparseVec = acc.into_iter().map(|(id, x)| (id, x / n.max(1) as f64)).collect();
    out.sort_unstable_by_key(|&(id, _)| id);
    out
}
