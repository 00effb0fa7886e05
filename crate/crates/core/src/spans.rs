//! Opinion candidate enumeration and span-level representations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SarlError};
use crate::numerics::{Graph, GroupName, Mlp, ParamStore, Var};

/// Inclusive token interval `[s, e]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub s: usize,
    pub e: usize,
}

impl Span {
    pub fn new(s: usize, e: usize) -> Self {
        Span { s, e }
    }

    pub fn width(self) -> usize {
        self.e - self.s
    }

    pub fn overlaps(self, other: Span) -> bool {
        !(self.e < other.s || self.s > other.e)
    }

    pub fn check(self, n: usize) -> Result<()> {
        if self.s > self.e || self.e >= n {
            return Err(SarlError::Contract(format!(
                "span ({}, {}) invalid for length {n}",
                self.s, self.e
            )));
        }
        Ok(())
    }
}

/// Every span with `e - s <= l` that does not overlap `aspect`, sorted by `(s, e)`.
pub fn enumerate_candidates(n: usize, aspect: Span, l: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for s in 0..n {
        for e in s..n.min(s + l + 1) {
            let span = Span::new(s, e);
            if !span.overlaps(aspect) {
                out.push(span);
            }
        }
    }
    out
}

/// All spans of the sentence with `e - s <= l`, sorted by `(s, e)`.
pub fn enumerate_all(n: usize, l: usize) -> Vec<Span> {
    (0..n)
        .flat_map(|s| (s..n.min(s + l + 1)).map(move |e| Span::new(s, e)))
        .collect()
}

/// Attention-pooling span featurizer. The pooling scorer is `d -> d -> 1`.
#[derive(Debug, Clone)]
pub struct SpanEncoder {
    pub pool: Mlp,
    pub dim: usize,
}

impl SpanEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, group: GroupName, name: &str, d: usize, rng: &mut R) -> Self {
        SpanEncoder {
            pool: Mlp::new(store, group, &format!("{name}.pool"), &[d, d, 1], rng),
            dim: d,
        }
    }

    /// Per-token pooling logits for an `n x d` matrix; `n x 1`.
    pub fn scores(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let (_, d) = g.shape(h);
        if d != self.dim {
            return Err(SarlError::shape("span_scores", &[d], &[self.dim]));
        }
        self.pool.forward(g, store, h)
    }

    /// Pooled vector of a `k x d` slice, `1 x d`.
    pub fn attn_pool(&self, g: &mut Graph, store: &ParamStore, slice: Var) -> Result<Var> {
        let (k, _) = g.shape(slice);
        let sc = self.scores(g, store, slice)?;
        g.span_pool(slice, sc, &[(0, k - 1)])
    }

    /// `[h_s; h_e; attn_pool(H[s..=e])]` for each span, `spans.len() x 3d`.
    pub fn span_reprs(&self, g: &mut Graph, store: &ParamStore, h: Var, spans: &[Span]) -> Result<Var> {
        let sc = self.scores(g, store, h)?;
        span_reprs_with_scores(g, h, sc, spans)
    }

    pub fn span_repr(&self, g: &mut Graph, store: &ParamStore, h: Var, span: Span) -> Result<Var> {
        self.span_reprs(g, store, h, &[span])
    }
}

/// Span representations given precomputed pooling logits, so one scoring
/// pass can serve many spans of the same sentence.
pub fn span_reprs_with_scores(g: &mut Graph, h: Var, scores: Var, spans: &[Span]) -> Result<Var> {
    let (n, _) = g.shape(h);
    if spans.is_empty() {
        return Err(SarlError::Contract("span_reprs with no spans".into()));
    }
    for sp in spans {
        sp.check(n)?;
    }
    let starts: Vec<usize> = spans.iter().map(|sp| sp.s).collect();
    let ends: Vec<usize> = spans.iter().map(|sp| sp.e).collect();
    let pairs: Vec<(usize, usize)> = spans.iter().map(|sp| (sp.s, sp.e)).collect();
    let hs = g.gather_rows(h, &starts)?;
    let he = g.gather_rows(h, &ends)?;
    let pooled = g.span_pool(h, scores, &pairs)?;
    g.concat_cols(&[hs, he, pooled])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize) -> (ParamStore, SpanEncoder, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::default();
        let enc = SpanEncoder::new(&mut store, GroupName::Aa, "aa", d, &mut rng);
        (store, enc, rng)
    }

    fn random_h(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn candidate_examples() {
        assert!(enumerate_candidates(3, Span::new(0, 2), 15).is_empty());
        let got = enumerate_candidates(4, Span::new(1, 1), 1);
        let want = vec![Span::new(0, 0), Span::new(2, 2), Span::new(2, 3), Span::new(3, 3)];
        assert_eq!(got, want);
    }

    #[test]
    fn single_token_span_repeats_vector() {
        let (store, enc, mut rng) = setup(8);
        let mut g = Graph::new();
        let h = g.constant(random_h(&mut rng, 5, 8));
        let r = enc.span_repr(&mut g, &store, h, Span::new(2, 2)).unwrap();
        let v = g.value(r).data().to_vec();
        assert_eq!(v.len(), 24);
        let row = g.value(h).row(2).to_vec();
        for k in 0..3 {
            assert_eq!(&v[k * 8..(k + 1) * 8], row.as_slice());
        }
    }

    #[test]
    fn uniform_scores_give_mean() {
        let (mut store, enc, mut rng) = setup(4);
        for id in enc.pool.params() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let t = random_h(&mut rng, 3, 4);
        let x = g.constant(t.clone());
        let p = enc.attn_pool(&mut g, &store, x).unwrap();
        for j in 0..4 {
            let mean = (t.get(0, j) + t.get(1, j) + t.get(2, j)) / 3.0;
            assert!((g.value(p).data()[j] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_span_is_error() {
        let (store, enc, mut rng) = setup(4);
        let mut g = Graph::new();
        let h = g.constant(random_h(&mut rng, 3, 4));
        assert!(enc.span_repr(&mut g, &store, h, Span::new(1, 3)).is_err());
        assert!(enc.span_repr(&mut g, &store, h, Span::new(2, 1)).is_err());
    }

    #[test]
    fn identical_vectors_identical_reprs() {
        let (store, enc, _) = setup(4);
        let row = [0.3, -0.2, 0.9, 0.1];
        let data: Vec<f64> = (0..6).flat_map(|_| row).collect();
        let mut g = Graph::new();
        let h = g.constant(Tensor::matrix(6, 4, data).unwrap());
        let r = enc.span_reprs(&mut g, &store, h, &[Span::new(0, 1), Span::new(3, 4)]).unwrap();
        let t = g.value(r);
        assert_eq!(t.row(0), t.row(1));
    }
}
