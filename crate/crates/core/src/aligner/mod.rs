//! Aspect-opinion alignment: distilled mention scores, pairwise alignment
//! over candidate spans, the dummy opinion and the gated fusion step.

mod distance;
mod teacher;

pub use distance::{distance_bucket, midpoint_distance, DistanceProvider, TreeDistances, NUM_BUCKETS};
pub use teacher::{FileTeacher, LexiconMatch, LexiconTeacher, Teacher};

use rand::Rng;

use crate::antibias::SentimentLabel;
use crate::error::{Result, SarlError};
use crate::numerics::{kl_divergence, softmax, Graph, GroupName, Mlp, ParamId, ParamStore, Tensor, Var};

/// Three-way sentiment of a candidate mention, `3d -> d -> 3` in `ms`.
#[derive(Debug, Clone)]
pub struct MentionScorer {
    pub mlp: Mlp,
}

impl MentionScorer {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Self {
        MentionScorer {
            mlp: Mlp::new(store, GroupName::Ms, "ms.mlp", &[3 * d, d, 3], rng),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MentionOutput {
    /// `m x 3` distributions.
    pub probs: Var,
    /// `m x 1`, `1 - probs[:, Neutral]`.
    pub r: Var,
}

pub fn mention_scores(g: &mut Graph, store: &ParamStore, scorer: &MentionScorer, u: Var) -> Result<MentionOutput> {
    let (m, w) = g.shape(u);
    if w != scorer.mlp.in_dim() {
        return Err(SarlError::shape("mention_score", &[m, w], &[m, scorer.mlp.in_dim()]));
    }
    let logits = scorer.mlp.forward(g, store, u)?;
    let probs = softmax(g, logits);
    let neutral = g.slice_cols(probs, SentimentLabel::Neutral.index(), 1)?;
    let r = g.one_minus(neutral);
    Ok(MentionOutput { probs, r })
}

/// `sum_o KL(teacher_o || p_ms_o)`; the teacher is a constant.
pub fn loss_kl(g: &mut Graph, teacher: &Tensor, p_ms: Var) -> Result<Var> {
    kl_divergence(g, teacher, p_ms)
}

/// Learnable distance-bucket embeddings, `NUM_BUCKETS x z_dim` in `as`.
#[derive(Debug, Clone, Copy)]
pub struct PositionTable {
    pub table: ParamId,
    pub z_dim: usize,
}

impl PositionTable {
    pub fn new<R: Rng>(store: &mut ParamStore, z_dim: usize, rng: &mut R) -> Self {
        PositionTable {
            table: store.add_init(GroupName::As, "as.distance", NUM_BUCKETS, z_dim, rng),
            z_dim,
        }
    }
}

/// Rows `[c; u_o; c * u_o; z_o]` for every candidate, `m x (9d + z_dim)`.
pub fn pair_reprs(
    g: &mut Graph,
    store: &ParamStore,
    table: &PositionTable,
    c: Var,
    u: Var,
    buckets: &[usize],
) -> Result<Var> {
    let (cr, cw) = g.shape(c);
    let (m, uw) = g.shape(u);
    if cr != 1 || cw != uw {
        return Err(SarlError::shape("pair_repr", &[cr, cw], &[1, uw]));
    }
    if buckets.len() != m {
        return Err(SarlError::shape("pair_repr", &[m], &[buckets.len()]));
    }
    if let Some(&b) = buckets.iter().find(|&&b| b >= NUM_BUCKETS) {
        return Err(SarlError::IndexOutOfRange { index: b, len: NUM_BUCKETS });
    }
    let c_rep = g.gather_rows(c, &vec![0; m])?;
    let had = g.mul(c_rep, u)?;
    let tab = g.param(store, table.table);
    let z = g.gather_rows(tab, buckets)?;
    g.concat_cols(&[c_rep, u, had, z])
}

/// Pairwise alignment scorer `(9d + z_dim) -> d -> 1` in `as`.
#[derive(Debug, Clone)]
pub struct AlignmentScorer {
    pub mlp: Mlp,
}

impl AlignmentScorer {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, z_dim: usize, rng: &mut R) -> Self {
        AlignmentScorer {
            mlp: Mlp::new(store, GroupName::As, "as.mlp", &[9 * d + z_dim, d, 1], rng),
        }
    }
}

/// Raw alignment logits as a `1 x m` row.
pub fn alignment_logits(g: &mut Graph, store: &ParamStore, scorer: &AlignmentScorer, q: Var) -> Result<Var> {
    let col = scorer.mlp.forward(g, store, q)?;
    Ok(g.transpose(col))
}

#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    /// `softmax(logits)`, `1 x m`.
    pub a: Var,
    /// `a * r`, not renormalized, `1 x m`.
    pub f: Var,
}

/// `a = softmax(logits)` and `f = a * r` for `1 x m` rows.
pub fn alignment_scores(g: &mut Graph, logits: Var, r_row: Var) -> Result<Alignment> {
    let a = softmax(g, logits);
    let f = g.mul(a, r_row)?;
    Ok(Alignment { a, f })
}

/// `delta * sum(a * (1 - r))`, `1 x 1`.
pub fn dummy_score(g: &mut Graph, a: Var, r_row: Var, delta: f64) -> Result<Var> {
    let rest = g.one_minus(r_row);
    let w = g.mul(a, rest)?;
    let s = g.sum(w);
    Ok(g.scale(s, delta))
}

/// Gate over `[c; u]`, `6d -> d -> 3d` in `gm`.
#[derive(Debug, Clone)]
pub struct Gate {
    pub mlp: Mlp,
}

impl Gate {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Self {
        Gate {
            mlp: Mlp::new(store, GroupName::Gm, "gm.mlp", &[6 * d, d, 3 * d], rng),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integration {
    /// Aligned opinion representation `[U, c] f`, `1 x 3d`.
    pub opinion: Var,
    pub gate: Var,
    pub v: Var,
}

/// Gated fusion of the aspect with its aligned opinion.
///
/// `u_mat` holds the `m` candidate rows (absent when `m = 0`); `f` is the
/// `1 x (m + 1)` score row whose last entry weights `c` itself.
pub fn integrate_opinion(
    g: &mut Graph,
    store: &ParamStore,
    gate: &Gate,
    c: Var,
    u_mat: Option<Var>,
    f: Var,
) -> Result<Integration> {
    let stacked = match u_mat {
        Some(u) => g.concat_rows(&[u, c])?,
        None => c,
    };
    let (rows, _) = g.shape(stacked);
    let (fr, fc) = g.shape(f);
    if fr != 1 || fc != rows {
        return Err(SarlError::shape("integrate_opinion", &[fr, fc], &[1, rows]));
    }
    let opinion = g.matmul(f, stacked)?;
    let joint = g.concat_cols(&[c, opinion])?;
    let logits = gate.mlp.forward(g, store, joint)?;
    let gv = g.sigmoid(logits);
    integrate_with_gate(g, c, opinion, gv)
}

/// `v = g * c + (1 - g) * u`.
pub fn integrate_with_gate(g: &mut Graph, c: Var, opinion: Var, gate: Var) -> Result<Integration> {
    let diff = g.sub(c, opinion)?;
    let gd = g.mul(gate, diff)?;
    let v = g.add(opinion, gd)?;
    Ok(Integration { opinion, gate, v })
}

/// Plain values of the final score row and of the pre-dummy distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyScores {
    /// Length `m + 1`; the last entry is the dummy score.
    pub f: Vec<f64>,
    /// Length `m`.
    pub a: Vec<f64>,
    /// Length `m`.
    pub r: Vec<f64>,
    /// Raw alignment logits, length `m`.
    pub logits: Vec<f64>,
    pub delta: f64,
}

impl DependencyScores {
    /// The dummy-only row used when a sentence offers no candidate.
    pub fn dummy_only() -> Self {
        DependencyScores {
            f: vec![1.0],
            a: vec![],
            r: vec![],
            logits: vec![],
            delta: 0.0,
        }
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn dummy(&self) -> f64 {
        self.f[self.f.len() - 1]
    }

    /// `|f_d - delta (1 - sum_{o<m} f_o)|`, zero up to rounding.
    pub fn dummy_identity_error(&self) -> f64 {
        if self.m() == 0 {
            return (self.dummy() - 1.0).abs();
        }
        let pre: f64 = self.f[..self.m()].iter().sum();
        (self.dummy() - self.delta * (1.0 - pre)).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::vector(v.to_vec()).unwrap())
    }

    #[test]
    fn mention_score_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let sc = MentionScorer::new(&mut store, 4, &mut rng);
        for id in sc.mlp.params() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let u = g.constant(Tensor::filled(3, 12, 0.5));
        let out = mention_scores(&mut g, &store, &sc, u).unwrap();
        for &r in g.value(out.r).data() {
            assert!((r - 2.0 / 3.0).abs() < 1e-15);
        }
        let bad = g.constant(Tensor::filled(1, 8, 0.0));
        assert!(mention_scores(&mut g, &store, &sc, bad).is_err());
    }

    #[test]
    fn kl_single_candidate_uniform() {
        let mut g = Graph::new();
        let q = row(&mut g, &[1.0 / 3.0; 3]);
        let t = Tensor::vector(vec![1.0, 0.0, 0.0]).unwrap();
        let l = loss_kl(&mut g, &t, q).unwrap();
        assert!((g.scalar(l).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pair_repr_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let table = PositionTable::new(&mut store, 8, &mut rng);
        let mut g = Graph::new();
        let cv: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.4).collect();
        let c = row(&mut g, &cv);
        let u = g.constant(Tensor::matrix(2, 12, [cv.clone(), cv.clone()].concat()).unwrap());
        let q = pair_reprs(&mut g, &store, &table, c, u, &[1, 6]).unwrap();
        assert_eq!(g.shape(q), (2, 44));
        let t = g.value(q);
        for k in 0..12 {
            assert_eq!(t.get(0, 24 + k), cv[k] * cv[k]);
        }
        assert_eq!(t.row(0)[..36], t.row(1)[..36]);
        assert_ne!(t.row(0)[36..], t.row(1)[36..]);
        assert!(matches!(
            pair_reprs(&mut g, &store, &table, c, u, &[1, 8]),
            Err(SarlError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn alignment_and_dummy_examples() {
        let mut g = Graph::new();
        let logits = row(&mut g, &[3f64.ln(), 0.0]);
        let r = row(&mut g, &[0.4, 1.0]);
        let al = alignment_scores(&mut g, logits, r).unwrap();
        let f = g.value(al.f).data().to_vec();
        assert!((f[0] - 0.30).abs() < 1e-12 && (f[1] - 0.25).abs() < 1e-12);
        let fd = dummy_score(&mut g, al.a, r, 0.5).unwrap();
        assert!((g.scalar(fd).unwrap() - 0.225).abs() < 1e-12);

        let ones = row(&mut g, &[1.0, 1.0]);
        let al = alignment_scores(&mut g, logits, ones).unwrap();
        assert!((g.value(al.f).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let fd = dummy_score(&mut g, al.a, ones, 0.5).unwrap();
        assert_eq!(g.scalar(fd).unwrap(), 0.0);

        let zeros = row(&mut g, &[0.0, 0.0]);
        let al = alignment_scores(&mut g, logits, zeros).unwrap();
        assert!(g.value(al.f).data().iter().all(|&x| x == 0.0));
        let fd = dummy_score(&mut g, al.a, zeros, 0.5).unwrap();
        assert!((g.scalar(fd).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gate_examples() {
        let mut g = Graph::new();
        let c = row(&mut g, &[0.0, 0.0, 0.0]);
        let u = row(&mut g, &[1.0, 2.0, 3.0]);
        let f = row(&mut g, &[1.0, 0.0]);
        let stacked = g.concat_rows(&[u, c]).unwrap();
        let op = g.matmul(f, stacked).unwrap();
        let half = row(&mut g, &[0.5; 3]);
        let out = integrate_with_gate(&mut g, c, op, half).unwrap();
        assert_eq!(g.value(out.v).data(), &[0.5, 1.0, 1.5]);
        let ones = row(&mut g, &[1.0; 3]);
        let out = integrate_with_gate(&mut g, c, op, ones).unwrap();
        assert_eq!(g.value(out.v).data(), g.value(c).data());
    }

    #[test]
    fn integrate_checks_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let gate = Gate::new(&mut store, 1, &mut rng);
        let mut g = Graph::new();
        let c = row(&mut g, &[0.1, 0.2, 0.3]);
        let u = g.constant(Tensor::filled(2, 3, 1.0));
        let f = row(&mut g, &[0.5, 0.5]);
        assert!(integrate_opinion(&mut g, &store, &gate, c, Some(u), f).is_err());
        let f = row(&mut g, &[0.2, 0.3, 0.5]);
        let out = integrate_opinion(&mut g, &store, &gate, c, Some(u), f).unwrap();
        assert_eq!(g.shape(out.v), (1, 3));
        let dummy = row(&mut g, &[1.0]);
        let out = integrate_opinion(&mut g, &store, &gate, c, None, dummy).unwrap();
        assert_eq!(g.value(out.v).data(), g.value(c).data());
    }
}
