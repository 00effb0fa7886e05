use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::encoder::ContextMatrix;
use crate::error::{Result, SarlError};
use crate::numerics::{Graph, Tensor, Var};

/// Precomputed context matrices keyed by sentence id.
///
/// File format: one line per sentence, tab separated:
/// `id  n  d  v_0 v_1 ...` where the `d*n` values are the `d x n` matrix in
/// row-major order (dimension-major). Values use shortest round-trip
/// formatting so save/load is bit-exact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureEmbeddings {
    dim: Option<usize>,
    entries: BTreeMap<String, ContextMatrix>,
}

impl FixtureEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, id: impl Into<String>, h: ContextMatrix) -> Result<()> {
        match self.dim {
            Some(d) if d != h.dim() => {
                return Err(SarlError::shape("fixture_insert", &[d], &[h.dim()]));
            }
            _ => self.dim = Some(h.dim()),
        }
        self.entries.insert(id.into(), h);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&ContextMatrix> {
        self.entries
            .get(id)
            .ok_or_else(|| SarlError::NotFound(format!("no fixture embeddings for sentence `{id}`")))
    }

    /// Stored matrix as an `n x d` graph constant; no gradient reaches it.
    pub fn to_graph(&self, g: &mut Graph, id: &str) -> Result<Var> {
        let h = self.get(id)?;
        let (d, n) = h.shape();
        Ok(g.constant(Tensor::matrix(n, d, h.token_major().to_vec())?))
    }

    /// Fails when the stored dimension differs from `expected`.
    pub fn check_dim(&self, expected: usize) -> Result<()> {
        match self.dim {
            Some(d) if d != expected => Err(SarlError::shape("fixture_dim", &[expected], &[d])),
            _ => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, h) in &self.entries {
            let (d, n) = h.shape();
            out.push_str(&format!("{id}\t{n}\t{d}"));
            for i in 0..d {
                for j in 0..n {
                    out.push('\t');
                    out.push_str(&format!("{}", h.get(i, j)));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut fx = FixtureEmbeddings::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| SarlError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(err("expected id, n, d and values".into()));
            }
            let n: usize = fields[1].parse().map_err(|_| err(format!("bad n `{}`", fields[1])))?;
            let d: usize = fields[2].parse().map_err(|_| err(format!("bad d `{}`", fields[2])))?;
            let vals = &fields[3..];
            if n == 0 || d == 0 || vals.len() != n * d {
                return Err(err(format!("expected {} values for d={d}, n={n}, found {}", n * d, vals.len())));
            }
            let mut token_major = vec![0.0; n * d];
            for (k, v) in vals.iter().enumerate() {
                let x: f64 = v.parse().map_err(|_| err(format!("bad value `{v}`")))?;
                let (i, j) = (k / n, k % n);
                token_major[j * d + i] = x;
            }
            let h = ContextMatrix::from_token_major(d, n, token_major)?;
            if fx.entries.contains_key(fields[0]) {
                return Err(err(format!("duplicate sentence id `{}`", fields[0])));
            }
            fx.insert(fields[0], h).map_err(|e| err(e.to_string()))?;
        }
        Ok(fx)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SarlError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| SarlError::io(path, e))
    }
}
