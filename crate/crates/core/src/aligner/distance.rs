use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Result, SarlError};
use crate::spans::Span;

pub const NUM_BUCKETS: usize = 8;

/// Bucket of a non-negative distance: 0, 1, 2, 3, 4, 5-7, 8-15, 16+.
pub fn distance_bucket(dist: usize) -> usize {
    match dist {
        0..=4 => dist,
        5..=7 => 5,
        8..=15 => 6,
        _ => 7,
    }
}

/// Linear token distance between span midpoints, rounded down.
pub fn midpoint_distance(a: Span, b: Span) -> usize {
    let (x, y) = (a.s + a.e, b.s + b.e);
    x.abs_diff(y) / 2
}

/// Pairwise token distances for one corpus, e.g. from a dependency parse.
///
/// TSV lines `sentence_id<TAB>i<TAB>j<TAB>dist`; lookups are symmetric and
/// `dist(i, i) = 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreeDistances {
    entries: HashMap<String, HashMap<(usize, usize), usize>>,
}

impl TreeDistances {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sentence_id: &str, i: usize, j: usize, dist: usize) {
        self.entries
            .entry(sentence_id.to_string())
            .or_default()
            .insert((i.min(j), i.max(j)), dist);
    }

    pub fn token_distance(&self, sentence_id: &str, i: usize, j: usize) -> Result<usize> {
        if i == j {
            return Ok(0);
        }
        self.entries
            .get(sentence_id)
            .and_then(|m| m.get(&(i.min(j), i.max(j))))
            .copied()
            .ok_or_else(|| SarlError::NotFound(format!("no tree distance for ({sentence_id}, {i}, {j})")))
    }

    /// Minimum token-pair distance between two spans.
    pub fn span_distance(&self, sentence_id: &str, a: Span, b: Span) -> Result<usize> {
        let mut best = usize::MAX;
        for i in a.s..=a.e {
            for j in b.s..=b.e {
                best = best.min(self.token_distance(sentence_id, i, j)?);
            }
        }
        Ok(best)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut t = TreeDistances::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SarlError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad integer `{s}`")));
            t.insert(f[0], num(f[1])?, num(f[2])?, num(f[3])?);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SarlError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Source of aspect-to-candidate distances.
#[derive(Debug, Clone, Default)]
pub enum DistanceProvider {
    #[default]
    Linear,
    Tree(TreeDistances),
}

impl DistanceProvider {
    pub fn distance(&self, sentence_id: &str, aspect: Span, candidate: Span) -> Result<usize> {
        match self {
            DistanceProvider::Linear => Ok(midpoint_distance(aspect, candidate)),
            DistanceProvider::Tree(t) => t.span_distance(sentence_id, aspect, candidate),
        }
    }

    pub fn bucket(&self, sentence_id: &str, aspect: Span, candidate: Span) -> Result<usize> {
        self.distance(sentence_id, aspect, candidate).map(distance_bucket)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_edges() {
        let want = [(0, 0), (4, 4), (5, 5), (7, 5), (8, 6), (15, 6), (16, 7), (1000, 7)];
        for (d, b) in want {
            assert_eq!(distance_bucket(d), b, "distance {d}");
        }
    }

    #[test]
    fn midpoints() {
        assert_eq!(midpoint_distance(Span::new(1, 1), Span::new(3, 3)), 2);
        assert_eq!(midpoint_distance(Span::new(0, 1), Span::new(3, 3)), 2);
        assert_eq!(midpoint_distance(Span::new(5, 6), Span::new(0, 0)), 5);
    }

    #[test]
    fn tree_distance_file() {
        let t = TreeDistances::parse("s\t0\t2\t1\ns\t1\t2\t3\n", "mem").unwrap();
        assert_eq!(t.token_distance("s", 2, 0).unwrap(), 1);
        assert_eq!(t.span_distance("s", Span::new(0, 1), Span::new(2, 2)).unwrap(), 1);
        assert!(t.token_distance("s", 0, 1).is_err());
        assert!(TreeDistances::parse("s\t0\t2\n", "mem").is_err());
    }
}
