use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recognizer::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorUnit {
    Character,
    Word,
}

/// Unit-cost insertions, deletions and substitutions.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over normalised text divided by the reference length.
/// Characters include the single spaces between words.
pub fn error_rate(hypothesis: &str, reference: &str, unit: ErrorUnit) -> Result<f64> {
    let (h, r) = (normalize_text(hypothesis), normalize_text(reference));
    let (d, n) = match unit {
        ErrorUnit::Character => {
            let (h, r): (Vec<char>, Vec<char>) = (h.chars().collect(), r.chars().collect());
            (levenshtein(&h, &r), r.len())
        }
        ErrorUnit::Word => {
            let (h, r): (Vec<&str>, Vec<&str>) = (h.split_whitespace().collect(), r.split_whitespace().collect());
            (levenshtein(&h, &r), r.len())
        }
    };
    if n == 0 {
        return Err(Error::InvalidArgument("error rate against an empty reference".into()));
    }
    Ok(d as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal edit count by exhaustive recursion.
    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                sub.min(brute(ra, b) + 1).min(brute(a, rb) + 1)
            }
        }
    }

    fn strings(max: usize) -> Vec<Vec<u8>> {
        let mut all = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max {
            let mut next = Vec::new();
            for s in &frontier {
                for c in [b'a', b'b', b'c'] {
                    let mut t: Vec<u8> = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            all.extend(next.iter().cloned());
            frontier = next;
        }
        all
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let all = strings(4);
        for a in all.iter().step_by(3) {
            for b in all.iter().step_by(5) {
                assert_eq!(levenshtein(a, b), brute(a, b));
            }
        }
    }

    #[test]
    fn documented_rates() {
        assert_eq!(error_rate("abc", "abc", ErrorUnit::Character).unwrap(), 0.0);
        assert!((error_rate("abc", "abd", ErrorUnit::Character).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(error_rate("", "abcde", ErrorUnit::Character).unwrap(), 1.0);
        assert_eq!(error_rate("the cat sat", "the dog sat", ErrorUnit::Word).unwrap(), 1.0 / 3.0);
        assert!(error_rate("a b c d", "x", ErrorUnit::Word).unwrap() > 1.0);
        assert!(error_rate("abc", "  ", ErrorUnit::Character).is_err());
    }
}
