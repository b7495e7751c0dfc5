//! Extraction of bracketed numeric matrices from free text.

use super::LlmError;
use crate::decision::ActionMatrix;

struct Scanner<'a> {
    s: &'a [u8],
    i: usize,
}

impl Scanner<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Option<f64> {
        self.ws();
        let start = self.i;
        while self.i < self.s.len() && matches!(self.s[self.i], b'0'..=b'9' | b'+' | b'-' | b'.' | b'e' | b'E') {
            self.i += 1;
        }
        let tok = std::str::from_utf8(&self.s[start..self.i]).ok()?;
        // `f64::from_str` accepts "inf" and "nan", which never reach here
        let v: f64 = tok.parse().ok()?;
        v.is_finite().then_some(v)
    }

    /// `[` n (`,` n)* `,`? `]`
    fn row(&mut self) -> Option<Vec<f64>> {
        if !self.eat(b'[') {
            return None;
        }
        let mut row = vec![self.number()?];
        loop {
            if self.eat(b']') {
                return Some(row);
            }
            if !self.eat(b',') {
                return None;
            }
            if self.eat(b']') {
                return Some(row);
            }
            row.push(self.number()?);
        }
    }

    /// `[` row (`,` row)* `,`? `]`
    fn matrix(&mut self) -> Option<Vec<Vec<f64>>> {
        if !self.eat(b'[') {
            return None;
        }
        let mut rows = vec![self.row()?];
        loop {
            if self.eat(b']') {
                return Some(rows);
            }
            if !self.eat(b',') {
                return None;
            }
            if self.eat(b']') {
                return Some(rows);
            }
            rows.push(self.row()?);
        }
    }
}

/// Every well-formed `[[..], ..]` matrix in `text`, in order, with the byte
/// offset just past it. Rows may be ragged.
pub fn matrices(text: &str) -> Vec<(Vec<Vec<f64>>, usize)> {
    let s = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        if s[i] == b'[' {
            let mut sc = Scanner { s, i };
            if let Some(m) = sc.matrix() {
                out.push((m, sc.i));
                i = sc.i;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// The first well-formed matrix in `text`, whatever its shape.
pub fn first_matrix(text: &str) -> Option<Vec<Vec<f64>>> {
    let s = text.as_bytes();
    (0..s.len()).filter(|&i| s[i] == b'[').find_map(|i| Scanner { s, i }.matrix())
}

/// The first N×2K matrix in `text`; columns `[0, K)` are ω, `[K, 2K)` are α.
pub fn parse_action_matrix(text: &str, n: usize, k: usize) -> Result<ActionMatrix, LlmError> {
    let mut wrong = None;
    for (m, _) in matrices(text) {
        let rect = m.iter().all(|r| r.len() == m[0].len());
        if rect && m.len() == n && m[0].len() == 2 * k {
            return Ok(ActionMatrix::from_rows(&m, k)?);
        }
        wrong.get_or_insert((m.len(), if rect { m[0].len() } else { 0 }));
    }
    match wrong {
        Some((got_rows, got_cols)) => Err(LlmError::Shape {
            rows: n,
            cols: 2 * k,
            got_rows,
            got_cols,
        }),
        None => Err(LlmError::Parse(snippet(text))),
    }
}

fn snippet(text: &str) -> String {
    let t: String = text.chars().take(80).collect();
    if t.len() < text.len() {
        format!("{t}...")
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn trivial_single_pair() {
        let a = parse_action_matrix("[[0.0, 0.0]]", 1, 1).unwrap();
        assert_eq!(a.offload_omega, array![[0.0]]);
        assert_eq!(a.alloc_alpha, array![[0.0]]);
    }

    #[test]
    fn tolerates_trailing_commas_and_fences() {
        let bare = parse_action_matrix("[[0.1, 0.2], [0.3, 0.4]]", 2, 1).unwrap();
        for t in [
            "[[0.1, 0.2,], [0.3, 0.4],]",
            "```\n[[0.1,0.2],\n [0.3,0.4]]\n```",
            "Sure! Here it is:\n```json\n[[0.1, 0.2], [0.3, 0.4]]\n```\nHope this helps.",
        ] {
            assert_eq!(parse_action_matrix(t, 2, 1).unwrap(), bare, "{t}");
        }
    }

    #[test]
    fn skips_matrices_of_the_wrong_shape() {
        let t = "state [[1, 2, 3]] action [[0.5, 0.1]]";
        let a = parse_action_matrix(t, 1, 1).unwrap();
        assert_eq!(a.offload_omega, array![[0.5]]);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_action_matrix("no numbers here", 1, 1), Err(LlmError::Parse(_))));
        assert!(matches!(parse_action_matrix("[[0.1, 0.2", 1, 1), Err(LlmError::Parse(_))));
        assert!(matches!(parse_action_matrix("[[0.1, x]]", 1, 1), Err(LlmError::Parse(_))));
        assert!(matches!(parse_action_matrix("[[nan, 0.2]]", 1, 1), Err(LlmError::Parse(_))));
        assert!(matches!(
            parse_action_matrix("[[0.1, 0.2, 0.3]]", 1, 1),
            Err(LlmError::Shape { got_cols: 3, .. })
        ));
        assert!(matches!(
            parse_action_matrix("[[0.1, 0.2], [0.3]]", 2, 1),
            Err(LlmError::Shape { .. })
        ));
    }

    #[test]
    fn matrices_reports_offsets() {
        let t = "[[1]] x [[2, 3]]";
        let m = matrices(t);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0], (vec![vec![1.0]], 5));
        assert_eq!(m[1].0, vec![vec![2.0, 3.0]]);
        assert_eq!(first_matrix("[ [ 4 ] ]"), Some(vec![vec![4.0]]));
    }
}
