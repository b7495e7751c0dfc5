//! Prompt rendering and case selection under a token budget.

use serde::{Deserialize, Serialize};

use super::cases::{CaseRecord, CaseSet};
use super::LlmError;

pub const TASK_DESCRIPTION: &str = "You are a mathematical tool to predict some models. \
You need to predict actions for a given state. \
The following is a dataset you can use for prediction. \
You need to predict the action matrix for the last given state matrix based on the dataset. \
Please output the action matrix directly without any other information.";

pub const DATASET_MARKER: &str = "(data set)";
pub const INSTRUCTION: &str = "Please output the action matrix directly without any other information.";
pub const STATE_LABEL: &str = "state: ";
pub const ACTION_LABEL: &str = "action: ";

pub const SIGNIFICANT_DIGITS: usize = 4;

/// One token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// `x` rounded to `sig` significant digits, in plain decimal notation without
/// trailing zeros.
pub fn format_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = sig as i32 - 1 - mag;
    let s = if decimals > 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        let unit = 10f64.powi(-decimals);
        format!("{:.0}", (x / unit).round() * unit)
    };
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Bracketed rows, one per line, in the layout the model is asked to answer in.
/// `sig = None` writes every value at full round-trip precision.
pub fn render_matrix(rows: &[Vec<f64>], sig: Option<usize>) -> String {
    let fmt = |x: f64| match sig {
        Some(d) => format_sig(x, d),
        None => x.to_string(),
    };
    let body: Vec<String> = rows
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|&x| fmt(x)).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", body.join(",\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_description: String,
    pub selected_cases: Vec<CaseRecord>,
    pub current_state: String,
    pub token_estimate: usize,
    /// The full prompt sent to the backend.
    pub text: String,
}

fn render_case(c: &CaseRecord, include_outcome: bool) -> String {
    let mut s = format!(
        "{STATE_LABEL}{}\n{ACTION_LABEL}{}\n",
        render_matrix(&c.state, Some(SIGNIFICANT_DIGITS)),
        render_matrix(&c.action, Some(SIGNIFICANT_DIGITS))
    );
    if include_outcome {
        if let Some(o) = &c.outcome {
            s.push_str(&format!(
                "outcome: qos {}, energy {}, delay {}\n",
                format_sig(o.qos_system, SIGNIFICANT_DIGITS),
                format_sig(o.e_system, SIGNIFICANT_DIGITS),
                format_sig(o.mean_delay, SIGNIFICANT_DIGITS)
            ));
        }
    }
    s
}

/// Nearest cases first, taken while their rendered size fits in `budget`
/// tokens. Ties go to the most recently added case.
pub fn select_cases(set: &CaseSet, state: &[Vec<f64>], budget: usize) -> Vec<CaseRecord> {
    select_with(set, state, budget, false)
}

fn select_with(set: &CaseSet, state: &[Vec<f64>], budget: usize, outcomes: bool) -> Vec<CaseRecord> {
    let mut used = 0;
    let mut out = Vec::new();
    for (i, _) in set.ranked(state) {
        let c = set.get(i).expect("ranked index");
        let cost = estimate_tokens(&render_case(c, outcomes)) + 1;
        if used + cost > budget {
            break;
        }
        used += cost;
        out.push(c.clone());
    }
    out
}

/// Header, selected cases, query state, instruction. Fails only when the
/// prompt without any case already exceeds `budget`.
pub fn build_prompt(set: &CaseSet, state: &[Vec<f64>], budget: usize, include_outcomes: bool) -> Result<PromptBundle, LlmError> {
    let current_state = render_matrix(state, Some(SIGNIFICANT_DIGITS));
    let head = format!("{TASK_DESCRIPTION}\n{DATASET_MARKER}\n");
    let tail = format!("\n{STATE_LABEL}{current_state}\n{ACTION_LABEL}\n\n{INSTRUCTION}\n");
    let fixed = estimate_tokens(&head) + estimate_tokens(&tail);
    if fixed > budget {
        return Err(LlmError::Budget { needed: fixed, budget });
    }
    let selected = select_with(set, state, budget - fixed, include_outcomes);
    let cases: Vec<String> = selected.iter().map(|c| render_case(c, include_outcomes)).collect();
    let text = format!("{head}{}{tail}", cases.join("\n"));
    Ok(PromptBundle {
        task_description: TASK_DESCRIPTION.into(),
        selected_cases: selected,
        current_state,
        token_estimate: estimate_tokens(&text),
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::parse::parse_action_matrix;

    fn case(s: f64, ts: u64) -> CaseRecord {
        CaseRecord {
            state: vec![vec![s, 0.25], vec![0.5, s]],
            action: vec![vec![0.091, 0.038], vec![0.1, 0.0325]],
            outcome: None,
            ts,
        }
    }

    #[test]
    fn four_significant_digits() {
        assert_eq!(format_sig(0.091, 4), "0.091");
        assert_eq!(format_sig(0.0325, 4), "0.0325");
        assert_eq!(format_sig(1.0 / 3.0, 4), "0.3333");
        assert_eq!(format_sig(0.99996, 4), "1");
        assert_eq!(format_sig(123456.0, 4), "123500");
        assert_eq!(format_sig(-0.000123456, 4), "-0.0001235");
        assert_eq!(format_sig(0.0, 4), "0");
        assert_eq!(format_sig(1.0, 4), "1");
    }

    #[test]
    fn response_box_row_format() {
        let rows = vec![vec![0.091, 0.196, 0.271, 0.038, 0.038, 0.038]];
        assert_eq!(render_matrix(&rows, Some(4)), "[[0.091, 0.196, 0.271, 0.038, 0.038, 0.038]]");
    }

    #[test]
    fn zero_cases_gives_header_and_state() {
        let p = build_prompt(&CaseSet::new(), &[vec![0.5, 0.25]], 6000, false).unwrap();
        assert!(p.text.starts_with(TASK_DESCRIPTION));
        assert!(p.text.contains("state: [[0.5, 0.25]]"));
        assert_eq!(p.text.matches(STATE_LABEL).count(), 1);
        assert!(p.text.trim_end().ends_with(INSTRUCTION));
        assert!(p.selected_cases.is_empty());
    }

    #[test]
    fn one_case_is_rendered_as_bracketed_rows() {
        let mut set = CaseSet::new();
        set.push(case(0.1, 0));
        let p = build_prompt(&set, &[vec![0.1, 0.25], vec![0.5, 0.1]], 6000, false).unwrap();
        assert!(p.text.contains("action: [[0.091, 0.038],\n[0.1, 0.0325]]"));
        assert_eq!(p.selected_cases.len(), 1);
    }

    #[test]
    fn prompt_is_deterministic_and_within_budget() {
        let mut set = CaseSet::new();
        for i in 0..50 {
            set.push(case(i as f64 / 50.0, i));
        }
        let st = vec![vec![0.3, 0.25], vec![0.5, 0.3]];
        let a = build_prompt(&set, &st, 300, false).unwrap();
        let b = build_prompt(&set, &st, 300, false).unwrap();
        assert_eq!(a, b);
        assert!(a.token_estimate <= 300);
        assert!(!a.selected_cases.is_empty() && a.selected_cases.len() < 50);
        assert_eq!(a.selected_cases[0].ts, 15);
    }

    #[test]
    fn budget_too_small_for_header() {
        let e = build_prompt(&CaseSet::new(), &[vec![0.5]], 10, false).unwrap_err();
        assert!(matches!(e, LlmError::Budget { budget: 10, .. }));
    }

    #[test]
    fn select_all_when_budget_allows() {
        let mut set = CaseSet::new();
        for (i, s) in [0.9, 0.1, 0.5].into_iter().enumerate() {
            set.push(case(s, i as u64));
        }
        let got: Vec<u64> = select_cases(&set, &[vec![0.0, 0.25], vec![0.5, 0.0]], 1 << 20)
            .iter()
            .map(|c| c.ts)
            .collect();
        assert_eq!(got, vec![1, 2, 0]);
    }

    #[test]
    fn rendered_action_parses_back() {
        let rows = vec![vec![0.12345, 0.5, 0.0049999, 0.1], vec![1.0, 0.0, 0.3333333, 0.02]];
        let a = parse_action_matrix(&render_matrix(&rows, Some(4)), 2, 2).unwrap();
        for (r, back) in rows.iter().zip(a.to_rows()) {
            for (x, y) in r.iter().zip(back) {
                assert!((x - y).abs() <= 5e-5);
            }
        }
    }
}
