//! Five-symbol text pattern alphabet and per-line pattern strings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternLabel {
    /// `?`: only non-alphanumeric characters.
    #[serde(rename = "?")]
    Special,
    /// `W`: only letters.
    #[serde(rename = "W")]
    Word,
    /// `N`: only decimal digits.
    #[serde(rename = "N")]
    Number,
    /// `F`: digit groups joined by `,` or `.`.
    #[serde(rename = "F")]
    Fraction,
    /// `A`: anything mixed.
    #[serde(rename = "A")]
    Mixed,
}

impl PatternLabel {
    pub const ALL: [PatternLabel; 5] = [
        PatternLabel::Special,
        PatternLabel::Word,
        PatternLabel::Number,
        PatternLabel::Fraction,
        PatternLabel::Mixed,
    ];

    pub fn symbol(self) -> char {
        match self {
            PatternLabel::Special => '?',
            PatternLabel::Word => 'W',
            PatternLabel::Number => 'N',
            PatternLabel::Fraction => 'F',
            PatternLabel::Mixed => 'A',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.symbol() == c)
    }

    /// Position in [`PatternLabel::ALL`], used for one-hot encoding.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatternError {
    #[error("cannot classify empty text")]
    EmptyText,
}

/// Classify one token's text. Checks run in the order `?`, `W`, `N`, `F`,
/// falling through to `A`.
pub fn classify_text_pattern(text: &str) -> Result<PatternLabel, PatternError> {
    if text.is_empty() {
        return Err(PatternError::EmptyText);
    }
    let label = if text.chars().all(|c| !c.is_alphanumeric()) {
        PatternLabel::Special
    } else if text.chars().all(char::is_alphabetic) {
        PatternLabel::Word
    } else if text.chars().all(|c| c.is_ascii_digit()) {
        PatternLabel::Number
    } else if is_fractional(text) {
        PatternLabel::Fraction
    } else {
        PatternLabel::Mixed
    };
    Ok(label)
}

/// `digits ([,.] digits)+`
fn is_fractional(text: &str) -> bool {
    let mut groups = 0usize;
    for group in text.split([',', '.']) {
        if group.is_empty() || !group.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
        groups += 1;
    }
    groups >= 2
}

/// Space-joined pattern symbols for the tokens of one line, in order.
pub fn line_block_regex(line_tokens: &[Token]) -> String {
    pattern_string(line_tokens.iter().map(|t| t.text.as_str()))
}

/// Same as [`line_block_regex`] over bare strings. Empty strings are
/// not expected (tokens never carry empty text) and are rendered as `?`.
pub fn pattern_string<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for text in texts {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push(
            classify_text_pattern(text)
                .map(PatternLabel::symbol)
                .unwrap_or('?'),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(s: &str) -> char {
        classify_text_pattern(s).unwrap().symbol()
    }

    #[test]
    fn worked_invoice_line() {
        let line = "Oktober - Dezember 2019 1,000 ST 70,63 70,63";
        assert_eq!(pattern_string(line.split(' ')), "W ? W N F W F F");
        assert_eq!(sym("Oktober"), 'W');
        assert_eq!(sym("-"), '?');
        assert_eq!(sym("2019"), 'N');
        assert_eq!(sym("1,000"), 'F');
        assert_eq!(sym("70,63"), 'F');
    }

    #[test]
    fn mixed_and_edge_cases() {
        assert_eq!(sym("A4-Nr7"), 'A');
        assert_eq!(sym("70,63€"), 'A');
        assert_eq!(sym("Größe"), 'W');
        assert_eq!(sym("1.234,56"), 'F');
        assert_eq!(sym("12.10.2019"), 'F');
        assert_eq!(sym(",5"), 'A');
        assert_eq!(sym("5,"), 'A');
        assert_eq!(sym("1,,2"), 'A');
        assert_eq!(sym("%"), '?');
        assert_eq!(sym("19%"), 'A');
        assert_eq!(classify_text_pattern(""), Err(PatternError::EmptyText));
    }

    #[test]
    fn line_cases() {
        assert_eq!(pattern_string(["Summe"]), "W");
        assert_eq!(line_block_regex(&[]), "");
    }

    proptest! {
        #[test]
        fn total_and_disjoint(s in "\\PC{1,12}") {
            let label = classify_text_pattern(&s).unwrap();
            let number = s.chars().all(|c| c.is_ascii_digit());
            let frac = is_fractional(&s);
            prop_assert!(!(number && frac));
            if label == PatternLabel::Mixed {
                prop_assert!(!s.chars().all(|c| !c.is_alphanumeric()));
                prop_assert!(!s.chars().all(char::is_alphabetic));
                prop_assert!(!number && !frac);
            }
        }

        #[test]
        fn symbol_count_matches_tokens(words in proptest::collection::vec("[A-Za-z0-9,.\\-]{1,6}", 0..10)) {
            let s = pattern_string(words.iter().map(String::as_str));
            let n = if s.is_empty() { 0 } else { s.split(' ').count() };
            prop_assert_eq!(n, words.len());
        }
    }
}
