use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::features::FeatureRow;
use crate::textpattern::PatternLabel;

/// Numeric feature columns copied straight into the vector, in order.
pub const NUMERIC_COLUMNS: [&str; 24] = [
    "BlockNo",
    "BlockCharCount",
    "LineWordCount",
    "BlockWidth",
    "LineCharCount",
    "IsFirstInt",
    "BlockWordCount",
    "PageWidth",
    "PageHeight",
    "LeftAlignmentCount",
    "RightAlignmentCount",
    "Width",
    "Height",
    "CharCount",
    "Left",
    "Top",
    "LeftMargin",
    "TopMargin",
    "FirstQuarter",
    "SecondQuarter",
    "ThirdQuarter",
    "FourthQuarter",
    "LineNo",
    "PageNo",
];

/// Number of line-pattern slots kept from training data.
pub const VOCAB_SIZE: usize = 64;

/// Numeric columns, one-hot text pattern, line-pattern slots and one
/// out-of-vocabulary slot.
pub const ENCODED_DIM: usize = NUMERIC_COLUMNS.len() + PatternLabel::ALL.len() + VOCAB_SIZE + 1;

const PATTERN_OFFSET: usize = NUMERIC_COLUMNS.len();
const VOCAB_OFFSET: usize = PATTERN_OFFSET + PatternLabel::ALL.len();
const OOV_SLOT: usize = VOCAB_OFFSET + VOCAB_SIZE;

/// Most frequent `LineBlockRegex` strings of the training split.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatternVocab {
    pub patterns: Vec<String>,
}

impl PatternVocab {
    pub fn index_of(&self, pattern: &str) -> Option<usize> {
        self.patterns.iter().position(|p| p == pattern)
    }
}

/// Frequency-ranked vocabulary; ties break lexicographically so the result
/// does not depend on row order.
pub fn build_vocab<'a>(train_rows: impl IntoIterator<Item = &'a FeatureRow>) -> PatternVocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for row in train_rows {
        *counts.entry(row.line_block_regex.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    PatternVocab {
        patterns: ranked
            .into_iter()
            .take(VOCAB_SIZE)
            .map(|(p, _)| p.to_string())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub features: Vec<f64>,
    pub label: u8,
    pub doc_id: String,
    pub token_index: usize,
}

pub fn encode(row: &FeatureRow, vocab: &PatternVocab) -> Result<EncodedExample, DatasetError> {
    if row.label > 1 {
        return Err(DatasetError::SchemaMismatch(format!(
            "{}#{}: label {} is not binary",
            row.doc_id, row.token_index, row.label
        )));
    }
    let quarters = row.quarter_flags();
    if quarters.iter().map(|&q| u32::from(q)).sum::<u32>() != 1 || quarters.iter().any(|&q| q > 1) {
        return Err(DatasetError::SchemaMismatch(format!(
            "{}#{}: quarter flags {quarters:?} are not one-hot",
            row.doc_id, row.token_index
        )));
    }
    if vocab.patterns.len() > VOCAB_SIZE {
        return Err(DatasetError::SchemaMismatch(format!(
            "vocabulary holds {} patterns, at most {VOCAB_SIZE} allowed",
            vocab.patterns.len()
        )));
    }

    let mut x = vec![0.0; ENCODED_DIM];
    let numeric = [
        f64::from(row.block_no),
        f64::from(row.block_char_count),
        f64::from(row.line_word_count),
        f64::from(row.block_width),
        f64::from(row.line_char_count),
        f64::from(row.is_first_int),
        f64::from(row.block_word_count),
        f64::from(row.page_width),
        f64::from(row.page_height),
        f64::from(row.left_alignment_count),
        f64::from(row.right_alignment_count),
        f64::from(row.width),
        f64::from(row.height),
        f64::from(row.char_count),
        f64::from(row.left),
        f64::from(row.top),
        row.left_margin,
        row.top_margin,
        f64::from(quarters[0]),
        f64::from(quarters[1]),
        f64::from(quarters[2]),
        f64::from(quarters[3]),
        f64::from(row.line_no),
        f64::from(row.page_no),
    ];
    if let Some(bad) = numeric.iter().position(|v| !v.is_finite()) {
        return Err(DatasetError::SchemaMismatch(format!(
            "{}#{}: {} is not finite",
            row.doc_id, row.token_index, NUMERIC_COLUMNS[bad]
        )));
    }
    x[..NUMERIC_COLUMNS.len()].copy_from_slice(&numeric);
    x[PATTERN_OFFSET + row.text_pattern.index()] = 1.0;
    match vocab.index_of(&row.line_block_regex) {
        Some(i) => x[VOCAB_OFFSET + i] = 1.0,
        None => x[OOV_SLOT] = 1.0,
    }

    Ok(EncodedExample {
        features: x,
        label: row.label,
        doc_id: row.doc_id.clone(),
        token_index: row.token_index,
    })
}

pub fn encode_rows<'a>(
    rows: impl IntoIterator<Item = &'a FeatureRow>,
    vocab: &PatternVocab,
) -> Result<Vec<EncodedExample>, DatasetError> {
    rows.into_iter().map(|r| encode(r, vocab)).collect()
}

/// A name for every dimension of an encoded vector.
pub fn encoded_column_names(vocab: &PatternVocab) -> Vec<String> {
    let mut names: Vec<String> = NUMERIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    names.extend(PatternLabel::ALL.iter().map(|l| format!("TextPattern={l}")));
    for slot in 0..VOCAB_SIZE {
        names.push(match vocab.patterns.get(slot) {
            Some(p) => format!("LineBlockRegex={p}"),
            None => format!("LineBlockRegex#{slot}"),
        });
    }
    names.push("LineBlockRegex=<oov>".to_string());
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{featurize_document, AlignmentTolerance};
    use crate::ingest::parse_tsv_str;
    use proptest::prelude::*;

    fn rows() -> Vec<FeatureRow> {
        let tsv = "level\tpage_num\tblock_num\tpar_num\tline_num\tword_num\tleft\ttop\twidth\theight\tconf\ttext\n\
            1\t1\t0\t0\t0\t0\t0\t0\t500\t1000\t-1\t\n\
            5\t1\t1\t1\t1\t1\t50\t100\t40\t10\t90\t2019\n\
            5\t1\t1\t1\t1\t2\t100\t100\t60\t10\t90\t70,63\n\
            5\t1\t2\t1\t1\t1\t50\t800\t40\t10\t90\tSumme\n";
        featurize_document(&parse_tsv_str("d", tsv).unwrap(), AlignmentTolerance::Auto)
    }

    #[test]
    fn dimension_and_column_names() {
        assert_eq!(ENCODED_DIM, 94);
        assert_eq!(encoded_column_names(&PatternVocab::default()).len(), ENCODED_DIM);
    }

    #[test]
    fn pattern_one_hot() {
        let rows = rows();
        let vocab = build_vocab(&rows);
        let e = encode(&rows[1], &vocab).unwrap();
        let hot: Vec<usize> = (PATTERN_OFFSET..VOCAB_OFFSET).filter(|&i| e.features[i] == 1.0).collect();
        assert_eq!(hot, [PATTERN_OFFSET + PatternLabel::Fraction.index()]);
        assert_eq!(e.features.len(), ENCODED_DIM);
    }

    #[test]
    fn unseen_pattern_goes_to_oov() {
        let rows = rows();
        let vocab = build_vocab(&rows[..2]);
        assert_eq!(vocab.patterns, ["N F"]);
        let e = encode(&rows[2], &vocab).unwrap();
        assert_eq!(e.features[OOV_SLOT], 1.0);
        assert!(e.features[VOCAB_OFFSET..OOV_SLOT].iter().all(|&v| v == 0.0));
        let e = encode(&rows[0], &vocab).unwrap();
        assert_eq!(e.features[VOCAB_OFFSET], 1.0);
        assert_eq!(e.features[OOV_SLOT], 0.0);
    }

    #[test]
    fn vocab_ranking_is_order_independent() {
        let mut rows = rows();
        let a = build_vocab(&rows);
        rows.reverse();
        assert_eq!(a, build_vocab(&rows));
        assert_eq!(a.patterns, ["N F", "W"]);
    }

    #[test]
    fn rejects_broken_rows() {
        let mut r = rows()[0].clone();
        r.second_quarter = 1;
        assert!(matches!(encode(&r, &PatternVocab::default()), Err(DatasetError::SchemaMismatch(_))));
        let mut r = rows()[0].clone();
        r.label = 3;
        assert!(encode(&r, &PatternVocab::default()).is_err());
        let mut r = rows()[0].clone();
        r.left_margin = f64::NAN;
        assert!(encode(&r, &PatternVocab::default()).is_err());
    }

    proptest! {
        #[test]
        fn numeric_fields_are_injective(field in 0usize..24, bump in 1u32..1000) {
            let base = rows()[0].clone();
            let mut other = base.clone();
            match field {
                0 => other.block_no += bump,
                1 => other.block_char_count += bump,
                2 => other.line_word_count += bump,
                3 => other.block_width += bump,
                4 => other.line_char_count += bump,
                5 => other.is_first_int = 1 - other.is_first_int,
                6 => other.block_word_count += bump,
                7 => other.page_width += bump,
                8 => other.page_height += bump,
                9 => other.left_alignment_count += bump,
                10 => other.right_alignment_count += bump,
                11 => other.width += bump,
                12 => other.height += bump,
                13 => other.char_count += bump,
                14 => other.left += bump,
                15 => other.top += bump,
                16 => other.left_margin += f64::from(bump) / 1e4,
                17 => other.top_margin += f64::from(bump) / 1e4,
                18..=21 => {
                    other.first_quarter = 0;
                    other.second_quarter = 0;
                    other.third_quarter = 0;
                    other.fourth_quarter = 0;
                    let q = if field == 18 { 1 } else { field - 18 };
                    match q { 1 => other.second_quarter = 1, 2 => other.third_quarter = 1, _ => other.fourth_quarter = 1 }
                }
                22 => other.line_no += bump,
                _ => other.page_no += bump,
            }
            let vocab = PatternVocab::default();
            prop_assert_ne!(encode(&base, &vocab).unwrap().features, encode(&other, &vocab).unwrap().features);
        }
    }
}
