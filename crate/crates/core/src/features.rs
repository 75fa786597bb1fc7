//! Per-token layout and text features.
//!
//! Every feature is computed page-locally: block and line aggregates,
//! left/right alignment groups, page-relative margins and vertical quarter
//! flags.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ingest::{DocumentModel, Page, Token};
use crate::textpattern::{classify_text_pattern, line_block_regex, PatternLabel};

/// Version tag embedded in feature files and checkpoints.
pub const FEATURE_SCHEMA_VERSION: &str = "tabext-features/1";

/// Column order of a serialized [`FeatureRow`].
pub const FEATURE_COLUMNS: [&str; 32] = [
    "doc_id",
    "token_index",
    "RawText",
    "TextPattern",
    "BlockNo",
    "BlockCharCount",
    "LineWordCount",
    "BlockWidth",
    "LineCharCount",
    "IsFirstInt",
    "BlockWordCount",
    "PageWidth",
    "PageHeight",
    "LeftAlignmentGroup",
    "LeftAlignmentCount",
    "RightAlignmentGroup",
    "RightAlignmentCount",
    "LineBlockRegex",
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
    "label",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRow {
    pub doc_id: String,
    /// Document-wide reading-order index of the token.
    pub token_index: usize,
    #[serde(rename = "RawText")]
    pub raw_text: String,
    #[serde(rename = "TextPattern")]
    pub text_pattern: PatternLabel,
    #[serde(rename = "BlockNo")]
    pub block_no: u32,
    #[serde(rename = "BlockCharCount")]
    pub block_char_count: u32,
    #[serde(rename = "LineWordCount")]
    pub line_word_count: u32,
    #[serde(rename = "BlockWidth")]
    pub block_width: u32,
    #[serde(rename = "LineCharCount")]
    pub line_char_count: u32,
    #[serde(rename = "IsFirstInt")]
    pub is_first_int: u8,
    #[serde(rename = "BlockWordCount")]
    pub block_word_count: u32,
    #[serde(rename = "PageWidth")]
    pub page_width: u32,
    #[serde(rename = "PageHeight")]
    pub page_height: u32,
    #[serde(rename = "LeftAlignmentGroup")]
    pub left_alignment_group: u32,
    #[serde(rename = "LeftAlignmentCount")]
    pub left_alignment_count: u32,
    #[serde(rename = "RightAlignmentGroup")]
    pub right_alignment_group: u32,
    #[serde(rename = "RightAlignmentCount")]
    pub right_alignment_count: u32,
    #[serde(rename = "LineBlockRegex")]
    pub line_block_regex: String,
    #[serde(rename = "Width")]
    pub width: u32,
    #[serde(rename = "Height")]
    pub height: u32,
    #[serde(rename = "CharCount")]
    pub char_count: u32,
    #[serde(rename = "Left")]
    pub left: u32,
    #[serde(rename = "Top")]
    pub top: u32,
    #[serde(rename = "LeftMargin")]
    pub left_margin: f64,
    #[serde(rename = "TopMargin")]
    pub top_margin: f64,
    #[serde(rename = "FirstQuarter")]
    pub first_quarter: u8,
    #[serde(rename = "SecondQuarter")]
    pub second_quarter: u8,
    #[serde(rename = "ThirdQuarter")]
    pub third_quarter: u8,
    #[serde(rename = "FourthQuarter")]
    pub fourth_quarter: u8,
    #[serde(rename = "LineNo")]
    pub line_no: u32,
    #[serde(rename = "PageNo")]
    pub page_no: u32,
    pub label: u8,
}

impl FeatureRow {
    pub fn quarter_flags(&self) -> [u8; 4] {
        [
            self.first_quarter,
            self.second_quarter,
            self.third_quarter,
            self.fourth_quarter,
        ]
    }
}

/// Tolerance used when grouping aligned edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentTolerance {
    /// `max(2, round(0.004 * page_width))` per page.
    #[default]
    Auto,
    Fixed(u32),
}

impl AlignmentTolerance {
    pub fn for_page(self, page_width: u32) -> u32 {
        match self {
            AlignmentTolerance::Auto => default_tolerance(page_width),
            AlignmentTolerance::Fixed(px) => px,
        }
    }
}

pub fn default_tolerance(page_width: u32) -> u32 {
    ((0.004 * f64::from(page_width)).round() as u32).max(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockStats {
    pub char_count: u32,
    pub word_count: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineStats {
    pub word_count: u32,
    pub char_count: u32,
    pub pattern: String,
    pub line_no: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    pub group_id: u32,
    pub group_count: u32,
}

fn char_count(text: &str) -> u32 {
    text.chars().count() as u32
}

/// Character count, word count and horizontal extent of every block on a page.
pub fn block_aggregates(page_tokens: &[Token]) -> BTreeMap<u32, BlockStats> {
    let mut acc: BTreeMap<u32, (u32, u32, u32, u32)> = BTreeMap::new();
    for t in page_tokens {
        let e = acc
            .entry(t.block_num)
            .or_insert((0, 0, u32::MAX, 0));
        e.0 += char_count(&t.text);
        e.1 += 1;
        e.2 = e.2.min(t.left);
        e.3 = e.3.max(t.right());
    }
    acc.into_iter()
        .map(|(block, (chars, words, min_left, max_right))| {
            (
                block,
                BlockStats {
                    char_count: chars,
                    word_count: words,
                    width: max_right - min_left,
                },
            )
        })
        .collect()
}

/// Aggregates for every line of a page, keyed by `(block, par, line)`.
/// `line_no` numbers the lines 0.. in key order.
pub fn line_aggregates(page_tokens: &[Token]) -> BTreeMap<(u32, u32, u32), LineStats> {
    let mut lines: BTreeMap<(u32, u32, u32), Vec<Token>> = BTreeMap::new();
    for t in page_tokens {
        lines.entry(t.line_key()).or_default().push(t.clone());
    }
    lines
        .into_iter()
        .enumerate()
        .map(|(i, (key, toks))| {
            let stats = LineStats {
                word_count: toks.len() as u32,
                char_count: toks.iter().map(|t| char_count(&t.text)).sum(),
                pattern: line_block_regex(&toks),
                line_no: i as u32,
            };
            (key, stats)
        })
        .collect()
}

/// Single-linkage sweep over sorted coordinates: neighbours at most
/// `tolerance` apart share a group. Ids ascend with coordinate.
pub fn group_coordinates(coords: &[u32], tolerance: u32) -> Vec<Membership> {
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by_key(|&i| (coords[i], i));

    let mut group_of = vec![0u32; coords.len()];
    let mut sizes: Vec<u32> = Vec::new();
    let mut prev: Option<u32> = None;
    for &i in &order {
        let c = coords[i];
        match prev {
            Some(p) if c - p <= tolerance => *sizes.last_mut().expect("open group") += 1,
            _ => sizes.push(1),
        }
        group_of[i] = sizes.len() as u32 - 1;
        prev = Some(c);
    }
    group_of
        .into_iter()
        .map(|g| Membership {
            group_id: g,
            group_count: sizes[g as usize],
        })
        .collect()
}

/// Alignment groups of a page's tokens along one edge.
pub fn alignment_groups(page_tokens: &[Token], axis: Axis, tolerance: u32) -> Vec<Membership> {
    let coords: Vec<u32> = page_tokens
        .iter()
        .map(|t| match axis {
            Axis::Left => t.left,
            Axis::Right => t.right(),
        })
        .collect();
    group_coordinates(&coords, tolerance)
}

/// Which vertical quarter holds the token's top edge, as one-hot flags.
pub fn quarter_flags(top: u32, page_height: u32) -> [u8; 4] {
    debug_assert!(page_height > 0);
    let q = ((4 * u64::from(top)) / u64::from(page_height)).min(3) as usize;
    let mut flags = [0u8; 4];
    flags[q] = 1;
    flags
}

/// Feature rows for one page. `first_index` is the document-wide index of
/// the page's first token.
pub fn featurize_page(
    doc_id: &str,
    page: &Page,
    first_index: usize,
    tolerance: AlignmentTolerance,
) -> Vec<FeatureRow> {
    let tokens = &page.tokens;
    let blocks = block_aggregates(tokens);
    let lines = line_aggregates(tokens);
    let tol = tolerance.for_page(page.page_width);
    let left = alignment_groups(tokens, Axis::Left, tol);
    let right = alignment_groups(tokens, Axis::Right, tol);
    let pw = f64::from(page.page_width);
    let ph = f64::from(page.page_height);

    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let block = blocks[&t.block_num];
            let line = &lines[&t.line_key()];
            let q = quarter_flags(t.top, page.page_height);
            FeatureRow {
                doc_id: doc_id.to_string(),
                token_index: first_index + i,
                raw_text: t.text.clone(),
                text_pattern: classify_text_pattern(&t.text).unwrap_or(PatternLabel::Special),
                block_no: t.block_num,
                block_char_count: block.char_count,
                line_word_count: line.word_count,
                block_width: block.width,
                line_char_count: line.char_count,
                is_first_int: u8::from(t.text.chars().next().is_some_and(|c| c.is_ascii_digit())),
                block_word_count: block.word_count,
                page_width: page.page_width,
                page_height: page.page_height,
                left_alignment_group: left[i].group_id,
                left_alignment_count: left[i].group_count,
                right_alignment_group: right[i].group_id,
                right_alignment_count: right[i].group_count,
                line_block_regex: line.pattern.clone(),
                width: t.width,
                height: t.height,
                char_count: char_count(&t.text),
                left: t.left,
                top: t.top,
                left_margin: f64::from(t.left) / pw,
                top_margin: f64::from(t.top) / ph,
                first_quarter: q[0],
                second_quarter: q[1],
                third_quarter: q[2],
                fourth_quarter: q[3],
                line_no: line.line_no,
                page_no: page.page_num,
                label: 0,
            }
        })
        .collect()
}

/// One feature row per token of the document, in reading order. Labels are
/// left at 0; see [`apply_labels`].
pub fn featurize_document(doc: &DocumentModel, tolerance: AlignmentTolerance) -> Vec<FeatureRow> {
    let mut rows = Vec::with_capacity(doc.token_count());
    for page in &doc.pages {
        let first = rows.len();
        rows.extend(featurize_page(&doc.doc_id, page, first, tolerance));
    }
    rows
}

/// Set `label` on each row from a `(doc_id, token_index) -> label` lookup.
/// Rows without an entry keep their current label.
pub fn apply_labels(rows: &mut [FeatureRow], labels: &HashMap<(String, usize), u8>) {
    for row in rows {
        if let Some(&l) = labels.get(&(row.doc_id.clone(), row.token_index)) {
            row.label = l;
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureFileHeader {
    schema: String,
    columns: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureFileError {
    #[error("feature file schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("feature file line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Write rows as JSON Lines. The first line is a header object naming the
/// schema version and the column order.
pub fn write_feature_jsonl<W: Write>(mut w: W, rows: &[FeatureRow]) -> std::io::Result<()> {
    let header = FeatureFileHeader {
        schema: FEATURE_SCHEMA_VERSION.to_string(),
        columns: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_feature_jsonl<R: BufRead>(r: R) -> Result<Vec<FeatureRow>, FeatureFileError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| FeatureFileError::SchemaMismatch("missing header line".into()))??;
    let header: FeatureFileHeader = serde_json::from_str(&header)
        .map_err(|e| FeatureFileError::SchemaMismatch(format!("unreadable header: {e}")))?;
    if header.schema != FEATURE_SCHEMA_VERSION {
        return Err(FeatureFileError::SchemaMismatch(format!(
            "file has {:?}, expected {FEATURE_SCHEMA_VERSION:?}",
            header.schema
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FeatureRow = serde_json::from_str(&line).map_err(|e| {
            if e.is_data() {
                FeatureFileError::SchemaMismatch(format!("line {}: {e}", i + 2))
            } else {
                FeatureFileError::BadRecord {
                    line: i + 2,
                    message: e.to_string(),
                }
            }
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_tsv_str;
    use proptest::prelude::*;

    fn tok(block: u32, line: u32, left: u32, width: u32, text: &str) -> Token {
        Token {
            level: 5,
            page_num: 1,
            block_num: block,
            par_num: 1,
            line_num: line,
            word_num: 1,
            left,
            top: 10,
            width,
            height: 10,
            conf: 95.0,
            text: text.into(),
        }
    }

    #[test]
    fn block_aggregate_arithmetic() {
        let b = block_aggregates(&[tok(1, 1, 10, 20, "ab"), tok(1, 1, 40, 30, "cde")]);
        assert_eq!(
            b[&1],
            BlockStats {
                char_count: 5,
                word_count: 2,
                width: 60
            }
        );
        let b = block_aggregates(&[tok(3, 1, 70, 33, "x")]);
        assert_eq!(b[&3].width, 33);
    }

    #[test]
    fn line_aggregate_counts_and_order() {
        let line: Vec<Token> = "Oktober - Dezember 2019 1,000 ST 70,63 70,63"
            .split(' ')
            .enumerate()
            .map(|(i, w)| tok(1, 1, 10 + 100 * i as u32, 50, w))
            .collect();
        let l = line_aggregates(&line);
        assert_eq!(l[&(1, 1, 1)].word_count, 8);
        assert_eq!(l[&(1, 1, 1)].pattern, "W ? W N F W F F");

        let l = line_aggregates(&[tok(1, 1, 0, 10, "ST")]);
        assert_eq!(l[&(1, 1, 1)].word_count, 1);
        assert_eq!(l[&(1, 1, 1)].char_count, 2);

        let l = line_aggregates(&[tok(2, 1, 0, 10, "b"), tok(1, 4, 0, 10, "a")]);
        assert_eq!(l[&(1, 1, 4)].line_no, 0);
        assert_eq!(l[&(2, 1, 1)].line_no, 1);
    }

    #[test]
    fn sweep_grouping() {
        let m = group_coordinates(&[100, 101, 300], 2);
        let ids: Vec<u32> = m.iter().map(|m| m.group_id).collect();
        let counts: Vec<u32> = m.iter().map(|m| m.group_count).collect();
        assert_eq!(ids, [0, 0, 1]);
        assert_eq!(counts, [2, 2, 1]);

        let m = group_coordinates(&[80; 7], 0);
        assert!(m.iter().all(|m| m.group_id == 0 && m.group_count == 7));

        // chaining
        let m = group_coordinates(&[10, 12, 14, 30], 2);
        assert_eq!(m[2].group_id, 0);
        assert_eq!(m[0].group_count, 3);
        assert!(group_coordinates(&[], 3).is_empty());
    }

    #[test]
    fn quarter_boundaries() {
        assert_eq!(quarter_flags(0, 1000), [1, 0, 0, 0]);
        assert_eq!(quarter_flags(249, 1000), [1, 0, 0, 0]);
        assert_eq!(quarter_flags(250, 1000), [0, 1, 0, 0]);
        assert_eq!(quarter_flags(750, 1000), [0, 0, 0, 1]);
        assert_eq!(quarter_flags(999, 1000), [0, 0, 0, 1]);
        assert_eq!(quarter_flags(1000, 1000), [0, 0, 0, 1]);
    }

    #[test]
    fn tolerance_default() {
        assert_eq!(default_tolerance(2480), 10);
        assert_eq!(default_tolerance(300), 2);
        assert_eq!(AlignmentTolerance::Fixed(4).for_page(2480), 4);
    }

    fn small_doc() -> DocumentModel {
        let tsv = "level\tpage_num\tblock_num\tpar_num\tline_num\tword_num\tleft\ttop\twidth\theight\tconf\ttext\n\
            1\t1\t0\t0\t0\t0\t0\t0\t500\t1000\t-1\t\n\
            5\t1\t1\t1\t1\t1\t50\t100\t40\t10\t90\t2019\n\
            5\t1\t1\t1\t1\t2\t100\t100\t60\t10\t90\tOktober\n\
            5\t1\t2\t1\t1\t1\t50\t800\t40\t10\t90\t70,63\n";
        parse_tsv_str("doc", tsv).unwrap()
    }

    #[test]
    fn featurize_small_document() {
        let rows = featurize_document(&small_doc(), AlignmentTolerance::Auto);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].is_first_int, 1);
        assert_eq!(rows[1].is_first_int, 0);
        assert_eq!(rows[0].left_margin, 0.1);
        assert_eq!(rows[0].left_alignment_count, 2);
        assert_eq!(rows[2].left_alignment_group, rows[0].left_alignment_group);
        assert_eq!(rows[2].fourth_quarter, 1);
        assert_eq!(rows[0].line_block_regex, "N W");
        assert_eq!(rows[0].block_char_count, 11);
        assert_eq!(rows[0].block_width, 110);
        assert_eq!(rows[2].line_no, 1);
        assert_eq!(rows[2].token_index, 2);
        assert_eq!(rows[2].text_pattern, PatternLabel::Fraction);
    }

    #[test]
    fn empty_document() {
        let d = DocumentModel {
            doc_id: "e".into(),
            pages: vec![],
        };
        assert!(featurize_document(&d, AlignmentTolerance::Auto).is_empty());
    }

    #[test]
    fn jsonl_round_trip_and_schema_check() {
        let rows = featurize_document(&small_doc(), AlignmentTolerance::Auto);
        let mut buf = Vec::new();
        write_feature_jsonl(&mut buf, &rows).unwrap();
        let back = read_feature_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, rows);

        let text = String::from_utf8(buf).unwrap().replace(FEATURE_SCHEMA_VERSION, "tabext-features/0");
        assert!(matches!(
            read_feature_jsonl(text.as_bytes()),
            Err(FeatureFileError::SchemaMismatch(_))
        ));
        let missing = format!(
            "{{\"schema\":\"{FEATURE_SCHEMA_VERSION}\",\"columns\":[]}}\n{{\"doc_id\":\"d\"}}\n"
        );
        assert!(matches!(
            read_feature_jsonl(missing.as_bytes()),
            Err(FeatureFileError::SchemaMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn group_counts_sum_to_tokens(coords in proptest::collection::vec(0u32..2000, 0..80), tol in 0u32..20) {
            let m = group_coordinates(&coords, tol);
            let mut sizes: BTreeMap<u32, u32> = BTreeMap::new();
            for x in &m {
                sizes.insert(x.group_id, x.group_count);
            }
            prop_assert_eq!(sizes.values().sum::<u32>() as usize, coords.len());
            prop_assert!(m.iter().all(|x| x.group_count >= 1));
        }

        #[test]
        fn translation_keeps_partition(coords in proptest::collection::vec(0u32..2000, 1..60), shift in 0u32..500, tol in 0u32..15) {
            let shifted: Vec<u32> = coords.iter().map(|c| c + shift).collect();
            prop_assert_eq!(group_coordinates(&coords, tol), group_coordinates(&shifted, tol));
        }
    }
}
