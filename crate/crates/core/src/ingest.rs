//! Tesseract TSV ingestion.
//!
//! Parses the 12-column word-level TSV that `tesseract ... tsv` emits into a
//! [`DocumentModel`]. Level-1 rows carry page dimensions, level-5 rows with
//! non-empty text become [`Token`]s, and the intermediate levels are only
//! validated.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

/// The mandatory header line.
pub const TSV_HEADER: &str =
    "level\tpage_num\tblock_num\tpar_num\tline_num\tword_num\tleft\ttop\twidth\theight\tconf\ttext";

const TSV_COLUMNS: usize = 12;

/// Maximum overshoot (px) past a page edge that is clamped rather than rejected.
pub const CLAMP_THRESHOLD_PX: u32 = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IngestError {
    #[error("malformed header: expected the 12-column tesseract TSV header")]
    MalformedHeader,
    #[error("bad row at line {line_no}: {reason}")]
    BadRow { line_no: usize, reason: String },
    #[error("line {line_no}: level-5 row for page {page_num} appears before its level-1 page row")]
    MissingPageRow { line_no: usize, page_num: u32 },
    #[error("token {text:?} at line {line_no} exceeds its page by {overshoot} px")]
    BadGeometry {
        line_no: usize,
        text: String,
        overshoot: u32,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

/// One recognised word (a level-5 row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub level: u8,
    pub page_num: u32,
    pub block_num: u32,
    pub par_num: u32,
    pub line_num: u32,
    pub word_num: u32,
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
    pub conf: f64,
    pub text: String,
}

impl Token {
    pub fn right(&self) -> u32 {
        self.left + self.width
    }

    pub fn bottom(&self) -> u32 {
        self.top + self.height
    }

    /// Key identifying the OCR line the token sits on, within its page.
    pub fn line_key(&self) -> (u32, u32, u32) {
        (self.block_num, self.par_num, self.line_num)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub page_num: u32,
    pub page_width: u32,
    pub page_height: u32,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentModel {
    pub doc_id: String,
    pub pages: Vec<Page>,
}

impl DocumentModel {
    pub fn token_count(&self) -> usize {
        self.pages.iter().map(|p| p.tokens.len()).sum()
    }

    /// Tokens across all pages in reading order. The position in this
    /// iterator is the document-wide token index used by label files.
    pub fn tokens(&self) -> impl Iterator<Item = (&Page, &Token)> {
        self.pages
            .iter()
            .flat_map(|p| p.tokens.iter().map(move |t| (p, t)))
    }

    /// Serialize back to TSV. Only page and word rows are emitted; the
    /// structural indices they carry are enough to re-parse an equal model.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.token_count() + 2));
        out.push_str(TSV_HEADER);
        out.push('\n');
        for page in &self.pages {
            let _ = writeln!(
                out,
                "1\t{}\t0\t0\t0\t0\t0\t0\t{}\t{}\t-1\t",
                page.page_num, page.page_width, page.page_height
            );
            for t in &page.tokens {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    t.level,
                    t.page_num,
                    t.block_num,
                    t.par_num,
                    t.line_num,
                    t.word_num,
                    t.left,
                    t.top,
                    t.width,
                    t.height,
                    t.conf,
                    t.text
                );
            }
        }
        out
    }
}

/// Parse TSV text held in memory.
pub fn parse_tsv_str(doc_id: &str, raw: &str) -> Result<DocumentModel, IngestError> {
    parse_tsv(doc_id, raw.as_bytes())
}

/// Parse a TSV stream into a document model.
pub fn parse_tsv<R: BufRead>(doc_id: &str, reader: R) -> Result<DocumentModel, IngestError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| IngestError::Io(e.to_string()))?,
        None => return Err(IngestError::MalformedHeader),
    };
    let header = header.strip_prefix('\u{feff}').unwrap_or(&header);
    if header.trim_end_matches('\r') != TSV_HEADER {
        return Err(IngestError::MalformedHeader);
    }

    let mut pages: Vec<Page> = Vec::new();
    let mut seen_pages = HashSet::new();

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| IngestError::Io(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = RawRow::parse(line, line_no)?;
        match row.level {
            1 => {
                if !seen_pages.insert(row.page_num) {
                    return Err(bad_row(line_no, format!("duplicate page row for page {}", row.page_num)));
                }
                if row.width == 0 || row.height == 0 {
                    return Err(bad_row(line_no, "page dimensions must be positive"));
                }
                pages.push(Page {
                    page_num: row.page_num,
                    page_width: row.width,
                    page_height: row.height,
                    tokens: Vec::new(),
                });
            }
            2..=4 => {}
            5 => {
                if row.text.trim().is_empty() {
                    continue;
                }
                if !(0.0..=100.0).contains(&row.conf) {
                    return Err(bad_row(line_no, format!("word confidence {} outside [0,100]", row.conf)));
                }
                if row.width == 0 || row.height == 0 {
                    return Err(bad_row(line_no, "word box must have positive width and height"));
                }
                let page = pages
                    .iter_mut()
                    .find(|p| p.page_num == row.page_num)
                    .ok_or(IngestError::MissingPageRow {
                        line_no,
                        page_num: row.page_num,
                    })?;
                let token = Token {
                    level: 5,
                    page_num: row.page_num,
                    block_num: row.block_num,
                    par_num: row.par_num,
                    line_num: row.line_num,
                    word_num: row.word_num,
                    left: row.left,
                    top: row.top,
                    width: row.width,
                    height: row.height,
                    conf: row.conf,
                    text: row.text.to_string(),
                };
                let token = clamp_or_reject(token, page).map_err(|e| match e {
                    IngestError::BadGeometry { text, overshoot, .. } => IngestError::BadGeometry {
                        line_no,
                        text,
                        overshoot,
                    },
                    other => other,
                })?;
                page.tokens.push(token);
            }
            other => return Err(bad_row(line_no, format!("level {other} outside 1..=5"))),
        }
    }

    Ok(DocumentModel {
        doc_id: doc_id.to_string(),
        pages,
    })
}

/// Clamp a token box overshooting its page by at most [`CLAMP_THRESHOLD_PX`];
/// larger overshoot is rejected. The returned `BadGeometry` carries line 0,
/// callers that know the source line fill it in.
pub fn clamp_or_reject(mut token: Token, page: &Page) -> Result<Token, IngestError> {
    let reject = |t: &Token, overshoot: u32| IngestError::BadGeometry {
        line_no: 0,
        text: t.text.clone(),
        overshoot,
    };

    let right = u64::from(token.left) + u64::from(token.width);
    if right > u64::from(page.page_width) {
        let over = (right - u64::from(page.page_width)).min(u64::from(u32::MAX)) as u32;
        if over > CLAMP_THRESHOLD_PX || over >= token.width {
            return Err(reject(&token, over));
        }
        token.width -= over;
    }
    let bottom = u64::from(token.top) + u64::from(token.height);
    if bottom > u64::from(page.page_height) {
        let over = (bottom - u64::from(page.page_height)).min(u64::from(u32::MAX)) as u32;
        if over > CLAMP_THRESHOLD_PX || over >= token.height {
            return Err(reject(&token, over));
        }
        token.height -= over;
    }
    Ok(token)
}

fn bad_row(line_no: usize, reason: impl Into<String>) -> IngestError {
    IngestError::BadRow {
        line_no,
        reason: reason.into(),
    }
}

struct RawRow<'a> {
    level: u8,
    page_num: u32,
    block_num: u32,
    par_num: u32,
    line_num: u32,
    word_num: u32,
    left: u32,
    top: u32,
    width: u32,
    height: u32,
    conf: f64,
    text: &'a str,
}

impl<'a> RawRow<'a> {
    fn parse(line: &'a str, line_no: usize) -> Result<Self, IngestError> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != TSV_COLUMNS {
            return Err(bad_row(
                line_no,
                format!("expected {TSV_COLUMNS} columns, found {}", cols.len()),
            ));
        }
        let int = |i: usize, name: &str| -> Result<u32, IngestError> {
            cols[i]
                .trim()
                .parse::<u32>()
                .map_err(|_| bad_row(line_no, format!("{name} is not a non-negative integer: {:?}", cols[i])))
        };
        let level = int(0, "level")?;
        let level = u8::try_from(level).map_err(|_| bad_row(line_no, "level out of range"))?;
        let conf: f64 = cols[10]
            .trim()
            .parse()
            .map_err(|_| bad_row(line_no, format!("conf is not numeric: {:?}", cols[10])))?;
        if !conf.is_finite() {
            return Err(bad_row(line_no, "conf is not finite"));
        }
        if level < 5 && conf != -1.0 && !(0.0..=100.0).contains(&conf) {
            return Err(bad_row(line_no, format!("confidence {conf} outside [0,100] and not -1")));
        }
        let page_num = int(1, "page_num")?;
        if page_num == 0 {
            return Err(bad_row(line_no, "page_num must be >= 1"));
        }
        Ok(RawRow {
            level,
            page_num,
            block_num: int(2, "block_num")?,
            par_num: int(3, "par_num")?,
            line_num: int(4, "line_num")?,
            word_num: int(5, "word_num")?,
            left: int(6, "left")?,
            top: int(7, "top")?,
            width: int(8, "width")?,
            height: int(9, "height")?,
            conf,
            text: cols[11],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAGE_ROW: &str = "1\t1\t0\t0\t0\t0\t0\t0\t2480\t3508\t-1\t";

    fn doc(rows: &[&str]) -> Result<DocumentModel, IngestError> {
        let mut s = String::from(TSV_HEADER);
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        parse_tsv_str("d", &s)
    }

    fn page(w: u32, h: u32) -> Page {
        Page {
            page_num: 1,
            page_width: w,
            page_height: h,
            tokens: vec![],
        }
    }

    fn token(left: u32, top: u32, width: u32, height: u32) -> Token {
        Token {
            level: 5,
            page_num: 1,
            block_num: 1,
            par_num: 1,
            line_num: 1,
            word_num: 1,
            left,
            top,
            width,
            height,
            conf: 90.0,
            text: "x".into(),
        }
    }

    #[test]
    fn header_only_is_empty_document() {
        let d = doc(&[]).unwrap();
        assert!(d.pages.is_empty());
        assert_eq!(d.token_count(), 0);
    }

    #[test]
    fn maps_word_row_fields() {
        let d = doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t1\t100\t200\t50\t12\t96.3\tOktober"]).unwrap();
        assert_eq!(d.pages.len(), 1);
        let p = &d.pages[0];
        assert_eq!((p.page_width, p.page_height), (2480, 3508));
        let t = &p.tokens[0];
        assert_eq!(t.page_num, 1);
        assert_eq!(t.block_num, 2);
        assert_eq!(t.line_num, 1);
        assert_eq!((t.left, t.top, t.width, t.height), (100, 200, 50, 12));
        assert_eq!(t.conf, 96.3);
        assert_eq!(t.text, "Oktober");
    }

    #[test]
    fn empty_word_text_is_skipped() {
        let d = doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t1\t100\t200\t50\t12\t-1\t"]).unwrap();
        assert_eq!(d.token_count(), 0);
        let d = doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t1\t100\t200\t50\t12\t95\t "]).unwrap();
        assert_eq!(d.token_count(), 0);
    }

    #[test]
    fn crlf_and_structural_rows() {
        let s = format!(
            "{TSV_HEADER}\r\n{PAGE_ROW}\r\n2\t1\t1\t0\t0\t0\t10\t10\t100\t20\t-1\t\r\n\
             3\t1\t1\t1\t0\t0\t10\t10\t100\t20\t-1\t\r\n4\t1\t1\t1\t1\t0\t10\t10\t100\t20\t-1\t\r\n\
             5\t1\t1\t1\t1\t1\t10\t10\t40\t20\t91.5\tSumme\r\n"
        );
        let d = parse_tsv_str("d", &s).unwrap();
        assert_eq!(d.token_count(), 1);
        assert_eq!(d.pages[0].tokens[0].text, "Summe");
    }

    #[test]
    fn rejects_bad_header() {
        assert_eq!(parse_tsv_str("d", ""), Err(IngestError::MalformedHeader));
        assert_eq!(
            parse_tsv_str("d", "level\tpage_num\n"),
            Err(IngestError::MalformedHeader)
        );
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t100\t200\t50\t12\t96.3\tx"]),
            Err(IngestError::BadRow { line_no: 3, .. })
        ));
        assert!(matches!(
            doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t1\tabc\t200\t50\t12\t96.3\tx"]),
            Err(IngestError::BadRow { line_no: 3, .. })
        ));
        assert!(matches!(
            doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t1\t1\t200\t50\t12\t-1\tx"]),
            Err(IngestError::BadRow { .. })
        ));
        assert!(matches!(
            doc(&[PAGE_ROW, "7\t1\t2\t1\t1\t1\t1\t200\t50\t12\t50\tx"]),
            Err(IngestError::BadRow { .. })
        ));
        assert!(matches!(
            doc(&[PAGE_ROW, PAGE_ROW]),
            Err(IngestError::BadRow { line_no: 3, .. })
        ));
    }

    #[test]
    fn word_before_page_row() {
        assert_eq!(
            doc(&["5\t1\t2\t1\t1\t1\t100\t200\t50\t12\t96.3\tx"]),
            Err(IngestError::MissingPageRow { line_no: 2, page_num: 1 })
        );
        assert!(matches!(
            doc(&[PAGE_ROW, "5\t2\t2\t1\t1\t1\t100\t200\t50\t12\t96.3\tx"]),
            Err(IngestError::MissingPageRow { page_num: 2, .. })
        ));
    }

    #[test]
    fn clamp_small_overshoot() {
        let p = page(1000, 1000);
        let t = clamp_or_reject(token(953, 10, 50, 10), &p).unwrap();
        assert_eq!(t.width, 47);
        let t = clamp_or_reject(token(10, 995, 10, 8), &p).unwrap();
        assert_eq!(t.height, 5);
    }

    #[test]
    fn reject_large_overshoot() {
        let p = page(1000, 1000);
        assert!(matches!(
            clamp_or_reject(token(1000, 10, 50, 10), &p),
            Err(IngestError::BadGeometry { overshoot: 50, .. })
        ));
        // overshoot within threshold but swallowing the whole box
        assert!(clamp_or_reject(token(1002, 10, 2, 10), &p).is_err());
    }

    #[test]
    fn in_bounds_unchanged() {
        let p = page(1000, 1000);
        let t = token(100, 100, 900, 900);
        assert_eq!(clamp_or_reject(t.clone(), &p).unwrap(), t);
    }

    #[test]
    fn parse_clamps_and_reports_line() {
        let d = doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t1\t2440\t200\t43\t12\t96.3\tx"]).unwrap();
        assert_eq!(d.pages[0].tokens[0].width, 40);
        assert!(matches!(
            doc(&[PAGE_ROW, "5\t1\t2\t1\t1\t1\t2440\t200\t90\t12\t96.3\tx"]),
            Err(IngestError::BadGeometry { line_no: 3, overshoot: 50, .. })
        ));
    }

    #[test]
    fn round_trip_multi_page() {
        let d = doc(&[
            PAGE_ROW,
            "5\t1\t2\t1\t1\t1\t100\t200\t50\t12\t96.301938\tOktober",
            "5\t1\t2\t1\t1\t2\t160\t200\t8\t12\t88\t-",
            "1\t2\t0\t0\t0\t0\t0\t0\t2480\t3508\t-1\t",
            "5\t2\t1\t1\t3\t1\t10\t20\t30\t12\t77.25\t70,63€",
        ])
        .unwrap();
        let again = parse_tsv_str("d", &d.to_tsv()).unwrap();
        assert_eq!(d, again);
        assert_eq!(again.pages.len(), 2);
    }
}
