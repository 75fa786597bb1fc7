//! Synthetic invoice generator with ground-truth table labels.
//!
//! Each invoice is one page of OCR-style TSV: an address block and an info
//! block in the first quarter, a title and intro line, a column header, the
//! product table, a totals block, a closing line and a small-font footer in
//! the last quarter. Only product-table tokens are labelled 1.
//!
//! Placement rules are enforced, not sampled: a candidate layout that
//! violates any of them (after jitter and dropout) is discarded and the next
//! attempt is drawn from a derived seed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_label_records, LabelKey, LabelRecord, LabelSource};
use crate::features::{alignment_groups, default_tolerance, Axis};
use crate::ingest::{Token, TSV_HEADER};

pub const GENERATOR_VERSION: &str = "tabext-synthgen/1";

const MAX_ATTEMPTS: u64 = 64;
const MAX_JITTER_PX: u32 = 2;
const MAX_DROPOUT: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible layout spec: {0}")]
    InfeasibleSpec(String),
    #[error("corpus size must be at least 1")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutSpec {
    pub page_width: u32,
    pub page_height: u32,
    /// Inclusive range of product rows.
    pub table_rows: (u32, u32),
    /// Inclusive range of table columns, within 3..=7.
    pub table_columns: (u32, u32),
    pub address: bool,
    pub upper_info: bool,
    pub header: bool,
    pub total: bool,
    pub footer: bool,
    /// Uniform per-token offset in `[-jitter_px, jitter_px]`, at most 2.
    pub jitter_px: u32,
    /// Per-token drop probability, at most 0.02.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        LayoutSpec {
            page_width: 2480,
            page_height: 3508,
            table_rows: (10, 20),
            table_columns: (4, 7),
            address: true,
            upper_info: true,
            header: true,
            total: true,
            footer: true,
            jitter_px: 2,
            dropout: 0.02,
            seed: 0,
        }
    }
}

impl LayoutSpec {
    /// Same layout without jitter or dropout.
    pub fn noiseless(self) -> Self {
        LayoutSpec {
            jitter_px: 0,
            dropout: 0.0,
            ..self
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InfeasibleSpec(m));
        if self.page_width < 1000 || self.page_height < 1400 {
            return bad(format!("page {}x{} is too small", self.page_width, self.page_height));
        }
        let (r0, r1) = self.table_rows;
        if r0 == 0 || r0 > r1 {
            return bad(format!("table_rows range {r0}..={r1} is empty"));
        }
        let (c0, c1) = self.table_columns;
        if c0 < 3 || c1 > 7 || c0 > c1 {
            return bad(format!("table_columns range {c0}..={c1} must lie within 3..=7"));
        }
        if self.jitter_px > MAX_JITTER_PX {
            return bad(format!("jitter {} px exceeds {MAX_JITTER_PX}", self.jitter_px));
        }
        if !(0.0..=MAX_DROPOUT).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, {MAX_DROPOUT}]", self.dropout));
        }
        Ok(())
    }
}

/// Which invoice region a token was generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    Address,
    UpperInfo,
    Intro,
    Header,
    Table,
    Total,
    Closing,
    Footer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInvoice {
    pub tsv: String,
    /// Label per token, in reading (TSV) order.
    pub labels: Vec<u8>,
    pub roles: Vec<BlockRole>,
    /// Body text height; footer text is strictly smaller.
    pub body_height: u32,
    /// Attempt index that satisfied every placement rule.
    pub attempt: u64,
}

#[derive(Debug, Clone)]
struct Word {
    text: String,
    left: u32,
    top: u32,
    width: u32,
    height: u32,
}

#[derive(Debug, Clone)]
struct Block {
    role: BlockRole,
    lines: Vec<Vec<Word>>,
}

struct Metrics {
    body: u32,
    small: u32,
    pitch: u32,
}

fn char_factor(c: char) -> f64 {
    match c {
        'i' | 'l' | 'j' | '.' | ',' | ':' | ';' | '\'' | '!' | '|' | '1' | 'I' | 't' | 'f' | '-' => 0.30,
        'm' | 'w' | 'M' | 'W' | '@' | '%' => 0.85,
        c if c.is_uppercase() => 0.66,
        c if c.is_ascii_digit() => 0.55,
        _ => 0.52,
    }
}

fn text_width(text: &str, height: u32) -> u32 {
    let w: f64 = text.chars().map(char_factor).sum::<f64>() * f64::from(height);
    (w.round() as u32).max(1)
}

fn space(height: u32) -> u32 {
    (f64::from(height) * 0.45).round() as u32
}

fn line_from_left(words: &[String], left: u32, top: u32, height: u32) -> Vec<Word> {
    let mut x = left;
    words
        .iter()
        .map(|t| {
            let width = text_width(t, height);
            let w = Word {
                text: t.clone(),
                left: x,
                top,
                width,
                height,
            };
            x += width + space(height);
            w
        })
        .collect()
}

fn line_from_right(words: &[String], right: u32, top: u32, height: u32) -> Vec<Word> {
    let total: u32 = words.iter().map(|t| text_width(t, height)).sum::<u32>()
        + space(height) * (words.len() as u32).saturating_sub(1);
    line_from_left(words, right.saturating_sub(total), top, height)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// German money format: `1.234,56`.
fn money(cents: u64) -> String {
    let euros = cents / 100;
    let digits = euros.to_string();
    let mut grouped = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push('.');
        }
        grouped.push(c);
    }
    format!("{grouped},{:02}", cents % 100)
}

const COMPANIES: &[&str] = &[
    "Müller Haustechnik GmbH",
    "Schmidt & Söhne KG",
    "Bäckerei Weber",
    "Fischer Elektro GmbH",
    "Hoffmann Bau AG",
    "Wagner Logistik GmbH",
    "Becker Büroservice",
    "Schulz Metallbau e.K.",
];
const CONTACTS: &[&str] = &["z. Hd. Frau Krüger", "Herrn Thomas Braun", "Einkauf", "Buchhaltung"];
const STREETS: &[&str] = &["Hauptstraße", "Bahnhofstr.", "Lindenweg", "Gartenstraße", "Am Markt", "Industriestraße"];
const CITIES: &[&str] = &["Berlin", "München", "Hamburg", "Köln", "Leipzig", "Düsseldorf", "Nürnberg"];
const ITEMS: &[&str] = &[
    "Schrauben", "Dübel", "Kabel", "Steckdose", "Schalter", "Leuchte", "Rohr", "Muffe", "Ventil", "Dichtung",
    "Farbe", "Pinsel", "Montage", "Wartung", "Anfahrt", "Arbeitszeit", "Beratung", "Lieferung", "Papier",
    "Toner", "Ordner", "Klammern", "Winkel", "Platte", "Träger", "Bolzen", "Mutter", "Scheibe", "Filter",
];
const ADJECTIVES: &[&str] = &[
    "verzinkt", "weiß", "schwarz", "groß", "klein", "Edelstahl", "Kupfer", "Premium", "Standard", "flexibel",
];
const UNITS: &[&str] = &["ST", "Stk", "kg", "m", "Std", "Pak", "l"];
const INFO_LABELS: &[&str] = &[
    "Rechnungsnummer:",
    "Rechnungsdatum:",
    "Kundennummer:",
    "Lieferdatum:",
    "Bestellnummer:",
    "Sachbearbeiter:",
];
const INTROS: &[&str] = &[
    "Sehr geehrte Damen und Herren,",
    "wir berechnen Ihnen folgende Leistungen:",
    "vielen Dank für Ihren Auftrag.",
    "für unsere Lieferung erlauben wir uns zu berechnen:",
];
const CLOSINGS: &[&str] = &[
    "Zahlbar innerhalb von 14 Tagen ohne Abzug.",
    "Bitte überweisen Sie den Betrag bis zum Fälligkeitsdatum.",
    "Es gelten unsere allgemeinen Geschäftsbedingungen.",
    "Leistungszeitraum Oktober - Dezember 2019",
];
const FOOTER_COLUMNS: &[&[&str]] = &[
    &["Musterfirma GmbH", "Geschäftsführer: Max Muster", "Amtsgericht Berlin HRB 12345"],
    &["Sparkasse Berlin", "IBAN: DE12 3456 7890 1234 5678 90", "BIC: BELADEBEXXX"],
    &["USt-IdNr.: DE123456789", "Tel.: 030 1234567", "info@musterfirma.de"],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Pos,
    ArticleNo,
    Description,
    Quantity,
    Unit,
    UnitPrice,
    Amount,
}

impl Column {
    const CANONICAL: [Column; 7] = [
        Column::Pos,
        Column::ArticleNo,
        Column::Description,
        Column::Quantity,
        Column::Unit,
        Column::UnitPrice,
        Column::Amount,
    ];

    fn weight(self) -> f64 {
        match self {
            Column::Pos => 0.6,
            Column::ArticleNo => 1.2,
            Column::Description => 3.0,
            Column::Quantity => 1.0,
            Column::Unit => 0.7,
            Column::UnitPrice => 1.2,
            Column::Amount => 1.3,
        }
    }

    fn right_aligned(self) -> bool {
        matches!(self, Column::Quantity | Column::UnitPrice | Column::Amount)
    }

    fn header(self) -> &'static str {
        match self {
            Column::Pos => "Pos.",
            Column::ArticleNo => "Art.-Nr.",
            Column::Description => "Bezeichnung",
            Column::Quantity => "Menge",
            Column::Unit => "Einheit",
            Column::UnitPrice => "Preis",
            Column::Amount => "Gesamt",
        }
    }
}

fn metrics(spec: &LayoutSpec) -> Metrics {
    let body = ((f64::from(spec.page_height) * 0.0114).round() as u32).max(12);
    Metrics {
        body,
        small: (body * 7 / 10).min(body - 1),
        pitch: (f64::from(body) * 1.55).round() as u32,
    }
}

fn frac(v: u32, f: f64) -> u32 {
    (f64::from(v) * f).round() as u32
}

/// Lay out one candidate invoice (before noise).
fn compose(spec: &LayoutSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Block>, SynthError> {
    let (w, h) = (spec.page_width, spec.page_height);
    let m = metrics(spec);
    let margin_x = frac(w, rng.random_range(0.055..0.075));
    let mut blocks = Vec::new();

    if spec.address {
        let mut lines = vec![words(COMPANIES.choose(rng).expect("non-empty"))];
        if rng.random_bool(0.6) {
            lines.push(words(CONTACTS.choose(rng).expect("non-empty")));
        }
        lines.push(vec![
            STREETS.choose(rng).expect("non-empty").to_string(),
            rng.random_range(1..120u32).to_string(),
        ]);
        lines.push(vec![
            format!("{:05}", rng.random_range(10000..99999u32)),
            CITIES.choose(rng).expect("non-empty").to_string(),
        ]);
        if rng.random_bool(0.3) {
            lines.push(vec!["Deutschland".to_string()]);
        }
        let top0 = frac(h, rng.random_range(0.055..0.07));
        let lines = lines
            .iter()
            .enumerate()
            .map(|(i, l)| line_from_left(l, margin_x, top0 + i as u32 * m.pitch, m.body))
            .collect();
        blocks.push(Block {
            role: BlockRole::Address,
            lines,
        });
    }

    if spec.upper_info {
        let n = rng.random_range(3..=5usize);
        let mut labels: Vec<&str> = INFO_LABELS.to_vec();
        let label_x = frac(w, rng.random_range(0.56..0.60));
        let value_x = frac(w, rng.random_range(0.77..0.80));
        let top0 = frac(h, rng.random_range(0.06..0.075));
        let mut lines = Vec::new();
        for i in 0..n {
            let label = labels.remove(rng.random_range(0..labels.len()));
            let value = match label {
                "Rechnungsnummer:" => format!("RE-{}-{:04}", rng.random_range(2015..2024u32), rng.random_range(1..9999u32)),
                "Rechnungsdatum:" | "Lieferdatum:" => format!(
                    "{:02}.{:02}.{}",
                    rng.random_range(1..29u32),
                    rng.random_range(1..13u32),
                    rng.random_range(2015..2024u32)
                ),
                "Sachbearbeiter:" => ["Krause", "Lehmann", "Wolf", "Neumann"].choose(rng).expect("non-empty").to_string(),
                _ => rng.random_range(10000..999999u32).to_string(),
            };
            let top = top0 + i as u32 * m.pitch;
            let mut line = line_from_left(&[label.to_string()], label_x, top, m.body);
            line.extend(line_from_left(&[value], value_x, top, m.body));
            lines.push(line);
        }
        blocks.push(Block {
            role: BlockRole::UpperInfo,
            lines,
        });
    }

    // Title and intro start just below the first quarter.
    let mut y = frac(h, rng.random_range(0.265..0.28));
    let title_h = (m.body * 13 / 10).max(m.body + 1);
    let title = vec!["Rechnung".to_string(), format!("{}-{:04}", rng.random_range(2015..2024u32), rng.random_range(1..9999u32))];
    let intro = words(INTROS.choose(rng).expect("non-empty"));
    let intro_top = y + title_h + m.pitch / 2;
    blocks.push(Block {
        role: BlockRole::Intro,
        lines: vec![
            line_from_left(&title, margin_x, y, title_h),
            line_from_left(&intro, margin_x, intro_top, m.body),
        ],
    });
    y = intro_top + 2 * m.pitch;

    // Table geometry.
    let n_cols = rng.random_range(spec.table_columns.0..=spec.table_columns.1) as usize;
    let mut optional = vec![Column::Pos, Column::ArticleNo, Column::Unit, Column::UnitPrice];
    let mut chosen = vec![Column::Description, Column::Quantity, Column::Amount];
    while chosen.len() < n_cols {
        chosen.push(optional.remove(rng.random_range(0..optional.len())));
    }
    let columns: Vec<Column> = Column::CANONICAL.into_iter().filter(|c| chosen.contains(c)).collect();
    let table_width = f64::from(w) * rng.random_range(0.74..0.84);
    let offset = f64::from(w) * rng.random_range(-0.03..0.03);
    let table_left = f64::from(w) / 2.0 - table_width / 2.0 + offset;
    let total_weight: f64 = columns.iter().map(|c| c.weight()).sum();
    let pad = f64::from(w) * 0.01;
    let mut slots = Vec::with_capacity(columns.len());
    let mut x = table_left;
    for c in &columns {
        let sw = table_width * c.weight() / total_weight;
        slots.push(((x + pad).round() as u32, (x + sw - pad).round() as u32));
        x += sw;
    }

    if spec.header {
        // Column titles are centred over their slots, off the column edges.
        let line = columns
            .iter()
            .zip(&slots)
            .map(|(c, &(l, r))| {
                let tw = text_width(c.header(), m.body);
                let left = (l + r) / 2 - tw.min(r - l) / 2;
                Word {
                    text: c.header().to_string(),
                    left,
                    top: y,
                    width: tw,
                    height: m.body,
                }
            })
            .collect();
        blocks.push(Block {
            role: BlockRole::Header,
            lines: vec![line],
        });
        y += m.pitch + m.pitch / 2;
    }

    let rows = rng.random_range(spec.table_rows.0..=spec.table_rows.1);
    let desc_words = rng.random_range(1..=2usize);
    let fractional_qty = rng.random_bool(0.5);
    let mut net_cents: u64 = 0;
    let mut table_lines = Vec::with_capacity(rows as usize);
    for r in 0..rows {
        let top = y + r * m.pitch;
        let qty_units = rng.random_range(1..50u64);
        let price_cents = rng.random_range(50..250_000u64);
        let amount = qty_units * price_cents;
        net_cents += amount;
        let mut line = Vec::new();
        for (c, &(l, rt)) in columns.iter().zip(&slots) {
            let cell: Vec<String> = match c {
                Column::Pos => vec![(r + 1).to_string()],
                Column::ArticleNo => vec![format!(
                    "{}{}-{}",
                    ['A', 'B', 'K', 'M', 'X'].choose(rng).expect("non-empty"),
                    rng.random_range(1..10u32),
                    rng.random_range(100..99999u32)
                )],
                Column::Description => {
                    let mut d = vec![ITEMS.choose(rng).expect("non-empty").to_string()];
                    if desc_words == 2 {
                        d.push(ADJECTIVES.choose(rng).expect("non-empty").to_string());
                    }
                    d
                }
                Column::Quantity => vec![if fractional_qty {
                    format!("{qty_units},000")
                } else {
                    qty_units.to_string()
                }],
                Column::Unit => vec![UNITS.choose(rng).expect("non-empty").to_string()],
                Column::UnitPrice => vec![money(price_cents)],
                Column::Amount => vec![money(amount)],
            };
            if c.right_aligned() {
                line.extend(line_from_right(&cell, rt, top, m.body));
            } else {
                line.extend(line_from_left(&cell, l, top, m.body));
            }
        }
        table_lines.push(line);
    }
    blocks.push(Block {
        role: BlockRole::Table,
        lines: table_lines,
    });
    y += rows * m.pitch + m.pitch;
    let table_right = slots.last().expect("at least three columns").1;

    if spec.total {
        let amount_right = table_right - frac(w, rng.random_range(0.035..0.06));
        let label_left = amount_right - frac(w, rng.random_range(0.30..0.34));
        let tax = net_cents * 19 / 100;
        let entries = [
            (vec!["Nettobetrag".to_string()], money(net_cents)),
            (vec!["MwSt.".to_string(), "19%".to_string()], money(tax)),
            (vec!["Gesamtbetrag".to_string(), "EUR".to_string()], money(net_cents + tax)),
        ];
        let lines = entries
            .iter()
            .enumerate()
            .map(|(i, (label, value))| {
                let top = y + i as u32 * m.pitch;
                let mut line = line_from_left(label, label_left, top, m.body);
                line.extend(line_from_right(std::slice::from_ref(value), amount_right, top, m.body));
                line
            })
            .collect();
        blocks.push(Block {
            role: BlockRole::Total,
            lines,
        });
        y += 3 * m.pitch + m.pitch;
    }

    let closing = words(CLOSINGS.choose(rng).expect("non-empty"));
    blocks.push(Block {
        role: BlockRole::Closing,
        lines: vec![line_from_left(&closing, margin_x, y, m.body)],
    });
    let content_bottom = y + m.body;

    let footer_top = frac(h, rng.random_range(0.90..0.915));
    if spec.footer {
        let small_pitch = (f64::from(m.small) * 1.5).round() as u32;
        let col_x = [margin_x + frac(w, 0.02), frac(w, 0.38), frac(w, 0.68)];
        for (col, &x) in FOOTER_COLUMNS.iter().zip(&col_x) {
            let lines = col
                .iter()
                .enumerate()
                .map(|(i, l)| line_from_left(&words(l), x, footer_top + i as u32 * small_pitch, m.small))
                .collect();
            blocks.push(Block {
                role: BlockRole::Footer,
                lines,
            });
        }
    }

    let guard = default_tolerance(w) + 2 * MAX_JITTER_PX + 1;
    let table_words: Vec<&Word> = blocks
        .iter()
        .filter(|b| b.role == BlockRole::Table)
        .flat_map(|b| b.lines.iter().flatten())
        .collect();
    let min_size = (rows as usize / 2).max(3);
    let left_zones = crowded_spans(table_words.iter().map(|wd| wd.left), guard, min_size);
    let right_zones = crowded_spans(table_words.iter().map(|wd| wd.left + wd.width), guard, min_size);
    for b in blocks.iter_mut().filter(|b| b.role != BlockRole::Table) {
        if b.role == BlockRole::Header {
            // words move independently to stay near their own column
            for line in b.lines.iter_mut() {
                for wd in line.iter_mut() {
                    let mut one = Block { role: b.role, lines: vec![vec![wd.clone()]] };
                    clear_zones(&mut one, &left_zones, &right_zones, guard, w);
                    wd.left = one.lines[0][0].left;
                }
            }
        } else {
            clear_zones(b, &left_zones, &right_zones, guard, w);
        }
    }

    let limit = if spec.footer { footer_top } else { h };
    if content_bottom + MAX_JITTER_PX >= limit {
        return Err(SynthError::InfeasibleSpec(format!(
            "{rows} table rows do not fit above y={limit} on a {w}x{h} page"
        )));
    }
    for b in &blocks {
        for word in b.lines.iter().flatten() {
            if word.left + word.width + MAX_JITTER_PX > w || word.top + word.height + MAX_JITTER_PX > h {
                return Err(SynthError::InfeasibleSpec(format!(
                    "{:?} token {:?} does not fit the page",
                    b.role, word.text
                )));
            }
        }
    }
    Ok(blocks)
}

/// Coordinate spans of table groups with at least `min_size` members,
/// widened by `guard` on both sides.
fn crowded_spans(coords: impl Iterator<Item = u32>, guard: u32, min_size: usize) -> Vec<(u32, u32)> {
    let mut xs: Vec<u32> = coords.collect();
    xs.sort_unstable();
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 1..=xs.len() {
        if i == xs.len() || xs[i] - xs[i - 1] > guard {
            if i - start >= min_size {
                spans.push((xs[start].saturating_sub(guard), xs[i - 1] + guard));
            }
            start = i;
        }
    }
    spans
}

/// Shift a block sideways so none of its edges chain into a crowded table
/// group.
fn clear_zones(block: &mut Block, left: &[(u32, u32)], right: &[(u32, u32)], guard: u32, page_width: u32) {
    let near = |x: u32, zones: &[(u32, u32)]| zones.iter().any(|&(a, b)| (a..=b).contains(&x));
    let conflicts = |dx: i64| {
        block.lines.iter().flatten().any(|wd| {
            let l = i64::from(wd.left) + dx;
            let r = l + i64::from(wd.width);
            l < 0 || r + i64::from(MAX_JITTER_PX) > i64::from(page_width) || near(l as u32, left) || near(r as u32, right)
        })
    };
    let step = i64::from(guard);
    let shift = (0..40)
        .flat_map(|k| [k * step, -k * step])
        .find(|&dx| !conflicts(dx));
    if let Some(dx) = shift.filter(|&dx| dx != 0) {
        for wd in block.lines.iter_mut().flatten() {
            wd.left = (i64::from(wd.left) + dx) as u32;
        }
    }
}

fn apply_noise(blocks: &mut [Block], spec: &LayoutSpec, rng: &mut ChaCha8Rng) {
    let j = spec.jitter_px as i64;
    for b in blocks.iter_mut() {
        for line in b.lines.iter_mut() {
            line.retain(|_| !(spec.dropout > 0.0 && rng.random_bool(spec.dropout)));
            if j > 0 {
                for w in line.iter_mut() {
                    w.left = (i64::from(w.left) + rng.random_range(-j..=j)).max(0) as u32;
                    w.top = (i64::from(w.top) + rng.random_range(-j..=j)).max(0) as u32;
                }
            }
        }
        b.lines.retain(|l| !l.is_empty());
    }
}

/// Placement rules every emitted invoice satisfies.
fn check_priors(blocks: &[Block], spec: &LayoutSpec) -> Result<(), String> {
    let (w, h) = (spec.page_width, spec.page_height);
    let m = metrics(spec);
    let mut tokens = Vec::new();
    let mut roles = Vec::new();
    for b in blocks {
        for (li, line) in b.lines.iter().enumerate() {
            for word in line {
                tokens.push(Token {
                    level: 5,
                    page_num: 1,
                    block_num: 0,
                    par_num: 0,
                    line_num: li as u32,
                    word_num: 0,
                    left: word.left,
                    top: word.top,
                    width: word.width,
                    height: word.height,
                    conf: 0.0,
                    text: word.text.clone(),
                });
                roles.push(b.role);
            }
        }
    }

    let table: Vec<&Token> = tokens.iter().zip(&roles).filter(|(_, r)| **r == BlockRole::Table).map(|(t, _)| t).collect();
    if table.is_empty() {
        return Err("table lost every token".into());
    }
    let lo = table.iter().map(|t| t.left).min().expect("non-empty");
    let hi = table.iter().map(|t| t.right()).max().expect("non-empty");
    let centre = f64::from(lo + hi) / 2.0;
    if (centre - f64::from(w) / 2.0).abs() > 0.05 * f64::from(w) {
        return Err(format!("table centre {centre} is off-centre"));
    }

    for (t, r) in tokens.iter().zip(&roles) {
        match r {
            BlockRole::Address if t.bottom() > h / 4 || 4 * t.top >= h => {
                return Err(format!("address token {:?} leaves the first quarter", t.text))
            }
            BlockRole::Footer if 4 * t.top < 3 * h || t.height >= m.body => {
                return Err(format!("footer token {:?} misplaced", t.text))
            }
            _ => {}
        }
        if t.right() > w || t.bottom() > h {
            return Err(format!("token {:?} exceeds the page", t.text));
        }
    }

    let tol = default_tolerance(w);
    let mut best = 0;
    let mut groups: Vec<(u32, Vec<BlockRole>)> = Vec::new();
    for axis in [Axis::Left, Axis::Right] {
        let m = alignment_groups(&tokens, axis, tol);
        let mut members: HashMap<u32, (u32, Vec<BlockRole>)> = HashMap::new();
        for (i, g) in m.iter().enumerate() {
            let e = members.entry(g.group_id).or_insert((g.group_count, Vec::new()));
            if roles[i] != BlockRole::Table {
                e.1.push(roles[i]);
            }
        }
        for (_, (count, others)) in members {
            best = best.max(count);
            groups.push((count, others));
        }
    }
    if let Some((_, others)) = groups.iter().find(|(c, others)| *c == best && !others.is_empty()) {
        return Err(format!("largest alignment group ({best}) includes {others:?}"));
    }
    Ok(())
}

fn emit(blocks: &[Block], spec: &LayoutSpec, rng: &mut ChaCha8Rng, body_height: u32, attempt: u64) -> GeneratedInvoice {
    let mut tsv = String::new();
    let mut labels = Vec::new();
    let mut roles = Vec::new();
    tsv.push_str(TSV_HEADER);
    tsv.push('\n');
    let _ = writeln!(tsv, "1\t1\t0\t0\t0\t0\t0\t0\t{}\t{}\t-1\t", spec.page_width, spec.page_height);
    let bbox = |ws: &mut dyn Iterator<Item = &Word>| {
        let (mut l, mut t, mut r, mut b) = (u32::MAX, u32::MAX, 0, 0);
        for w in ws {
            l = l.min(w.left);
            t = t.min(w.top);
            r = r.max(w.left + w.width);
            b = b.max(w.top + w.height);
        }
        (l, t, r - l, b - t)
    };
    let mut block_num = 0;
    for block in blocks.iter().filter(|b| !b.lines.is_empty()) {
        block_num += 1;
        let (l, t, bw, bh) = bbox(&mut block.lines.iter().flatten());
        let _ = writeln!(tsv, "2\t1\t{block_num}\t0\t0\t0\t{l}\t{t}\t{bw}\t{bh}\t-1\t");
        let _ = writeln!(tsv, "3\t1\t{block_num}\t1\t0\t0\t{l}\t{t}\t{bw}\t{bh}\t-1\t");
        for (li, line) in block.lines.iter().enumerate() {
            let line_num = li + 1;
            let (l, t, lw, lh) = bbox(&mut line.iter());
            let _ = writeln!(tsv, "4\t1\t{block_num}\t1\t{line_num}\t0\t{l}\t{t}\t{lw}\t{lh}\t-1\t");
            for (wi, w) in line.iter().enumerate() {
                let conf = f64::from(rng.random_range(7000..9999u32)) / 100.0;
                let _ = writeln!(
                    tsv,
                    "5\t1\t{block_num}\t1\t{line_num}\t{}\t{}\t{}\t{}\t{}\t{conf}\t{}",
                    wi + 1,
                    w.left,
                    w.top,
                    w.width,
                    w.height,
                    w.text
                );
                labels.push(u8::from(block.role == BlockRole::Table));
                roles.push(block.role);
            }
        }
    }
    GeneratedInvoice {
        tsv,
        labels,
        roles,
        body_height,
        attempt,
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate one invoice from `spec.seed`.
pub fn generate_invoice(spec: &LayoutSpec) -> Result<GeneratedInvoice, SynthError> {
    spec.validate()?;
    let mut last_reason = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, attempt));
        let mut blocks = compose(spec, &mut rng)?;
        apply_noise(&mut blocks, spec, &mut rng);
        match check_priors(&blocks, spec) {
            Ok(()) => return Ok(emit(&blocks, spec, &mut rng, metrics(spec).body, attempt)),
            Err(reason) => last_reason = reason,
        }
    }
    Err(SynthError::InfeasibleSpec(format!(
        "no layout satisfied the placement rules in {MAX_ATTEMPTS} attempts (last: {last_reason})"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub file: String,
    pub seed: u64,
    pub tokens: usize,
    pub table_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub generator: String,
    pub n: usize,
    pub master_seed: u64,
    pub spec: LayoutSpec,
    pub documents: Vec<ManifestEntry>,
}

pub fn doc_id_for(index: usize) -> String {
    format!("inv-{index:05}")
}

/// Generate `n` invoices in memory; document `i` uses a seed derived from
/// `(seed, i)`.
pub fn generate_corpus_in_memory(
    n: usize,
    spec: &LayoutSpec,
    seed: u64,
) -> Result<Vec<(ManifestEntry, GeneratedInvoice)>, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptyCorpus);
    }
    (0..n)
        .map(|i| {
            let doc_seed = mix_seed(seed, 0x1000 + i as u64);
            let inv = generate_invoice(&LayoutSpec {
                seed: doc_seed,
                ..spec.clone()
            })?;
            let doc_id = doc_id_for(i);
            let entry = ManifestEntry {
                file: format!("{doc_id}.tsv"),
                doc_id,
                seed: doc_seed,
                tokens: inv.labels.len(),
                table_tokens: inv.labels.iter().filter(|&&l| l == 1).count(),
            };
            Ok((entry, inv))
        })
        .collect()
}

/// Write a corpus directory: one TSV per invoice, `labels.jsonl` with seed
/// labels and `manifest.json`.
pub fn generate_corpus(n: usize, spec: &LayoutSpec, seed: u64, out_dir: &Path) -> Result<CorpusManifest, SynthError> {
    let docs = generate_corpus_in_memory(n, spec, seed)?;
    fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    for (entry, inv) in &docs {
        fs::write(out_dir.join(&entry.file), &inv.tsv)?;
        records.extend(inv.labels.iter().enumerate().map(|(i, &label)| {
            (
                LabelKey::new(entry.doc_id.clone(), i),
                LabelRecord {
                    label,
                    source: LabelSource::Seed,
                    revision: 1,
                    timestamp: 0,
                },
            )
        }));
    }
    write_label_records(BufWriter::new(fs::File::create(out_dir.join("labels.jsonl"))?), &records)?;
    let manifest = CorpusManifest {
        generator: GENERATOR_VERSION.to_string(),
        n,
        master_seed: seed,
        spec: spec.clone(),
        documents: docs.into_iter().map(|(e, _)| e).collect(),
    };
    let mut f = BufWriter::new(fs::File::create(out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{featurize_document, AlignmentTolerance};
    use crate::ingest::parse_tsv_str;
    use std::collections::BTreeMap;

    fn spec(seed: u64) -> LayoutSpec {
        LayoutSpec { seed, ..Default::default() }
    }

    #[test]
    fn money_format() {
        assert_eq!(money(7063), "70,63");
        assert_eq!(money(123456), "1.234,56");
        assert_eq!(money(5), "0,05");
        assert_eq!(money(100_000_000), "1.000.000,00");
    }

    #[test]
    fn default_seed_seven_parses_and_holds_priors() {
        let inv = generate_invoice(&spec(7)).unwrap();
        let doc = parse_tsv_str("x", &inv.tsv).unwrap();
        assert_eq!(doc.token_count(), inv.labels.len());
        let rows = featurize_document(&doc, AlignmentTolerance::Auto);
        let best = rows.iter().map(|r| r.left_alignment_count.max(r.right_alignment_count)).max().unwrap();
        for r in &rows {
            if r.left_alignment_count == best || r.right_alignment_count == best {
                assert_eq!(r.label, 0, "label not applied yet");
                assert_eq!(inv.labels[r.token_index], 1, "{:?} in largest group", r.raw_text);
            }
        }
    }

    #[test]
    fn footer_and_address_quarters() {
        for seed in 0..20 {
            let inv = generate_invoice(&spec(seed)).unwrap();
            let doc = parse_tsv_str("x", &inv.tsv).unwrap();
            let h = doc.pages[0].page_height;
            for ((_, t), role) in doc.tokens().zip(&inv.roles) {
                match role {
                    BlockRole::Footer => {
                        assert!(4 * t.top >= 3 * h);
                        assert!(t.height < inv.body_height);
                    }
                    BlockRole::Address => assert!(4 * t.top < h && 4 * t.bottom() <= h),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn table_rows_share_pattern_without_dropout() {
        for seed in 0..10 {
            let inv = generate_invoice(&spec(seed).noiseless()).unwrap();
            let doc = parse_tsv_str("x", &inv.tsv).unwrap();
            let rows = featurize_document(&doc, AlignmentTolerance::Auto);
            let patterns: std::collections::HashSet<&str> = rows
                .iter()
                .filter(|r| inv.labels[r.token_index] == 1)
                .map(|r| r.line_block_regex.as_str())
                .collect();
            assert_eq!(patterns.len(), 1, "{patterns:?}");
        }
    }

    #[test]
    fn table_columns_align_within_tolerance() {
        let inv = generate_invoice(&spec(3)).unwrap();
        let doc = parse_tsv_str("x", &inv.tsv).unwrap();
        let page = &doc.pages[0];
        let tol = default_tolerance(page.page_width);
        // the first token of every table line sits on one left edge
        let mut firsts: BTreeMap<(u32, u32, u32), u32> = BTreeMap::new();
        for (t, &l) in page.tokens.iter().zip(&inv.labels) {
            if l == 1 {
                firsts.entry(t.line_key()).or_insert(t.left);
            }
        }
        let lo = firsts.values().min().unwrap();
        let hi = firsts.values().max().unwrap();
        assert!(hi - lo < tol);
    }

    #[test]
    fn options_and_errors() {
        let bare = LayoutSpec {
            address: false,
            upper_info: false,
            header: false,
            total: false,
            footer: false,
            ..spec(1)
        };
        let inv = generate_invoice(&bare).unwrap();
        assert!(inv.roles.iter().all(|r| !matches!(r, BlockRole::Address | BlockRole::Footer)));

        let too_many = LayoutSpec { table_rows: (120, 130), ..spec(1) };
        assert!(matches!(generate_invoice(&too_many), Err(SynthError::InfeasibleSpec(_))));
        let noisy = LayoutSpec { jitter_px: 5, ..spec(1) };
        assert!(matches!(generate_invoice(&noisy), Err(SynthError::InfeasibleSpec(_))));
        let cols = LayoutSpec { table_columns: (2, 9), ..spec(1) };
        assert!(generate_invoice(&cols).is_err());
        assert!(matches!(generate_corpus_in_memory(0, &spec(1), 1), Err(SynthError::EmptyCorpus)));
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(3, &LayoutSpec::default(), 1, a.path()).unwrap();
        generate_corpus(3, &LayoutSpec::default(), 1, b.path()).unwrap();
        for name in ["inv-00000.tsv", "inv-00001.tsv", "inv-00002.tsv", "labels.jsonl", "manifest.json"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
