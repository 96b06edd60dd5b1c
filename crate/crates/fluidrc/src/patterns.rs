//! Injection patterns: 3x5 binary grids and their frame-level pump schedules.
//!
//! Rows are the three dye pumps (red, green, blue top to bottom); the five
//! columns are 5-second injection slots. A cell of 1 runs that dye's pump
//! for the whole slot. Every record ends with an idle tail of equal length,
//! so a full record spans 1800 frames at 60 fps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{GroupBy, LabeledMatrix};

pub const ROWS: usize = 3;
pub const COLS: usize = 5;
/// Frames per injection slot (5 s at 60 fps).
pub const SLOT_FRAMES: usize = 300;
/// Idle tail after the last slot.
pub const IDLE_FRAMES: usize = 300;
/// Total frames per record (30 s at 60 fps).
pub const RECORD_FRAMES: usize = COLS * SLOT_FRAMES + IDLE_FRAMES;

/// Maximum column shift explored by the shift-tolerant similarity metric.
pub const MAX_SHIFT: i64 = 2;

const FIXTURES: &str = include_str!("pattern_fixtures.txt");

/// The eight pattern classes, in readout-class order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum PatternClass {
    P1,
    P2,
    P3,
    P4,
    P5,
    PU,
    PN,
    PL,
}

pub const CLASS_COUNT: usize = 8;
pub const VARIANTS_PER_CLASS: usize = 10;

impl PatternClass {
    pub const ALL: [PatternClass; CLASS_COUNT] = [
        PatternClass::P1,
        PatternClass::P2,
        PatternClass::P3,
        PatternClass::P4,
        PatternClass::P5,
        PatternClass::PU,
        PatternClass::PN,
        PatternClass::PL,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn label(self) -> &'static str {
        match self {
            PatternClass::P1 => "P1",
            PatternClass::P2 => "P2",
            PatternClass::P3 => "P3",
            PatternClass::P4 => "P4",
            PatternClass::P5 => "P5",
            PatternClass::PU => "PU",
            PatternClass::PN => "PN",
            PatternClass::PL => "PL",
        }
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PatternClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternClass::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::data(format!("unknown pattern class '{s}'")))
    }
}

/// Identity of one corpus entry: class plus variant 1..=10.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Label {
    pub class: PatternClass,
    pub variant: u8,
}

impl Label {
    pub fn new(class: PatternClass, variant: u8) -> Self {
        Label { class, variant }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.class, self.variant)
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (class, variant) = s
            .split_once(':')
            .ok_or_else(|| Error::data(format!("pattern label '{s}' is not CLASS:VARIANT")))?;
        let class: PatternClass = class.parse()?;
        let variant: u8 = variant
            .parse()
            .map_err(|_| Error::data(format!("pattern label '{s}' has a non-numeric variant")))?;
        if !(1..=VARIANTS_PER_CLASS as u8).contains(&variant) {
            return Err(Error::data(format!(
                "pattern label '{s}': variant must be 1..={VARIANTS_PER_CLASS}"
            )));
        }
        Ok(Label { class, variant })
    }
}

/// One injection pattern: a labeled 3x5 binary grid.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Pattern {
    pub label: Label,
    /// cells[row][col]; row 0 = red, 1 = green, 2 = blue. Values are 0 or 1.
    pub cells: [[u8; COLS]; ROWS],
}

impl Pattern {
    /// Pump activity for a frame: slot blocks then the idle tail.
    pub fn pumps_at(&self, frame: usize) -> [bool; ROWS] {
        let col = frame / SLOT_FRAMES;
        if col >= COLS {
            return [false; ROWS];
        }
        [
            self.cells[0][col] == 1,
            self.cells[1][col] == 1,
            self.cells[2][col] == 1,
        ]
    }
}

/// Per-frame pump activity for all three dyes.
pub type Schedule = Vec<[bool; ROWS]>;

/// Expand a grid into its 1800-frame pump schedule: five 300-frame blocks in
/// column order, then a 300-frame all-off tail.
pub fn encode_schedule(pattern: &Pattern) -> Schedule {
    (0..RECORD_FRAMES).map(|f| pattern.pumps_at(f)).collect()
}

/// Parse a fixture corpus from its text form: stanzas of a `CLASS VARIANT`
/// header line followed by three rows of five `{0,1}` cells. `#` starts a
/// comment line; blank lines separate stanzas.
pub fn parse_fixtures(text: &str) -> Result<Vec<Pattern>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let mut patterns: Vec<Pattern> = Vec::new();
    while let Some(header) = lines.next() {
        let entry = format!("fixture stanza '{header}'");
        let (class, variant) = header
            .split_once(' ')
            .ok_or_else(|| Error::data(format!("{entry}: header is not 'CLASS VARIANT'")))?;
        let class: PatternClass = class
            .parse()
            .map_err(|_| Error::data(format!("{entry}: unknown class '{class}'")))?;
        let variant: u8 = variant
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("{entry}: variant is not a number")))?;
        if !(1..=VARIANTS_PER_CLASS as u8).contains(&variant) {
            return Err(Error::data(format!(
                "{entry}: variant must be 1..={VARIANTS_PER_CLASS}"
            )));
        }
        let mut cells = [[0u8; COLS]; ROWS];
        for row in &mut cells {
            let line = lines
                .next()
                .ok_or_else(|| Error::data(format!("{entry}: truncated grid")))?;
            if line.len() != COLS {
                return Err(Error::data(format!(
                    "{entry}: grid row '{line}' is not {COLS} cells"
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                row[c] = match ch {
                    '0' => 0,
                    '1' => 1,
                    other => {
                        return Err(Error::data(format!(
                            "{entry}: invalid cell '{other}' (expected 0 or 1)"
                        )))
                    }
                };
            }
        }
        let label = Label { class, variant };
        if patterns.iter().any(|p| p.label == label) {
            return Err(Error::data(format!("{entry}: duplicate entry {label}")));
        }
        patterns.push(Pattern { label, cells });
    }
    for class in PatternClass::ALL {
        let n = patterns.iter().filter(|p| p.label.class == class).count();
        if n != VARIANTS_PER_CLASS {
            return Err(Error::data(format!(
                "fixture corpus: class {class} has {n} variants (expected {VARIANTS_PER_CLASS})"
            )));
        }
    }
    patterns.sort_by_key(|p| p.label);
    Ok(patterns)
}

/// Load a fixture corpus from a file.
pub fn load_fixtures(path: &Path) -> Result<Vec<Pattern>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixtures(&text)
}

/// The built-in corpus: 8 classes x 10 variants, class-major order.
pub fn canonical_corpus() -> &'static [Pattern] {
    static CORPUS: OnceLock<Vec<Pattern>> = OnceLock::new();
    CORPUS.get_or_init(|| parse_fixtures(FIXTURES).expect("embedded fixture corpus is valid"))
}

pub fn corpus_pattern(label: Label) -> &'static Pattern {
    canonical_corpus()
        .iter()
        .find(|p| p.label == label)
        .expect("corpus covers every label")
}

/// Cell agreement between `a` shifted right by `shift` columns and `b`,
/// counted over the overlapping window only.
fn agreement_at(a: &Pattern, b: &Pattern, shift: i64) -> (usize, usize) {
    let mut same = 0;
    let mut total = 0;
    for row in 0..ROWS {
        for col in 0..COLS as i64 {
            let from = col - shift;
            if !(0..COLS as i64).contains(&from) {
                continue;
            }
            total += 1;
            if a.cells[row][from as usize] == b.cells[row][col as usize] {
                same += 1;
            }
        }
    }
    (same, total)
}

/// Percentage of identically valued cells between two grids. With `shifts`
/// the score is maximized over column shifts of at most +/-2, scoring each
/// alignment on its overlapping cells only; shift 0 is always included, so
/// the shifted score never falls below the plain one.
pub fn pattern_similarity(a: &Pattern, b: &Pattern, shifts: bool) -> f64 {
    let range = if shifts { -MAX_SHIFT..=MAX_SHIFT } else { 0..=0 };
    range
        .map(|s| {
            let (same, total) = agreement_at(a, b, s);
            100.0 * same as f64 / total as f64
        })
        .fold(f64::MIN, f64::max)
}

/// Pairwise similarity matrix over the given patterns.
///
/// Variant mode yields one row per pattern (class-major label order). Class
/// mode averages: off-diagonal entries over all ordered variant pairs of the
/// two classes, diagonal entries over the distinct ordered pairs within the
/// class (self-pairs excluded, so within-class spread stays visible).
pub fn similarity_matrix(patterns: &[Pattern], by: GroupBy, shifts: bool) -> LabeledMatrix {
    pairwise_matrix(patterns, by, |a, b| pattern_similarity(a, b, shifts))
}

pub(crate) fn pairwise_matrix<T, F>(items: &[T], by: GroupBy, score: F) -> LabeledMatrix
where
    F: Fn(&T, &T) -> f64,
    T: HasLabel,
{
    match by {
        GroupBy::Variant => {
            let labels: Vec<String> = items.iter().map(|p| p.label().to_string()).collect();
            let values = items
                .iter()
                .map(|a| items.iter().map(|b| score(a, b)).collect())
                .collect();
            LabeledMatrix::new(labels.clone(), labels, values)
        }
        GroupBy::Class => {
            let labels: Vec<String> = PatternClass::ALL.iter().map(|c| c.to_string()).collect();
            let values = PatternClass::ALL
                .iter()
                .map(|&ca| {
                    PatternClass::ALL
                        .iter()
                        .map(|&cb| {
                            let mut sum = 0.0;
                            let mut n = 0usize;
                            for a in items.iter().filter(|p| p.label().class == ca) {
                                for b in items.iter().filter(|p| p.label().class == cb) {
                                    if ca == cb && a.label() == b.label() {
                                        continue;
                                    }
                                    sum += score(a, b);
                                    n += 1;
                                }
                            }
                            sum / n as f64
                        })
                        .collect()
                })
                .collect();
            LabeledMatrix::new(labels.clone(), labels, values)
        }
    }
}

/// Anything carrying a corpus label; lets grouping code serve both raw
/// patterns and simulated records.
pub(crate) trait HasLabel {
    fn label(&self) -> Label;
}

impl HasLabel for Pattern {
    fn label(&self) -> Label {
        self.label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_has_ten_variants_per_class() {
        let corpus = canonical_corpus();
        assert_eq!(corpus.len(), 80);
        for class in PatternClass::ALL {
            let n = corpus.iter().filter(|p| p.label.class == class).count();
            assert_eq!(n, VARIANTS_PER_CLASS, "{class}");
        }
        // Deterministic: a fresh parse gives the same corpus in the same order.
        let again = parse_fixtures(FIXTURES).unwrap();
        assert_eq!(corpus, &again[..]);
    }

    #[test]
    fn within_class_grids_are_distinct() {
        let corpus = canonical_corpus();
        for class in PatternClass::ALL {
            let grids: Vec<_> = corpus
                .iter()
                .filter(|p| p.label.class == class)
                .map(|p| p.cells)
                .collect();
            for i in 0..grids.len() {
                for j in i + 1..grids.len() {
                    assert_ne!(grids[i], grids[j], "{class} v{} vs v{}", i + 1, j + 1);
                }
            }
        }
    }

    #[test]
    fn schedule_block_structure() {
        // Single red cell in column 2: red pump runs frames 600..=899 only.
        let pattern = Pattern {
            label: Label::new(PatternClass::P1, 1),
            cells: [[0, 0, 1, 0, 0], [0; 5], [0; 5]],
        };
        let schedule = encode_schedule(&pattern);
        assert_eq!(schedule.len(), RECORD_FRAMES);
        for (frame, pumps) in schedule.iter().enumerate() {
            let red_on = (600..900).contains(&frame);
            assert_eq!(pumps[0], red_on, "frame {frame}");
            assert!(!pumps[1] && !pumps[2]);
        }
        // Idle tail is all-off for every corpus pattern.
        for pattern in canonical_corpus() {
            for frame in COLS * SLOT_FRAMES..RECORD_FRAMES {
                assert_eq!(pattern.pumps_at(frame), [false; 3], "{}", pattern.label);
            }
        }
    }

    #[test]
    fn schedule_majority_vote_recovers_grid() {
        // Invertibility over the slot region: per-block majority vote.
        for pattern in canonical_corpus() {
            let schedule = encode_schedule(pattern);
            let mut recovered = [[0u8; COLS]; ROWS];
            for col in 0..COLS {
                for row in 0..ROWS {
                    let on = (0..SLOT_FRAMES)
                        .filter(|f| schedule[col * SLOT_FRAMES + f][row])
                        .count();
                    recovered[row][col] = u8::from(on * 2 > SLOT_FRAMES);
                }
            }
            assert_eq!(recovered, pattern.cells, "{}", pattern.label);
        }
    }

    #[test]
    fn similarity_identity_symmetry_complement() {
        let corpus = canonical_corpus();
        for p in corpus.iter().step_by(7) {
            assert_eq!(pattern_similarity(p, p, false), 100.0);
            assert_eq!(pattern_similarity(p, p, true), 100.0);
        }
        for a in corpus.iter().step_by(11) {
            for b in corpus.iter().step_by(13) {
                for shifts in [false, true] {
                    let ab = pattern_similarity(a, b, shifts);
                    let ba = pattern_similarity(b, a, shifts);
                    assert!((ab - ba).abs() < 1e-12);
                    assert!((0.0..=100.0).contains(&ab));
                }
                assert!(
                    pattern_similarity(a, b, true) >= pattern_similarity(a, b, false) - 1e-12
                );
            }
        }
        let a = &corpus[0];
        let mut complement = a.clone();
        for row in 0..ROWS {
            for col in 0..COLS {
                complement.cells[row][col] = 1 - a.cells[row][col];
            }
        }
        assert_eq!(pattern_similarity(a, &complement, false), 0.0);
    }

    /// Brute-force oracle: best agreement over every +/-2 column alignment,
    /// written independently of `pattern_similarity`'s windowing code.
    fn oracle_shifted(a: &Pattern, b: &Pattern) -> f64 {
        let mut best = 0.0f64;
        for shift in -2i64..=2 {
            let mut same = 0usize;
            let mut total = 0usize;
            for row in 0..ROWS {
                for a_col in 0..COLS as i64 {
                    let b_col = a_col + shift;
                    if (0..COLS as i64).contains(&b_col) {
                        total += 1;
                        if a.cells[row][a_col as usize] == b.cells[row][b_col as usize] {
                            same += 1;
                        }
                    }
                }
            }
            best = best.max(100.0 * same as f64 / total as f64);
        }
        best
    }

    #[test]
    fn shifted_outlier_pair_matches_oracle() {
        let n10 = corpus_pattern(Label::new(PatternClass::PN, 10));
        let u1 = corpus_pattern(Label::new(PatternClass::PU, 1));
        let got = pattern_similarity(n10, u1, true);
        assert_eq!(got, oracle_shifted(n10, u1));
        // Golden value frozen from the oracle: 8 of 12 cells at shift -1.
        assert!((got - 66.666_666_666_666_67).abs() < 1e-9);
        // The outlier property: v10 sits far from its own canonical without
        // shift compensation, while the shifted metric sees through it.
        let n1 = corpus_pattern(Label::new(PatternClass::PN, 1));
        assert!(pattern_similarity(n10, n1, false) < 40.0);
        assert_eq!(pattern_similarity(n10, n1, true), 100.0);
        for v in 2..=9 {
            let sib = corpus_pattern(Label::new(PatternClass::PN, v));
            assert!(pattern_similarity(sib, n1, false) >= 80.0, "v{v}");
        }
    }

    #[test]
    fn class_matrix_aggregates_variant_pairs() {
        let corpus = canonical_corpus();
        let by_class = similarity_matrix(corpus, GroupBy::Class, false);
        assert_eq!(by_class.values.len(), 8);
        // Independent recomputation of one off-diagonal entry.
        let pn: Vec<_> = corpus.iter().filter(|p| p.label.class == PatternClass::PN).collect();
        let pl: Vec<_> = corpus.iter().filter(|p| p.label.class == PatternClass::PL).collect();
        let mut sum = 0.0;
        for a in &pn {
            for b in &pl {
                sum += pattern_similarity(a, b, false);
            }
        }
        let row = PatternClass::PN.index();
        let col = PatternClass::PL.index();
        assert!((by_class.values[row][col] - sum / 100.0).abs() < 1e-9);
        // Symmetry.
        for i in 0..8 {
            for j in 0..8 {
                assert!((by_class.values[i][j] - by_class.values[j][i]).abs() < 1e-9);
            }
        }

        let by_variant = similarity_matrix(corpus, GroupBy::Variant, false);
        assert_eq!(by_variant.values.len(), 80);
        for i in 0..80 {
            assert_eq!(by_variant.values[i][i], 100.0);
        }
    }

    #[test]
    fn fixture_parse_errors_name_the_entry() {
        let bad_cell = "P1 1\n10101\n10201\n10101\n";
        let err = parse_fixtures(bad_cell).unwrap_err().to_string();
        assert!(err.contains("P1 1") && err.contains('2'), "{err}");

        let bad_class = "PX 1\n10101\n10101\n10101\n";
        let err = parse_fixtures(bad_class).unwrap_err().to_string();
        assert!(err.contains("PX"), "{err}");

        let bad_variant = "P1 11\n10101\n10101\n10101\n";
        let err = parse_fixtures(bad_variant).unwrap_err().to_string();
        assert!(err.contains("P1 11"), "{err}");

        let truncated = "P1 1\n10101\n10101\n";
        let err = parse_fixtures(truncated).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let duplicate = "P1 1\n10101\n10101\n10101\n\nP1 1\n10101\n10101\n10101\n";
        let err = parse_fixtures(duplicate).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");

        // A structurally valid file still fails corpus-level counting.
        let one_stanza = "P1 1\n10101\n10101\n10101\n";
        let err = parse_fixtures(one_stanza).unwrap_err().to_string();
        assert!(err.contains("has 1 variants") || err.contains("expected 10"), "{err}");
    }

    #[test]
    fn label_round_trips_through_strings() {
        let label: Label = "PN:10".parse().unwrap();
        assert_eq!(label, Label::new(PatternClass::PN, 10));
        assert_eq!(label.to_string(), "PN:10");
        assert!("PN".parse::<Label>().is_err());
        assert!("PN:0".parse::<Label>().is_err());
        assert!("PN:11".parse::<Label>().is_err());
        assert!("XX:1".parse::<Label>().is_err());
    }
}
