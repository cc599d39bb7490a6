//! Examiner response tables: parsing, validation, scoring and the categorical
//! views consumed by the models.
//!
//! A response table has one row per examiner x item interaction. Every row is
//! checked against the record invariants; rows that fail are quarantined
//! (kept out of every matrix) and listed in a [`RowIssue`] report instead of
//! aborting the parse.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Record fields
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mating {
    Mates,
    NonMates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatentValue {
    /// No value.
    NV,
    /// Value for exclusion only.
    VEO,
    /// Value for individualization.
    VID,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparison {
    Exclusion,
    Inconclusive,
    Individualization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InconclusiveReason {
    Close,
    Insufficient,
    NoOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExclusionReason {
    Minutiae,
    Pattern,
}

/// Five point reported difficulty, `AObvious` (1) through `EVeryDifficult` (5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReportedDifficulty {
    AObvious = 1,
    BEasy = 2,
    CMedium = 3,
    DDifficult = 4,
    EVeryDifficult = 5,
}

impl ReportedDifficulty {
    pub const ALL: [ReportedDifficulty; 5] = [
        Self::AObvious,
        Self::BEasy,
        Self::CMedium,
        Self::DDifficult,
        Self::EVeryDifficult,
    ];

    /// Ordinal level in `1..=5`.
    pub fn level(self) -> usize {
        self as usize
    }

    pub fn from_level(level: usize) -> Option<Self> {
        Self::ALL.get(level.checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub examiner_id: String,
    pub item_id: String,
    pub mating: Mating,
    pub latent_value: LatentValue,
    pub compare_value: Option<Comparison>,
    pub inconclusive_reason: Option<InconclusiveReason>,
    pub exclusion_reason: Option<ExclusionReason>,
    pub reported_difficulty: Option<ReportedDifficulty>,
}

impl ResponseRecord {
    /// Invariant violations as `(field, message)` pairs; empty when valid.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let inconclusive = self.compare_value == Some(Comparison::Inconclusive);
        if self.inconclusive_reason.is_some() != inconclusive {
            out.push((
                "inconclusive_reason",
                if inconclusive {
                    "inconclusive comparison without a reason".to_string()
                } else {
                    format!(
                        "inconclusive reason given for comparison {:?}",
                        self.compare_value
                    )
                },
            ));
        }
        let no_value = self.latent_value == LatentValue::NV;
        if self.compare_value.is_none() != no_value {
            out.push((
                "compare_value",
                if no_value {
                    "comparison recorded for a no-value latent".to_string()
                } else {
                    "latent has value but no comparison recorded".to_string()
                },
            ));
        }
        if self.exclusion_reason.is_some() && self.compare_value != Some(Comparison::Exclusion) {
            out.push((
                "exclusion_reason",
                "exclusion reason given for a non-exclusion".to_string(),
            ));
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    /// True for a conclusive decision that matches ground truth.
    pub fn is_true_conclusion(&self) -> Option<bool> {
        match (self.compare_value?, self.mating) {
            (Comparison::Individualization, Mating::Mates) => Some(true),
            (Comparison::Exclusion, Mating::NonMates) => Some(true),
            (Comparison::Individualization, Mating::NonMates) => Some(false),
            (Comparison::Exclusion, Mating::Mates) => Some(false),
            (Comparison::Inconclusive, _) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Scales
// ---------------------------------------------------------------------------

/// Ordered conclusiveness scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Conclusiveness {
    NoValue = 1,
    Inconclusive = 2,
    Conclusive = 3,
}

impl Conclusiveness {
    pub const ALL: [Conclusiveness; 3] = [Self::NoValue, Self::Inconclusive, Self::Conclusive];

    /// Zero-based category index.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Conclusiveness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NoValue => "NoValue",
            Self::Inconclusive => "Inconclusive",
            Self::Conclusive => "Conclusive",
        })
    }
}

/// Leaves of the five-node decision process tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequentialResponse {
    NoValue,
    Individualization,
    Close,
    Insufficient,
    NoOverlap,
    Exclusion,
}

impl SequentialResponse {
    pub const ALL: [SequentialResponse; 6] = [
        Self::NoValue,
        Self::Individualization,
        Self::Close,
        Self::Insufficient,
        Self::NoOverlap,
        Self::Exclusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoValue => "NoValue",
            Self::Individualization => "Individualization",
            Self::Close => "Close",
            Self::Insufficient => "Insufficient",
            Self::NoOverlap => "NoOverlap",
            Self::Exclusion => "Exclusion",
        }
    }

    pub fn conclusiveness(self) -> Conclusiveness {
        match self {
            Self::NoValue => Conclusiveness::NoValue,
            Self::Close | Self::Insufficient | Self::NoOverlap => Conclusiveness::Inconclusive,
            Self::Individualization | Self::Exclusion => Conclusiveness::Conclusive,
        }
    }
}

impl fmt::Display for SequentialResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Leaves of the three-node answer key tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyResponse {
    NoValue,
    Inconclusive,
    Individualization,
    Exclusion,
}

impl KeyResponse {
    pub const ALL: [KeyResponse; 4] = [
        Self::NoValue,
        Self::Inconclusive,
        Self::Individualization,
        Self::Exclusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoValue => "NoValue",
            Self::Inconclusive => "Inconclusive",
            Self::Individualization => "Individualization",
            Self::Exclusion => "Exclusion",
        }
    }

    pub fn conclusiveness(self) -> Conclusiveness {
        match self {
            Self::NoValue => Conclusiveness::NoValue,
            Self::Inconclusive => Conclusiveness::Inconclusive,
            Self::Individualization | Self::Exclusion => Conclusiveness::Conclusive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ScoringScheme {
    /// Inconclusive and no-value responses are treated as missing.
    #[default]
    InconclusiveMcar,
    InconclusiveIncorrect,
    InconclusiveCorrect,
}

impl ScoringScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::InconclusiveMcar => "mcar",
            Self::InconclusiveIncorrect => "incorrect",
            Self::InconclusiveCorrect => "correct",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::InconclusiveMcar => {
                "inconclusive and no-value responses missing completely at random"
            }
            Self::InconclusiveIncorrect => "inconclusive and no-value responses scored incorrect",
            Self::InconclusiveCorrect => "inconclusive and no-value responses scored correct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match normalize_token(s).as_str() {
            "mcar" | "inconclusivemcar" | "missing" => Some(Self::InconclusiveMcar),
            "incorrect" | "inconclusiveincorrect" | "wrong" => Some(Self::InconclusiveIncorrect),
            "correct" | "inconclusivecorrect" | "right" => Some(Self::InconclusiveCorrect),
            _ => None,
        }
    }
}

/// Binary score of a valid record; `None` when the scheme drops it.
pub fn score_record(r: &ResponseRecord, scheme: ScoringScheme) -> Option<u8> {
    match r.is_true_conclusion() {
        Some(correct) => Some(u8::from(correct)),
        None => match scheme {
            ScoringScheme::InconclusiveMcar => None,
            ScoringScheme::InconclusiveIncorrect => Some(0),
            ScoringScheme::InconclusiveCorrect => Some(1),
        },
    }
}

pub fn to_conclusiveness(r: &ResponseRecord) -> Result<Conclusiveness> {
    match (r.latent_value, r.compare_value) {
        (LatentValue::NV, _) => Ok(Conclusiveness::NoValue),
        (_, Some(Comparison::Inconclusive)) => Ok(Conclusiveness::Inconclusive),
        (_, Some(Comparison::Individualization | Comparison::Exclusion)) => {
            Ok(Conclusiveness::Conclusive)
        }
        (lv, None) => Err(Error::Integrity(format!(
            "examiner {} item {}: latent {:?} without a comparison",
            r.examiner_id, r.item_id, lv
        ))),
    }
}

pub fn to_sequential(r: &ResponseRecord) -> Result<SequentialResponse> {
    if r.latent_value == LatentValue::NV {
        return Ok(SequentialResponse::NoValue);
    }
    match r.compare_value {
        Some(Comparison::Individualization) => Ok(SequentialResponse::Individualization),
        Some(Comparison::Exclusion) => Ok(SequentialResponse::Exclusion),
        Some(Comparison::Inconclusive) => match r.inconclusive_reason {
            Some(InconclusiveReason::Close) => Ok(SequentialResponse::Close),
            Some(InconclusiveReason::Insufficient) => Ok(SequentialResponse::Insufficient),
            Some(InconclusiveReason::NoOverlap) => Ok(SequentialResponse::NoOverlap),
            None => Err(Error::Integrity(format!(
                "examiner {} item {}: inconclusive without a reason",
                r.examiner_id, r.item_id
            ))),
        },
        None => Err(Error::Integrity(format!(
            "examiner {} item {}: latent {:?} without a comparison",
            r.examiner_id, r.item_id, r.latent_value
        ))),
    }
}

pub fn to_key_response(r: &ResponseRecord) -> Result<KeyResponse> {
    Ok(match to_sequential(r)? {
        SequentialResponse::NoValue => KeyResponse::NoValue,
        SequentialResponse::Individualization => KeyResponse::Individualization,
        SequentialResponse::Exclusion => KeyResponse::Exclusion,
        _ => KeyResponse::Inconclusive,
    })
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Header names of the table columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub examiner_id: String,
    pub item_id: String,
    pub mating: String,
    pub latent_value: String,
    pub compare_value: String,
    pub inconclusive_reason: String,
    pub exclusion_reason: String,
    pub reported_difficulty: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            examiner_id: "Examiner_ID".into(),
            item_id: "Pair_ID".into(),
            mating: "Mating".into(),
            latent_value: "Latent_Value".into(),
            compare_value: "Compare_Value".into(),
            inconclusive_reason: "Inconclusive_Reason".into(),
            exclusion_reason: "Exclusion_Reason".into(),
            reported_difficulty: "Difficulty".into(),
        }
    }
}

impl ColumnMap {
    /// Overrides a column name by field key (`examiner_id`, `item_id`, ...).
    pub fn set(&mut self, field: &str, header: &str) -> Result<()> {
        let slot = match field {
            "examiner_id" => &mut self.examiner_id,
            "item_id" => &mut self.item_id,
            "mating" => &mut self.mating,
            "latent_value" => &mut self.latent_value,
            "compare_value" => &mut self.compare_value,
            "inconclusive_reason" => &mut self.inconclusive_reason,
            "exclusion_reason" => &mut self.exclusion_reason,
            "reported_difficulty" => &mut self.reported_difficulty,
            other => return Err(Error::Usage(format!("unknown column field {other:?}"))),
        };
        *slot = header.to_string();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableFormat {
    pub delimiter: u8,
    pub columns: ColumnMap,
}

impl Default for TableFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            columns: ColumnMap::default(),
        }
    }
}

impl TableFormat {
    pub fn tab() -> Self {
        Self {
            delimiter: b'\t',
            ..Self::default()
        }
    }
}

/// A problem attached to one data row (1-based, header excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub row: usize,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTable {
    /// Valid records in row order.
    pub records: Vec<ResponseRecord>,
    /// Data row number of each record.
    pub rows: Vec<usize>,
    /// Unparseable or invariant-violating rows; these are not in `records`.
    pub quarantined: Vec<RowIssue>,
    /// Valid rows worth a second look (value-for-exclusion-only latents that
    /// were individualized).
    pub notes: Vec<RowIssue>,
    pub total_rows: usize,
}

impl ParsedTable {
    pub fn write_quarantine_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for issue in &self.quarantined {
            serde_json::to_writer(&mut w, issue)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub(crate) fn normalize_token(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn is_blank(tok: &str) -> bool {
    matches!(tok, "" | "na" | "none" | "null" | "nan")
}

fn parse_mating(s: &str) -> Option<Mating> {
    match normalize_token(s).as_str() {
        "mates" | "mate" | "mated" | "match" | "samesource" => Some(Mating::Mates),
        "nonmates" | "nonmate" | "nonmated" | "nonmatch" | "differentsource" => {
            Some(Mating::NonMates)
        }
        _ => None,
    }
}

fn parse_latent(s: &str) -> Option<LatentValue> {
    match normalize_token(s).as_str() {
        "nv" | "novalue" => Some(LatentValue::NV),
        "veo" => Some(LatentValue::VEO),
        "vid" => Some(LatentValue::VID),
        _ => None,
    }
}

fn parse_optional<T>(s: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ()> {
    let tok = normalize_token(s);
    if is_blank(&tok) {
        return Ok(None);
    }
    f(&tok).map(Some).ok_or(())
}

fn comparison_token(tok: &str) -> Option<Comparison> {
    match tok {
        "exclusion" | "excl" | "exclude" => Some(Comparison::Exclusion),
        "inconclusive" | "inc" | "inconc" => Some(Comparison::Inconclusive),
        "individualization" | "individualisation" | "indiv" | "identification" | "id" => {
            Some(Comparison::Individualization)
        }
        _ => None,
    }
}

fn inconclusive_token(tok: &str) -> Option<InconclusiveReason> {
    match tok {
        "close" => Some(InconclusiveReason::Close),
        "insufficient" => Some(InconclusiveReason::Insufficient),
        "nooverlap" | "noov" => Some(InconclusiveReason::NoOverlap),
        _ => None,
    }
}

fn exclusion_token(tok: &str) -> Option<ExclusionReason> {
    match tok {
        "minutiae" => Some(ExclusionReason::Minutiae),
        "pattern" => Some(ExclusionReason::Pattern),
        _ => None,
    }
}

fn difficulty_token(tok: &str) -> Option<ReportedDifficulty> {
    use ReportedDifficulty::*;
    match tok {
        "aobvious" | "a" | "obvious" | "1" => Some(AObvious),
        "beasy" | "b" | "easy" | "2" => Some(BEasy),
        "cmedium" | "c" | "medium" | "3" => Some(CMedium),
        "ddifficult" | "d" | "difficult" | "4" => Some(DDifficult),
        "everydifficult" | "e" | "verydifficult" | "5" => Some(EVeryDifficult),
        _ => None,
    }
}

/// Parses a delimited response table.
///
/// Missing required columns abort with [`Error::Schema`]. Bad tokens and
/// invariant violations are collected per row and the row is quarantined.
pub fn parse_table<R: Read>(source: R, format: &TableFormat) -> Result<ParsedTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name.trim());
    let cols = &format.columns;
    let required = [
        &cols.examiner_id,
        &cols.item_id,
        &cols.mating,
        &cols.latent_value,
        &cols.compare_value,
        &cols.inconclusive_reason,
    ];
    let missing: Vec<String> = required
        .iter()
        .filter(|name| find(name).is_none())
        .map(|name| name.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(missing));
    }
    let idx = |name: &str| find(name).expect("checked above");
    let (ci_exam, ci_item, ci_mating, ci_latent, ci_compare, ci_incon) = (
        idx(&cols.examiner_id),
        idx(&cols.item_id),
        idx(&cols.mating),
        idx(&cols.latent_value),
        idx(&cols.compare_value),
        idx(&cols.inconclusive_reason),
    );
    let ci_excl = find(&cols.exclusion_reason);
    let ci_diff = find(&cols.reported_difficulty);

    let mut out = ParsedTable::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        out.total_rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.quarantined.push(RowIssue {
                    row: row_no,
                    field: "*".into(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let get = |c: usize| row.get(c).unwrap_or("");
        let mut issues: Vec<RowIssue> = Vec::new();
        let mut bad = |field: &str, value: &str| {
            issues.push(RowIssue {
                row: row_no,
                field: field.to_string(),
                message: format!("unrecognized value {value:?}"),
            })
        };

        let examiner_id = get(ci_exam).to_string();
        let item_id = get(ci_item).to_string();
        if examiner_id.is_empty() {
            bad(&cols.examiner_id, "");
        }
        if item_id.is_empty() {
            bad(&cols.item_id, "");
        }
        let mating = parse_mating(get(ci_mating));
        if mating.is_none() {
            bad(&cols.mating, get(ci_mating));
        }
        let latent = parse_latent(get(ci_latent));
        if latent.is_none() {
            bad(&cols.latent_value, get(ci_latent));
        }
        let compare = parse_optional(get(ci_compare), comparison_token)
            .map_err(|_| bad(&cols.compare_value, get(ci_compare)))
            .ok()
            .flatten();
        let incon = parse_optional(get(ci_incon), inconclusive_token)
            .map_err(|_| bad(&cols.inconclusive_reason, get(ci_incon)))
            .ok()
            .flatten();
        let excl = match ci_excl {
            Some(c) => parse_optional(get(c), exclusion_token)
                .map_err(|_| bad(&cols.exclusion_reason, get(c)))
                .ok()
                .flatten(),
            None => None,
        };
        let diff = match ci_diff {
            Some(c) => parse_optional(get(c), difficulty_token)
                .map_err(|_| bad(&cols.reported_difficulty, get(c)))
                .ok()
                .flatten(),
            None => None,
        };
        if !issues.is_empty() {
            out.quarantined.extend(issues);
            continue;
        }
        let record = ResponseRecord {
            examiner_id,
            item_id,
            mating: mating.expect("validated"),
            latent_value: latent.expect("validated"),
            compare_value: compare,
            inconclusive_reason: incon,
            exclusion_reason: excl,
            reported_difficulty: diff,
        };
        let violations = record.violations();
        if !violations.is_empty() {
            out.quarantined
                .extend(violations.into_iter().map(|(field, message)| RowIssue {
                    row: row_no,
                    field: field.to_string(),
                    message,
                }));
            continue;
        }
        if record.latent_value == LatentValue::VEO
            && record.compare_value == Some(Comparison::Individualization)
        {
            out.notes.push(RowIssue {
                row: row_no,
                field: cols.latent_value.clone(),
                message: "individualization on a value-for-exclusion-only latent".into(),
            });
        }
        out.records.push(record);
        out.rows.push(row_no);
    }
    Ok(out)
}

fn mating_token(m: Mating) -> &'static str {
    match m {
        Mating::Mates => "Mates",
        Mating::NonMates => "Non-mates",
    }
}

fn latent_token(v: LatentValue) -> &'static str {
    match v {
        LatentValue::NV => "NV",
        LatentValue::VEO => "VEO",
        LatentValue::VID => "VID",
    }
}

fn difficulty_label(d: ReportedDifficulty) -> &'static str {
    match d {
        ReportedDifficulty::AObvious => "A-Obvious",
        ReportedDifficulty::BEasy => "B-Easy",
        ReportedDifficulty::CMedium => "C-Medium",
        ReportedDifficulty::DDifficult => "D-Difficult",
        ReportedDifficulty::EVeryDifficult => "E-Very Difficult",
    }
}

/// Writes records in the same delimited layout [`parse_table`] reads.
pub fn write_table<W: Write>(records: &[ResponseRecord], w: W, format: &TableFormat) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(format.delimiter)
        .from_writer(w);
    let c = &format.columns;
    writer.write_record([
        &c.examiner_id,
        &c.item_id,
        &c.mating,
        &c.latent_value,
        &c.compare_value,
        &c.inconclusive_reason,
        &c.exclusion_reason,
        &c.reported_difficulty,
    ])?;
    for r in records {
        writer.write_record([
            r.examiner_id.as_str(),
            r.item_id.as_str(),
            mating_token(r.mating),
            latent_token(r.latent_value),
            match r.compare_value {
                Some(Comparison::Exclusion) => "Exclusion",
                Some(Comparison::Inconclusive) => "Inconclusive",
                Some(Comparison::Individualization) => "Individualization",
                None => "",
            },
            match r.inconclusive_reason {
                Some(InconclusiveReason::Close) => "Close",
                Some(InconclusiveReason::Insufficient) => "Insufficient",
                Some(InconclusiveReason::NoOverlap) => "No Overlap",
                None => "",
            },
            match r.exclusion_reason {
                Some(ExclusionReason::Minutiae) => "Minutiae",
                Some(ExclusionReason::Pattern) => "Pattern",
                None => "",
            },
            r.reported_difficulty.map(difficulty_label).unwrap_or(""),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Index maps and matrices
// ---------------------------------------------------------------------------

/// Dense index over opaque ids, assigned in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdIndex {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        let ids: Vec<String> = set.into_iter().collect();
        let lookup = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, lookup }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoredEntry {
    pub examiner: usize,
    pub item: usize,
    pub y: u8,
}

/// Sparse examiner x item matrix of binary scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMatrix {
    pub examiners: IdIndex,
    pub items: IdIndex,
    pub entries: Vec<ScoredEntry>,
}

impl ScoredMatrix {
    pub fn new(examiners: IdIndex, items: IdIndex, entries: Vec<ScoredEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.examiner >= examiners.len() || e.item >= items.len() {
                return Err(Error::Shape(format!(
                    "entry ({}, {}) outside {}x{}",
                    e.examiner,
                    e.item,
                    examiners.len(),
                    items.len()
                )));
            }
            if e.y > 1 {
                return Err(Error::Domain(format!("score {} is not binary", e.y)));
            }
            if !seen.insert((e.examiner, e.item)) {
                return Err(Error::DuplicatePair {
                    examiner: examiners.id(e.examiner).to_string(),
                    item: items.id(e.item).to_string(),
                });
            }
        }
        Ok(Self {
            examiners,
            items,
            entries,
        })
    }

    pub fn n_examiners(&self) -> usize {
        self.examiners.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops examiners and items without entries and re-indexes densely.
    pub fn compact(&self) -> ScoredMatrix {
        let used_e: BTreeSet<usize> = self.entries.iter().map(|e| e.examiner).collect();
        let used_i: BTreeSet<usize> = self.entries.iter().map(|e| e.item).collect();
        let examiners = IdIndex::from_ids(used_e.iter().map(|&i| self.examiners.id(i).to_string()));
        let items = IdIndex::from_ids(used_i.iter().map(|&i| self.items.id(i).to_string()));
        let entries = self
            .entries
            .iter()
            .map(|e| ScoredEntry {
                examiner: examiners.index_of(self.examiners.id(e.examiner)).unwrap(),
                item: items.index_of(self.items.id(e.item)).unwrap(),
                y: e.y,
            })
            .collect();
        ScoredMatrix {
            examiners,
            items,
            entries,
        }
    }
}

fn check_duplicates(records: &[ResponseRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert((r.examiner_id.as_str(), r.item_id.as_str())) {
            return Err(Error::DuplicatePair {
                examiner: r.examiner_id.clone(),
                item: r.item_id.clone(),
            });
        }
    }
    Ok(())
}

fn indices(records: &[ResponseRecord]) -> (IdIndex, IdIndex) {
    (
        IdIndex::from_ids(records.iter().map(|r| r.examiner_id.as_str())),
        IdIndex::from_ids(records.iter().map(|r| r.item_id.as_str())),
    )
}

/// Scores every record and keeps those with a present score.
///
/// Index maps cover every examiner and item appearing in `records`, so the
/// matrix shares its indexing with the categorical views built from the same
/// records.
pub fn build_matrix(records: &[ResponseRecord], scheme: ScoringScheme) -> Result<ScoredMatrix> {
    check_duplicates(records)?;
    let (examiners, items) = indices(records);
    let entries = records
        .iter()
        .filter_map(|r| {
            score_record(r, scheme).map(|y| ScoredEntry {
                examiner: examiners.index_of(&r.examiner_id).unwrap(),
                item: items.index_of(&r.item_id).unwrap(),
                y,
            })
        })
        .collect();
    ScoredMatrix::new(examiners, items, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoricalObs {
    pub examiner: usize,
    pub item: usize,
    /// Zero-based category.
    pub category: usize,
}

/// Examiner x item observations on a finite categorical scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalData {
    pub examiners: IdIndex,
    pub items: IdIndex,
    pub n_categories: usize,
    pub obs: Vec<CategoricalObs>,
}

impl CategoricalData {
    pub fn new(
        examiners: IdIndex,
        items: IdIndex,
        n_categories: usize,
        obs: Vec<CategoricalObs>,
    ) -> Result<Self> {
        for o in &obs {
            if o.examiner >= examiners.len() || o.item >= items.len() {
                return Err(Error::Shape(format!(
                    "observation ({}, {}) outside {}x{}",
                    o.examiner,
                    o.item,
                    examiners.len(),
                    items.len()
                )));
            }
            if o.category >= n_categories {
                return Err(Error::Domain(format!(
                    "category {} outside 0..{}",
                    o.category, n_categories
                )));
            }
        }
        Ok(Self {
            examiners,
            items,
            n_categories,
            obs,
        })
    }

    pub fn n_examiners(&self) -> usize {
        self.examiners.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Category counts per item, `[item][category]`.
    pub fn item_counts(&self) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; self.n_categories]; self.n_items()];
        for o in &self.obs {
            counts[o.item][o.category] += 1;
        }
        counts
    }
}

fn categorical_view<F>(records: &[ResponseRecord], n: usize, f: F) -> Result<CategoricalData>
where
    F: Fn(&ResponseRecord) -> Result<usize>,
{
    check_duplicates(records)?;
    let (examiners, items) = indices(records);
    let obs = records
        .iter()
        .map(|r| {
            Ok(CategoricalObs {
                examiner: examiners.index_of(&r.examiner_id).unwrap(),
                item: items.index_of(&r.item_id).unwrap(),
                category: f(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CategoricalData::new(examiners, items, n, obs)
}

/// Conclusiveness responses, categories indexed by [`Conclusiveness::index`].
pub fn conclusiveness_data(records: &[ResponseRecord]) -> Result<CategoricalData> {
    categorical_view(records, 3, |r| Ok(to_conclusiveness(r)?.index()))
}

/// Decision-process leaves, categories in [`SequentialResponse::ALL`] order.
pub fn sequential_data(records: &[ResponseRecord]) -> Result<CategoricalData> {
    categorical_view(records, 6, |r| {
        let s = to_sequential(r)?;
        Ok(SequentialResponse::ALL.iter().position(|&x| x == s).unwrap())
    })
}

/// Answer-key tree leaves, categories in [`KeyResponse::ALL`] order.
pub fn key_response_data(records: &[ResponseRecord]) -> Result<CategoricalData> {
    categorical_view(records, 4, |r| {
        let s = to_key_response(r)?;
        Ok(KeyResponse::ALL.iter().position(|&x| x == s).unwrap())
    })
}

/// Scored responses plus the reported difficulties that accompany them, on a
/// shared index.
///
/// Under the MCAR scheme difficulty reports attached to unscored responses
/// are dropped along with the response.
pub fn joint_data(
    records: &[ResponseRecord],
    scheme: ScoringScheme,
) -> Result<(ScoredMatrix, CategoricalData)> {
    let scored = build_matrix(records, scheme)?;
    let obs = records
        .iter()
        .filter(|r| score_record(r, scheme).is_some())
        .filter_map(|r| {
            r.reported_difficulty.map(|d| CategoricalObs {
                examiner: scored.examiners.index_of(&r.examiner_id).unwrap(),
                item: scored.items.index_of(&r.item_id).unwrap(),
                category: d.level() - 1,
            })
        })
        .collect();
    let difficulty = CategoricalData::new(scored.examiners.clone(), scored.items.clone(), 5, obs)?;
    Ok((scored, difficulty))
}

/// Per-item same-source indicator (1 = mates), aligned with `items`.
pub fn mating_covariate(records: &[ResponseRecord], items: &IdIndex) -> Result<Vec<f64>> {
    let mut by_item: BTreeMap<&str, Mating> = BTreeMap::new();
    for r in records {
        if let Some(prev) = by_item.insert(&r.item_id, r.mating) {
            if prev != r.mating {
                return Err(Error::Integrity(format!(
                    "item {} recorded as both mates and non-mates",
                    r.item_id
                )));
            }
        }
    }
    items
        .ids()
        .iter()
        .map(|id| match by_item.get(id.as_str()) {
            Some(Mating::Mates) => Ok(1.0),
            Some(Mating::NonMates) => Ok(0.0),
            None => Err(Error::Shape(format!("no mating recorded for item {id}"))),
        })
        .collect()
}

/// Record, examiner and item counts plus category tallies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub records: usize,
    pub examiners: usize,
    pub items: usize,
    pub no_value: usize,
    pub inconclusive: usize,
    pub individualization: usize,
    pub exclusion: usize,
}

pub fn summarize(records: &[ResponseRecord]) -> TableSummary {
    let (examiners, items) = indices(records);
    let mut s = TableSummary {
        records: records.len(),
        examiners: examiners.len(),
        items: items.len(),
        ..Default::default()
    };
    for r in records {
        match (r.latent_value, r.compare_value) {
            (LatentValue::NV, _) => s.no_value += 1,
            (_, Some(Comparison::Inconclusive)) => s.inconclusive += 1,
            (_, Some(Comparison::Individualization)) => s.individualization += 1,
            (_, Some(Comparison::Exclusion)) => s.exclusion += 1,
            (_, None) => {}
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(
        examiner: &str,
        item: &str,
        mating: Mating,
        latent: LatentValue,
        compare: Option<Comparison>,
        reason: Option<InconclusiveReason>,
    ) -> ResponseRecord {
        ResponseRecord {
            examiner_id: examiner.into(),
            item_id: item.into(),
            mating,
            latent_value: latent,
            compare_value: compare,
            inconclusive_reason: reason,
            exclusion_reason: None,
            reported_difficulty: None,
        }
    }

    const HEADER: &str = "Examiner_ID,Pair_ID,Mating,Latent_Value,Compare_Value,Inconclusive_Reason,Exclusion_Reason,Difficulty\n";

    #[test]
    fn header_only_table_is_empty() {
        let parsed = parse_table(HEADER.as_bytes(), &TableFormat::default()).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.quarantined.is_empty());
    }

    #[test]
    fn missing_columns_listed() {
        let err = parse_table("Examiner_ID,Mating\n".as_bytes(), &TableFormat::default()).unwrap_err();
        match err {
            Error::Schema(missing) => {
                assert_eq!(
                    missing,
                    vec!["Pair_ID", "Latent_Value", "Compare_Value", "Inconclusive_Reason"]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconclusive_without_reason_is_quarantined() {
        let text = format!(
            "{HEADER}E1,P1,Mates,VID,Inconclusive,,,C-Medium\nE1,P2,Non-mates,VID,Exclusion,,Minutiae,B-Easy\n"
        );
        let parsed = parse_table(text.as_bytes(), &TableFormat::default()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.quarantined.len(), 1);
        assert_eq!(parsed.quarantined[0].row, 1);
        assert_eq!(parsed.quarantined[0].field, "inconclusive_reason");
    }

    #[test]
    fn bad_token_collected_and_parse_continues() {
        let text = format!(
            "{HEADER}E1,P1,Sometimes,VID,Exclusion,,,\nE2,P1,Mates,NV,,,,\nE3,P1,Mates,VID,Individualization,,,Z-Weird\n"
        );
        let parsed = parse_table(text.as_bytes(), &TableFormat::default()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let rows: Vec<usize> = parsed.quarantined.iter().map(|q| q.row).collect();
        assert_eq!(rows, vec![1, 3]);
        assert_eq!(parsed.rows, vec![2]);
    }

    #[test]
    fn tab_delimited_and_custom_headers() {
        let mut fmt = TableFormat::tab();
        fmt.columns.set("examiner_id", "Examiner").unwrap();
        let text = "Examiner\tPair_ID\tMating\tLatent_Value\tCompare_Value\tInconclusive_Reason\nX\tP\tMates\tVEO\tIndividualization\t\n";
        let parsed = parse_table(text.as_bytes(), &fmt).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.notes.len(), 1, "VEO individualization is noted");
    }

    #[test]
    fn scoring_schemes() {
        let ind_m = rec("a", "1", Mating::Mates, LatentValue::VID, Some(Comparison::Individualization), None);
        assert_eq!(score_record(&ind_m, ScoringScheme::InconclusiveMcar), Some(1));
        let inc_n = rec(
            "a",
            "2",
            Mating::NonMates,
            LatentValue::VID,
            Some(Comparison::Inconclusive),
            Some(InconclusiveReason::Close),
        );
        assert_eq!(score_record(&inc_n, ScoringScheme::InconclusiveMcar), None);
        assert_eq!(score_record(&inc_n, ScoringScheme::InconclusiveIncorrect), Some(0));
        assert_eq!(score_record(&inc_n, ScoringScheme::InconclusiveCorrect), Some(1));
        let ex_m = rec("a", "3", Mating::Mates, LatentValue::VEO, Some(Comparison::Exclusion), None);
        assert_eq!(score_record(&ex_m, ScoringScheme::InconclusiveCorrect), Some(0));
        let nv = rec("a", "4", Mating::Mates, LatentValue::NV, None, None);
        assert_eq!(score_record(&nv, ScoringScheme::InconclusiveMcar), None);
    }

    #[test]
    fn scale_conversions() {
        let nv = rec("a", "1", Mating::Mates, LatentValue::NV, None, None);
        assert_eq!(to_conclusiveness(&nv).unwrap(), Conclusiveness::NoValue);
        let close = rec(
            "a",
            "1",
            Mating::Mates,
            LatentValue::VID,
            Some(Comparison::Inconclusive),
            Some(InconclusiveReason::Close),
        );
        assert_eq!(to_conclusiveness(&close).unwrap(), Conclusiveness::Inconclusive);
        let veo_ex = rec("a", "1", Mating::NonMates, LatentValue::VEO, Some(Comparison::Exclusion), None);
        assert_eq!(to_conclusiveness(&veo_ex).unwrap(), Conclusiveness::Conclusive);
        let no_ov = rec(
            "a",
            "1",
            Mating::Mates,
            LatentValue::VID,
            Some(Comparison::Inconclusive),
            Some(InconclusiveReason::NoOverlap),
        );
        assert_eq!(to_sequential(&no_ov).unwrap(), SequentialResponse::NoOverlap);
        let ind = rec("a", "1", Mating::Mates, LatentValue::VID, Some(Comparison::Individualization), None);
        assert_eq!(to_sequential(&ind).unwrap(), SequentialResponse::Individualization);
        let broken = rec("a", "1", Mating::Mates, LatentValue::VID, None, None);
        assert!(matches!(to_conclusiveness(&broken), Err(Error::Integrity(_))));
        assert!(matches!(to_sequential(&broken), Err(Error::Integrity(_))));
    }

    #[test]
    fn matrix_keeps_present_scores_only() {
        let records = vec![
            rec("e1", "i1", Mating::Mates, LatentValue::VID, Some(Comparison::Individualization), None),
            rec(
                "e1",
                "i2",
                Mating::NonMates,
                LatentValue::VID,
                Some(Comparison::Inconclusive),
                Some(InconclusiveReason::Close),
            ),
        ];
        let m = build_matrix(&records, ScoringScheme::InconclusiveMcar).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.n_items(), 2);
        let m = build_matrix(&records, ScoringScheme::InconclusiveIncorrect).unwrap();
        assert_eq!(m.entries.len(), 2);
    }

    #[test]
    fn duplicate_pair_is_named() {
        let r = rec("e1", "i1", Mating::Mates, LatentValue::NV, None, None);
        let err = build_matrix(&[r.clone(), r], ScoringScheme::InconclusiveMcar).unwrap_err();
        assert!(err.to_string().contains("e1") && err.to_string().contains("i1"));
    }

    #[test]
    fn indices_are_lexicographic() {
        let idx = IdIndex::from_ids(["b", "a", "c", "a"]);
        assert_eq!(idx.ids(), &["a", "b", "c"]);
        assert_eq!(idx.index_of("c"), Some(2));
    }

    #[test]
    fn write_then_parse_round_trip() {
        let mut r = rec(
            "e1",
            "i9",
            Mating::NonMates,
            LatentValue::VID,
            Some(Comparison::Inconclusive),
            Some(InconclusiveReason::NoOverlap),
        );
        r.reported_difficulty = Some(ReportedDifficulty::EVeryDifficult);
        let mut ex = rec("e2", "i9", Mating::NonMates, LatentValue::VEO, Some(Comparison::Exclusion), None);
        ex.exclusion_reason = Some(ExclusionReason::Pattern);
        let records = vec![r, ex];
        let mut buf = Vec::new();
        write_table(&records, &mut buf, &TableFormat::default()).unwrap();
        let parsed = parse_table(buf.as_slice(), &TableFormat::default()).unwrap();
        assert_eq!(parsed.records, records);
    }
}
