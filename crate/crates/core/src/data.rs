//! Sequences, interaction labels, negative sampling, splits and
//! deduplicated mini-batches.
//!
//! File formats:
//!
//! * FASTA: `>` header lines (id = first whitespace-delimited token) followed
//!   by sequence lines.
//! * Interactions: TSV `id_a \t id_b [\t label]`, label in {0, 1}; `#` starts a
//!   comment line.
//! * Localization: TSV `id \t label`.
//! * Profiles: a directory with one TSV of floats per protein, named
//!   `<id>.tsv` (or `<id>` with any extension), one row per residue.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The 20 standard amino acids followed by the ambiguity/rare codes.
pub const ALPHABET: &str = "ACDEFGHIKLMNPQRSTVWYBZXUO";
pub const ALPHABET_SIZE: usize = 25;
const UNKNOWN: usize = 22; // 'X'

/// Token index for an amino-acid letter. Letters outside the alphabet map to
/// `X`; non-letters have no token.
pub fn token_of(c: u8) -> Option<usize> {
    let c = c.to_ascii_uppercase();
    if !c.is_ascii_alphabetic() {
        return None;
    }
    Some(
        ALPHABET
            .bytes()
            .position(|a| a == c)
            .unwrap_or(UNKNOWN),
    )
}

pub fn residue_of(token: usize) -> char {
    ALPHABET.as_bytes()[token] as char
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinRecord {
    pub id: String,
    pub tokens: Vec<usize>,
    /// Optional per-position feature matrix `[L × F]`.
    pub profile: Option<Tensor>,
}

impl ProteinRecord {
    pub fn from_sequence(id: impl Into<String>, seq: &str) -> Result<Self> {
        let mut tokens = Vec::with_capacity(seq.len());
        for (i, c) in seq.bytes().enumerate() {
            tokens.push(token_of(c).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("invalid residue {:?} at position {}", c as char, i + 1),
            })?);
        }
        if tokens.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "empty sequence".into(),
            });
        }
        Ok(ProteinRecord {
            id: id.into(),
            tokens,
            profile: None,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sequence(&self) -> String {
        self.tokens.iter().map(|&t| residue_of(t)).collect()
    }

    /// Keeps the first `max_len` residues (and profile rows).
    pub fn truncate(&self, max_len: usize) -> ProteinRecord {
        let max_len = max_len.max(1);
        if self.tokens.len() <= max_len {
            return self.clone();
        }
        let profile = self.profile.as_ref().map(|p| {
            let (_, f) = p.dims2();
            Tensor::new(vec![max_len, f], p.data()[..max_len * f].to_vec()).unwrap()
        });
        ProteinRecord {
            id: self.id.clone(),
            tokens: self.tokens[..max_len].to_vec(),
            profile,
        }
    }
}

/// Parses FASTA text into tokenized records.
pub fn parse_fasta(reader: impl BufRead) -> Result<Vec<ProteinRecord>> {
    let mut records: Vec<ProteinRecord> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut header_line = 0;
    let finish = |rec: &ProteinRecord, line: usize| -> Result<()> {
        if rec.tokens.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("record '{}' has no residues", rec.id),
            });
        }
        Ok(())
    };
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim_end();
        if let Some(header) = line.strip_prefix('>') {
            if let Some(prev) = records.last() {
                finish(prev, header_line)?;
            }
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "header without an identifier".into(),
                });
            }
            if let Some(first) = seen.insert(id.clone(), lineno) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("duplicate id '{id}' (first seen at line {first})"),
                });
            }
            header_line = lineno;
            records.push(ProteinRecord {
                id,
                tokens: Vec::new(),
                profile: None,
            });
        } else if line.trim().is_empty() {
            continue;
        } else {
            let Some(rec) = records.last_mut() else {
                return Err(Error::Parse {
                    line: lineno,
                    message: "sequence data before the first '>' header".into(),
                });
            };
            for c in line.bytes().filter(|c| !c.is_ascii_whitespace()) {
                let t = token_of(c).ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("invalid residue {:?} in record '{}'", c as char, rec.id),
                })?;
                rec.tokens.push(t);
            }
        }
    }
    if let Some(last) = records.last() {
        finish(last, header_line)?;
    }
    Ok(records)
}

pub fn read_fasta(path: &Path) -> Result<Vec<ProteinRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_fasta(std::io::BufReader::new(f))
}

pub fn write_fasta(records: &[ProteinRecord], mut out: impl std::io::Write) -> std::io::Result<()> {
    for r in records {
        writeln!(out, ">{}", r.id)?;
        let seq = r.sequence();
        for chunk in seq.as_bytes().chunks(60) {
            out.write_all(chunk)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Records indexed by id.
#[derive(Debug, Clone, Default)]
pub struct SequenceStore {
    records: Vec<ProteinRecord>,
    index: HashMap<String, usize>,
}

impl SequenceStore {
    pub fn new(records: Vec<ProteinRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate id '{}'", r.id)));
            }
        }
        Ok(SequenceStore { records, index })
    }

    pub fn records(&self) -> &[ProteinRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&ProteinRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Applies [`ProteinRecord::truncate`] to every record.
    pub fn truncated(&self, max_len: usize) -> SequenceStore {
        SequenceStore {
            records: self.records.iter().map(|r| r.truncate(max_len)).collect(),
            index: self.index.clone(),
        }
    }

    /// Attaches per-protein profile matrices. Every record must get one, with
    /// one row per residue.
    pub fn attach_profiles(&mut self, profiles: HashMap<String, Tensor>) -> Result<()> {
        let mut width = None;
        for r in &mut self.records {
            let p = profiles
                .get(&r.id)
                .ok_or_else(|| Error::Dataset(format!("no profile for '{}'", r.id)))?;
            let (rows, f) = p.dims2();
            if rows != r.tokens.len() {
                return Err(Error::Dataset(format!(
                    "profile for '{}' has {rows} rows but the sequence has {} residues",
                    r.id,
                    r.tokens.len()
                )));
            }
            if *width.get_or_insert(f) != f {
                return Err(Error::Dataset(format!(
                    "profile for '{}' has {f} columns, expected {}",
                    r.id,
                    width.unwrap()
                )));
            }
            r.profile = Some(p.clone());
        }
        Ok(())
    }
}

/// An unordered pair of protein ids, stored with `a <= b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    pub a: String,
    pub b: String,
}

impl Pair {
    pub fn new(x: impl Into<String>, y: impl Into<String>) -> Self {
        let (x, y) = (x.into(), y.into());
        if x <= y {
            Pair { a: x, b: y }
        } else {
            Pair { a: y, b: x }
        }
    }
}

/// One line of an interaction file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub a: String,
    pub b: String,
    pub label: Option<bool>,
}

pub fn parse_pairs(reader: impl BufRead) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let label = match cols.as_slice() {
            [_, _] => None,
            [_, _, "1"] => Some(true),
            [_, _, "0"] => Some(false),
            [_, _, other] => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("label must be 0 or 1, got '{other}'"),
                })
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 2 or 3 tab-separated columns, got {}", cols.len()),
                })
            }
        };
        out.push(PairRecord {
            a: cols[0].to_string(),
            b: cols[1].to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(std::io::BufReader::new(f))
}

/// `id \t label` lines.
pub fn parse_localization(reader: impl BufRead) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(id), Some(label)) if !id.trim().is_empty() => {
                out.insert(id.trim().to_string(), label.trim().to_string());
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected 'id<TAB>label'".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_localization(path: &Path) -> Result<HashMap<String, String>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_localization(std::io::BufReader::new(f))
}

/// Parses one profile matrix: whitespace/tab separated floats, one row per
/// residue.
pub fn parse_profile(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("not a number: '{v}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: i + 1,
                message: "non-finite profile value".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "empty profile".into(),
        });
    }
    Ok(Tensor::from_rows(&rows))
}

/// Reads every file in `dir` as a profile keyed by file stem.
pub fn read_profiles(dir: &Path) -> Result<HashMap<String, Tensor>> {
    let mut out = HashMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m = parse_profile(&text).map_err(|e| match e {
            Error::Parse { line, message } => {
                Error::Dataset(format!("{}:{line}: {message}", path.display()))
            }
            other => other,
        })?;
        out.insert(stem.to_string(), m);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Positive and negative pairs with an optional split assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionDataset {
    pub positives: BTreeSet<Pair>,
    pub negatives: BTreeSet<Pair>,
    pub split: BTreeMap<Pair, Split>,
}

/// A pair of store indices with its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub a: usize,
    pub b: usize,
    pub label: bool,
}

impl InteractionDataset {
    /// Builds a dataset from labeled file records, checking that every id is
    /// known and that no pair is both positive and negative.
    pub fn from_records(records: &[PairRecord], store: &SequenceStore) -> Result<Self> {
        let mut ds = InteractionDataset::default();
        for r in records {
            for id in [&r.a, &r.b] {
                if store.get(id).is_none() {
                    return Err(Error::Dataset(format!("unknown protein id '{id}'")));
                }
            }
            let label = r.label.ok_or_else(|| {
                Error::Dataset(format!("pair {}–{} has no label", r.a, r.b))
            })?;
            let p = Pair::new(&r.a, &r.b);
            if label {
                ds.positives.insert(p);
            } else {
                ds.negatives.insert(p);
            }
        }
        if let Some(p) = ds.positives.intersection(&ds.negatives).next() {
            return Err(Error::Dataset(format!(
                "pair {}–{} is labeled both positive and negative",
                p.a, p.b
            )));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labeled pairs of one split, in a fixed order, as store indices.
    pub fn pairs_in(&self, split: Split, store: &SequenceStore) -> Result<Vec<LabeledPair>> {
        let mut out = Vec::new();
        for (set, label) in [(&self.positives, true), (&self.negatives, false)] {
            for p in set {
                if self.split.get(p) == Some(&split) {
                    out.push(labeled(p, label, store)?);
                }
            }
        }
        Ok(out)
    }

    /// Every labeled pair regardless of split.
    pub fn all_pairs(&self, store: &SequenceStore) -> Result<Vec<LabeledPair>> {
        let mut out = Vec::with_capacity(self.len());
        for p in &self.positives {
            out.push(labeled(p, true, store)?);
        }
        for p in &self.negatives {
            out.push(labeled(p, false, store)?);
        }
        Ok(out)
    }
}

fn labeled(p: &Pair, label: bool, store: &SequenceStore) -> Result<LabeledPair> {
    let idx = |id: &str| {
        store
            .position(id)
            .ok_or_else(|| Error::Dataset(format!("unknown protein id '{id}'")))
    };
    Ok(LabeledPair {
        a: idx(&p.a)?,
        b: idx(&p.b)?,
        label,
    })
}

/// Samples `round(ratio·|positives|)` distinct unordered pairs (self-pairs
/// included) that are not positives. With a localization map only pairs of
/// proteins with different labels are eligible; proteins without a label are
/// never paired.
pub fn sample_negatives(
    positives: &BTreeSet<Pair>,
    proteins: &[String],
    ratio: f64,
    seed: u64,
    localization: Option<&HashMap<String, String>>,
) -> Result<BTreeSet<Pair>> {
    if !(ratio > 0.0) {
        return Err(Error::Parameter(format!("negative ratio must be positive, got {ratio}")));
    }
    let mut ids: Vec<&String> = proteins.iter().collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    let wanted = (ratio * positives.len() as f64).round() as usize;

    let eligible = |i: usize, j: usize| -> bool {
        match localization {
            None => true,
            Some(loc) => match (loc.get(ids[i]), loc.get(ids[j])) {
                (Some(x), Some(y)) => x != y,
                _ => false,
            },
        }
    };

    let universe: usize = match localization {
        None => n * (n + 1) / 2,
        Some(loc) => {
            let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
            let mut labeled = 0usize;
            for id in &ids {
                if let Some(l) = loc.get(*id) {
                    *counts.entry(l).or_default() += 1;
                    labeled += 1;
                }
            }
            let same: usize = counts.values().map(|c| c * (c - 1) / 2).sum();
            labeled * labeled.saturating_sub(1) / 2 - same
        }
    };
    let id_pos: HashMap<&String, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let blocked = positives
        .iter()
        .filter(|p| match (id_pos.get(&p.a), id_pos.get(&p.b)) {
            (Some(&i), Some(&j)) => eligible(i, j),
            _ => false,
        })
        .count();
    let available = universe - blocked;
    if available < wanted {
        return Err(Error::Dataset(format!(
            "need {wanted} negative pairs but only {available} eligible pairs exist (short by {})",
            wanted - available
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeSet::new();
    if wanted * 2 >= available {
        // dense regime: enumerate and shuffle
        let mut all = Vec::with_capacity(available);
        for i in 0..n {
            for j in i..n {
                if eligible(i, j) {
                    let p = Pair::new(ids[i].as_str(), ids[j].as_str());
                    if !positives.contains(&p) {
                        all.push(p);
                    }
                }
            }
        }
        all.shuffle(&mut rng);
        out.extend(all.into_iter().take(wanted));
    } else {
        while out.len() < wanted {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if !eligible(i, j) {
                continue;
            }
            let p = Pair::new(ids[i].as_str(), ids[j].as_str());
            if !positives.contains(&p) {
                out.insert(p);
            }
        }
    }
    Ok(out)
}

/// Stratified shuffle split: positives and negatives are each partitioned at
/// `fractions = (train, val, test)`.
pub fn split(dataset: &InteractionDataset, fractions: (f64, f64, f64), seed: u64) -> Result<InteractionDataset> {
    let (ft, fv, fs) = fractions;
    if ft < 0.0 || fv < 0.0 || fs < 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    out.split.clear();
    for set in [&dataset.positives, &dataset.negatives] {
        let mut pairs: Vec<&Pair> = set.iter().collect();
        pairs.shuffle(&mut rng);
        let n = pairs.len();
        let n_train = ((ft * n as f64).round() as usize).min(n);
        let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
        for (i, p) in pairs.into_iter().enumerate() {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            out.split.insert(p.clone(), s);
        }
    }
    Ok(out)
}

/// A mini-batch whose proteins are each listed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Store indices of the distinct proteins in this batch.
    pub sequences: Vec<usize>,
    /// Positive pairs as indices into `sequences`.
    pub pos_pairs: Vec<(usize, usize)>,
    pub neg_pairs: Vec<(usize, usize)>,
}

impl Batch {
    pub fn from_pairs(pairs: &[LabeledPair]) -> Batch {
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut sequences = Vec::new();
        let mut slot = |s: usize| {
            *local.entry(s).or_insert_with(|| {
                sequences.push(s);
                sequences.len() - 1
            })
        };
        let mut pos_pairs = Vec::new();
        let mut neg_pairs = Vec::new();
        for p in pairs {
            let ij = (slot(p.a), slot(p.b));
            if p.label {
                pos_pairs.push(ij);
            } else {
                neg_pairs.push(ij);
            }
        }
        Batch {
            sequences,
            pos_pairs,
            neg_pairs,
        }
    }

    /// The labeled pairs this batch encodes, in store indices.
    pub fn labeled_pairs(&self) -> Vec<LabeledPair> {
        let map = |&(i, j): &(usize, usize), label| LabeledPair {
            a: self.sequences[i],
            b: self.sequences[j],
            label,
        };
        self.pos_pairs
            .iter()
            .map(|p| map(p, true))
            .chain(self.neg_pairs.iter().map(|p| map(p, false)))
            .collect()
    }
}

/// Shuffles `pairs` with `seed`, chunks them into batches of `batch_size`
/// pairs and deduplicates the proteins of each chunk.
pub fn make_batches(pairs: &[LabeledPair], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be at least 1".into()));
    }
    let mut order: Vec<LabeledPair> = pairs.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(Batch::from_pairs).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fasta(s: &str) -> Result<Vec<ProteinRecord>> {
        parse_fasta(s.as_bytes())
    }

    #[test]
    fn alphabet_is_25_letters() {
        assert_eq!(ALPHABET.len(), ALPHABET_SIZE);
        assert_eq!(residue_of(UNKNOWN), 'X');
        assert_eq!(token_of(b'J'), Some(UNKNOWN));
        assert_eq!(token_of(b'*'), None);
    }

    #[test]
    fn parses_single_record() {
        let r = fasta(">p1 some description\nMKV\n").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].id, "p1");
        assert_eq!(r[0].len(), 3);
        assert_eq!(r[0].sequence(), "MKV");
    }

    #[test]
    fn lowercase_normalizes() {
        assert_eq!(fasta(">p1\nmkv\n").unwrap()[0].tokens, fasta(">p1\nMKV\n").unwrap()[0].tokens);
    }

    #[test]
    fn multiline_and_unknown_letters() {
        let r = fasta(">a\nMK\nVJ\n\n>b\nAC\n").unwrap();
        assert_eq!(r[0].sequence(), "MKVX");
        assert_eq!(r[1].sequence(), "AC");
    }

    #[test]
    fn fasta_errors_carry_line_numbers() {
        match fasta(">p1\nMKV\n>p1\nAAA\n") {
            Err(Error::Parse { line: 3, message }) => assert!(message.contains("duplicate")),
            other => panic!("{other:?}"),
        }
        match fasta(">p1\n>p2\nAA\n") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        match fasta(">p1\nMK1V\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(fasta("MKV\n").is_err());
        assert!(fasta(">p1\nAA\n>p2\n").is_err());
    }

    #[test]
    fn truncation() {
        let seq: String = "ACDEFGHIKL".repeat(200);
        let rec = ProteinRecord::from_sequence("long", &seq).unwrap();
        let t = rec.truncate(1024);
        assert_eq!(t.len(), 1024);
        assert_eq!(&t.tokens[..], &rec.tokens[..1024]);
        let short = ProteinRecord::from_sequence("lsm8", &"M".repeat(109)).unwrap();
        assert_eq!(short.truncate(1024), short);
        assert_eq!(rec.truncate(1).len(), 1);
    }

    #[test]
    fn truncation_cuts_profile_rows() {
        let mut rec = ProteinRecord::from_sequence("p", "MKVL").unwrap();
        rec.profile = Some(Tensor::new(vec![4, 2], (0..8).map(f64::from).collect()).unwrap());
        let t = rec.truncate(2);
        assert_eq!(t.profile.unwrap().data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn pair_file_parsing() {
        let r = parse_pairs("# comment\na\tb\t1\nc\td\t0\ne\tf\n".as_bytes()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].label, Some(true));
        assert_eq!(r[1].label, Some(false));
        assert_eq!(r[2].label, None);
        assert!(matches!(parse_pairs("a\tb\t2\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(parse_pairs("a b 1\n".as_bytes()).is_err());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn negatives_exhaustion() {
        let ps = ids(3);
        let mut pos = BTreeSet::new();
        for i in 0..3 {
            for j in i..3 {
                pos.insert(Pair::new(&ps[i], &ps[j]));
            }
        }
        assert_eq!(pos.len(), 6);
        match sample_negatives(&pos, &ps, 1.0, 0, None) {
            Err(Error::Dataset(m)) => assert!(m.contains("only 0 eligible"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negatives_are_deterministic_and_disjoint() {
        let ps = ids(40);
        let pos: BTreeSet<Pair> = (0..39).map(|i| Pair::new(&ps[i], &ps[i + 1])).collect();
        let a = sample_negatives(&pos, &ps, 1.5, 9, None).unwrap();
        let b = sample_negatives(&pos, &ps, 1.5, 9, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 59); // round(1.5 · 39)
        assert!(a.is_disjoint(&pos));
        // dense regime hits the enumeration path
        let all = sample_negatives(&pos, &ps[..], 20.0, 1, None).unwrap();
        assert_eq!(all.len(), 780);
        assert!(all.is_disjoint(&pos));
    }

    #[test]
    fn localization_restricts_negatives() {
        let ps = ids(6);
        let loc: HashMap<String, String> = ps
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), if i < 3 { "nucleus" } else { "membrane" }.to_string()))
            .collect();
        let pos: BTreeSet<Pair> = [Pair::new(&ps[0], &ps[1])].into();
        // 3 × 3 = 9 cross-location pairs
        let neg = sample_negatives(&pos, &ps, 9.0, 2, Some(&loc)).unwrap();
        assert_eq!(neg.len(), 9);
        for p in &neg {
            assert_ne!(loc[&p.a], loc[&p.b]);
        }
        assert!(sample_negatives(&pos, &ps, 10.0, 2, Some(&loc)).is_err());
    }

    #[test]
    fn negatives_match_yeast_scale() {
        // 3,651 proteins with 50,344 positives.
        let ps: Vec<String> = (0..3651).map(|i| format!("Y{i:05}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pos = BTreeSet::new();
        while pos.len() < 50_344 {
            let i = rng.random_range(0..ps.len());
            let j = rng.random_range(0..ps.len());
            pos.insert(Pair::new(&ps[i], &ps[j]));
        }
        let neg = sample_negatives(&pos, &ps, 1.0, 1, None).unwrap();
        assert_eq!(neg.len(), 50_344);
        assert!(neg.is_disjoint(&pos));
        let reference_ratio = 50_376.0 / 50_344.0;
        assert!((neg.len() as f64 / pos.len() as f64 - reference_ratio).abs() < 1e-3);
    }

    fn dataset(npos: usize, nneg: usize) -> InteractionDataset {
        let ps = ids(60);
        InteractionDataset {
            positives: (0..npos).map(|i| Pair::new(&ps[i], &ps[i + 1])).collect(),
            negatives: (0..nneg).map(|i| Pair::new(&ps[i], &ps[i + 20])).collect(),
            split: BTreeMap::new(),
        }
    }

    fn counts(ds: &InteractionDataset, set: &BTreeSet<Pair>) -> [usize; 3] {
        let mut c = [0; 3];
        for p in set {
            c[ds.split[p] as usize] += 1;
        }
        c
    }

    #[test]
    fn stratified_split() {
        let ds = split(&dataset(10, 10), (0.6, 0.2, 0.2), 4).unwrap();
        assert_eq!(counts(&ds, &ds.positives), [6, 2, 2]);
        assert_eq!(counts(&ds, &ds.negatives), [6, 2, 2]);
        let all_train = split(&dataset(10, 10), (1.0, 0.0, 0.0), 4).unwrap();
        assert!(all_train.split.values().all(|&s| s == Split::Train));
        assert_eq!(split(&dataset(10, 10), (0.6, 0.2, 0.2), 4).unwrap(), ds);
        assert!(split(&dataset(3, 3), (0.5, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn split_fractions_within_one_pair() {
        for n in 1..40 {
            let ds = split(&dataset(n, 0), (0.6, 0.2, 0.2), n as u64).unwrap();
            let c = counts(&ds, &ds.positives);
            for (k, f) in [0.6, 0.2, 0.2].iter().enumerate() {
                assert!((c[k] as f64 - f * n as f64).abs() <= 1.0, "n={n} {c:?}");
            }
        }
    }

    fn lp(a: usize, b: usize, label: bool) -> LabeledPair {
        LabeledPair { a, b, label }
    }

    #[test]
    fn batch_dedup() {
        let b = Batch::from_pairs(&[lp(0, 1, true), lp(0, 2, false), lp(1, 2, true)]);
        assert_eq!(b.sequences.len(), 3);
        assert_eq!(b.pos_pairs.len() + b.neg_pairs.len(), 3);
    }

    #[test]
    fn self_pairs_count_once() {
        let b = Batch::from_pairs(&[lp(4, 4, true)]);
        assert_eq!(b.sequences, vec![4]);
        assert_eq!(b.pos_pairs, vec![(0, 0)]);
    }

    #[test]
    fn thousand_pairs_over_hundred_proteins() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pairs = Vec::new();
        for i in 0..100 {
            pairs.push(lp(i, (i + 1) % 100, true));
        }
        while pairs.len() < 1000 {
            pairs.push(lp(rng.random_range(0..100), rng.random_range(0..100), rng.random_bool(0.5)));
        }
        let batches = make_batches(&pairs, 1000, 3).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].sequences.len(), 100);
    }

    #[test]
    fn batch_size_one() {
        let pairs = [lp(0, 1, true), lp(2, 2, false), lp(3, 5, true)];
        for b in make_batches(&pairs, 1, 0).unwrap() {
            assert!(b.sequences.len() <= 2);
            assert_eq!(b.pos_pairs.len() + b.neg_pairs.len(), 1);
        }
        assert!(make_batches(&pairs, 0, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn batches_reconstruct_pairs(
            raw in proptest::collection::vec((0usize..30, 0usize..30, proptest::bool::ANY), 1..200),
            batch_size in 1usize..64,
            seed in 0u64..1000,
        ) {
            let pairs: Vec<LabeledPair> = raw.iter().map(|&(a, b, l)| lp(a, b, l)).collect();
            let batches = make_batches(&pairs, batch_size, seed).unwrap();
            let mut rebuilt: Vec<(usize, usize, bool)> = Vec::new();
            for b in &batches {
                let uniq: BTreeSet<usize> = b.sequences.iter().copied().collect();
                proptest::prop_assert_eq!(uniq.len(), b.sequences.len());
                for &(i, j) in b.pos_pairs.iter().chain(&b.neg_pairs) {
                    proptest::prop_assert!(i < b.sequences.len() && j < b.sequences.len());
                }
                rebuilt.extend(b.labeled_pairs().iter().map(|p| (p.a, p.b, p.label)));
            }
            let mut orig: Vec<(usize, usize, bool)> = raw.clone();
            orig.sort();
            rebuilt.sort();
            proptest::prop_assert_eq!(orig, rebuilt);
        }
    }

    #[test]
    fn profile_parsing() {
        let m = parse_profile("0.1 0.2\n0.3\t0.4\n").unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert!(parse_profile("0.1 0.2\n0.3\n").is_err());
        assert!(parse_profile("x\n").is_err());
    }

    #[test]
    fn profiles_must_match_lengths() {
        let mut store = SequenceStore::new(vec![ProteinRecord::from_sequence("p", "MKV").unwrap()]).unwrap();
        let mut profiles = HashMap::new();
        profiles.insert("p".to_string(), Tensor::zeros(&[2, 4]));
        assert!(store.attach_profiles(profiles.clone()).is_err());
        profiles.insert("p".to_string(), Tensor::zeros(&[3, 4]));
        store.attach_profiles(profiles).unwrap();
        assert!(store.records()[0].profile.is_some());
    }

    #[test]
    fn dataset_rejects_conflicts_and_unknown_ids() {
        let store = SequenceStore::new(vec![
            ProteinRecord::from_sequence("a", "MK").unwrap(),
            ProteinRecord::from_sequence("b", "MK").unwrap(),
        ])
        .unwrap();
        let rec = |a: &str, b: &str, l| PairRecord {
            a: a.into(),
            b: b.into(),
            label: Some(l),
        };
        assert!(InteractionDataset::from_records(&[rec("a", "b", true), rec("b", "a", false)], &store).is_err());
        assert!(InteractionDataset::from_records(&[rec("a", "z", true)], &store).is_err());
        let ok = InteractionDataset::from_records(&[rec("a", "b", true), rec("a", "a", false)], &store).unwrap();
        assert_eq!(ok.len(), 2);
    }
}
