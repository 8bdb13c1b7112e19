//! Ranking metrics and gate interpretability statistics.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use crate::data::{residue_of, ProteinRecord};
use crate::error::{Error, Result};
use crate::projections::GateVector;

/// Parallel scores and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairs {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredPairs {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(Error::Metric(format!(
                "need equal, non-zero numbers of scores and labels, got {} and {}",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Metric("NaN score".into()));
        }
        Ok(ScoredPairs { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half (midrank Mann–Whitney statistic).
pub fn auroc(sp: &ScoredPairs) -> Result<f64> {
    let (npos, nneg) = sp.class_counts();
    if npos == 0 || nneg == 0 {
        return Err(Error::Metric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..sp.len()).collect();
    order.sort_by(|&a, &b| sp.scores[a].total_cmp(&sp.scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && sp.scores[order[j + 1]] == sp.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| sp.labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (npos * (npos + 1)) as f64 / 2.0;
    Ok(u / (npos as f64 * nneg as f64))
}

/// ROC points `(fpr, tpr)` from the strictest threshold down, one point per
/// distinct score.
pub fn roc_curve(sp: &ScoredPairs) -> Result<Vec<(f64, f64)>> {
    let (npos, nneg) = sp.class_counts();
    if npos == 0 || nneg == 0 {
        return Err(Error::Metric("ROC curve needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..sp.len()).collect();
    order.sort_by(|&a, &b| sp.scores[b].total_cmp(&sp.scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = sp.scores[order[i]];
        while i < order.len() && sp.scores[order[i]] == s {
            if sp.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nneg as f64, tp as f64 / npos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under [`roc_curve`].
pub fn auroc_trapezoid(sp: &ScoredPairs) -> Result<f64> {
    let pts = roc_curve(sp)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// `Σ_k (R_k − R_{k−1}) P_k` over the ranking by descending score. Equal
/// scores keep their input order.
pub fn average_precision(sp: &ScoredPairs) -> Result<f64> {
    let (npos, _) = sp.class_counts();
    if npos == 0 {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..sp.len()).collect();
    order.sort_by(|&a, &b| sp.scores[b].total_cmp(&sp.scores[a]));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if sp.labels[i] {
            tp += 1;
            ap += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(ap / npos as f64)
}

/// One exported gate value; `position` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRow {
    pub id: String,
    pub position: usize,
    pub residue: char,
    pub gate: f64,
}

/// One row per residue of every record.
pub fn export_gates(records: &[ProteinRecord], gates: &[GateVector]) -> Result<Vec<GateRow>> {
    if records.len() != gates.len() {
        return Err(Error::Contract(format!(
            "{} records but {} gate vectors",
            records.len(),
            gates.len()
        )));
    }
    let mut rows = Vec::new();
    for (r, g) in records.iter().zip(gates) {
        if r.len() != g.len() {
            return Err(Error::Contract(format!(
                "record '{}' has {} residues but {} gates",
                r.id,
                r.len(),
                g.len()
            )));
        }
        for (l, (&t, &v)) in r.tokens.iter().zip(g.values()).enumerate() {
            rows.push(GateRow {
                id: r.id.clone(),
                position: l + 1,
                residue: residue_of(t),
                gate: v,
            });
        }
    }
    Ok(rows)
}

pub fn write_gates_tsv(rows: &[GateRow], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "id\tposition\tresidue\tgate")?;
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{:.17e}", r.id, r.position, r.residue, r.gate)?;
    }
    Ok(())
}

/// A 1-based inclusive span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifSpan {
    pub motif: String,
    pub start: usize,
    pub end: usize,
}

impl MotifSpan {
    pub fn contains(&self, position: usize) -> bool {
        self.start <= position && position <= self.end
    }
}

pub type MotifAnnotation = HashMap<String, Vec<MotifSpan>>;

/// TSV `id \t motif_id \t start \t end`.
pub fn parse_motifs(reader: impl BufRead) -> Result<MotifAnnotation> {
    let mut out: MotifAnnotation = HashMap::new();
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
        let [id, motif, start, end] = cols.as_slice() else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 4 tab-separated columns, got {}", cols.len()),
            });
        };
        let num = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a position: '{s}'"),
            })
        };
        let (start, end) = (num(start)?, num(end)?);
        if start == 0 || end < start {
            return Err(Error::Parse {
                line: lineno,
                message: format!("invalid span {start}..{end}"),
            });
        }
        out.entry(id.to_string()).or_default().push(MotifSpan {
            motif: motif.to_string(),
            start,
            end,
        });
    }
    Ok(out)
}

pub fn read_motifs(path: &Path) -> Result<MotifAnnotation> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_motifs(std::io::BufReader::new(f))
}

/// Per-protein averages of the share of active residues (`g > 0`) and of the
/// share of active residues lying inside an annotated span. Both are
/// percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotifReport {
    pub selected_pct: f64,
    pub aligned_pct: f64,
    pub proteins: usize,
    pub annotated: usize,
}

pub fn motif_alignment(ids: &[String], gates: &[GateVector], annotations: &MotifAnnotation) -> Result<MotifReport> {
    if ids.len() != gates.len() || ids.is_empty() {
        return Err(Error::Metric("need one gate vector per protein".into()));
    }
    let mut selected = 0.0;
    let mut aligned = 0.0;
    let mut annotated = 0usize;
    for (id, g) in ids.iter().zip(gates) {
        let active = g.support();
        selected += 100.0 * active.len() as f64 / g.len() as f64;
        if let Some(spans) = annotations.get(id) {
            annotated += 1;
            if !active.is_empty() {
                let inside = active
                    .iter()
                    .filter(|&&l| spans.iter().any(|s| s.contains(l + 1)))
                    .count();
                aligned += 100.0 * inside as f64 / active.len() as f64;
            }
        }
    }
    if annotated == 0 {
        return Err(Error::Metric("no annotated protein among the gate vectors".into()));
    }
    Ok(MotifReport {
        selected_pct: selected / ids.len() as f64,
        aligned_pct: aligned / annotated as f64,
        proteins: ids.len(),
        annotated,
    })
}

/// Share of the gate mass that falls inside `spans`. Spans past the end of
/// the gate vector are clipped.
pub fn gate_mass_in_spans(gates: &GateVector, spans: &[MotifSpan]) -> f64 {
    let total: f64 = gates.values().iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let inside: f64 = gates
        .values()
        .iter()
        .enumerate()
        .filter(|(l, _)| spans.iter().any(|s| s.contains(l + 1)))
        .map(|(_, v)| v)
        .sum();
    inside / total
}
