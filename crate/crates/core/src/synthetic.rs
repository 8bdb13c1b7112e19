//! Synthetic interaction data with planted motifs.
//!
//! Proteins are split into families. Every member of a family carries the
//! family's motif once, at a random offset, inside a random background.
//! Two distinct proteins interact exactly when they share the motif.
//! Negatives are drawn among pairs from different families.
//!
//! The background is uniform over the 20 standard amino acids. Motif words
//! are drawn from a smaller residue set (by default the cysteine/histidine
//! rich `CHMWY`), whose letters also occur throughout the background, so a
//! motif is recognizable only as a run of enriched residues in a specific
//! order.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_negatives, write_fasta, InteractionDataset, Pair, ProteinRecord};
use crate::error::{Error, Result};
use crate::evalkit::{MotifAnnotation, MotifSpan};
use crate::trainer::derive_seed;

const RESIDUES: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub proteins: usize,
    pub families: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub motif_len: usize,
    /// Residues motif words are drawn from.
    pub motif_residues: String,
    /// Positive pairs sampled among same-family pairs; `None` keeps all.
    pub positives: Option<usize>,
    pub neg_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            proteins: 200,
            families: 10,
            min_len: 100,
            max_len: 300,
            motif_len: 8,
            motif_residues: "CHMWY".into(),
            positives: Some(600),
            neg_ratio: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<ProteinRecord>,
    /// Family of each record.
    pub family: Vec<usize>,
    pub motifs: Vec<String>,
    /// One planted span per protein.
    pub annotations: MotifAnnotation,
    /// Family label per protein id, usable as a localization map.
    pub groups: HashMap<String, String>,
    pub dataset: InteractionDataset,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.families < 2 || cfg.proteins < 2 * cfg.families {
        return Err(Error::Parameter(
            "need at least two families with at least two proteins each".into(),
        ));
    }
    if cfg.motif_len == 0 || cfg.min_len < cfg.motif_len || cfg.max_len < cfg.min_len {
        return Err(Error::Parameter(format!(
            "invalid lengths: motif {}, proteins {}..={}",
            cfg.motif_len, cfg.min_len, cfg.max_len
        )));
    }
    let motif_residues: Vec<u8> = cfg.motif_residues.bytes().map(|c| c.to_ascii_uppercase()).collect();
    if motif_residues.is_empty() || motif_residues.iter().any(|c| !RESIDUES.contains(c)) {
        return Err(Error::Parameter(format!(
            "motif residues must be standard amino acids, got '{}'",
            cfg.motif_residues
        )));
    }
    let words = (motif_residues.len() as f64).powi(cfg.motif_len as i32);
    if words < cfg.families as f64 {
        return Err(Error::Parameter("too few distinct motif words for the families".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5e9));

    let mut seen = BTreeSet::new();
    let mut motifs = Vec::with_capacity(cfg.families);
    while motifs.len() < cfg.families {
        let m: String = (0..cfg.motif_len)
            .map(|_| *motif_residues.choose(&mut rng).unwrap() as char)
            .collect();
        if seen.insert(m.clone()) {
            motifs.push(m);
        }
    }

    let width = cfg.proteins.to_string().len();
    let mut records = Vec::with_capacity(cfg.proteins);
    let mut family = Vec::with_capacity(cfg.proteins);
    let mut annotations = MotifAnnotation::new();
    let mut groups = HashMap::new();
    for i in 0..cfg.proteins {
        let fam = i % cfg.families;
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut seq: Vec<u8> = (0..len).map(|_| *RESIDUES.choose(&mut rng).unwrap()).collect();
        let start = rng.random_range(0..=len - cfg.motif_len);
        seq[start..start + cfg.motif_len].copy_from_slice(motifs[fam].as_bytes());
        let id = format!("syn{i:0width$}");
        records.push(ProteinRecord::from_sequence(id.clone(), std::str::from_utf8(&seq).unwrap())?);
        family.push(fam);
        annotations.insert(
            id.clone(),
            vec![MotifSpan {
                motif: format!("motif{fam}"),
                start: start + 1,
                end: start + cfg.motif_len,
            }],
        );
        groups.insert(id, format!("family{fam}"));
    }

    let mut same: Vec<Pair> = Vec::new();
    for i in 0..cfg.proteins {
        for j in i + 1..cfg.proteins {
            if family[i] == family[j] {
                same.push(Pair::new(&records[i].id, &records[j].id));
            }
        }
    }
    if let Some(n) = cfg.positives {
        if n > same.len() {
            return Err(Error::Parameter(format!(
                "asked for {n} positives but only {} same-family pairs exist",
                same.len()
            )));
        }
        same.shuffle(&mut rng);
        same.truncate(n);
    }
    let positives: BTreeSet<Pair> = same.into_iter().collect();
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let negatives = sample_negatives(&positives, &ids, cfg.neg_ratio, derive_seed(cfg.seed, 0x9e9), Some(&groups))?;
    Ok(SyntheticData {
        records,
        family,
        motifs,
        annotations,
        groups,
        dataset: InteractionDataset {
            positives,
            negatives,
            split: Default::default(),
        },
    })
}

impl SyntheticData {
    /// Writes `seqs.fa`, `pairs.tsv` (labeled), `motifs.tsv` and
    /// `families.tsv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        let mut fasta = Vec::new();
        write_fasta(&self.records, &mut fasta).map_err(|e| Error::io(dir.join("seqs.fa"), e))?;
        put("seqs.fa", String::from_utf8(fasta).unwrap())?;

        let mut pairs = String::new();
        for (set, label) in [(&self.dataset.positives, 1), (&self.dataset.negatives, 0)] {
            for p in set {
                let _ = writeln!(pairs, "{}\t{}\t{label}", p.a, p.b);
            }
        }
        put("pairs.tsv", pairs)?;

        let mut motifs = String::new();
        let mut groups = String::new();
        for r in &self.records {
            for s in &self.annotations[&r.id] {
                let _ = writeln!(motifs, "{}\t{}\t{}\t{}", r.id, s.motif, s.start, s.end);
            }
            let _ = writeln!(groups, "{}\t{}", r.id, self.groups[&r.id]);
        }
        put("motifs.tsv", motifs)?;
        put("families.tsv", groups)
    }
}
