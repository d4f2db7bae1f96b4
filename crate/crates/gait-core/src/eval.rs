//! Cross-view rank-1 identification, excluding identical-view cases.
//!
//! Every probe is matched against each gallery view separately: the nearest
//! gallery embedding within that view predicts the identity, ties broken by
//! smallest sequence id. Cells where probe and gallery share the view are
//! masked, as are cells with no candidates; masked cells never enter a
//! mean.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use crate::data::{load_sequence, Condition, DatasetIndex, SequenceEntry};
use crate::error::EvalError;
use crate::fusion::{model_forward, EmbeddingSet};
use crate::model::{Binding, ModelBound, ModelConfig, ModelParams};
use crate::par::map_ordered;
use crate::scalar::Scalar;

/// Labels of one embedded sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqRef {
    pub id: String,
    pub identity: String,
    pub view: u16,
    pub condition: Condition,
}

/// Embeddings keyed by sequence, in sorted-id order.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    pub entries: Vec<(SeqRef, EmbeddingSet)>,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingSet> {
        self.entries
            .binary_search_by(|(r, _)| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Manifest: one line per sequence
    /// (id, identity, view, condition, head count, d_e); payload: per line,
    /// head-count records of d_e little-endian f64.
    pub fn export(&self, bin: &mut dyn Write, manifest: &mut dyn Write) -> std::io::Result<()> {
        for (r, e) in &self.entries {
            writeln!(
                manifest,
                "{},{},{},{},{},{}",
                r.id, r.identity, r.view, r.condition, e.heads, e.dim
            )?;
            for v in &e.values {
                bin.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn import(bin: &mut dyn Read, manifest: &str) -> Result<Self, EvalError> {
        let mut entries = Vec::new();
        for (lineno, line) in manifest.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(EvalError::Split(format!(
                    "manifest line {}: expected 6 fields",
                    lineno + 1
                )));
            }
            let heads: usize = parts[4]
                .parse()
                .map_err(|_| EvalError::Split(format!("bad head count on line {}", lineno + 1)))?;
            let dim: usize = parts[5]
                .parse()
                .map_err(|_| EvalError::Split(format!("bad dim on line {}", lineno + 1)))?;
            let mut values = vec![0.0f64; heads * dim];
            let mut buf = [0u8; 8];
            for v in values.iter_mut() {
                bin.read_exact(&mut buf).map_err(|e| {
                    EvalError::Split(format!("embedding payload truncated: {e}"))
                })?;
                *v = f64::from_le_bytes(buf);
            }
            entries.push((
                SeqRef {
                    id: parts[0].to_string(),
                    identity: parts[1].to_string(),
                    view: parts[2]
                        .parse()
                        .map_err(|_| EvalError::Split(format!("bad view on line {}", lineno + 1)))?,
                    condition: parts[3]
                        .parse()
                        .map_err(|e| EvalError::Split(format!("line {}: {e}", lineno + 1)))?,
                },
                EmbeddingSet { heads, dim, values },
            ));
        }
        entries.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        Ok(EmbeddingStore { entries })
    }
}

/// Gallery/probe selection: the gallery holds one condition's sequences,
/// probes cover every condition. Gallery and probe sequence indices must
/// not overlap, so probes are always held out.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub gallery_condition: Condition,
    pub gallery_seqs: Vec<u32>,
    pub probe_seqs: Vec<u32>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            gallery_condition: Condition::Nm,
            gallery_seqs: vec![0],
            probe_seqs: vec![1],
        }
    }
}

/// Select gallery and probe sequence entries from a dataset index.
pub fn split_entries<'a>(
    index: &'a DatasetIndex,
    spec: &SplitSpec,
) -> Result<(Vec<&'a SequenceEntry>, Vec<&'a SequenceEntry>), EvalError> {
    if spec.gallery_seqs.iter().any(|s| spec.probe_seqs.contains(s)) {
        return Err(EvalError::Split(
            "gallery and probe sequence indices overlap".into(),
        ));
    }
    let gallery = index.select(Some(spec.gallery_condition), Some(&spec.gallery_seqs));
    let probes = index.select(None, Some(&spec.probe_seqs));
    if gallery.is_empty() || probes.is_empty() {
        return Err(EvalError::Split(format!(
            "split selected {} gallery and {} probe sequences",
            gallery.len(),
            probes.len()
        )));
    }
    Ok((gallery, probes))
}

/// Embed sequences with a frozen model at full length. Sequences shorter
/// than the clip length are skipped and listed.
pub fn embed_set<T: Scalar>(
    entries: &[&SequenceEntry],
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    workers: usize,
) -> Result<(EmbeddingStore, Vec<String>), EvalError> {
    let results: Vec<Result<Option<(SeqRef, EmbeddingSet)>, EvalError>> =
        map_ordered(entries, workers, |entry| {
            if entry.frame_count < cfg.clip_len {
                return Ok(None);
            }
            let (sil, keys) = load_sequence(entry)?;
            let binding = Binding::new(params, false);
            let bound = ModelBound::from_binding(&binding, cfg)?;
            let emb = model_forward(&sil, &keys, &bound, cfg)?;
            Ok(Some((
                SeqRef {
                    id: entry.id(),
                    identity: entry.identity.clone(),
                    view: entry.view,
                    condition: entry.condition,
                },
                EmbeddingSet::from_tensor(&emb)?,
            )))
        });
    let mut store = EmbeddingStore::default();
    let mut skipped = Vec::new();
    for (entry, res) in entries.iter().zip(results) {
        match res? {
            Some(pair) => store.entries.push(pair),
            None => skipped.push(entry.id()),
        }
    }
    store.entries.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    Ok((store, skipped))
}

/// Sum over heads of the per-head Euclidean distance.
pub fn pairwise_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, EvalError> {
    if a.heads != b.heads || a.dim != b.dim {
        return Err(EvalError::EmbeddingMismatch(format!(
            "{}x{} vs {}x{}",
            a.heads, a.dim, b.heads, b.dim
        )));
    }
    let mut total = 0.0;
    for h in 0..a.heads {
        let (ra, rb) = (a.head(h), b.head(h));
        let mut s = 0.0;
        for (x, y) in ra.iter().zip(rb) {
            let d = x - y;
            s += d * d;
        }
        total += s.sqrt();
    }
    Ok(total)
}

/// One accuracy cell or the reason it is masked.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Masked(MaskReason),
    Acc { correct: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskReason {
    IdenticalView,
    EmptyGallery,
    NoProbes,
}

impl Cell {
    pub fn accuracy(&self) -> Option<f64> {
        match self {
            Cell::Masked(_) => None,
            Cell::Acc { correct, total } => Some(*correct as f64 / *total as f64),
        }
    }
}

/// Rank-1 accuracy per (condition, probe view, gallery view) with
/// identical-view cells masked, plus the derived means.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub conditions: Vec<Condition>,
    pub probe_views: Vec<u16>,
    pub gallery_views: Vec<u16>,
    /// cells[cond][probe_view][gallery_view]
    pub cells: Vec<Vec<Vec<Cell>>>,
    pub skipped_sequences: Vec<String>,
}

impl EvalReport {
    pub fn cell(&self, cond: Condition, pv: u16, gv: u16) -> Option<&Cell> {
        let ci = self.conditions.iter().position(|&c| c == cond)?;
        let pi = self.probe_views.iter().position(|&v| v == pv)?;
        let gi = self.gallery_views.iter().position(|&v| v == gv)?;
        Some(&self.cells[ci][pi][gi])
    }

    /// Mean over unmasked gallery views for one probe view.
    pub fn probe_view_mean(&self, cond_idx: usize, pv_idx: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for cell in &self.cells[cond_idx][pv_idx] {
            if let Some(acc) = cell.accuracy() {
                sum += acc;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    /// Mean over probe views of the per-probe-view means.
    pub fn condition_mean(&self, cond: Condition) -> Option<f64> {
        let ci = self.conditions.iter().position(|&c| c == cond)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for pi in 0..self.probe_views.len() {
            if let Some(m) = self.probe_view_mean(ci, pi) {
                sum += m;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

/// Compute the rank-1 matrix. The gallery and probe sets must be disjoint
/// and every probe identity must appear in the gallery.
pub fn rank1_matrix(
    gallery: &EmbeddingStore,
    probes: &EmbeddingStore,
    skipped_sequences: Vec<String>,
) -> Result<EvalReport, EvalError> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(EvalError::Split("empty gallery or probe set".into()));
    }
    let gallery_ids: BTreeSet<&str> = gallery.entries.iter().map(|(r, _)| r.id.as_str()).collect();
    for (r, _) in &probes.entries {
        if gallery_ids.contains(r.id.as_str()) {
            return Err(EvalError::Split(format!(
                "sequence {} appears in both gallery and probe sets",
                r.id
            )));
        }
    }
    let gallery_identities: BTreeSet<&str> = gallery
        .entries
        .iter()
        .map(|(r, _)| r.identity.as_str())
        .collect();
    for (r, _) in &probes.entries {
        if !gallery_identities.contains(r.identity.as_str()) {
            return Err(EvalError::Split(format!(
                "probe identity {} missing from the gallery",
                r.identity
            )));
        }
    }

    let conditions: Vec<Condition> = {
        let set: BTreeSet<Condition> = probes.entries.iter().map(|(r, _)| r.condition).collect();
        set.into_iter().collect()
    };
    let probe_views: Vec<u16> = {
        let set: BTreeSet<u16> = probes.entries.iter().map(|(r, _)| r.view).collect();
        set.into_iter().collect()
    };
    let gallery_views: Vec<u16> = {
        let set: BTreeSet<u16> = gallery.entries.iter().map(|(r, _)| r.view).collect();
        set.into_iter().collect()
    };

    let mut cells =
        vec![vec![vec![Cell::Masked(MaskReason::NoProbes); gallery_views.len()]; probe_views.len()];
            conditions.len()];

    for (ci, &cond) in conditions.iter().enumerate() {
        for (pi, &pv) in probe_views.iter().enumerate() {
            let cohort: Vec<&(SeqRef, EmbeddingSet)> = probes
                .entries
                .iter()
                .filter(|(r, _)| r.condition == cond && r.view == pv)
                .collect();
            for (gi, &gv) in gallery_views.iter().enumerate() {
                if gv == pv {
                    cells[ci][pi][gi] = Cell::Masked(MaskReason::IdenticalView);
                    continue;
                }
                if cohort.is_empty() {
                    continue; // stays NoProbes
                }
                // Gallery entries are in sorted-id order, so keeping the
                // first strict minimum breaks ties toward the smallest id.
                let candidates: Vec<&(SeqRef, EmbeddingSet)> = gallery
                    .entries
                    .iter()
                    .filter(|(r, _)| r.view == gv)
                    .collect();
                if candidates.is_empty() {
                    cells[ci][pi][gi] = Cell::Masked(MaskReason::EmptyGallery);
                    continue;
                }
                let mut correct = 0usize;
                for (pr, pe) in &cohort {
                    let mut best_dist = f64::INFINITY;
                    let mut best_identity = "";
                    for (gr, ge) in &candidates {
                        let d = pairwise_distance(pe, ge)?;
                        if d < best_dist {
                            best_dist = d;
                            best_identity = gr.identity.as_str();
                        }
                    }
                    if best_identity == pr.identity {
                        correct += 1;
                    }
                }
                cells[ci][pi][gi] = Cell::Acc {
                    correct,
                    total: cohort.len(),
                };
            }
        }
    }

    Ok(EvalReport {
        conditions,
        probe_views,
        gallery_views,
        cells,
        skipped_sequences,
    })
}

/// Plain-text table: one row per method-condition, one column per probe
/// view plus the mean, percentages with one decimal.
pub fn render_report(report: &EvalReport, method: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12}", "probe view"));
    for v in &report.probe_views {
        out.push_str(&format!("{:>8}", v));
    }
    out.push_str(&format!("{:>8}\n", "mean"));
    for (ci, cond) in report.conditions.iter().enumerate() {
        out.push_str(&format!("{:<12}", format!("{method} {cond}")));
        for pi in 0..report.probe_views.len() {
            match report.probe_view_mean(ci, pi) {
                Some(m) => out.push_str(&format!("{:>8.1}", m * 100.0)),
                None => out.push_str(&format!("{:>8}", "-")),
            }
        }
        match report.condition_mean(*cond) {
            Some(m) => out.push_str(&format!("{:>8.1}\n", m * 100.0)),
            None => out.push_str(&format!("{:>8}\n", "-")),
        }
    }
    out
}

/// Machine-readable cells: condition, probe view, gallery view, accuracy.
pub fn render_cells_csv(report: &EvalReport) -> String {
    let mut out = String::from("condition,probe_view,gallery_view,accuracy\n");
    for (ci, cond) in report.conditions.iter().enumerate() {
        for (pi, pv) in report.probe_views.iter().enumerate() {
            for (gi, gv) in report.gallery_views.iter().enumerate() {
                if let Some(acc) = report.cells[ci][pi][gi].accuracy() {
                    out.push_str(&format!("{cond},{pv},{gv},{acc}\n"));
                }
            }
        }
    }
    out
}
