//! Rank-by-rank escalation of positive-definite forms by their truants.
//!
//! An *escalation* of a form `Q` of rank `n` by a target value `t` is a
//! positive-definite form of rank `n + 1` whose leading `n × n` block is the
//! reduced Gram matrix of `Q` and whose new basis vector has `Q`-value exactly
//! `t`.  Escalating a form by its truant (the least member of the target set
//! it misses) and repeating rank by rank produces the escalation tree whose
//! leaves carry no truant below the search cap; the census of those leaves
//! drives every downstream representability argument.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumerate::{theta_counts, EnumLimits};
use crate::error::{Error, Result};
use crate::form::GramForm;
use crate::padic;
use crate::reduce::{is_equivalent, normalized_reduced};
use crate::target::{truant, TargetSet};

/// Integrality convention for the cross entries of an escalation.
///
/// Escalating within integer-valued forms allows any integer cross entries in
/// the Gram matrix; escalating within integer-matrix (classically integral)
/// forms requires every cross entry to stay even.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    /// Gram matrices with even diagonal and arbitrary integer off-diagonal.
    IntegerValued,
    /// Gram matrices with every entry even (`Q(x) = ½xᵀAx` with `A = 2B`).
    IntegerMatrix,
}

impl Flavor {
    /// Step between admissible cross entries.
    fn cross_step(self) -> i64 {
        match self {
            Flavor::IntegerValued => 1,
            Flavor::IntegerMatrix => 2,
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flavor::IntegerValued => write!(f, "iv"),
            Flavor::IntegerMatrix => write!(f, "im"),
        }
    }
}

impl FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iv" | "integer-valued" => Ok(Flavor::IntegerValued),
            "im" | "integer-matrix" => Ok(Flavor::IntegerMatrix),
            other => Err(Error::InvalidForm(format!(
                "unknown flavor `{other}` (expected `iv` or `im`)"
            ))),
        }
    }
}

/// Floor of the square root of a non-negative `i64`.
fn isqrt(v: i64) -> i64 {
    if v <= 0 {
        0
    } else {
        (v as u64).isqrt() as i64
    }
}

/// Walks every canonical cross vector over the given per-coordinate bounds in
/// ascending lexicographic order.  A cross vector is canonical when its first
/// nonzero entry is positive; each `{c, -c}` pair contributes one member, and
/// the all-zero vector (an orthogonal sum) is its own representative.
/// `pending` is true while every entry placed so far is zero.
fn walk_cross(
    bounds: &[i64],
    step: i64,
    idx: usize,
    pending: bool,
    c: &mut [i64],
    f: &mut impl FnMut(&[i64]),
) {
    if idx == bounds.len() {
        f(c);
        return;
    }
    let b = bounds[idx];
    let lo = if pending { 0 } else { -(b / step) * step };
    let mut v = lo;
    while v <= b {
        c[idx] = v;
        walk_cross(bounds, step, idx + 1, pending && v == 0, c, f);
        v += step;
    }
}

/// One class representative per escalation of `parent` by `t`, in ascending
/// lexicographic order of the first cross vector that produces the class.
///
/// The parent is reduced first; every emitted form keeps that reduced matrix
/// as its leading principal block, has `2t` in the new diagonal corner (so the
/// new basis vector takes the value `t`), and is positive definite.  Bordered
/// matrices that are not positive definite — including determinant zero — are
/// discarded.  No two emitted forms are equivalent, and every admissible
/// cross vector yields a form equivalent to exactly one emitted class.
pub fn escalations(
    parent: &GramForm,
    t: u64,
    flavor: Flavor,
    limits: &EnumLimits,
) -> Result<Vec<GramForm>> {
    if t == 0 || t > (i64::MAX / 4) as u64 {
        return Err(Error::InvalidForm(format!(
            "escalation value {t} out of range"
        )));
    }
    let corner = 2 * t as i64;
    let reduced = normalized_reduced(parent);
    let n = reduced.rank();
    if n == 0 {
        return Ok(vec![GramForm::new(1, vec![corner])?]);
    }

    let det = reduced.det();
    let adj = reduced.adjugate();
    let step = flavor.cross_step();
    // Cauchy–Schwarz box: a norm-t vector forces |A_{i,n}| ≤ √(2·A_ii·t).
    let bounds: Vec<i64> = (0..n)
        .map(|i| isqrt(2 * reduced.entry(i, i) * t as i64))
        .collect();

    // Split the first coordinate across tasks; each task walks its tail
    // sequentially and keeps, per normalized-reduction key, the bordered form
    // with the lexicographically least cross vector.
    let mut tasks: Vec<(i64, bool)> = vec![(0, true)];
    let mut v = step;
    while v <= bounds[0] {
        tasks.push((v, false));
        v += step;
    }

    type Found = HashMap<Vec<i64>, (Vec<i64>, GramForm)>;
    let merged: Found = tasks
        .into_par_iter()
        .map(|(first, pending)| {
            let mut local: Found = HashMap::new();
            let mut c = vec![0i64; n];
            c[0] = first;
            let mut consider = |cross: &[i64]| {
                // Positive definiteness of the bordered matrix reduces to a
                // positive determinant: 2t·det(A) − cᵀ·adj(A)·c > 0.
                let mut q: i128 = 0;
                for i in 0..n {
                    for j in 0..n {
                        q += adj[i * n + j] * cross[i] as i128 * cross[j] as i128;
                    }
                }
                if corner as i128 * det - q <= 0 {
                    return;
                }
                let m = n + 1;
                let mut a = vec![0i64; m * m];
                for i in 0..n {
                    for j in 0..n {
                        a[i * m + j] = reduced.entry(i, j);
                    }
                    a[i * m + n] = cross[i];
                    a[n * m + i] = cross[i];
                }
                a[n * m + n] = corner;
                let cand = GramForm::new_unchecked(m, a);
                let key = normalized_reduced(&cand).matrix().to_vec();
                match local.entry(key) {
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert((cross.to_vec(), cand));
                    }
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        if cross < e.get().0.as_slice() {
                            e.insert((cross.to_vec(), cand));
                        }
                    }
                }
            };
            walk_cross(&bounds, step, 1, pending, &mut c, &mut consider);
            local
        })
        .reduce(HashMap::new, |mut acc, local| {
            for (key, (cross, cand)) in local {
                match acc.entry(key) {
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert((cross, cand));
                    }
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        if cross < e.get().0 {
                            e.insert((cross, cand));
                        }
                    }
                }
            }
            acc
        });

    let mut reps: Vec<(Vec<i64>, GramForm)> = merged.into_values().collect();
    reps.sort_by(|a, b| a.0.cmp(&b.0));
    let forms: Vec<GramForm> = reps.into_iter().map(|(_, f)| f).collect();
    dedup_classes(&forms, limits)
}

/// Probe depth of the theta-series prefix used to bucket candidate classes.
const THETA_PROBE: u64 = 24;

/// Indices of one representative per equivalence class, in input order.
///
/// Exact on every input: forms with equal normalized reductions collapse
/// first, the rest are bucketed by determinant and theta-series prefix, and
/// each bucket is settled by exact isometry tests against the representatives
/// already kept.  The first member of each class in input order survives.
pub fn dedup_class_indices(forms: &[GramForm], limits: &EnumLimits) -> Result<Vec<usize>> {
    if forms.is_empty() {
        return Ok(Vec::new());
    }
    let keys: Vec<Vec<i64>> = forms
        .par_iter()
        .map(|f| normalized_reduced(f).matrix().to_vec())
        .collect();
    let mut first_of_key: HashMap<&[i64], usize> = HashMap::new();
    let mut survivors: Vec<usize> = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        if !first_of_key.contains_key(key.as_slice()) {
            first_of_key.insert(key.as_slice(), i);
            survivors.push(i);
        }
    }

    let signatures: Vec<(i128, Vec<u64>)> = survivors
        .par_iter()
        .map(|&i| Ok((forms[i].det(), theta_counts(&forms[i], THETA_PROBE, limits)?)))
        .collect::<Result<_>>()?;
    let mut buckets: HashMap<&(i128, Vec<u64>), Vec<usize>> = HashMap::new();
    for (pos, sig) in signatures.iter().enumerate() {
        buckets.entry(sig).or_default().push(survivors[pos]);
    }

    let groups: Vec<Vec<usize>> = buckets.into_values().collect();
    let kept_groups: Vec<Vec<usize>> = groups
        .into_par_iter()
        .map(|group| -> Result<Vec<usize>> {
            let mut reps: Vec<usize> = Vec::new();
            'next: for i in group {
                for &r in &reps {
                    if is_equivalent(&forms[r], &forms[i], limits)?.is_some() {
                        continue 'next;
                    }
                }
                reps.push(i);
            }
            Ok(reps)
        })
        .collect::<Result<_>>()?;

    let mut kept: Vec<usize> = kept_groups.into_iter().flatten().collect();
    kept.sort_unstable();
    Ok(kept)
}

/// One representative per equivalence class, preserving input order.
pub fn dedup_classes(forms: &[GramForm], limits: &EnumLimits) -> Result<Vec<GramForm>> {
    Ok(dedup_class_indices(forms, limits)?
        .into_iter()
        .map(|i| forms[i].clone())
        .collect())
}

/// Why a tree node was or was not escalated further.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    /// Has a truant and no local obstruction; eligible for escalation.
    Escalatable,
    /// Represents every target member up to the truant cap; a leaf.
    LeafNoTruantBelowCap,
    /// Has a truant but already fails some target member everywhere locally;
    /// the failure is recorded and the node still escalates below the depth
    /// cap, since its escalations stay relevant to the census.
    LocallyDeficient,
}

/// One node of an escalation tree.
#[derive(Clone, Debug)]
pub struct EscalationNode {
    /// Position in the breadth-first node list.
    pub id: u64,
    /// Node whose escalation produced this form; `None` for the seed.
    pub parent_id: Option<u64>,
    /// Normalized reduced representative of the class.
    pub form: GramForm,
    /// Least target member missed, if any below the truant cap.
    pub truant: Option<u64>,
    /// Depth in the tree; equals the rank of the form.
    pub depth: usize,
    pub status: NodeStatus,
    /// Least target member missed by the local (congruence) conditions alone,
    /// recorded for nodes of rank at least four.
    pub locally_missed: Option<i128>,
}

/// Serialized shape of an [`EscalationNode`], one JSON object per line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub rank: usize,
    pub gram_upper: Vec<i64>,
    pub label: String,
    pub truant: Option<u64>,
    pub depth: usize,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locally_missed: Option<i128>,
}

impl EscalationNode {
    pub fn record(&self) -> NodeRecord {
        NodeRecord {
            id: self.id,
            parent_id: self.parent_id,
            rank: self.form.rank(),
            gram_upper: self.form.upper_triangle(),
            label: self.form.digest_label(),
            truant: self.truant,
            depth: self.depth,
            status: self.status,
            locally_missed: self.locally_missed,
        }
    }

    pub fn from_record(rec: &NodeRecord) -> Result<Self> {
        let form = GramForm::from_upper(rec.rank, &rec.gram_upper)?;
        Ok(EscalationNode {
            id: rec.id,
            parent_id: rec.parent_id,
            form,
            truant: rec.truant,
            depth: rec.depth,
            status: rec.status,
            locally_missed: rec.locally_missed,
        })
    }
}

/// Writes nodes as JSON lines.
pub fn write_nodes(path: &Path, nodes: &[EscalationNode]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for node in nodes {
        serde_json::to_writer(&mut out, &node.record())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads nodes written by [`write_nodes`].
pub fn read_nodes(path: &Path) -> Result<Vec<EscalationNode>> {
    let file = BufReader::new(File::open(path)?);
    let mut nodes = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord = serde_json::from_str(&line)?;
        nodes.push(EscalationNode::from_record(&rec)?);
    }
    Ok(nodes)
}

/// Truant plus, for forms of rank at least four that have one, the least
/// target member missed by local conditions alone.
fn analyze_form(
    form: &GramForm,
    target: &TargetSet,
    truant_cap: u64,
    limits: &EnumLimits,
) -> Result<(Option<u64>, Option<i128>)> {
    let tr = truant(form, target, truant_cap, limits)?;
    let missed = if form.rank() >= 4 && tr.is_some() {
        padic::locally_universal(form, target)?
    } else {
        None
    };
    Ok((tr, missed))
}

fn status_of(truant: Option<u64>, locally_missed: Option<i128>) -> NodeStatus {
    match (truant, locally_missed) {
        (None, _) => NodeStatus::LeafNoTruantBelowCap,
        (Some(_), Some(_)) => NodeStatus::LocallyDeficient,
        (Some(_), None) => NodeStatus::Escalatable,
    }
}

/// Grows the full escalation tree from `seed` breadth first.
///
/// Each level escalates every node that has a truant (locally deficient nodes
/// included) until `max_depth`; a node's depth is its rank, so a rank-zero
/// seed reaches rank `max_depth`.  Classes arising from several parents keep
/// the earliest parent in node order, and the node list is deterministic:
/// parents are processed in id order and each parent's escalations arrive in
/// the order produced by [`escalations`].
pub fn escalation_tree(
    seed: &GramForm,
    target: &TargetSet,
    truant_cap: u64,
    max_depth: usize,
    flavor: Flavor,
    limits: &EnumLimits,
) -> Result<Vec<EscalationNode>> {
    let root = normalized_reduced(seed);
    let (root_truant, root_missed) = analyze_form(&root, target, truant_cap, limits)?;
    let mut nodes = vec![EscalationNode {
        id: 0,
        parent_id: None,
        depth: root.rank(),
        status: status_of(root_truant, root_missed),
        truant: root_truant,
        locally_missed: root_missed,
        form: root,
    }];
    let mut level: Vec<u64> = vec![0];

    while !level.is_empty() {
        let parents: Vec<u64> = level
            .iter()
            .copied()
            .filter(|&id| {
                let node = &nodes[id as usize];
                node.truant.is_some() && node.depth < max_depth
            })
            .collect();
        if parents.is_empty() {
            break;
        }

        let mut tagged: Vec<(u64, GramForm)> = Vec::new();
        for &pid in &parents {
            let (form, t) = {
                let p = &nodes[pid as usize];
                (p.form.clone(), p.truant.expect("parents are escalatable"))
            };
            for escalated in escalations(&form, t, flavor, limits)? {
                tagged.push((pid, escalated));
            }
        }
        let forms: Vec<GramForm> = tagged.iter().map(|(_, f)| f.clone()).collect();
        let kept = dedup_class_indices(&forms, limits)?;

        let analyzed: Vec<(GramForm, Option<u64>, Option<i128>)> = kept
            .par_iter()
            .map(|&i| {
                let normalized = normalized_reduced(&forms[i]);
                let (tr, missed) = analyze_form(&normalized, target, truant_cap, limits)?;
                Ok((normalized, tr, missed))
            })
            .collect::<Result<_>>()?;

        let mut next: Vec<u64> = Vec::with_capacity(kept.len());
        for (&i, (form, tr, missed)) in kept.iter().zip(analyzed) {
            let id = nodes.len() as u64;
            nodes.push(EscalationNode {
                id,
                parent_id: Some(tagged[i].0),
                depth: form.rank(),
                status: status_of(tr, missed),
                truant: tr,
                locally_missed: missed,
                form,
            });
            next.push(id);
        }
        level = next;
    }
    Ok(nodes)
}

/// Deduplicated union of the truant-escalations of several forms.
#[derive(Clone, Debug)]
pub struct TruantEscalation {
    /// One representative per class across all parents, parents in input
    /// order and each parent's classes in [`escalations`] order.
    pub forms: Vec<GramForm>,
    /// Number of escalation classes of each input form (zero when the form
    /// has no truant below the cap), before the cross-parent merge.
    pub per_parent: Vec<usize>,
}

/// Escalates every input form by its own truant and merges the results.
pub fn escalate_by_truant_all(
    parents: &[GramForm],
    target: &TargetSet,
    truant_cap: u64,
    flavor: Flavor,
    limits: &EnumLimits,
) -> Result<TruantEscalation> {
    let mut per_parent = Vec::with_capacity(parents.len());
    let mut pooled: Vec<GramForm> = Vec::new();
    for parent in parents {
        match truant(parent, target, truant_cap, limits)? {
            None => per_parent.push(0),
            Some(t) => {
                let escalated = escalations(parent, t, flavor, limits)?;
                per_parent.push(escalated.len());
                pooled.extend(escalated);
            }
        }
    }
    let forms = dedup_classes(&pooled, limits)?;
    Ok(TruantEscalation { forms, per_parent })
}
