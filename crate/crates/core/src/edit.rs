//! Customizable-cost token-level edit-distance DP with a canonical backtrace,
//! plus an independent search oracle for tests.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Token;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("edit costs must all be >= 1")]
    ZeroCost,
    #[error("op at pos {pos} out of range for source of length {len}")]
    PosOutOfRange { pos: usize, len: usize },
    #[error("old span does not match source at pos {pos}")]
    SpanMismatch { pos: usize },
    #[error("ops must be sorted by position with disjoint spans (violation at pos {pos})")]
    OverlappingOps { pos: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Per-token costs for the three edit operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSet {
    pub insert: u32,
    pub delete: u32,
    pub replace: u32,
}

impl CostSet {
    pub fn new(insert: u32, delete: u32, replace: u32) -> Result<CostSet, EditError> {
        if insert == 0 || delete == 0 || replace == 0 {
            return Err(EditError::ZeroCost);
        }
        Ok(CostSet {
            insert,
            delete,
            replace,
        })
    }

    pub const fn unit() -> CostSet {
        CostSet {
            insert: 1,
            delete: 1,
            replace: 1,
        }
    }

    pub fn as_triple(&self) -> [u32; 3] {
        [self.insert, self.delete, self.replace]
    }
}

/// The five stock cost settings used for augmentation, in augmentation order.
pub const DEFAULT_COST_SETS: [CostSet; 5] = [
    CostSet { insert: 1, delete: 1, replace: 1 },
    CostSet { insert: 1, delete: 1, replace: 2 },
    CostSet { insert: 1, delete: 2, replace: 1 },
    CostSet { insert: 2, delete: 1, replace: 1 },
    CostSet { insert: 1, delete: 2, replace: 3 },
];

/// A span-level edit anchored to 0-based positions in the ORIGINAL source.
/// Insert places tokens before source position `pos` (`pos == len` appends).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditOp {
    Insert { pos: usize, tokens: Vec<Token> },
    Delete { pos: usize, tokens: Vec<Token> },
    Replace { pos: usize, old: Vec<Token>, new: Vec<Token> },
}

impl EditOp {
    pub fn pos(&self) -> usize {
        match self {
            EditOp::Insert { pos, .. } | EditOp::Delete { pos, .. } | EditOp::Replace { pos, .. } => {
                *pos
            }
        }
    }

    /// Tokens consumed from the source (empty for Insert).
    pub fn old_span(&self) -> &[Token] {
        match self {
            EditOp::Insert { .. } => &[],
            EditOp::Delete { tokens, .. } => tokens,
            EditOp::Replace { old, .. } => old,
        }
    }

    /// Tokens produced in the output (empty for Delete).
    pub fn new_span(&self) -> &[Token] {
        match self {
            EditOp::Insert { tokens, .. } => tokens,
            EditOp::Delete { .. } => &[],
            EditOp::Replace { new, .. } => new,
        }
    }

    pub fn cost(&self, costs: &CostSet) -> u64 {
        match self {
            EditOp::Insert { tokens, .. } => tokens.len() as u64 * costs.insert as u64,
            EditOp::Delete { tokens, .. } => tokens.len() as u64 * costs.delete as u64,
            EditOp::Replace { old, .. } => old.len() as u64 * costs.replace as u64,
        }
    }
}

/// An ordered edit script over a source of `source_len` tokens.
///
/// Equality compares `ops` and `source_len` only: `total_cost` records the
/// cost under whichever CostSet produced the script and is not part of the
/// script's identity (a parsed script reports its cost under unit costs).
#[derive(Debug, Clone)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
    pub source_len: usize,
    pub total_cost: u64,
}

impl PartialEq for EditScript {
    fn eq(&self, other: &Self) -> bool {
        self.ops == other.ops && self.source_len == other.source_len
    }
}

impl Eq for EditScript {}

impl EditScript {
    pub fn empty(source_len: usize) -> EditScript {
        EditScript {
            ops: Vec::new(),
            source_len,
            total_cost: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn cost_under(&self, costs: &CostSet) -> u64 {
        self.ops.iter().map(|op| op.cost(costs)).sum()
    }

    /// Checks ordering, span disjointness, and range against `source_len`.
    pub fn validate(&self) -> Result<(), EditError> {
        let mut cursor = 0usize; // first source index not yet claimed
        for op in &self.ops {
            let pos = op.pos();
            let old_len = op.old_span().len();
            if pos < cursor {
                return Err(EditError::OverlappingOps { pos });
            }
            match op {
                EditOp::Insert { tokens, .. } => {
                    if tokens.is_empty() {
                        return Err(EditError::InvalidArgument("empty insert span".into()));
                    }
                    if pos > self.source_len {
                        return Err(EditError::PosOutOfRange { pos, len: self.source_len });
                    }
                    // Two inserts at the same pos would be order-ambiguous.
                    cursor = pos + 1;
                }
                EditOp::Delete { tokens, .. } => {
                    if tokens.is_empty() {
                        return Err(EditError::InvalidArgument("empty delete span".into()));
                    }
                    if pos + old_len > self.source_len {
                        return Err(EditError::PosOutOfRange { pos, len: self.source_len });
                    }
                    cursor = pos + old_len;
                }
                EditOp::Replace { old, new, .. } => {
                    if old.is_empty() || new.is_empty() {
                        return Err(EditError::InvalidArgument("empty replace span".into()));
                    }
                    if pos + old_len > self.source_len {
                        return Err(EditError::PosOutOfRange { pos, len: self.source_len });
                    }
                    cursor = pos + old_len;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Step {
    Match,
    Replace,
    Delete,
    Insert,
}

/// Infers a minimum-cost edit script turning `source` into `target`.
///
/// Ties are broken canonically by walking the DP table from the front and
/// preferring Match > Replace > Delete > Insert at every cell; adjacent
/// single-token ops of the same kind are coalesced into span ops.
pub fn infer_edits(source: &[Token], target: &[Token], costs: &CostSet) -> EditScript {
    let m = source.len();
    let n = target.len();
    let ins = costs.insert as u64;
    let del = costs.delete as u64;
    let rep = costs.replace as u64;

    // dp[i][j] = min cost to turn source[i..] into target[j..].
    let width = n + 1;
    let mut dp = vec![0u64; (m + 1) * width];
    for j in (0..n).rev() {
        dp[m * width + j] = dp[m * width + j + 1] + ins;
    }
    for i in (0..m).rev() {
        dp[i * width + n] = dp[(i + 1) * width + n] + del;
        for j in (0..n).rev() {
            let mut best = if source[i] == target[j] {
                dp[(i + 1) * width + j + 1]
            } else {
                rep + dp[(i + 1) * width + j + 1]
            };
            best = best.min(del + dp[(i + 1) * width + j]);
            best = best.min(ins + dp[i * width + j + 1]);
            dp[i * width + j] = best;
        }
    }

    let mut steps: Vec<(Step, usize, usize)> = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < m || j < n {
        let here = dp[i * width + j];
        if i < m && j < n && source[i] == target[j] && here == dp[(i + 1) * width + j + 1] {
            steps.push((Step::Match, i, j));
            i += 1;
            j += 1;
        } else if i < m && j < n && here == rep + dp[(i + 1) * width + j + 1] {
            steps.push((Step::Replace, i, j));
            i += 1;
            j += 1;
        } else if i < m && here == del + dp[(i + 1) * width + j] {
            steps.push((Step::Delete, i, j));
            i += 1;
        } else {
            debug_assert!(j < n && here == ins + dp[i * width + j + 1]);
            steps.push((Step::Insert, i, j));
            j += 1;
        }
    }

    let mut ops: Vec<EditOp> = Vec::new();
    for (step, si, tj) in steps {
        match step {
            Step::Match => {}
            Step::Replace => {
                if let Some(EditOp::Replace { pos, old, new }) = ops.last_mut() {
                    if *pos + old.len() == si {
                        old.push(source[si].clone());
                        new.push(target[tj].clone());
                        continue;
                    }
                }
                ops.push(EditOp::Replace {
                    pos: si,
                    old: vec![source[si].clone()],
                    new: vec![target[tj].clone()],
                });
            }
            Step::Delete => {
                if let Some(EditOp::Delete { pos, tokens }) = ops.last_mut() {
                    if *pos + tokens.len() == si {
                        tokens.push(source[si].clone());
                        continue;
                    }
                }
                ops.push(EditOp::Delete {
                    pos: si,
                    tokens: vec![source[si].clone()],
                });
            }
            Step::Insert => {
                if let Some(EditOp::Insert { pos, tokens }) = ops.last_mut() {
                    if *pos == si {
                        tokens.push(target[tj].clone());
                        continue;
                    }
                }
                ops.push(EditOp::Insert {
                    pos: si,
                    tokens: vec![target[tj].clone()],
                });
            }
        }
    }

    let script = EditScript {
        ops,
        source_len: m,
        total_cost: dp[0],
    };
    debug_assert!(script.validate().is_ok());
    debug_assert_eq!(script.cost_under(costs), script.total_cost);
    script
}

/// Applies `script` to `source` in a single left-to-right pass.
pub fn apply_script(source: &[Token], script: &EditScript) -> Result<Vec<Token>, EditError> {
    if script.source_len != source.len() {
        return Err(EditError::InvalidArgument(format!(
            "script built for source of length {}, got {}",
            script.source_len,
            source.len()
        )));
    }
    script.validate()?;
    let mut out: Vec<Token> = Vec::with_capacity(source.len());
    let mut cursor = 0usize;
    for op in &script.ops {
        let pos = op.pos();
        out.extend_from_slice(&source[cursor..pos]);
        cursor = pos;
        let old = op.old_span();
        if !old.is_empty() {
            if &source[pos..pos + old.len()] != old {
                return Err(EditError::SpanMismatch { pos });
            }
            cursor = pos + old.len();
        }
        out.extend_from_slice(op.new_span());
    }
    out.extend_from_slice(&source[cursor..]);
    Ok(out)
}

const BRUTE_FORCE_MAX_LEN: usize = 8;

/// Independent minimum-cost oracle: uniform-cost (Dijkstra) search over
/// single-token edit states. Returns `cap` when the true cost exceeds it.
pub fn brute_force_min_cost(
    source: &[Token],
    target: &[Token],
    costs: &CostSet,
    cap: u64,
) -> Result<u64, EditError> {
    if source.len() > BRUTE_FORCE_MAX_LEN || target.len() > BRUTE_FORCE_MAX_LEN {
        return Err(EditError::InvalidArgument(format!(
            "brute force capped at length {BRUTE_FORCE_MAX_LEN}"
        )));
    }
    let m = source.len();
    let n = target.len();
    let mut best = vec![u64::MAX; (m + 1) * (n + 1)];
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut heap: BinaryHeap<Reverse<(u64, usize, usize)>> = BinaryHeap::new();
    heap.push(Reverse((0, 0, 0)));
    while let Some(Reverse((cost, i, j))) = heap.pop() {
        if cost > cap {
            return Ok(cap);
        }
        if i == m && j == n {
            return Ok(cost);
        }
        if best[idx(i, j)] <= cost {
            continue;
        }
        best[idx(i, j)] = cost;
        if i < m && j < n && source[i] == target[j] {
            heap.push(Reverse((cost, i + 1, j + 1)));
        }
        if i < m && j < n {
            heap.push(Reverse((cost + costs.replace as u64, i + 1, j + 1)));
        }
        if i < m {
            heap.push(Reverse((cost + costs.delete as u64, i + 1, j)));
        }
        if j < n {
            heap.push(Reverse((cost + costs.insert as u64, i, j + 1)));
        }
    }
    Ok(cap)
}
