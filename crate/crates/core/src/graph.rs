//! Information-flow graphs of order-based disclosure policies.
//!
//! A graph assigns every round `t` its observed set `S_t ⊆ [1, t-1]`. Storage is
//! compact: rounds are tiled by contiguous [`Block`]s. Every member of a block
//! observes the block's interval set, and members of a *chain* block also observe
//! the earlier members of their own block (a full-disclosure path). Builders lay
//! groups out level-major, then `(u, v)`-lexicographic, then chronologically;
//! inside level 1, path-major.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod presets;

/// Sorted, disjoint, non-adjacent inclusive spans of rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IntervalSet {
    spans: Vec<(u64, u64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `[lo, hi]`; empty when `lo > hi`.
    pub fn range(lo: u64, hi: u64) -> Self {
        if lo > hi {
            Self::empty()
        } else {
            Self {
                spans: vec![(lo, hi)],
            }
        }
    }

    /// Normalizes arbitrary (possibly overlapping, unsorted) spans.
    pub fn from_spans<I: IntoIterator<Item = (u64, u64)>>(spans: I) -> Self {
        let mut v: Vec<(u64, u64)> = spans.into_iter().filter(|(a, b)| a <= b).collect();
        v.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
        for (lo, hi) in v {
            match out.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        Self { spans: out }
    }

    pub fn from_rounds<I: IntoIterator<Item = u64>>(rounds: I) -> Self {
        Self::from_spans(rounds.into_iter().map(|r| (r, r)))
    }

    pub fn spans(&self) -> &[(u64, u64)] {
        &self.spans
    }

    pub fn len(&self) -> u64 {
        self.spans.iter().map(|(a, b)| b - a + 1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn max(&self) -> Option<u64> {
        self.spans.last().map(|s| s.1)
    }

    pub fn contains(&self, r: u64) -> bool {
        let i = self.spans.partition_point(|s| s.1 < r);
        i < self.spans.len() && self.spans[i].0 <= r
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        Self::from_spans(self.spans.iter().chain(&other.spans).copied())
    }

    /// Smallest element of `self` missing from `other`, or `None` when `self ⊆ other`.
    pub fn first_missing_from(&self, other: &IntervalSet) -> Option<u64> {
        for &(lo, hi) in &self.spans {
            let mut r = lo;
            while r <= hi {
                let i = other.spans.partition_point(|s| s.1 < r);
                match other.spans.get(i) {
                    Some(&(olo, ohi)) if olo <= r => r = ohi + 1,
                    _ => return Some(r),
                }
            }
        }
        None
    }

    /// Number of elements inside `[lo, hi]`.
    pub fn count_within(&self, lo: u64, hi: u64) -> u64 {
        self.spans
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (a.max(lo), b.min(hi));
                if x <= y {
                    y - x + 1
                } else {
                    0
                }
            })
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.spans.iter().flat_map(|&(a, b)| a..=b)
    }
}

/// Structural role of a block of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// The whole horizon as one full-disclosure chain.
    FullDisclosure,
    /// One full-disclosure path inside a first-level group.
    Path,
    /// A G-group (or the single exploration-level group of the smaller policies).
    G,
    /// An amplifying Γ-group.
    Gamma,
    /// Exploitation rounds observing the whole exploration phase.
    Exploit,
    /// Remainder rounds appended to the top level.
    Leftover,
    /// Hand-built round with an explicit observed set.
    Custom,
}

/// Structural tag carried by each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockLabel {
    pub level: u32,
    pub kind: GroupKind,
    pub u: Option<u32>,
    pub v: Option<u32>,
    pub path: Option<u64>,
}

impl BlockLabel {
    fn new(level: u32, kind: GroupKind) -> Self {
        Self {
            level,
            kind,
            u: None,
            v: None,
            path: None,
        }
    }

    fn at(mut self, u: Option<u32>, v: Option<u32>) -> Self {
        self.u = u;
        self.v = v;
        self
    }

    /// Identity of the structural group this block belongs to (paths fold into their group).
    pub fn group_key(&self) -> GroupKey {
        let kind = match self.kind {
            GroupKind::Path => GroupKind::G,
            k => k,
        };
        GroupKey {
            level: self.level,
            kind,
            u: self.u,
            v: self.v,
            custom: None,
        }
    }
}

/// Key used to collapse blocks into structural groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub level: u32,
    pub kind: GroupKind,
    pub u: Option<u32>,
    pub v: Option<u32>,
    custom: Option<u64>,
}

impl GroupKey {
    fn name(&self) -> String {
        let kind = match self.kind {
            GroupKind::FullDisclosure => "full",
            GroupKind::Path | GroupKind::G => "G",
            GroupKind::Gamma => "Gamma",
            GroupKind::Exploit => "exploit",
            GroupKind::Leftover => "leftover",
            GroupKind::Custom => "round",
        };
        let mut s = format!("L{} {kind}", self.level);
        match (self.u, self.v) {
            (Some(u), Some(v)) => {
                let _ = write!(s, " ({u},{v})");
            }
            (Some(u), None) => {
                let _ = write!(s, " {u}");
            }
            _ => {}
        }
        if let Some(c) = self.custom {
            let _ = write!(s, " {c}");
        }
        s
    }
}

/// Contiguous rounds `[start, end]` sharing one observed set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub start: u64,
    pub end: u64,
    /// Members also observe `[start, t-1]`.
    pub chain: bool,
    pub observed: IntervalSet,
    pub label: BlockLabel,
}

impl Block {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn group_key(&self) -> GroupKey {
        let mut k = self.label.group_key();
        if self.label.kind == GroupKind::Custom {
            k.custom = Some(self.start);
        }
        k
    }
}

/// The disclosure policy: who observes whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfoGraph {
    horizon: u64,
    blocks: Vec<Block>,
}

/// A transitivity failure: `t ∈ S_{t'}` but `witness ∈ S_t \ S_{t'}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub t: u64,
    pub t_prime: u64,
    pub witness: u64,
}

/// Per-level round counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: u32,
    pub g_rounds: u64,
    pub gamma_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub levels: Vec<LevelSummary>,
    pub total: u64,
}

impl InfoGraph {
    /// Assembles blocks that must tile `[1, T]` in order, each observing only earlier rounds.
    pub fn from_blocks(horizon: u64, blocks: Vec<Block>) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        let mut expect = 1;
        for b in &blocks {
            if b.start != expect || b.end < b.start {
                return Err(Error::config(format!(
                    "blocks must tile the horizon: expected a block starting at {expect}, got [{}, {}]",
                    b.start, b.end
                )));
            }
            if let Some(m) = b.observed.max() {
                if m >= b.start {
                    return Err(Error::config(format!(
                        "block [{}, {}] observes round {m}, which is not in its past",
                        b.start, b.end
                    )));
                }
            }
            if b.observed.spans().first().is_some_and(|s| s.0 < 1) {
                return Err(Error::config("round indices start at 1"));
            }
            expect = b.end + 1;
        }
        if expect != horizon + 1 {
            return Err(Error::config(format!(
                "blocks cover [1, {}] but the horizon is {horizon}",
                expect - 1
            )));
        }
        Ok(Self { horizon, blocks })
    }

    /// Hand-built graph: `sets[t-1]` is `S_t`, given explicitly.
    pub fn from_observed_sets(sets: Vec<Vec<u64>>) -> Result<Self> {
        let horizon = sets.len() as u64;
        let blocks = sets
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let t = i as u64 + 1;
                Block {
                    start: t,
                    end: t,
                    chain: false,
                    observed: IntervalSet::from_rounds(s),
                    label: BlockLabel::new(0, GroupKind::Custom),
                }
            })
            .collect();
        Self::from_blocks(horizon, blocks)
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_index_of(&self, t: u64) -> Option<usize> {
        if t < 1 || t > self.horizon {
            return None;
        }
        Some(self.blocks.partition_point(|b| b.end < t))
    }

    pub fn block_of(&self, t: u64) -> Option<&Block> {
        self.block_index_of(t).map(|i| &self.blocks[i])
    }

    /// `S_t` as an interval set.
    pub fn observed(&self, t: u64) -> Option<IntervalSet> {
        let b = self.block_of(t)?;
        Some(if b.chain && t > b.start {
            b.observed.union(&IntervalSet::range(b.start, t - 1))
        } else {
            b.observed.clone()
        })
    }

    /// `|S_t|`.
    pub fn observed_len(&self, t: u64) -> Option<u64> {
        let b = self.block_of(t)?;
        Some(b.observed.len() + if b.chain { t - b.start } else { 0 })
    }

    /// Expands every `S_t` into a sorted round list; `O(T^2)` memory.
    pub fn densify(&self) -> Vec<Vec<u64>> {
        (1..=self.horizon)
            .map(|t| {
                self.observed(t)
                    .map(|s| s.iter().collect())
                    .unwrap_or_default()
            })
            .collect()
    }

    pub fn label_of(&self, t: u64) -> Option<BlockLabel> {
        self.block_of(t).map(|b| b.label)
    }

    /// Number of levels (the largest level label).
    pub fn num_levels(&self) -> u32 {
        self.blocks.iter().map(|b| b.label.level).max().unwrap_or(0)
    }

    /// Blocks of each first-level group, keyed by `(u, v)` coordinates.
    pub fn first_level_groups(&self) -> BTreeMap<(Option<u32>, Option<u32>), Vec<usize>> {
        let mut out: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if b.label.level == 1 && b.label.kind == GroupKind::Path {
                out.entry((b.label.u, b.label.v)).or_default().push(i);
            }
        }
        out
    }

    pub fn summary(&self) -> GraphSummary {
        let mut levels: BTreeMap<u32, LevelSummary> = BTreeMap::new();
        for b in &self.blocks {
            let e = levels.entry(b.label.level).or_insert(LevelSummary {
                level: b.label.level,
                g_rounds: 0,
                gamma_rounds: 0,
            });
            if b.label.kind == GroupKind::Gamma {
                e.gamma_rounds += b.len();
            } else {
                e.g_rounds += b.len();
            }
        }
        GraphSummary {
            levels: levels.into_values().collect(),
            total: self.horizon,
        }
    }

    fn blocks_overlapping(&self, lo: u64, hi: u64) -> std::ops::Range<usize> {
        let first = self.blocks.partition_point(|b| b.end < lo);
        let last = self.blocks.partition_point(|b| b.start <= hi);
        first..last.max(first)
    }
}

/// Checks `t ∈ S_{t'} ⇒ S_t ⊆ S_{t'}` for all rounds; empty iff transitive.
///
/// Works block by block. For an observer block only its shared set matters
/// (rounds inside its own chain prefix are trivially fine), and inside an
/// observed chain block the last observed member has the largest set. One
/// violation is reported per offending (observed block, observer block) pair.
pub fn validate_transitive(g: &InfoGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for obs in &g.blocks {
        for &(lo, hi) in obs.observed.spans() {
            for i in g.blocks_overlapping(lo, hi) {
                let b = &g.blocks[i];
                let (x, y) = (b.start.max(lo), b.end.min(hi));
                let t = if b.chain { y } else { x };
                let s_t = if b.chain && t > b.start {
                    b.observed.union(&IntervalSet::range(b.start, t - 1))
                } else {
                    b.observed.clone()
                };
                if let Some(w) = s_t.first_missing_from(&obs.observed) {
                    out.push(Violation {
                        t,
                        t_prime: obs.start,
                        witness: w,
                    });
                }
            }
        }
    }
    out
}

/// `|S_t| / max(t-1, 1)` for every round.
pub fn subhistory_fraction(g: &InfoGraph) -> Vec<f64> {
    (1..=g.horizon)
        .map(|t| g.observed_len(t).unwrap_or(0) as f64 / (t.max(2) - 1) as f64)
        .collect()
}

/// Smallest subhistory fraction among rounds of each level.
pub fn min_fraction_by_level(g: &InfoGraph) -> BTreeMap<u32, f64> {
    let frac = subhistory_fraction(g);
    let mut out: BTreeMap<u32, f64> = BTreeMap::new();
    for b in &g.blocks {
        let m = (b.start..=b.end)
            .map(|t| frac[(t - 1) as usize])
            .fold(f64::INFINITY, f64::min);
        let e = out.entry(b.label.level).or_insert(f64::INFINITY);
        *e = e.min(m);
    }
    out
}

/// Options for [`export_dot`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DotOptions {
    /// One node per structural group, edges annotated with observation counts.
    pub collapse_groups: bool,
    /// Keep only covering edges (the info-graph proper) instead of every observation.
    pub transitive_reduction: bool,
}

/// Renders the graph as a DOT digraph.
///
/// Without `collapse_groups` there is one node per round and the edge set is
/// quadratic in `T`; use it on small graphs only.
pub fn export_dot(g: &InfoGraph, opts: DotOptions) -> String {
    if opts.collapse_groups {
        export_collapsed(g, opts.transitive_reduction)
    } else {
        export_rounds(g, opts.transitive_reduction)
    }
}

fn export_rounds(g: &InfoGraph, reduce: bool) -> String {
    let sets = g.densify();
    let mut s = String::from("digraph info_graph {\n  rankdir=BT;\n");
    for t in 1..=g.horizon {
        let _ = writeln!(s, "  r{t} [label=\"{t}\"];");
    }
    for (i, set) in sets.iter().enumerate() {
        let tp = i as u64 + 1;
        let covered: BTreeSet<u64> = if reduce {
            set.iter()
                .flat_map(|&m| sets[(m - 1) as usize].iter().copied())
                .collect()
        } else {
            BTreeSet::new()
        };
        for &t in set {
            if !covered.contains(&t) {
                let _ = writeln!(s, "  r{t} -> r{tp};");
            }
        }
    }
    s.push_str("}\n");
    s
}

fn export_collapsed(g: &InfoGraph, reduce: bool) -> String {
    let mut groups: Vec<GroupKey> = Vec::new();
    let mut index: BTreeMap<GroupKey, usize> = BTreeMap::new();
    let mut sizes: Vec<u64> = Vec::new();
    let mut block_group = Vec::with_capacity(g.blocks.len());
    for b in &g.blocks {
        let k = b.group_key();
        let id = *index.entry(k).or_insert_with(|| {
            groups.push(k);
            sizes.push(0);
            groups.len() - 1
        });
        sizes[id] += b.len();
        block_group.push(id);
    }
    // edges[(from, to)] = number of (t, t') pairs with t in `from`, t' in `to`, t ∈ S_{t'}
    let mut edges: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (j, obs) in g.blocks.iter().enumerate() {
        let to = block_group[j];
        for &(lo, hi) in obs.observed.spans() {
            for i in g.blocks_overlapping(lo, hi) {
                let from = block_group[i];
                if from == to {
                    continue;
                }
                let b = &g.blocks[i];
                let overlap = b.end.min(hi) - b.start.max(lo) + 1;
                *edges.entry((from, to)).or_insert(0) += overlap * obs.len();
            }
        }
    }
    if reduce {
        let succ: BTreeMap<usize, Vec<usize>> =
            edges.keys().fold(BTreeMap::new(), |mut m, &(a, b)| {
                m.entry(a).or_insert_with(Vec::new).push(b);
                m
            });
        let implied: BTreeSet<(usize, usize)> = edges
            .keys()
            .flat_map(|&(a, b)| succ.get(&b).into_iter().flatten().map(move |&c| (a, c)))
            .collect();
        edges.retain(|k, _| !implied.contains(k));
    }
    let mut s = String::from("digraph info_graph {\n  rankdir=BT;\n");
    for (id, k) in groups.iter().enumerate() {
        let _ = writeln!(s, "  g{id} [label=\"{} n={}\"];", k.name(), sizes[id]);
    }
    for ((a, b), m) in &edges {
        let _ = writeln!(s, "  g{a} -> g{b} [label=\"{m}\"];");
    }
    s.push_str("}\n");
    s
}

/// Every round observes all earlier rounds.
pub fn build_full_disclosure(horizon: u64) -> Result<InfoGraph> {
    if horizon < 1 {
        return Err(Error::config("horizon must be at least 1"));
    }
    InfoGraph::from_blocks(
        horizon,
        vec![Block {
            start: 1,
            end: horizon,
            chain: true,
            observed: IntervalSet::empty(),
            label: BlockLabel::new(1, GroupKind::FullDisclosure),
        }],
    )
}

fn checked(x: Option<u64>, what: &str) -> Result<u64> {
    x.ok_or_else(|| Error::config(format!("{what} overflows")))
}

/// Lays out `paths` chains of `path_len` rounds starting at `*next`.
fn push_paths(
    blocks: &mut Vec<Block>,
    next: &mut u64,
    paths: u64,
    path_len: u64,
    u: Option<u32>,
    v: Option<u32>,
) {
    for p in 0..paths {
        blocks.push(Block {
            start: *next,
            end: *next + path_len - 1,
            chain: true,
            observed: IntervalSet::empty(),
            label: BlockLabel {
                path: Some(p + 1),
                ..BlockLabel::new(1, GroupKind::Path).at(u, v)
            },
        });
        *next += path_len;
    }
}

/// `t1` disjoint full-disclosure paths, then every later round sees all of them.
pub fn build_two_level(horizon: u64, t1: u64, path_len: u64) -> Result<InfoGraph> {
    if t1 < 1 || path_len < 1 {
        return Err(Error::config("t1 and path_len must be at least 1"));
    }
    let explore = checked(t1.checked_mul(path_len), "t1 * path_len")?;
    if explore > horizon {
        return Err(Error::config(format!(
            "two-level policy needs {explore} exploration rounds but T = {horizon}"
        )));
    }
    let mut blocks = Vec::new();
    let mut next = 1;
    push_paths(&mut blocks, &mut next, t1, path_len, None, None);
    if horizon > explore {
        blocks.push(Block {
            start: next,
            end: horizon,
            chain: false,
            observed: IntervalSet::range(1, explore),
            label: BlockLabel::new(2, GroupKind::Exploit),
        });
    }
    InfoGraph::from_blocks(horizon, blocks)
}

/// `sigma` first-level groups of `t1` paths, `sigma` second-level groups of `t2`
/// rounds (group `s` sees first-level group `s`), remaining rounds see both levels.
pub fn build_three_level(
    horizon: u64,
    t1: u64,
    t2: u64,
    sigma: u64,
    path_len: u64,
) -> Result<InfoGraph> {
    if sigma < 1 || t1 < 1 || t2 < 1 || path_len < 1 {
        return Err(Error::config(
            "sigma, t1, t2 and path_len must be at least 1",
        ));
    }
    let group1 = checked(t1.checked_mul(path_len), "t1 * path_len")?;
    let level1 = checked(group1.checked_mul(sigma), "level-1 size")?;
    let level2 = checked(t2.checked_mul(sigma), "level-2 size")?;
    let used = checked(level1.checked_add(level2), "level sizes")?;
    if used > horizon {
        return Err(Error::config(format!(
            "three-level policy needs {used} rounds in levels 1-2 but T = {horizon}"
        )));
    }
    let sigma32 = u32::try_from(sigma).map_err(|_| Error::config("sigma too large"))?;
    let mut blocks = Vec::new();
    let mut next = 1;
    for s in 1..=sigma32 {
        push_paths(&mut blocks, &mut next, t1, path_len, Some(s), None);
    }
    for s in 1..=sigma {
        let lo = (s - 1) * group1 + 1;
        blocks.push(Block {
            start: next,
            end: next + t2 - 1,
            chain: false,
            observed: IntervalSet::range(lo, lo + group1 - 1),
            label: BlockLabel::new(2, GroupKind::G).at(Some(s as u32), None),
        });
        next += t2;
    }
    if horizon > used {
        blocks.push(Block {
            start: next,
            end: horizon,
            chain: false,
            observed: IntervalSet::range(1, used),
            label: BlockLabel::new(3, GroupKind::Exploit),
        });
    }
    InfoGraph::from_blocks(horizon, blocks)
}

/// Shape of an L-level policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub num_levels: u32,
    /// Groups per axis; each level has `sigma^2` G-groups.
    pub sigma: u64,
    /// `group_sizes[0]` = paths per first-level group; `group_sizes[l-1]` = agents per G-group at level `l`.
    pub group_sizes: Vec<u64>,
    pub path_len: u64,
    /// Γ-group size as a multiple of the G-group size; `sigma - 1` when absent.
    #[serde(default)]
    pub gamma_factor: Option<u64>,
}

impl LevelSpec {
    pub fn gamma(&self) -> u64 {
        self.gamma_factor.unwrap_or(self.sigma.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 2 {
            return Err(Error::config("an L-level policy needs at least 2 levels"));
        }
        if self.sigma < 1 {
            return Err(Error::config("sigma must be at least 1"));
        }
        if self.group_sizes.len() != self.num_levels as usize {
            return Err(Error::config(format!(
                "{} group sizes for {} levels",
                self.group_sizes.len(),
                self.num_levels
            )));
        }
        if self.group_sizes.iter().any(|&n| n < 1) || self.path_len < 1 {
            return Err(Error::config("group sizes and path_len must be at least 1"));
        }
        self.implied_total().map(|_| ())
    }

    /// Rounds in each level, in order.
    pub fn level_rounds(&self) -> Result<Vec<u64>> {
        let groups = checked(self.sigma.checked_mul(self.sigma), "sigma^2")?;
        let per_g = 1 + self.gamma();
        self.group_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let per_group = if i == 0 {
                    n.checked_mul(self.path_len)
                } else {
                    n.checked_mul(per_g)
                };
                checked(per_group.and_then(|x| x.checked_mul(groups)), "level size")
            })
            .collect()
    }

    pub fn implied_total(&self) -> Result<u64> {
        self.level_rounds()?
            .into_iter()
            .try_fold(0u64, |acc, x| acc.checked_add(x))
            .ok_or_else(|| Error::config("level sizes overflow"))
    }
}

/// Interlaced L-level policy with amplifying Γ-groups.
///
/// Members of `G_{l,u,v}` and `Γ_{l,u,v}` (l ≥ 2) observe all rounds of levels
/// `1..=l-2` plus `G_{l-1,v,w}` for every `w`. Level-1 groups are bundles of
/// full-disclosure paths. Rounds left after the structured groups join the top
/// level and observe the union of what top-level agents see below them.
pub fn build_l_level(spec: &LevelSpec, horizon: u64) -> Result<InfoGraph> {
    spec.validate()?;
    let total = spec.implied_total()?;
    if total > horizon {
        return Err(Error::config(format!(
            "L-level policy needs {total} rounds but T = {horizon}"
        )));
    }
    let sigma = u32::try_from(spec.sigma).map_err(|_| Error::config("sigma too large"))?;
    let gamma = spec.gamma();
    let mut blocks = Vec::new();
    let mut next = 1u64;
    // level_end[l] = last round of level l (0 for l = 0); g_start[l][(v-1)*sigma + (w-1)] = first round of G_{l,v,w}
    let mut level_end = vec![0u64];
    let mut g_start: Vec<Vec<u64>> = vec![Vec::new()];
    let mut g_size: Vec<u64> = vec![0];

    let mut starts = Vec::new();
    for u in 1..=sigma {
        for v in 1..=sigma {
            starts.push(next);
            push_paths(
                &mut blocks,
                &mut next,
                spec.group_sizes[0],
                spec.path_len,
                Some(u),
                Some(v),
            );
        }
    }
    g_start.push(starts);
    g_size.push(spec.group_sizes[0] * spec.path_len);
    level_end.push(next - 1);

    for l in 2..=spec.num_levels as usize {
        let size = spec.group_sizes[l - 1];
        let view = |v: u32| {
            let prev = &g_start[l - 1];
            let first = prev[((v - 1) * sigma) as usize];
            let last = prev[((v - 1) * sigma + sigma - 1) as usize] + g_size[l - 1] - 1;
            IntervalSet::from_spans([(1, level_end[l - 2]), (first, last)])
        };
        let mut starts = Vec::new();
        for u in 1..=sigma {
            for v in 1..=sigma {
                starts.push(next);
                blocks.push(Block {
                    start: next,
                    end: next + size - 1,
                    chain: false,
                    observed: view(v),
                    label: BlockLabel::new(l as u32, GroupKind::G).at(Some(u), Some(v)),
                });
                next += size;
            }
        }
        if gamma > 0 {
            for u in 1..=sigma {
                for v in 1..=sigma {
                    let n = size * gamma;
                    blocks.push(Block {
                        start: next,
                        end: next + n - 1,
                        chain: false,
                        observed: view(v),
                        label: BlockLabel::new(l as u32, GroupKind::Gamma).at(Some(u), Some(v)),
                    });
                    next += n;
                }
            }
        }
        g_start.push(starts);
        g_size.push(size);
        level_end.push(next - 1);
    }

    if next <= horizon {
        let top = spec.num_levels as usize;
        let g_lo = g_start[top - 1][0];
        let g_hi = g_lo + spec.sigma * spec.sigma * g_size[top - 1] - 1;
        blocks.push(Block {
            start: next,
            end: horizon,
            chain: false,
            observed: IntervalSet::from_spans([(1, level_end[top - 2]), (g_lo, g_hi)]),
            label: BlockLabel::new(spec.num_levels, GroupKind::Leftover),
        });
    }
    InfoGraph::from_blocks(horizon, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(g: &InfoGraph) -> Vec<Vec<u64>> {
        g.densify()
    }

    #[test]
    fn interval_set_basics() {
        let a = IntervalSet::from_spans([(5, 7), (1, 2), (3, 3), (9, 9)]);
        assert_eq!(a.spans(), &[(1, 3), (5, 7), (9, 9)]);
        assert_eq!(a.len(), 7);
        assert!(a.contains(6) && !a.contains(4) && !a.contains(10));
        let b = IntervalSet::range(1, 8);
        assert_eq!(a.first_missing_from(&b), Some(9));
        assert_eq!(IntervalSet::range(2, 6).first_missing_from(&a), Some(4));
        assert_eq!(IntervalSet::range(5, 6).first_missing_from(&a), None);
        assert_eq!(a.count_within(2, 6), 4);
        assert!(IntervalSet::range(3, 2).is_empty());
    }

    #[test]
    fn full_disclosure_examples() {
        let g = build_full_disclosure(1).unwrap();
        assert_eq!(sets(&g), vec![Vec::<u64>::new()]);
        let g = build_full_disclosure(3).unwrap();
        assert_eq!(sets(&g), vec![vec![], vec![1], vec![1, 2]]);
        assert!(validate_transitive(&g).is_empty());
        assert!(build_full_disclosure(0).is_err());
    }

    #[test]
    fn two_level_example() {
        let g = build_two_level(10, 2, 3).unwrap();
        let s = sets(&g);
        assert_eq!(s[1], vec![1]);
        assert_eq!(s[2], vec![1, 2]);
        assert!(s[3].is_empty());
        assert_eq!(s[5], vec![4, 5]);
        for t in 7..=10 {
            assert_eq!(s[t - 1], (1..=6).collect::<Vec<_>>());
        }
        assert!(validate_transitive(&g).is_empty());
        assert!(build_two_level(10, 4, 3).is_err());
        assert!(build_two_level(10, u64::MAX, 3).is_err());
    }

    #[test]
    fn three_level_example() {
        let g = build_three_level(8, 1, 1, 2, 2).unwrap();
        let s = sets(&g);
        assert_eq!(s[4], vec![1, 2]);
        assert_eq!(s[5], vec![3, 4]);
        assert_eq!(s[6], (1..=6).collect::<Vec<_>>());
        assert_eq!(s[7], (1..=6).collect::<Vec<_>>());
        assert!(validate_transitive(&g).is_empty());
        assert!(build_three_level(7, 1, 2, 2, 2).is_err());
    }

    #[test]
    fn three_level_group_members_share_view() {
        let g = build_three_level(60, 2, 3, 3, 2).unwrap();
        let s = sets(&g);
        // level-2 group 2 occupies rounds 16..=18
        for t in 16..=18u64 {
            assert_eq!(s[(t - 1) as usize], s[15]);
            for other in 16..=18u64 {
                assert!(!s[(t - 1) as usize].contains(&other));
            }
        }
    }

    #[test]
    fn hand_built_violation() {
        let g = InfoGraph::from_observed_sets(vec![vec![], vec![1], vec![2]]).unwrap();
        assert_eq!(
            validate_transitive(&g),
            vec![Violation {
                t: 2,
                t_prime: 3,
                witness: 1
            }]
        );
        assert!(InfoGraph::from_observed_sets(vec![vec![], vec![2]]).is_err());
    }

    #[test]
    fn l_level_three_levels_sigma_two() {
        let spec = LevelSpec {
            num_levels: 3,
            sigma: 2,
            group_sizes: vec![1, 2, 1],
            path_len: 2,
            gamma_factor: None,
        };
        // level 1: 4 groups x 1 path x 2 = 8; level 2: 4 x 2 x (1 + 1) = 16; level 3: 4 x 1 x 2 = 8
        assert_eq!(spec.level_rounds().unwrap(), vec![8, 16, 8]);
        let g = build_l_level(&spec, 35).unwrap();
        let s = sets(&g);
        // G_{2,u,v}: rounds 9..=16 in (u,v) order, 2 each; G_{2,2,1} = 13..=14, G_{2,2,2} = 15..=16
        // Γ_2 = 17..=24. G_{3,1,2} is round 26
        let t = 26u64;
        assert_eq!(g.label_of(t).unwrap().u, Some(1));
        assert_eq!(g.label_of(t).unwrap().v, Some(2));
        let mut expect: Vec<u64> = (1..=8).collect();
        expect.extend(13..=16);
        assert_eq!(s[(t - 1) as usize], expect);
        assert!(validate_transitive(&g).is_empty());
        // leftover rounds 33..=35 see levels 1 and all level-2 G-groups
        assert_eq!(g.label_of(34).unwrap().kind, GroupKind::Leftover);
        assert_eq!(s[33], (1..=16).collect::<Vec<_>>());
    }

    #[test]
    fn l_level_rejects_bad_specs() {
        let mut spec = LevelSpec {
            num_levels: 3,
            sigma: 0,
            group_sizes: vec![1, 1, 1],
            path_len: 2,
            gamma_factor: None,
        };
        assert!(build_l_level(&spec, 100).is_err());
        spec.sigma = 2;
        assert!(build_l_level(&spec, 10).is_err());
        spec.group_sizes.pop();
        assert!(build_l_level(&spec, 100).is_err());
    }

    #[test]
    fn fraction_metric() {
        let g = build_full_disclosure(10).unwrap();
        assert!(subhistory_fraction(&g)[1..].iter().all(|&f| f == 1.0));
        let g = build_two_level(10, 2, 3).unwrap();
        assert_eq!(subhistory_fraction(&g)[9], 6.0 / 9.0);
    }

    #[test]
    fn dot_full_disclosure() {
        let g = build_full_disclosure(3).unwrap();
        let all = export_dot(&g, DotOptions::default());
        for e in ["r1 -> r2", "r1 -> r3", "r2 -> r3"] {
            assert!(all.contains(e), "{all}");
        }
        let red = export_dot(
            &g,
            DotOptions {
                transitive_reduction: true,
                ..Default::default()
            },
        );
        assert!(red.contains("r1 -> r2") && red.contains("r2 -> r3") && !red.contains("r1 -> r3"));
    }

    #[test]
    fn dot_collapsed_three_level() {
        let g = build_three_level(40, 2, 3, 2, 2).unwrap();
        let d = export_dot(
            &g,
            DotOptions {
                collapse_groups: true,
                transitive_reduction: false,
            },
        );
        assert_eq!(d.matches("[label=\"L").count(), 5, "{d}");
        // level-2 group 1 (3 members) sees 4 rounds of group 1
        assert!(d.contains("g0 -> g2 [label=\"12\"]"), "{d}");
    }

    #[test]
    fn summary_counts() {
        let spec = LevelSpec {
            num_levels: 3,
            sigma: 2,
            group_sizes: vec![1, 2, 1],
            path_len: 2,
            gamma_factor: None,
        };
        let g = build_l_level(&spec, 35).unwrap();
        let s = g.summary();
        assert_eq!(s.total, 35);
        assert_eq!(
            s.levels[1],
            LevelSummary {
                level: 2,
                g_rounds: 8,
                gamma_rounds: 8
            }
        );
        assert_eq!(
            s.levels[2],
            LevelSummary {
                level: 3,
                g_rounds: 7,
                gamma_rounds: 4
            }
        );
    }
}
