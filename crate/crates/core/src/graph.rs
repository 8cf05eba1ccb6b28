//! Growing resonance layers.
//!
//! A [`Layer`] starts empty and appends a [`Node`] whenever an input finds no
//! node above the layer threshold. Each node holds one `k = 1` sigmoid
//! resonator per input dimension, and its output is the normalized mean of
//! those resonators, so a perfect match scores exactly 1.
//!
//! [`Layer::present`] never mutates. All learning goes through
//! [`Layer::train_step`].

use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resonance::{
    normalized_sigmoid_resonance, CoverageInterval, ResonanceError, ResonatorSpec, RHO_SIGMA_GAIN,
};

/// Dense ordinal of a node within its layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Class tag carried by a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u8);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("input has {actual} values, layer expects {expected}")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("a node with the same resonator centers already exists ({0})")]
    DuplicateNode(NodeId),
    #[error("no candidates to choose a winner from")]
    EmptyCandidates,
    #[error("nothing to grow a node from: every input dimension is masked")]
    EmptyPrototype,
    #[error("invalid layer configuration: {0}")]
    InvalidConfig(String),
}

type Result<T> = std::result::Result<T, GraphError>;

/// Whether winners retune from their running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningPolicy {
    Frozen,
    StatsTuning,
}

/// Knobs for statistics-driven tuning and tie handling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    /// Hits required before a winner retunes.
    pub n_min: u64,
    pub sigma_floor: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Outputs closer than this count as tied.
    pub tie_epsilon: f64,
    /// Factor applied to a winner's ρ when a same-label runner-up ties it.
    pub relax_factor: f64,
}

impl Default for TuningParams {
    fn default() -> Self {
        Self {
            n_min: 5,
            sigma_floor: 1e-3,
            rho_min: 0.5,
            rho_max: 50.0,
            tie_epsilon: 1e-6,
            relax_factor: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub arity: usize,
    /// Trigger threshold on the normalized (peak = 1) scale.
    pub threshold: f64,
    pub default_rho: f64,
    pub tuning: TuningPolicy,
    pub params: TuningParams,
}

impl LayerConfig {
    pub fn new(arity: usize, threshold: f64, default_rho: f64) -> Self {
        Self {
            arity,
            threshold,
            default_rho,
            tuning: TuningPolicy::Frozen,
            params: TuningParams::default(),
        }
    }

    pub fn with_tuning(mut self, tuning: TuningPolicy) -> Self {
        self.tuning = tuning;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |msg: &str| Err(GraphError::InvalidConfig(msg.to_string()));
        if self.arity == 0 {
            return bad("arity must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.default_rho > 0.0 && self.default_rho.is_finite()) {
            return bad("default_rho must be positive");
        }
        if !(p.rho_min > 0.0 && p.rho_min <= p.rho_max) {
            return bad("need 0 < rho_min <= rho_max");
        }
        if !(p.sigma_floor > 0.0) || !(p.tie_epsilon >= 0.0) {
            return bad("sigma_floor must be positive and tie_epsilon non-negative");
        }
        if !(p.relax_factor > 0.0 && p.relax_factor <= 1.0) {
            return bad("relax_factor must lie in (0, 1]");
        }
        if p.n_min < 2 {
            return bad("n_min must be at least 2");
        }
        Ok(())
    }
}

/// Per-dimension running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn from_sample(sample: &[f64]) -> Self {
        Self {
            count: 1,
            mean: sample.to_vec(),
            m2: vec![0.0; sample.len()],
        }
    }

    pub fn push(&mut self, sample: impl IntoIterator<Item = f64>) {
        self.count += 1;
        let n = self.count as f64;
        for ((x, mean), m2) in sample.into_iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    /// Sample (n − 1) standard deviation per dimension; `None` below two samples.
    pub fn std_dev(&self) -> Option<Vec<f64>> {
        if self.count < 2 {
            return None;
        }
        let denom = (self.count - 1) as f64;
        Some(self.m2.iter().map(|m2| (m2 / denom).max(0.0).sqrt()).collect())
    }
}

/// A bundle of resonators, one per dimension the node listens to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Input dimensions this node listens to; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<u32>>,
    pub centers: Vec<f64>,
    pub rhos: Vec<f64>,
    pub label: Option<Label>,
    pub hit_count: u64,
    pub stats: RunningStats,
}

impl Node {
    fn new(id: NodeId, prototype: Prototype, rho: f64, label: Option<Label>) -> Self {
        let n = prototype.centers.len();
        Self {
            id,
            dims: prototype.dims,
            stats: RunningStats::from_sample(&prototype.centers),
            centers: prototype.centers,
            rhos: vec![rho; n],
            label,
            hit_count: 1,
        }
    }

    /// Number of resonators.
    pub fn width(&self) -> usize {
        self.centers.len()
    }

    /// The node's resonators as standalone specs.
    pub fn resonators(&self) -> impl Iterator<Item = ResonatorSpec> + '_ {
        self.centers
            .iter()
            .zip(&self.rhos)
            .map(|(&c, &r)| ResonatorSpec::sigmoid(c, r).expect("node resonators are valid"))
    }

    /// Per-resonator intervals on which each resonator alone reaches the
    /// normalized `threshold`. Inside the box the node's output is at least
    /// `threshold`.
    pub fn coverage(&self, threshold: f64) -> std::result::Result<Vec<CoverageInterval>, ResonanceError> {
        self.resonators()
            .map(|r| r.coverage_bounds(threshold / 4.0))
            .collect()
    }

    /// Input value feeding resonator `i`.
    #[inline]
    fn input_at(&self, input: &[f64], i: usize) -> f64 {
        match &self.dims {
            Some(d) => input[d[i] as usize],
            None => input[i],
        }
    }

    /// Normalized aggregate `4/(N k²) Σ X_i (k − X_i)` with `k = 1`.
    pub fn response(&self, input: &[f64]) -> f64 {
        self.response_by(input, normalized_sigmoid_resonance_at)
    }

    #[inline]
    fn response_by(&self, input: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
        let n = self.width();
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = match &self.dims {
            None => self
                .centers
                .iter()
                .zip(&self.rhos)
                .zip(input)
                .map(|((&c, &r), &x)| f(r, x - c))
                .sum(),
            Some(dims) => dims
                .iter()
                .zip(self.centers.iter().zip(&self.rhos))
                .map(|(&d, (&c, &r))| f(r, input[d as usize] - c))
                .sum(),
        };
        sum / n as f64
    }

    fn record_hit(&mut self, sample: &[f64]) {
        self.hit_count += 1;
        let values: Vec<f64> = (0..self.width()).map(|i| self.input_at(sample, i)).collect();
        self.stats.push(values);
    }
}

#[inline]
fn normalized_sigmoid_resonance_at(rho: f64, d: f64) -> f64 {
    normalized_sigmoid_resonance(rho * d)
}

/// Normalized aggregate output of `node` for `input`.
pub fn aggregate(node: &Node, input: &[f64], arity: usize) -> Result<f64> {
    if input.len() != arity {
        return Err(GraphError::ArityMismatch {
            expected: arity,
            actual: input.len(),
        });
    }
    Ok(node.response(input))
}

/// Retunes a node from its running statistics: centers move to the running
/// mean and ρ follows `1.4652 / σ`, clamped to `[rho_min, rho_max]`. σ below
/// the floor is raised to the floor first, which pins ρ at `rho_max` for the
/// usual parameter ranges. Nodes with fewer than two hits are left alone.
pub fn tune_node(node: &mut Node, params: &TuningParams) {
    let Some(sigma) = node.stats.std_dev() else {
        return;
    };
    node.centers.copy_from_slice(&node.stats.mean);
    for (rho, s) in node.rhos.iter_mut().zip(sigma) {
        *rho = (RHO_SIGMA_GAIN / s.max(params.sigma_floor)).clamp(params.rho_min, params.rho_max);
    }
}

/// Picks the winner among candidates: highest output, then more hits, then
/// the older node.
pub fn resolve_ambiguity(candidates: &[(NodeId, f64)], hit_count: impl Fn(NodeId) -> u64) -> Result<NodeId> {
    candidates
        .iter()
        .copied()
        .reduce(|best, c| if outranks(c, best, &hit_count) { c } else { best })
        .map(|(id, _)| id)
        .ok_or(GraphError::EmptyCandidates)
}

fn outranks(a: (NodeId, f64), b: (NodeId, f64), hit_count: &impl Fn(NodeId) -> u64) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    let (ha, hb) = (hit_count(a.0), hit_count(b.0));
    if ha != hb {
        return ha > hb;
    }
    a.0 < b.0
}

/// Result of presenting one input to a layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Recognition {
    pub winner: Option<NodeId>,
    /// Winner's normalized output, or 0 with no winner.
    pub output: f64,
    /// Every node at or above threshold, best first.
    pub candidates: Vec<(NodeId, f64)>,
    /// Node grown by a training step.
    pub created: Option<NodeId>,
    /// Whether the winner's ρ was relaxed to separate a same-label tie.
    pub relaxed: bool,
}

/// Centers (and optional input dims) for a node grown from a stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub dims: Option<Vec<u32>>,
    pub centers: Vec<f64>,
}

/// Something a layer can respond to.
///
/// A plain `[f64]` slice is the usual stimulus. Higher layers may compute a
/// node's response from something richer than a shared input vector.
pub trait Stimulus: Sync {
    /// Input arity, checked against the layer.
    fn arity(&self) -> usize;
    /// Normalized response of `node`.
    fn response(&self, node: &Node) -> f64;
    /// What a node grown from this stimulus resonates on; `None` if there is nothing to grow.
    fn prototype(&self) -> Option<Prototype>;
    /// Full-arity values folded into a winner's running statistics.
    fn sample(&self) -> &[f64];

    /// The plain input vector, when every node's response is
    /// `node.response(input)`. Lets a layer skip zero inputs.
    fn dense_input(&self) -> Option<&[f64]> {
        None
    }
}

impl Stimulus for [f64] {
    fn arity(&self) -> usize {
        self.len()
    }

    fn response(&self, node: &Node) -> f64 {
        node.response(self)
    }

    fn prototype(&self) -> Option<Prototype> {
        Some(Prototype {
            dims: None,
            centers: self.to_vec(),
        })
    }

    fn sample(&self) -> &[f64] {
        self
    }

    fn dense_input(&self) -> Option<&[f64]> {
        Some(self)
    }
}

/// Below this many resonator evaluations a scan stays on the calling thread.
const PARALLEL_WORK: usize = 16_384;

/// A growable, ordered collection of nodes sharing a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerParts")]
pub struct Layer {
    config: LayerConfig,
    nodes: Vec<Node>,
    #[serde(skip)]
    grid: GridCache,
    #[serde(skip)]
    baseline: Baselines,
}

#[derive(Deserialize)]
struct LayerParts {
    config: LayerConfig,
    nodes: Vec<Node>,
}

impl TryFrom<LayerParts> for Layer {
    type Error = GraphError;

    fn try_from(parts: LayerParts) -> Result<Self> {
        Layer::from_parts(parts.config, parts.nodes)
    }
}

/// Fixed-point unit for cached sums: integer sums are exact in any order,
/// so a sparse input can correct a node's zero-input sum dim by dim.
const FIXED_ONE: f64 = (1u64 << 40) as f64;

#[inline]
fn to_fixed(v: f64) -> i64 {
    (v * FIXED_ONE + 0.5) as i64
}

/// Per-resonator response of a full-width node to a zero input, and their
/// sum. `levels` holds the centers as pixel levels when every center is on
/// the grid and every ρ matches the table.
#[derive(Debug, Clone, Default)]
struct Baseline {
    per_dim: Vec<i64>,
    sum: i64,
    levels: Option<Vec<u8>>,
}

/// `x` as a pixel level, if it sits on the 8-bit grid.
fn pixel_level(x: f64) -> Option<u8> {
    let q = x * GRID_LEVELS as f64;
    let k = q.round();
    ((0.0..=GRID_LEVELS as f64).contains(&k) && (q - k).abs() < 1e-7).then_some(k as u8)
}

/// A plain input prepared once per scan.
struct DenseScan<'a> {
    values: &'a [f64],
    nonzero: Vec<usize>,
    levels: Option<Vec<u8>>,
}

impl<'a> DenseScan<'a> {
    fn new(values: &'a [f64]) -> Self {
        Self {
            values,
            nonzero: (0..values.len()).filter(|&i| values[i] != 0.0).collect(),
            levels: values.iter().map(|&x| pixel_level(x)).collect(),
        }
    }
}

/// One entry per node; derived from the nodes, so never part of identity.
#[derive(Debug, Clone, Default)]
struct Baselines(Vec<Baseline>);

impl PartialEq for Baselines {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Pixel depth of the lookup table used for quantized inputs.
const GRID_LEVELS: usize = 255;

/// Resonances of a `ρ`-sigmoid at distances `k / 255`, for inputs and
/// centers that sit on the 8-bit pixel grid.
#[derive(Debug, Clone)]
pub(crate) struct GridTable {
    rho: f64,
    values: Vec<f64>,
    fixed: Vec<i64>,
}

impl GridTable {
    fn new(rho: f64) -> Self {
        let values: Vec<f64> = (0..=GRID_LEVELS)
            .map(|k| normalized_sigmoid_resonance(rho * k as f64 / GRID_LEVELS as f64))
            .collect();
        let fixed = values.iter().map(|&v| to_fixed(v)).collect();
        Self { rho, values, fixed }
    }

    #[inline]
    fn level(&self, rho: f64, d: f64) -> Option<usize> {
        if rho != self.rho {
            return None;
        }
        let q = d.abs() * GRID_LEVELS as f64;
        let k = (q + 0.5) as usize;
        (k <= GRID_LEVELS && (q - k as f64).abs() < 1e-7).then_some(k)
    }

    #[inline]
    fn resonance_fixed(&self, rho: f64, d: f64) -> i64 {
        if d == 0.0 {
            return FIXED_ONE as i64;
        }
        match self.level(rho, d) {
            Some(k) => self.fixed[k],
            None => to_fixed(normalized_sigmoid_resonance(rho * d)),
        }
    }

    #[inline]
    fn resonance(&self, rho: f64, d: f64) -> f64 {
        if d == 0.0 {
            return 1.0;
        }
        match self.level(rho, d) {
            Some(k) => self.values[k],
            None => normalized_sigmoid_resonance(rho * d),
        }
    }
}

/// Lazily built table; never part of a layer's identity.
#[derive(Debug, Clone, Default)]
struct GridCache(OnceLock<GridTable>);

impl PartialEq for GridCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Layer {
    pub fn new(config: LayerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            nodes: Vec::new(),
            grid: GridCache::default(),
            baseline: Baselines::default(),
        })
    }

    /// Rebuilds a layer from stored parts, checking its structural invariants.
    pub fn from_parts(config: LayerConfig, nodes: Vec<Node>) -> Result<Self> {
        config.validate()?;
        for (i, node) in nodes.iter().enumerate() {
            let bad = |msg: String| Err(GraphError::InvalidConfig(msg));
            if node.id.index() != i {
                return bad(format!("node at position {i} has id {}", node.id));
            }
            let width = node.width();
            if node.rhos.len() != width || node.stats.mean.len() != width || node.stats.m2.len() != width {
                return bad(format!("node {} has inconsistent resonator arrays", node.id));
            }
            match &node.dims {
                Some(d) if d.len() != width || d.iter().any(|&x| x as usize >= config.arity) => {
                    return bad(format!("node {} has invalid input dims", node.id));
                }
                None if width != config.arity => {
                    return bad(format!("node {} arity {width} != {}", node.id, config.arity));
                }
                _ => {}
            }
            if node.stats.count != node.hit_count {
                return bad(format!("node {} stats count differs from hit count", node.id));
            }
        }
        let mut layer = Self {
            config,
            nodes,
            grid: GridCache::default(),
            baseline: Baselines::default(),
        };
        layer.baseline.0 = layer.nodes.iter().map(|n| layer.baseline_of(n)).collect();
        Ok(layer)
    }

    pub fn config(&self) -> &LayerConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold
    }

    /// Total resonator count across nodes.
    pub fn resonator_count(&self) -> usize {
        self.nodes.iter().map(Node::width).sum()
    }

    fn check_arity<S: Stimulus + ?Sized>(&self, stimulus: &S) -> Result<()> {
        if stimulus.arity() != self.config.arity {
            return Err(GraphError::ArityMismatch {
                expected: self.config.arity,
                actual: stimulus.arity(),
            });
        }
        Ok(())
    }

    /// Output of every node, in id order.
    pub fn responses<S: Stimulus + ?Sized>(&self, stimulus: &S) -> Result<Vec<f64>> {
        self.check_arity(stimulus)?;
        Ok(self.responses_unchecked(stimulus))
    }

    pub(crate) fn responses_unchecked<S: Stimulus + ?Sized>(&self, stimulus: &S) -> Vec<f64> {
        let dense = stimulus.dense_input().map(DenseScan::new);
        let one = |n: &Node| match &dense {
            Some(scan) => self.response_cached(n, scan),
            None => stimulus.response(n),
        };
        if self.nodes.len() * self.config.arity >= PARALLEL_WORK {
            self.nodes.par_iter().map(one).collect()
        } else {
            self.nodes.iter().map(one).collect()
        }
    }

    fn table(&self) -> &GridTable {
        self.grid
            .0
            .get_or_init(|| GridTable::new(self.config.default_rho))
    }

    fn baseline_of(&self, node: &Node) -> Baseline {
        if node.dims.is_some() {
            return Baseline::default();
        }
        let table = self.table();
        let per_dim: Vec<i64> = node
            .centers
            .iter()
            .zip(&node.rhos)
            .map(|(&c, &r)| table.resonance_fixed(r, 0.0 - c))
            .collect();
        let levels = if node.rhos.iter().all(|&r| r == table.rho) {
            node.centers.iter().map(|&c| pixel_level(c)).collect()
        } else {
            None
        };
        Baseline {
            sum: per_dim.iter().sum(),
            per_dim,
            levels,
        }
    }

    fn refresh_baseline(&mut self, id: NodeId) {
        let b = self.baseline_of(&self.nodes[id.index()]);
        self.baseline.0[id.index()] = b;
    }

    /// [`Node::response`] for a full-width node, summed in fixed point from
    /// the zero-input baseline over the nonzero dims only. Masked nodes are
    /// summed directly.
    fn response_cached(&self, node: &Node, scan: &DenseScan) -> f64 {
        let table = self.table();
        let input = scan.values;
        if node.dims.is_some() || node.width() == 0 {
            return node.response_by(input, |rho, d| table.resonance(rho, d));
        }
        let base = &self.baseline.0[node.id.index()];
        let mut sum = base.sum;
        if let (Some(xl), Some(cl)) = (&scan.levels, &base.levels) {
            for &i in &scan.nonzero {
                sum += table.fixed[usize::from(xl[i].abs_diff(cl[i]))] - base.per_dim[i];
            }
        } else {
            for &i in &scan.nonzero {
                sum += table.resonance_fixed(node.rhos[i], input[i] - node.centers[i]) - base.per_dim[i];
            }
        }
        sum as f64 / (FIXED_ONE * node.width() as f64)
    }

    /// `node.response(input)` as a scan of this layer computes it.
    pub(crate) fn response_of(&self, node: &Node, input: &[f64]) -> f64 {
        self.response_cached(node, &DenseScan::new(input))
    }

    /// Evaluates every node and picks a winner among those above threshold.
    pub fn present<S: Stimulus + ?Sized>(&self, stimulus: &S) -> Result<Recognition> {
        let outputs = self.responses(stimulus)?;
        Ok(self.recognize(&outputs))
    }

    /// Builds a recognition from precomputed outputs.
    pub(crate) fn recognize(&self, outputs: &[f64]) -> Recognition {
        let threshold = self.config.threshold;
        let mut candidates: Vec<(NodeId, f64)> = outputs
            .iter()
            .enumerate()
            .filter(|(_, &o)| o >= threshold)
            .map(|(i, &o)| (NodeId(i as u32), o))
            .collect();
        let hits = |id: NodeId| self.nodes[id.index()].hit_count;
        candidates.sort_by(|a, b| {
            if outranks(*a, *b, &hits) {
                std::cmp::Ordering::Less
            } else if outranks(*b, *a, &hits) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        let winner = resolve_ambiguity(&candidates, hits).ok();
        Recognition {
            winner,
            output: candidates.first().map_or(0.0, |c| c.1),
            candidates,
            created: None,
            relaxed: false,
        }
    }

    /// Appends a node resonating at `input`.
    pub fn create_node(&mut self, input: &[f64], label: Option<Label>) -> Result<NodeId> {
        self.check_arity(input)?;
        self.grow(input.prototype().expect("slices always yield a prototype"), label)
    }

    fn grow(&mut self, prototype: Prototype, label: Option<Label>) -> Result<NodeId> {
        if prototype.centers.is_empty() {
            return Err(GraphError::EmptyPrototype);
        }
        if let Some(dup) = self
            .nodes
            .iter()
            .find(|n| n.dims == prototype.dims && n.centers == prototype.centers)
        {
            return Err(GraphError::DuplicateNode(dup.id));
        }
        let id = NodeId(self.nodes.len() as u32);
        let node = Node::new(id, prototype, self.config.default_rho, label);
        let b = self.baseline_of(&node);
        self.nodes.push(node);
        self.baseline.0.push(b);
        Ok(id)
    }

    /// One learning step: present, then grow, retune or relax.
    ///
    /// With no candidate a node is grown. A winner whose label differs from
    /// `label` also triggers growth of a new node carrying `label`; the winner
    /// itself is left untouched. Otherwise the winner records the hit and,
    /// under [`TuningPolicy::StatsTuning`], retunes once it has `n_min` hits.
    pub fn train_step<S: Stimulus + ?Sized>(
        &mut self,
        stimulus: &S,
        label: Option<Label>,
    ) -> Result<Recognition> {
        let outputs = self.responses(stimulus)?;
        self.train_with_outputs(stimulus, label, &outputs)
    }

    pub(crate) fn train_with_outputs<S: Stimulus + ?Sized>(
        &mut self,
        stimulus: &S,
        label: Option<Label>,
        outputs: &[f64],
    ) -> Result<Recognition> {
        let mut rec = self.recognize(outputs);
        let Some(winner) = rec.winner else {
            let prototype = stimulus.prototype().ok_or(GraphError::EmptyPrototype)?;
            rec.created = Some(self.grow(prototype, label)?);
            return Ok(rec);
        };
        if self.nodes[winner.index()].label != label {
            let prototype = stimulus.prototype().ok_or(GraphError::EmptyPrototype)?;
            rec.created = Some(self.grow(prototype, label)?);
            return Ok(rec);
        }

        let params = self.config.params;
        let tie = rec.candidates.get(1).is_some_and(|&(other, out)| {
            rec.output - out <= params.tie_epsilon
                && self.nodes[other.index()].label == self.nodes[winner.index()].label
        });
        let node = &mut self.nodes[winner.index()];
        node.record_hit(stimulus.sample());
        if self.config.tuning == TuningPolicy::StatsTuning && node.hit_count >= params.n_min {
            tune_node(node, &params);
        }
        if tie {
            for rho in &mut node.rhos {
                *rho = (*rho * params.relax_factor).max(params.rho_min);
            }
            rec.relaxed = true;
        }
        self.refresh_baseline(winner);
        Ok(rec)
    }
}
