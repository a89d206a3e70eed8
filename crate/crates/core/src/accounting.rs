//! Core-specific bandwidth models: which PMU events approximate memory
//! traffic on each core type, which ETM input signals back those events, and
//! the per-operation signal profiles calibrated against measured PMU/ETM
//! count ratios.

use crate::fabric::SignalId;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreType {
    A53,
    A72,
    A55,
    A76,
    A78,
}

impl CoreType {
    pub const ALL: [CoreType; 5] = [CoreType::A53, CoreType::A72, CoreType::A55, CoreType::A76, CoreType::A78];

    /// The model used when none is requested.
    pub fn default_variant(self) -> ModelVariant {
        match self {
            CoreType::A53 | CoreType::A72 => ModelVariant::Default,
            CoreType::A55 | CoreType::A76 => ModelVariant::Moderate2,
            CoreType::A78 => ModelVariant::Pessimistic,
        }
    }
}

impl fmt::Display for CoreType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CoreType::A53 => "a53",
            CoreType::A72 => "a72",
            CoreType::A55 => "a55",
            CoreType::A76 => "a76",
            CoreType::A78 => "a78",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Default,
    Pessimistic,
    Moderate1,
    Moderate2,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelVariant::Default => "default",
            ModelVariant::Pessimistic => "pessimistic",
            ModelVariant::Moderate1 => "moderate1",
            ModelVariant::Moderate2 => "moderate2",
        };
        f.write_str(s)
    }
}

/// Broad class of a memory operation: what transactions it causes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Prefetch,
    Read,
    Write,
    Modify,
}

/// The bench access types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemOp {
    #[serde(alias = "prefetch")]
    PrefetchL1,
    PrefetchL2,
    PrefetchL3,
    Read,
    ReadLdnp,
    Write,
    WriteDczva,
    WriteStnp,
    Modify,
    ModifyPrefetch,
    ModifyStnp,
}

impl MemOp {
    pub const ALL: [MemOp; 11] = [
        MemOp::PrefetchL1,
        MemOp::PrefetchL2,
        MemOp::PrefetchL3,
        MemOp::Read,
        MemOp::ReadLdnp,
        MemOp::Write,
        MemOp::WriteDczva,
        MemOp::WriteStnp,
        MemOp::Modify,
        MemOp::ModifyPrefetch,
        MemOp::ModifyStnp,
    ];

    pub fn kind(self) -> OpKind {
        match self {
            MemOp::PrefetchL1 | MemOp::PrefetchL2 | MemOp::PrefetchL3 => OpKind::Prefetch,
            MemOp::Read | MemOp::ReadLdnp => OpKind::Read,
            MemOp::Write | MemOp::WriteDczva | MemOp::WriteStnp => OpKind::Write,
            MemOp::Modify | MemOp::ModifyPrefetch | MemOp::ModifyStnp => OpKind::Modify,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MemOp::PrefetchL1 => "prefetch_l1",
            MemOp::PrefetchL2 => "prefetch_l2",
            MemOp::PrefetchL3 => "prefetch_l3",
            MemOp::Read => "read",
            MemOp::ReadLdnp => "read_ldnp",
            MemOp::Write => "write",
            MemOp::WriteDczva => "write_dczva",
            MemOp::WriteStnp => "write_stnp",
            MemOp::Modify => "modify",
            MemOp::ModifyPrefetch => "modify_prefetch",
            MemOp::ModifyStnp => "modify_stnp",
        }
    }
}

impl fmt::Display for MemOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemOp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "prefetch" {
            return Ok(MemOp::PrefetchL1);
        }
        MemOp::ALL.into_iter().find(|o| o.name() == s).ok_or_else(|| format!("unknown memory op '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTerm {
    pub coefficient: Ratio<u32>,
    pub event: &'static str,
    pub signals: Vec<SignalId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandwidthModel {
    pub core_type: CoreType,
    pub variant: ModelVariant,
    pub terms: Vec<EventTerm>,
}

/// How an ETM-realizable model maps onto the budget counter: every monitored
/// signal feeds the same OR-ed input, and one counted event stands for
/// `coefficient` model units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtmScaling {
    pub signals: Vec<SignalId>,
    pub coefficient: Ratio<u32>,
}

impl EtmScaling {
    /// Counter reload for a budget given in model units.
    pub fn counter_budget(&self, budget_units: u32) -> u64 {
        let c = *self.coefficient.numer() as f64 / *self.coefficient.denom() as f64;
        ((budget_units as f64 / c).round() as u64).max(1)
    }

    pub fn coefficient_f64(&self) -> f64 {
        *self.coefficient.numer() as f64 / *self.coefficient.denom() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccountingError {
    #[error("no {variant} model defined for {core}")]
    UnknownVariant { core: CoreType, variant: ModelVariant },
    #[error("model not realizable on the ETM: {reason}")]
    NotEtmRealizable { reason: String },
    #[error("no calibrated profile for {core}/{variant}/{op}")]
    UnknownCombination { core: CoreType, variant: ModelVariant, op: MemOp },
}

fn term(num: u32, den: u32, event: &'static str, signals: &[SignalId]) -> EventTerm {
    EventTerm { coefficient: Ratio::new(num, den), event, signals: signals.to_vec() }
}

// Signal numbers for A78 L3D_CACHE_REFILL and BUS_ACCESS_WR are not given in
// the sources used here; placeholders keep the signal counts right.
const A78_L3D_REFILL: [SignalId; 3] = [110, 111, 112];
const A78_BUS_ACCESS_WR: [SignalId; 1] = [113];

pub fn model_for(core_type: CoreType, variant: ModelVariant) -> Result<BandwidthModel, AccountingError> {
    use CoreType::*;
    use ModelVariant::*;
    let terms = match (core_type, variant) {
        (A53, Default) => vec![term(1, 1, "L2D_CACHE_REFILL", &[21]), term(1, 1, "L2D_CACHE_WB", &[22])],
        (A72, Default) => vec![term(1, 1, "L2D_CACHE_REFILL", &[24]), term(1, 1, "L2D_CACHE_WB", &[25])],
        (A55, Pessimistic) => vec![term(2, 1, "L3D_CACHE_ALLOC", &[33])],
        (A55, Moderate1) => vec![term(1, 4, "BUS_ACCESS", &[23])],
        (A55, Moderate2) => vec![term(1, 1, "L3D_CACHE_ALLOC", &[33]), term(1, 1, "L3D_CACHE_REFILL", &[34])],
        (A76, Pessimistic) => vec![term(2, 1, "L2D_CACHE_WR", &[73, 74])],
        (A76, Moderate1) => vec![term(1, 1, "L2D_CACHE_WR", &[73, 74]), term(1, 1, "L3D_CACHE_REFILL", &[158, 159])],
        (A76, Moderate2) => vec![term(1, 1, "L2D_CACHE_WR", &[73, 74]), term(1, 1, "L3D_CACHE_ALLOC", &[157])],
        (A78, Pessimistic) => vec![term(2, 1, "L2D_CACHE_WR", &[103, 104, 105])],
        (A78, Moderate1) => {
            vec![term(1, 1, "L2D_CACHE_WR", &[103, 104, 105]), term(1, 1, "L3D_CACHE_REFILL", &A78_L3D_REFILL)]
        }
        (A78, Moderate2) => {
            vec![term(1, 4, "BUS_ACCESS_WR", &A78_BUS_ACCESS_WR), term(1, 1, "L3D_CACHE_REFILL", &A78_L3D_REFILL)]
        }
        (core, variant) => return Err(AccountingError::UnknownVariant { core, variant }),
    };
    Ok(BandwidthModel { core_type, variant, terms })
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 11] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    WORDS.get(n).map(|w| w.to_string()).unwrap_or_else(|| n.to_string())
}

impl BandwidthModel {
    pub fn signal_count(&self) -> usize {
        self.terms.iter().map(|t| t.signals.len()).sum()
    }

    pub fn signals(&self) -> Vec<SignalId> {
        self.terms.iter().flat_map(|t| t.signals.iter().copied()).collect()
    }

    /// The ETM OR-s every signal into a single count, so a sum is only
    /// expressible when every term carries the same factor (which the budget
    /// can then absorb) and at most four signals are monitored.
    pub fn etm_scaling(&self) -> Result<EtmScaling, AccountingError> {
        let first = self.terms[0].coefficient;
        if self.terms.iter().any(|t| t.coefficient != first) {
            let fractional = self.terms.iter().any(|t| !t.coefficient.is_integer());
            let reason = if fractional {
                "fractional factor in the sum".to_string()
            } else {
                "terms carry different factors".to_string()
            };
            return Err(AccountingError::NotEtmRealizable { reason });
        }
        let n = self.signal_count();
        if n > crate::fabric::MAX_INPUT_SIGNALS {
            return Err(AccountingError::NotEtmRealizable {
                reason: format!("requires monitoring of {} ETM PMU inputs", number_word(n)),
            });
        }
        Ok(EtmScaling { signals: self.signals(), coefficient: first })
    }

    pub fn etm_realizable(&self) -> bool {
        self.etm_scaling().is_ok()
    }

    /// PMU-side weight of one pulse on `signal`.
    pub fn weight_of(&self, signal: SignalId) -> f64 {
        self.terms
            .iter()
            .find(|t| t.signals.contains(&signal))
            .map(|t| *t.coefficient.numer() as f64 / *t.coefficient.denom() as f64)
            .unwrap_or(0.0)
    }
}

/// `model_for` followed by the realizability check.
pub fn etm_model_for(
    core_type: CoreType,
    variant: ModelVariant,
) -> Result<(BandwidthModel, EtmScaling), AccountingError> {
    let m = model_for(core_type, variant)?;
    let s = m.etm_scaling()?;
    Ok((m, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermRate {
    pub signals: Vec<SignalId>,
    pub coefficient: f64,
    /// Expected pulses per cacheline.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpSignalProfile {
    pub mem_op: MemOp,
    pub refill: Vec<TermRate>,
    pub writeback: Vec<TermRate>,
    pub collision_prob: f64,
    /// Measured `[pmu, etm]` ratios the profile was calibrated against.
    pub measured: [f64; 2],
}

#[derive(Debug, Deserialize)]
struct CalibrationFile {
    row: Vec<CalibrationRow>,
}

#[derive(Debug, Deserialize)]
struct CalibrationRow {
    board: String,
    core: CoreType,
    variant: ModelVariant,
    ops: Vec<CalibrationOp>,
}

#[derive(Debug, Deserialize)]
struct CalibrationOp {
    op: MemOp,
    refill: Vec<f64>,
    writeback: Vec<f64>,
    table: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct CalibrationEntry {
    pub board: String,
    pub core_type: CoreType,
    pub variant: ModelVariant,
    pub profile: OpSignalProfile,
}

static CALIBRATION: LazyLock<Vec<CalibrationEntry>> = LazyLock::new(|| {
    let file: CalibrationFile =
        toml::from_str(include_str!("../data/calibration.toml")).expect("calibration data parses");
    let mut out = Vec::new();
    for row in file.row {
        let model = model_for(row.core, row.variant).expect("calibrated model exists");
        for op in row.ops {
            let rates = |v: &[f64]| -> Vec<TermRate> {
                assert_eq!(v.len(), model.terms.len(), "{}/{}: term count", row.board, op.op);
                model
                    .terms
                    .iter()
                    .zip(v)
                    .map(|(t, &rate)| TermRate {
                        signals: t.signals.clone(),
                        coefficient: *t.coefficient.numer() as f64 / *t.coefficient.denom() as f64,
                        rate,
                    })
                    .collect()
            };
            let mut profile = OpSignalProfile {
                mem_op: op.op,
                refill: rates(&op.refill),
                writeback: rates(&op.writeback),
                collision_prob: 0.0,
                measured: op.table,
            };
            profile.collision_prob = solve_collision_prob(&profile, op.table[1]);
            out.push(CalibrationEntry { board: row.board.clone(), core_type: row.core, variant: row.variant, profile });
        }
    }
    out
});

pub fn calibration_table() -> &'static [CalibrationEntry] {
    &CALIBRATION
}

pub fn emit_profile(
    core_type: CoreType,
    variant: ModelVariant,
    mem_op: MemOp,
) -> Result<OpSignalProfile, AccountingError> {
    CALIBRATION
        .iter()
        .find(|e| e.core_type == core_type && e.variant == variant && e.profile.mem_op == mem_op)
        .map(|e| e.profile.clone())
        .ok_or(AccountingError::UnknownCombination { core: core_type, variant, op: mem_op })
}

/// The pulse sequence of one transaction part for given per-term counts:
/// terms in order, each term's pulses rotating over its signals.
fn pulse_sequence(part: &[TermRate], counts: &[u32], out: &mut Vec<SignalId>) {
    out.clear();
    for (t, &n) in part.iter().zip(counts) {
        for k in 0..n as usize {
            out.push(t.signals[k % t.signals.len()]);
        }
    }
}

/// Expected number of distinct pulse cycles for `seq` when each pulse joins
/// the previous cycle with probability `p` if its signal is not already in it.
fn expected_groups(seq: &[SignalId], p: f64) -> f64 {
    fn go(seq: &[SignalId], i: usize, group: &mut Vec<SignalId>, p: f64) -> f64 {
        if i == seq.len() {
            return 0.0;
        }
        let s = seq[i];
        if group.is_empty() || group.contains(&s) || p == 0.0 {
            let saved = std::mem::replace(group, vec![s]);
            let r = 1.0 + go(seq, i + 1, group, p);
            *group = saved;
            return r;
        }
        group.push(s);
        let merged = go(seq, i + 1, group, p);
        group.pop();
        let saved = std::mem::replace(group, vec![s]);
        let split = 1.0 + go(seq, i + 1, group, p);
        *group = saved;
        p * merged + (1.0 - p) * split
    }
    go(seq, 0, &mut Vec::new(), p)
}

/// Per-line `(pmu, etm)` expectations of one transaction part.
fn part_expectation(part: &[TermRate], p: f64) -> (f64, f64) {
    if part.is_empty() {
        return (0.0, 0.0);
    }
    let pmu: f64 = part.iter().map(|t| t.coefficient * t.rate).sum();
    let scale = part[0].coefficient;
    let mut etm = 0.0;
    let mut seq = Vec::new();
    let n = part.len();
    for combo in 0..(1u32 << n) {
        let mut prob = 1.0;
        let mut counts = Vec::with_capacity(n);
        for (i, t) in part.iter().enumerate() {
            let base = t.rate.floor();
            let frac = t.rate - base;
            let up = combo >> i & 1 == 1;
            prob *= if up { frac } else { 1.0 - frac };
            counts.push(base as u32 + up as u32);
        }
        if prob == 0.0 {
            continue;
        }
        pulse_sequence(part, &counts, &mut seq);
        etm += prob * expected_groups(&seq, p);
    }
    (pmu, scale * etm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratios {
    pub pmu_ratio: f64,
    pub etm_ratio: f64,
}

fn profile_ratios(profile: &OpSignalProfile, p: f64) -> Ratios {
    let (pr, er) = part_expectation(&profile.refill, p);
    let (pw, ew) = part_expectation(&profile.writeback, p);
    Ratios { pmu_ratio: pr + pw, etm_ratio: er + ew }
}

fn solve_collision_prob(profile: &OpSignalProfile, etm_target: f64) -> f64 {
    let f = |p| profile_ratios(profile, p).etm_ratio;
    let (none, all) = (f(0.0), f(1.0));
    if none <= etm_target || none - all < 1e-12 {
        return 0.0;
    }
    if all >= etm_target {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > etm_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Collision probability that makes `profile` produce `etm_target` counted
/// events per line.
pub fn calibrate_collision_prob(profile: &OpSignalProfile, etm_target: f64) -> f64 {
    solve_collision_prob(profile, etm_target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedRatios {
    pub per_op: Vec<(MemOp, Ratios)>,
    pub overall: Ratios,
}

/// Expected counted events per bench cacheline, per op and for the mix.
///
/// Profiles come from the calibration table; `collision_prob` replaces the
/// calibrated collision probability.
pub fn expected_ratios(
    model: &BandwidthModel,
    workload_mix: &[(MemOp, f64)],
    collision_prob: f64,
) -> Result<ExpectedRatios, AccountingError> {
    let mut per_op = Vec::new();
    let mut overall = Ratios { pmu_ratio: 0.0, etm_ratio: 0.0 };
    for &(op, share) in workload_mix {
        let profile = emit_profile(model.core_type, model.variant, op)?;
        let r = profile_ratios(&profile, collision_prob);
        overall.pmu_ratio += share * r.pmu_ratio;
        overall.etm_ratio += share * r.etm_ratio;
        per_op.push((op, r));
    }
    Ok(ExpectedRatios { per_op, overall })
}

/// Signals pulsing together in one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PulseGroup {
    sig: [SignalId; 8],
    len: u8,
}

impl PulseGroup {
    pub fn single(s: SignalId) -> Self {
        let mut g = PulseGroup::default();
        g.sig[0] = s;
        g.len = 1;
        g
    }

    pub fn from_signals(signals: &[SignalId]) -> Self {
        let mut g = PulseGroup::default();
        for &s in signals {
            g.push(s);
        }
        g
    }

    pub fn signals(&self) -> &[SignalId] {
        &self.sig[..self.len as usize]
    }

    pub fn contains(&self, s: SignalId) -> bool {
        self.signals().contains(&s)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Adds `s` unless full or already present.
    pub fn push(&mut self, s: SignalId) -> bool {
        if self.contains(s) || self.len as usize == self.sig.len() {
            return false;
        }
        self.sig[self.len as usize] = s;
        self.len += 1;
        true
    }
}

/// Draws the signal pulses of individual transactions from a profile.
#[derive(Debug, Clone)]
pub struct PulseEmitter {
    profile: OpSignalProfile,
    collision_prob: f64,
    seq: Vec<SignalId>,
    counts: Vec<u32>,
}

impl PulseEmitter {
    pub fn new(profile: OpSignalProfile) -> Self {
        let p = profile.collision_prob;
        PulseEmitter { profile, collision_prob: p, seq: Vec::new(), counts: Vec::new() }
    }

    pub fn with_collision_prob(mut self, p: f64) -> Self {
        self.collision_prob = p;
        self
    }

    pub fn profile(&self) -> &OpSignalProfile {
        &self.profile
    }

    pub fn refill<R: Rng, E: Extend<PulseGroup>>(&mut self, rng: &mut R, out: &mut E) {
        let part = std::mem::take(&mut self.profile.refill);
        self.emit(&part, rng, out);
        self.profile.refill = part;
    }

    pub fn writeback<R: Rng, E: Extend<PulseGroup>>(&mut self, rng: &mut R, out: &mut E) {
        let part = std::mem::take(&mut self.profile.writeback);
        self.emit(&part, rng, out);
        self.profile.writeback = part;
    }

    /// Append the pulse cycles of one transaction part to `out`.
    fn emit<R: Rng, E: Extend<PulseGroup>>(&mut self, part: &[TermRate], rng: &mut R, out: &mut E) {
        self.counts.clear();
        for t in part {
            let base = t.rate.floor();
            let frac = t.rate - base;
            let up = frac > 0.0 && rng.random::<f64>() < frac;
            self.counts.push(base as u32 + up as u32);
        }
        pulse_sequence(part, &self.counts, &mut self.seq);
        let mut cur: Option<PulseGroup> = None;
        for &s in &self.seq {
            if let Some(g) = cur.as_mut() {
                if !g.contains(s) && self.collision_prob > 0.0 && rng.random::<f64>() < self.collision_prob {
                    g.push(s);
                    continue;
                }
                out.extend(Some(*g));
            }
            cur = Some(PulseGroup::single(s));
        }
        out.extend(cur);
    }
}
