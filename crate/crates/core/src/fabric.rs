//! Cycle-stepped model of the ETM trace resources: external input selectors,
//! resource selectors, the two down-counters, the four-state sequencer,
//! address range comparators and the external outputs.
//!
//! One call to [`Fabric::step`] covers one core clock. Within a cycle:
//!
//! 1. counter input selectors see this cycle's external input pulses, the
//!    fire pulses of the previous cycle and the sequencer level latched at the
//!    previous cycle boundary;
//! 2. counters decrement, fire on reaching zero and (self-reload) reload in
//!    the same cycle;
//! 3. reload-trigger selectors see this cycle's fires; a trigger reload wins
//!    over the decrement;
//! 4. the sequencer applies reset, else up to three forward moves, else up to
//!    three backward moves, with every transition selector evaluated against
//!    this cycle's pulses and fires and the latched sequencer level;
//! 5. output selectors are evaluated against the post-update sequencer level.
//!
//! While the core is idle the whole fabric freezes.

use serde::{Deserialize, Serialize};
use std::fmt;

/// One low-level PE signal routed to the ETM external inputs.
pub type SignalId = u16;

pub const SELECTOR_TRUE: u8 = 0;
pub const SELECTOR_FALSE: u8 = 1;
pub const NUM_SELECTORS: usize = 16;
pub const MAX_INPUTS: usize = 4;
pub const MAX_INPUT_SIGNALS: usize = 4;
pub const MAX_COUNTERS: usize = 2;
pub const MAX_RANGE_PAIRS: usize = 4;
pub const MAX_OUTPUTS: usize = 4;
pub const SEQ_STATES: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    User,
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExternalInputSelector {
    pub monitored: Vec<SignalId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "members", rename_all = "snake_case")]
pub enum SelectorSource {
    ConstTrue,
    ConstFalse,
    ExternalInputs(Vec<u8>),
    CounterFired(Vec<u8>),
    SequencerState(Vec<u8>),
    AddressRangeActive(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairOp {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorPair {
    pub partner: u8,
    pub op: PairOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSelectorConfig {
    pub index: u8,
    pub source: SelectorSource,
    #[serde(default)]
    pub inverted: bool,
    #[serde(default)]
    pub paired_with: Option<SelectorPair>,
}

impl ResourceSelectorConfig {
    pub fn new(index: u8, source: SelectorSource) -> Self {
        ResourceSelectorConfig { index, source, inverted: false, paired_with: None }
    }

    pub fn inverted(mut self) -> Self {
        self.inverted = true;
        self
    }

    pub fn paired(mut self, partner: u8, op: PairOp) -> Self {
        self.paired_with = Some(SelectorPair { partner, op });
        self
    }
}

/// A 16-bit down-counter.
///
/// `self_reload` reloads on the zero crossing and makes the fire output a
/// one-cycle pulse. Without it the counter rests at zero and the fire output
/// is a level. `reload_trigger` reloads the counter whenever the selector is
/// true, independently of `self_reload`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterConfig {
    pub index: u8,
    pub reload_value: u16,
    pub input: u8,
    #[serde(default)]
    pub self_reload: bool,
    #[serde(default)]
    pub reload_trigger: Option<u8>,
    #[serde(default)]
    pub chained: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencerConfig {
    /// Selectors for 0→1, 1→2, 2→3.
    pub forward: [u8; 3],
    /// Selectors for 1→0, 2→1, 3→2.
    pub backward: [u8; 3],
    pub reset: u8,
}

impl Default for SequencerConfig {
    fn default() -> Self {
        SequencerConfig { forward: [SELECTOR_FALSE; 3], backward: [SELECTOR_FALSE; 3], reset: SELECTOR_FALSE }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressRangeComparatorConfig {
    pub index: u8,
    pub lo: u64,
    pub hi: u64,
    pub match_modes: Vec<ExecMode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalOutputConfig {
    pub output_index: u8,
    pub selector: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EtmConfig {
    #[serde(default)]
    pub inputs: Vec<ExternalInputSelector>,
    #[serde(default)]
    pub selectors: Vec<ResourceSelectorConfig>,
    #[serde(default)]
    pub counters: Vec<CounterConfig>,
    #[serde(default)]
    pub sequencer: SequencerConfig,
    #[serde(default)]
    pub comparators: Vec<AddressRangeComparatorConfig>,
    #[serde(default)]
    pub outputs: Vec<ExternalOutputConfig>,
}

impl EtmConfig {
    pub fn selector(&self, index: u8) -> Option<&ResourceSelectorConfig> {
        self.selectors.iter().find(|s| s.index == index)
    }

    pub fn counter(&self, index: u8) -> Option<&CounterConfig> {
        self.counters.iter().find(|c| c.index == index)
    }

    pub fn is_chained(&self) -> bool {
        self.counters.iter().any(|c| c.chained)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct FabricState {
    pub counter_values: [u16; 2],
    pub sequencer_state: u8,
    pub last_fire: [bool; 2],
    pub output_levels: [bool; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CycleInputs {
    pub active_signals: Vec<SignalId>,
    pub instruction_fetch_addr: Option<u64>,
    pub exec_mode: ExecMode,
    pub core_idle: bool,
}

impl CycleInputs {
    pub fn clear(&mut self) {
        self.active_signals.clear();
        self.instruction_fetch_addr = None;
        self.exec_mode = ExecMode::User;
        self.core_idle = false;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FabricOutputs {
    pub counter_fired: [bool; 2],
    pub sequencer_state: u8,
    pub output_levels: [bool; 4],
}

impl FabricOutputs {
    /// Outputs 1..3 are wired to CTIIRQ.
    pub fn irq_request(&self) -> bool {
        self.output_levels[1] || self.output_levels[2] || self.output_levels[3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceReport {
    /// Programmed selectors, not counting the hardwired TRUE/FALSE pair.
    pub selectors_used: usize,
    pub counters_used: usize,
    pub inputs_used: usize,
    pub input_signals_used: usize,
    pub comparator_pairs_used: usize,
    pub outputs_used: usize,
}

impl ResourceReport {
    /// Selector slots occupied including the two hardwired ones.
    pub fn selector_slots_occupied(&self) -> usize {
        self.selectors_used + 2
    }
}

impl fmt::Display for ResourceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "resource selectors: {} programmed (+2 hardwired) of {}", self.selectors_used, NUM_SELECTORS)?;
        writeln!(f, "counters:           {} of {}", self.counters_used, MAX_COUNTERS)?;
        writeln!(
            f,
            "input selectors:    {} of {} ({} signals)",
            self.inputs_used, MAX_INPUTS, self.input_signals_used
        )?;
        writeln!(f, "address ranges:     {} of {}", self.comparator_pairs_used, MAX_RANGE_PAIRS)?;
        write!(f, "outputs:            {} of {}", self.outputs_used, MAX_OUTPUTS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("selector budget exceeded: {used} programmable selectors, at most 14")]
    SelectorBudget { used: usize },
    #[error("counter budget exceeded: {used} counters, at most 2")]
    CounterBudget { used: usize },
    #[error("input budget exceeded: {0}")]
    InputBudget(String),
    #[error("comparator budget exceeded: {used} range pairs, at most 4")]
    ComparatorBudget { used: usize },
    #[error("output budget exceeded: {used} outputs, at most 4")]
    OutputBudget { used: usize },
    #[error("counter {0}: reload must be ≥ 1")]
    ReloadZero(u8),
    #[error("selector {0} is hardwired and cannot be reprogrammed")]
    HardwiredSelector(u8),
    #[error("{0}")]
    InvalidReference(String),
    #[error("duplicate {0}")]
    Duplicate(String),
    #[error("address range {0}: lo must be below hi")]
    EmptyRange(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct InvalidConfig(pub Vec<ConfigError>);

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid ETM config: ")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl InvalidConfig {
    pub fn contains(&self, needle: &str) -> bool {
        self.0.iter().any(|e| e.to_string().contains(needle))
    }
}

fn is_hardwired_identity(s: &ResourceSelectorConfig) -> bool {
    let expected = if s.index == SELECTOR_TRUE { SelectorSource::ConstTrue } else { SelectorSource::ConstFalse };
    s.source == expected && !s.inverted && s.paired_with.is_none()
}

/// Check every budget and reference in `config`, collecting all violations.
pub fn validate_config(config: &EtmConfig) -> Result<ResourceReport, InvalidConfig> {
    let mut errs = Vec::new();

    if config.inputs.len() > MAX_INPUTS {
        errs.push(ConfigError::InputBudget(format!("{} input selectors, at most {MAX_INPUTS}", config.inputs.len())));
    }
    let mut signals: Vec<SignalId> = config.inputs.iter().flat_map(|i| i.monitored.iter().copied()).collect();
    signals.sort_unstable();
    signals.dedup();
    if signals.len() > MAX_INPUT_SIGNALS {
        errs.push(ConfigError::InputBudget(format!(
            "{} monitored signals, at most {MAX_INPUT_SIGNALS}",
            signals.len()
        )));
    }
    for (i, input) in config.inputs.iter().enumerate() {
        if input.monitored.is_empty() {
            errs.push(ConfigError::InvalidReference(format!("input selector {i} monitors no signal")));
        }
    }

    let programmed: Vec<&ResourceSelectorConfig> = config
        .selectors
        .iter()
        .filter(|s| {
            if s.index <= SELECTOR_FALSE {
                if !is_hardwired_identity(s) {
                    errs.push(ConfigError::HardwiredSelector(s.index));
                }
                false
            } else {
                true
            }
        })
        .collect();
    if programmed.len() > NUM_SELECTORS - 2 {
        errs.push(ConfigError::SelectorBudget { used: programmed.len() });
    }
    let mut seen = [false; 256];
    for s in &programmed {
        if s.index as usize >= NUM_SELECTORS {
            errs.push(ConfigError::InvalidReference(format!("selector index {} out of range 0..15", s.index)));
        }
        if seen[s.index as usize] {
            errs.push(ConfigError::Duplicate(format!("selector {}", s.index)));
        }
        seen[s.index as usize] = true;
    }
    let sel_exists = |i: u8| i <= SELECTOR_FALSE || programmed.iter().any(|s| s.index == i);

    let counter_ok = |m: u8| config.counters.iter().any(|c| c.index == m);
    let range_ok = |m: u8| config.comparators.iter().any(|c| c.index == m);
    for s in &programmed {
        let (members, what, ok): (&[u8], &str, &dyn Fn(u8) -> bool) = match &s.source {
            SelectorSource::ConstTrue | SelectorSource::ConstFalse => (&[], "", &|_| true),
            SelectorSource::ExternalInputs(m) => (m, "external input", &|x| (x as usize) < config.inputs.len()),
            SelectorSource::CounterFired(m) => (m, "counter", &counter_ok),
            SelectorSource::SequencerState(m) => (m, "sequencer state", &|x| x < SEQ_STATES),
            SelectorSource::AddressRangeActive(m) => (m, "address range", &range_ok),
        };
        if !matches!(s.source, SelectorSource::ConstTrue | SelectorSource::ConstFalse) && members.is_empty() {
            errs.push(ConfigError::InvalidReference(format!("selector {} selects no {what}", s.index)));
        }
        for &m in members {
            if !ok(m) {
                errs.push(ConfigError::InvalidReference(format!("selector {} references missing {what} {m}", s.index)));
            }
        }
        if let Some(p) = s.paired_with {
            if p.partner == s.index {
                errs.push(ConfigError::InvalidReference(format!("selector {} is paired with itself", s.index)));
            } else if p.partner <= SELECTOR_FALSE || !sel_exists(p.partner) {
                errs.push(ConfigError::InvalidReference(format!(
                    "selector {} pairs with unconfigured selector {}",
                    s.index, p.partner
                )));
            }
        }
    }

    if config.counters.len() > MAX_COUNTERS {
        errs.push(ConfigError::CounterBudget { used: config.counters.len() });
    }
    let mut seen_ctr = [false; 256];
    for c in &config.counters {
        if c.index as usize >= MAX_COUNTERS {
            errs.push(ConfigError::InvalidReference(format!("counter index {} out of range 0..1", c.index)));
        }
        if seen_ctr[c.index as usize] {
            errs.push(ConfigError::Duplicate(format!("counter {}", c.index)));
        }
        seen_ctr[c.index as usize] = true;
        if c.reload_value == 0 {
            errs.push(ConfigError::ReloadZero(c.index));
        }
        if !sel_exists(c.input) {
            errs.push(ConfigError::InvalidReference(format!("counter {} input selector {} missing", c.index, c.input)));
        }
        if let Some(t) = c.reload_trigger {
            if !sel_exists(t) {
                errs.push(ConfigError::InvalidReference(format!("counter {} trigger selector {t} missing", c.index)));
            }
        }
    }
    if config.is_chained() && !(counter_ok(0) && counter_ok(1)) {
        errs.push(ConfigError::InvalidReference("chaining needs both counters".into()));
    }

    let seq = &config.sequencer;
    for (name, i) in [
        ("forward 0→1", seq.forward[0]),
        ("forward 1→2", seq.forward[1]),
        ("forward 2→3", seq.forward[2]),
        ("backward 1→0", seq.backward[0]),
        ("backward 2→1", seq.backward[1]),
        ("backward 3→2", seq.backward[2]),
        ("reset", seq.reset),
    ] {
        if !sel_exists(i) {
            errs.push(ConfigError::InvalidReference(format!("sequencer {name} selector {i} missing")));
        }
    }

    if config.comparators.len() > MAX_RANGE_PAIRS {
        errs.push(ConfigError::ComparatorBudget { used: config.comparators.len() });
    }
    let mut seen_cmp = [false; 256];
    for c in &config.comparators {
        if c.index as usize >= MAX_RANGE_PAIRS {
            errs.push(ConfigError::InvalidReference(format!("address range index {} out of range 0..3", c.index)));
        }
        if seen_cmp[c.index as usize] {
            errs.push(ConfigError::Duplicate(format!("address range {}", c.index)));
        }
        seen_cmp[c.index as usize] = true;
        if c.lo >= c.hi {
            errs.push(ConfigError::EmptyRange(c.index));
        }
    }

    if config.outputs.len() > MAX_OUTPUTS {
        errs.push(ConfigError::OutputBudget { used: config.outputs.len() });
    }
    let mut seen_out = [false; 256];
    for o in &config.outputs {
        if o.output_index as usize >= MAX_OUTPUTS {
            errs.push(ConfigError::InvalidReference(format!("output index {} out of range 0..3", o.output_index)));
        }
        if seen_out[o.output_index as usize] {
            errs.push(ConfigError::Duplicate(format!("output {}", o.output_index)));
        }
        seen_out[o.output_index as usize] = true;
        if !sel_exists(o.selector) {
            errs.push(ConfigError::InvalidReference(format!(
                "output {} selector {} missing",
                o.output_index, o.selector
            )));
        }
    }

    if !errs.is_empty() {
        return Err(InvalidConfig(errs));
    }
    Ok(ResourceReport {
        selectors_used: programmed.len(),
        counters_used: config.counters.len(),
        inputs_used: config.inputs.len(),
        input_signals_used: signals.len(),
        comparator_pairs_used: config.comparators.len(),
        outputs_used: config.outputs.len(),
    })
}

// Resource vector bit layout used by the compiled selectors.
const EXT_SHIFT: u32 = 0;
const FIRE_SHIFT: u32 = 4;
const SEQ_SHIFT: u32 = 6;
const ADDR_SHIFT: u32 = 10;
const TRUE_BIT: u32 = 1 << 14;
const FIRE_MASK: u32 = 0b11 << FIRE_SHIFT;
const SEQ_MASK: u32 = 0b1111 << SEQ_SHIFT;

#[derive(Debug, Clone, Copy)]
struct CompiledSelector {
    mask: u32,
    inverted: bool,
    pair: Option<(u8, PairOp)>,
}

#[derive(Debug, Clone, Copy)]
struct CompiledCounter {
    reload: u16,
    input: u8,
    self_reload: bool,
    trigger: Option<u8>,
}

#[derive(Debug, Clone, Copy)]
struct CompiledRange {
    bit: u32,
    lo: u64,
    hi: u64,
    user: bool,
    kernel: bool,
}

/// A validated config lowered into bitmask form for fast stepping.
#[derive(Debug, Clone)]
pub struct Fabric {
    config: EtmConfig,
    report: ResourceReport,
    selectors: [CompiledSelector; NUM_SELECTORS],
    inputs: Vec<Vec<SignalId>>,
    ranges: Vec<CompiledRange>,
    counters: [Option<CompiledCounter>; 2],
    chained: bool,
    forward: [u8; 3],
    backward: [u8; 3],
    reset: u8,
    outputs: [Option<u8>; 4],
}

/// What [`Fabric::evaluate_selector`] sees: the latched sequencer level, this
/// cycle's counter fires and this cycle's inputs.
#[derive(Debug, Clone, Copy)]
pub struct SelectorSnapshot<'a> {
    pub sequencer_state: u8,
    pub counter_fired: [bool; 2],
    pub inputs: &'a CycleInputs,
}

fn members_mask(members: &[u8], shift: u32) -> u32 {
    members.iter().fold(0, |m, &b| m | (1 << (shift + b as u32)))
}

impl Fabric {
    pub fn new(config: EtmConfig) -> Result<Fabric, InvalidConfig> {
        let report = validate_config(&config)?;
        let unset = CompiledSelector { mask: 0, inverted: false, pair: None };
        let mut selectors = [unset; NUM_SELECTORS];
        selectors[SELECTOR_TRUE as usize].mask = TRUE_BIT;
        for s in config.selectors.iter().filter(|s| s.index > SELECTOR_FALSE) {
            let mask = match &s.source {
                SelectorSource::ConstTrue => TRUE_BIT,
                SelectorSource::ConstFalse => 0,
                SelectorSource::ExternalInputs(m) => members_mask(m, EXT_SHIFT),
                SelectorSource::CounterFired(m) => members_mask(m, FIRE_SHIFT),
                SelectorSource::SequencerState(m) => members_mask(m, SEQ_SHIFT),
                SelectorSource::AddressRangeActive(m) => members_mask(m, ADDR_SHIFT),
            };
            selectors[s.index as usize] =
                CompiledSelector { mask, inverted: s.inverted, pair: s.paired_with.map(|p| (p.partner, p.op)) };
        }
        let mut counters = [None, None];
        for c in &config.counters {
            counters[c.index as usize] = Some(CompiledCounter {
                reload: c.reload_value,
                input: c.input,
                self_reload: c.self_reload,
                trigger: c.reload_trigger,
            });
        }
        let ranges = config
            .comparators
            .iter()
            .map(|c| CompiledRange {
                bit: 1 << (ADDR_SHIFT + c.index as u32),
                lo: c.lo,
                hi: c.hi,
                user: c.match_modes.contains(&ExecMode::User),
                kernel: c.match_modes.contains(&ExecMode::Kernel),
            })
            .collect();
        let mut outputs = [None; 4];
        for o in &config.outputs {
            outputs[o.output_index as usize] = Some(o.selector);
        }
        Ok(Fabric {
            inputs: config.inputs.iter().map(|i| i.monitored.clone()).collect(),
            chained: config.is_chained(),
            forward: config.sequencer.forward,
            backward: config.sequencer.backward,
            reset: config.sequencer.reset,
            config,
            report,
            selectors,
            ranges,
            counters,
            outputs,
        })
    }

    pub fn config(&self) -> &EtmConfig {
        &self.config
    }

    pub fn report(&self) -> ResourceReport {
        self.report
    }

    pub fn reset(&self) -> FabricState {
        let mut st = FabricState::default();
        for (i, c) in self.counters.iter().enumerate() {
            if let Some(c) = c {
                st.counter_values[i] = c.reload;
            }
        }
        st
    }

    #[inline]
    fn base(&self, i: u8, r: u32) -> bool {
        let s = &self.selectors[i as usize];
        (r & s.mask != 0) ^ s.inverted
    }

    #[inline]
    fn sel(&self, i: u8, r: u32) -> bool {
        let a = self.base(i, r);
        match self.selectors[i as usize].pair {
            None => a,
            Some((j, PairOp::And)) => a && self.base(j, r),
            Some((j, PairOp::Or)) => a || self.base(j, r),
        }
    }

    #[inline]
    fn pulse_bits(&self, inp: &CycleInputs) -> u32 {
        let mut r = 0;
        if !inp.active_signals.is_empty() {
            for (i, mon) in self.inputs.iter().enumerate() {
                if mon.iter().any(|s| inp.active_signals.contains(s)) {
                    r |= 1 << (EXT_SHIFT + i as u32);
                }
            }
        }
        if let Some(a) = inp.instruction_fetch_addr {
            let user = inp.exec_mode == ExecMode::User;
            for c in &self.ranges {
                if a >= c.lo && a < c.hi && if user { c.user } else { c.kernel } {
                    r |= c.bit;
                }
            }
        }
        r
    }

    fn fire_bits(f: [bool; 2]) -> u32 {
        ((f[0] as u32) << FIRE_SHIFT) | ((f[1] as u32) << (FIRE_SHIFT + 1))
    }

    fn seq_bit(s: u8) -> u32 {
        1 << (SEQ_SHIFT + s as u32)
    }

    pub fn evaluate_selector(&self, index: u8, snap: &SelectorSnapshot<'_>) -> bool {
        let r = TRUE_BIT
            | Self::seq_bit(snap.sequencer_state)
            | Self::fire_bits(snap.counter_fired)
            | self.pulse_bits(snap.inputs);
        self.sel(index, r)
    }

    /// Advance the fabric by one cycle.
    pub fn step(&self, st: &mut FabricState, inp: &CycleInputs) -> FabricOutputs {
        if inp.core_idle {
            return FabricOutputs {
                counter_fired: [false; 2],
                sequencer_state: st.sequencer_state,
                output_levels: st.output_levels,
            };
        }
        let r = TRUE_BIT | Self::seq_bit(st.sequencer_state) | self.pulse_bits(inp);
        let ra = r | Self::fire_bits(st.last_fire);
        let mut fired = [false; 2];

        if self.chained {
            if let (Some(c0), Some(c1)) = (self.counters[0], self.counters[1]) {
                let (mut v0, mut v1) = (st.counter_values[0], st.counter_values[1]);
                if self.sel(c0.input, ra) && v1 > 0 {
                    if v0 > 1 {
                        v0 -= 1;
                    } else {
                        v0 = c0.reload;
                        v1 -= 1;
                    }
                }
                if v1 == 0 {
                    fired[1] = true;
                    if c0.self_reload {
                        v1 = c1.reload;
                    }
                }
                st.counter_values = [v0, v1];
            }
        } else {
            #[allow(clippy::needless_range_loop)]
            for i in 0..2 {
                if let Some(c) = self.counters[i] {
                    let mut v = st.counter_values[i];
                    if v > 0 && self.sel(c.input, ra) {
                        v -= 1;
                    }
                    if v == 0 {
                        fired[i] = true;
                        if c.self_reload {
                            v = c.reload;
                        }
                    }
                    st.counter_values[i] = v;
                }
            }
        }

        let rc = r | Self::fire_bits(fired);
        if self.chained {
            if let (Some(c0), Some(c1)) = (self.counters[0], self.counters[1]) {
                if c0.trigger.is_some_and(|t| self.sel(t, rc)) {
                    st.counter_values = [c0.reload, c1.reload];
                }
            }
        } else {
            for i in 0..2 {
                if let Some(c) = self.counters[i] {
                    if c.trigger.is_some_and(|t| self.sel(t, rc)) {
                        st.counter_values[i] = c.reload;
                    }
                }
            }
        }

        let mut s = st.sequencer_state;
        if self.sel(self.reset, rc) {
            s = 0;
        } else {
            let from = s;
            while s < 3 && self.sel(self.forward[s as usize], rc) {
                s += 1;
            }
            if s == from {
                while s > 0 && self.sel(self.backward[s as usize - 1], rc) {
                    s -= 1;
                }
            }
        }

        let re = (rc & !SEQ_MASK) | Self::seq_bit(s);
        let mut levels = [false; 4];
        for (k, o) in self.outputs.iter().enumerate() {
            if let Some(sel) = o {
                levels[k] = self.sel(*sel, re);
            }
        }
        debug_assert_eq!(re & FIRE_MASK, Self::fire_bits(fired));

        st.sequencer_state = s;
        st.last_fire = fired;
        st.output_levels = levels;
        FabricOutputs { counter_fired: fired, sequencer_state: s, output_levels: levels }
    }
}

/// Initial programmed state for `config`.
pub fn reset_fabric(config: &EtmConfig) -> Result<FabricState, InvalidConfig> {
    Ok(Fabric::new(config.clone())?.reset())
}

/// Functional single step. Lowers the config on every call, so loops should
/// build a [`Fabric`] once and call [`Fabric::step`] instead.
pub fn step_fabric(
    state: &FabricState,
    config: &EtmConfig,
    inputs: &CycleInputs,
) -> Result<(FabricState, FabricOutputs), InvalidConfig> {
    let fabric = Fabric::new(config.clone())?;
    let mut next = state.clone();
    let out = fabric.step(&mut next, inputs);
    Ok((next, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counter_only(reload: u16, input: u8) -> EtmConfig {
        EtmConfig {
            counters: vec![CounterConfig {
                index: 0,
                reload_value: reload,
                input,
                self_reload: true,
                reload_trigger: None,
                chained: false,
            }],
            ..Default::default()
        }
    }

    #[test]
    fn self_reload_fires_every_reload_cycles() {
        let f = Fabric::new(counter_only(3, SELECTOR_TRUE)).unwrap();
        let mut st = f.reset();
        assert_eq!(st.counter_values[0], 3);
        let inp = CycleInputs::default();
        let fires: Vec<bool> = (0..6).map(|_| f.step(&mut st, &inp).counter_fired[0]).collect();
        assert_eq!(fires, [false, false, true, false, false, true]);
        assert_eq!(st.counter_values[0], 3);
    }

    #[test]
    fn level_counter_holds_zero_until_trigger() {
        let mut cfg = counter_only(2, SELECTOR_TRUE);
        cfg.counters[0].self_reload = false;
        cfg.inputs = vec![ExternalInputSelector { monitored: vec![7] }];
        cfg.selectors = vec![ResourceSelectorConfig::new(2, SelectorSource::ExternalInputs(vec![0]))];
        cfg.counters[0].reload_trigger = Some(2);
        let f = Fabric::new(cfg).unwrap();
        let mut st = f.reset();
        let quiet = CycleInputs::default();
        assert!(!f.step(&mut st, &quiet).counter_fired[0]);
        assert!(f.step(&mut st, &quiet).counter_fired[0]);
        assert!(f.step(&mut st, &quiet).counter_fired[0]);
        assert_eq!(st.counter_values[0], 0);
        let kick = CycleInputs { active_signals: vec![7], ..Default::default() };
        f.step(&mut st, &kick);
        assert_eq!(st.counter_values[0], 2);
    }

    fn seq_config(fwd: [u8; 3], back: [u8; 3]) -> EtmConfig {
        EtmConfig {
            selectors: vec![],
            sequencer: SequencerConfig { forward: fwd, backward: back, reset: SELECTOR_FALSE },
            ..Default::default()
        }
    }

    #[test]
    fn forward_beats_backward() {
        let f = Fabric::new(seq_config([SELECTOR_FALSE, SELECTOR_TRUE, SELECTOR_FALSE], [SELECTOR_TRUE; 3])).unwrap();
        let mut st = FabricState { sequencer_state: 1, ..f.reset() };
        assert_eq!(f.step(&mut st, &CycleInputs::default()).sequencer_state, 2);
    }

    #[test]
    fn multi_step_in_one_cycle() {
        let f = Fabric::new(seq_config([SELECTOR_TRUE, SELECTOR_TRUE, SELECTOR_FALSE], [SELECTOR_FALSE; 3])).unwrap();
        let mut st = f.reset();
        assert_eq!(f.step(&mut st, &CycleInputs::default()).sequencer_state, 2);
        let f = Fabric::new(seq_config([SELECTOR_TRUE; 3], [SELECTOR_FALSE; 3])).unwrap();
        let mut st = f.reset();
        assert_eq!(f.step(&mut st, &CycleInputs::default()).sequencer_state, 3);
    }

    #[test]
    fn reset_beats_everything() {
        let mut cfg = seq_config([SELECTOR_TRUE; 3], [SELECTOR_TRUE; 3]);
        cfg.sequencer.reset = SELECTOR_TRUE;
        let f = Fabric::new(cfg).unwrap();
        let mut st = FabricState { sequencer_state: 2, ..f.reset() };
        assert_eq!(f.step(&mut st, &CycleInputs::default()).sequencer_state, 0);
    }

    #[test]
    fn idle_freezes() {
        let mut cfg = counter_only(5, 2);
        cfg.inputs = vec![ExternalInputSelector { monitored: vec![21] }];
        cfg.selectors = vec![ResourceSelectorConfig::new(2, SelectorSource::ExternalInputs(vec![0]))];
        let f = Fabric::new(cfg).unwrap();
        let mut st = f.reset();
        let before = st.clone();
        let inp = CycleInputs { active_signals: vec![21], core_idle: true, ..Default::default() };
        f.step(&mut st, &inp);
        assert_eq!(st, before);
    }

    #[test]
    fn selector_membership_and_pairs() {
        let cfg = EtmConfig {
            inputs: vec![ExternalInputSelector { monitored: vec![5] }],
            selectors: vec![
                ResourceSelectorConfig::new(2, SelectorSource::ExternalInputs(vec![0])).paired(3, PairOp::And),
                ResourceSelectorConfig::new(3, SelectorSource::SequencerState(vec![1, 2])),
                ResourceSelectorConfig::new(4, SelectorSource::SequencerState(vec![3])),
            ],
            ..Default::default()
        };
        let f = Fabric::new(cfg).unwrap();
        let pulse = CycleInputs { active_signals: vec![5], ..Default::default() };
        let quiet = CycleInputs::default();
        let snap = |s, i| SelectorSnapshot { sequencer_state: s, counter_fired: [false; 2], inputs: i };
        assert!(f.evaluate_selector(SELECTOR_TRUE, &snap(0, &quiet)));
        assert!(!f.evaluate_selector(SELECTOR_FALSE, &snap(0, &quiet)));
        assert!(!f.evaluate_selector(4, &snap(0, &quiet)));
        assert!(f.evaluate_selector(4, &snap(3, &quiet)));
        assert!(f.evaluate_selector(2, &snap(1, &pulse)));
        assert!(!f.evaluate_selector(2, &snap(0, &pulse)));
        assert!(!f.evaluate_selector(2, &snap(2, &quiet)));
    }

    #[test]
    fn budget_errors_are_reported() {
        let cfg = EtmConfig {
            selectors: (2..19).map(|i| ResourceSelectorConfig::new(i, SelectorSource::ConstTrue)).collect(),
            ..Default::default()
        };
        let err = validate_config(&cfg).unwrap_err();
        assert!(err.contains("selector budget exceeded"), "{err}");
        assert!(reset_fabric(&cfg).unwrap_err().to_string().contains("selector budget exceeded"));

        let err = reset_fabric(&counter_only(0, SELECTOR_TRUE)).unwrap_err();
        assert!(err.to_string().contains("reload must be ≥ 1"), "{err}");

        let cfg = EtmConfig {
            inputs: vec![
                ExternalInputSelector { monitored: vec![1, 2, 3] },
                ExternalInputSelector { monitored: vec![4, 5] },
            ],
            ..Default::default()
        };
        assert!(matches!(validate_config(&cfg).unwrap_err().0[0], ConfigError::InputBudget(_)));
    }

    #[test]
    fn empty_config_uses_only_hardwired_slots() {
        let r = validate_config(&EtmConfig::default()).unwrap();
        assert_eq!(r.selectors_used, 0);
        assert_eq!(r.selector_slots_occupied(), 2);
    }

    #[test]
    fn chained_counter_counts_product() {
        let cfg = EtmConfig {
            counters: vec![
                CounterConfig {
                    index: 0,
                    reload_value: 3,
                    input: 0,
                    self_reload: true,
                    reload_trigger: None,
                    chained: true,
                },
                CounterConfig {
                    index: 1,
                    reload_value: 4,
                    input: 1,
                    self_reload: false,
                    reload_trigger: None,
                    chained: false,
                },
            ],
            ..Default::default()
        };
        let f = Fabric::new(cfg).unwrap();
        let mut st = f.reset();
        let fires: Vec<usize> =
            (1..=30).filter(|_| f.step(&mut st, &CycleInputs::default()).counter_fired[1]).collect();
        assert_eq!(fires.len(), 2);
    }

    #[test]
    fn address_ranges_respect_mode() {
        let cfg = EtmConfig {
            selectors: vec![ResourceSelectorConfig::new(2, SelectorSource::AddressRangeActive(vec![0]))],
            comparators: vec![AddressRangeComparatorConfig {
                index: 0,
                lo: 0x1000,
                hi: 0x2000,
                match_modes: vec![ExecMode::User],
            }],
            ..Default::default()
        };
        let f = Fabric::new(cfg).unwrap();
        let at = |a, m| CycleInputs { instruction_fetch_addr: Some(a), exec_mode: m, ..Default::default() };
        let snap = |i| SelectorSnapshot { sequencer_state: 0, counter_fired: [false; 2], inputs: i };
        let (u, k, edge) = (at(0x1800, ExecMode::User), at(0x1800, ExecMode::Kernel), at(0x2000, ExecMode::User));
        assert!(f.evaluate_selector(2, &snap(&u)));
        assert!(!f.evaluate_selector(2, &snap(&k)));
        assert!(!f.evaluate_selector(2, &snap(&edge)));
    }
}
