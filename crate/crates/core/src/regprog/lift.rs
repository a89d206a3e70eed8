use super::compile::{GROUP_CNTSEQ, GROUP_CONST, GROUP_EXTIN, GROUP_RANGE, SEQ_SHIFT};
use super::{check_write, split_register, Device, LiftError, Phase, RegisterProgram, RegisterWrite, LAR_KEY};
use crate::fabric::{
    validate_config, AddressRangeComparatorConfig, CounterConfig, EtmConfig, ExecMode, ExternalInputSelector,
    ExternalOutputConfig, PairOp, ResourceSelectorConfig, SelectorPair, SelectorSource, SequencerConfig,
    SELECTOR_FALSE,
};
use std::collections::BTreeMap;

fn bad(msg: impl Into<String>) -> LiftError {
    LiftError::MalformedProgram(msg.into())
}

fn allowed(phase: Phase, w: &RegisterWrite) -> bool {
    let (base, _) = split_register(&w.register);
    match phase {
        Phase::Unlock => matches!(base, "LAR" | "OSLAR" | "TRCOSLAR"),
        Phase::DisableAll => {
            (base == "TRCPRGCTLR" && w.field("en") == Some(0)) || (base == "CTICONTROL" && w.field("glben") == Some(0))
        }
        Phase::ProgramCti => matches!(base, "CTIINEN" | "CTIOUTEN" | "CTIGATE"),
        Phase::ProgramEtm => w.device == Device::Etm && !matches!(base, "LAR" | "TRCOSLAR" | "TRCPRGCTLR"),
        Phase::EnablePmuExport => base == "PMCR",
        Phase::EnableEtm => {
            (base == "TRCPRGCTLR" && w.field("en") == Some(1)) || (base == "CTICONTROL" && w.field("glben") == Some(1))
        }
    }
}

fn bits(mask: u64, shift: u32, n: u32) -> Vec<u8> {
    (0..n).filter(|b| mask >> (b + shift) & 1 == 1).map(|b| b as u8).collect()
}

/// Reconstruct the fabric configuration a register program sets up.
pub fn lift(program: &RegisterProgram) -> Result<EtmConfig, LiftError> {
    let mut phase = Phase::Unlock;
    let mut unlocked: Vec<Device> = Vec::new();
    let mut disabled = false;
    let mut export = false;
    let mut enabled = false;
    let mut etm: BTreeMap<String, &RegisterWrite> = BTreeMap::new();

    for w in &program.writes {
        check_write(w).map_err(bad)?;
        if w.register == "CTIINTACK" {
            return Err(bad("CTIINTACK is the interrupt handler's acknowledge and has no place in setup"));
        }
        if w.phase < phase {
            return Err(bad(format!("{} {} in phase {} after phase {phase}", w.device, w.register, w.phase)));
        }
        phase = w.phase;
        if !allowed(phase, w) {
            return Err(bad(format!("{} {} does not belong to phase {phase}", w.device, w.register)));
        }
        if w.register == "LAR" {
            if w.field("key") != Some(LAR_KEY) {
                return Err(bad(format!("{} unlocked with a wrong key", w.device)));
            }
            unlocked.push(w.device);
            continue;
        }
        if !unlocked.contains(&w.device) {
            return Err(bad(format!("{} {} written while the device is locked", w.device, w.register)));
        }
        match phase {
            Phase::DisableAll if w.register == "TRCPRGCTLR" => disabled = true,
            Phase::ProgramEtm => {
                if !disabled {
                    return Err(bad(format!("ETM {} written before the trace unit was disabled", w.register)));
                }
                etm.insert(w.register.clone(), w);
            }
            Phase::EnablePmuExport if w.field("x") == Some(1) => export = true,
            Phase::EnableEtm if w.register == "TRCPRGCTLR" => {
                if !export {
                    return Err(bad("PMU export not enabled"));
                }
                enabled = true;
            }
            _ => {}
        }
    }
    if !export {
        return Err(bad("PMU export not enabled"));
    }
    if !enabled {
        return Err(bad("trace unit never enabled"));
    }

    let get = |reg: &str, field: &str| etm.get(reg).and_then(|w| w.field(field));
    let need = |reg: &str, field: &str| get(reg, field).ok_or_else(|| bad(format!("ETM {reg} lacks field {field}")));

    // slot -> logical input
    let mut slot_input = [None::<u8>; 4];
    let mut inputs: Vec<ExternalInputSelector> = Vec::new();
    #[allow(clippy::needless_range_loop)]
    for n in 0..4 {
        let reg = format!("TRCEXTINSELR{n}");
        if !etm.contains_key(&reg) {
            continue;
        }
        let sig = need(&reg, "evtsel")? as u16;
        let i = need(&reg, "input")? as usize;
        if inputs.len() <= i {
            inputs.resize(i + 1, ExternalInputSelector::default());
        }
        inputs[i].monitored.push(sig);
        slot_input[n] = Some(i as u8);
    }

    let mut selectors = Vec::new();
    for idx in 2u8..16 {
        let reg = format!("TRCRSCTLR{idx}");
        if !etm.contains_key(&reg) {
            continue;
        }
        let group = need(&reg, "group")?;
        let select = need(&reg, "select")?;
        let inv = get(&reg, "inv").unwrap_or(0) == 1;
        let pair = get(&reg, "pair");
        if group == GROUP_EXTIN && select == 0 && !inv && pair.is_none() {
            continue;
        }
        let source = match group {
            GROUP_EXTIN => {
                let mut m = Vec::new();
                for s in bits(select, 0, 4) {
                    let i =
                        slot_input[s as usize].ok_or_else(|| bad(format!("{reg} selects unprogrammed slot {s}")))?;
                    if !m.contains(&i) {
                        m.push(i);
                    }
                }
                m.sort_unstable();
                SelectorSource::ExternalInputs(m)
            }
            GROUP_CNTSEQ => {
                let c = bits(select, 0, 2);
                let s = bits(select, SEQ_SHIFT, 4);
                match (c.is_empty(), s.is_empty()) {
                    (false, true) => SelectorSource::CounterFired(c),
                    (true, false) => SelectorSource::SequencerState(s),
                    _ => return Err(bad(format!("{reg} must select counters or sequencer states, not both"))),
                }
            }
            GROUP_RANGE => SelectorSource::AddressRangeActive(bits(select, 0, 4)),
            GROUP_CONST => {
                if select & 1 == 1 {
                    SelectorSource::ConstTrue
                } else {
                    SelectorSource::ConstFalse
                }
            }
            g => return Err(bad(format!("{reg} uses unsupported resource group {g}"))),
        };
        let paired_with = pair.map(|p| SelectorPair {
            partner: p as u8,
            op: if get(&reg, "pairop") == Some(1) { PairOp::Or } else { PairOp::And },
        });
        selectors.push(ResourceSelectorConfig { index: idx, source, inverted: inv, paired_with });
    }

    let mut counters = Vec::new();
    for n in 0u8..2 {
        let rld = format!("TRCCNTRLDVR{n}");
        if !etm.contains_key(&rld) {
            continue;
        }
        let ctl = format!("TRCCNTCTLR{n}");
        let trigger = need(&ctl, "rldevent")? as u8;
        counters.push(CounterConfig {
            index: n,
            reload_value: need(&rld, "value")? as u16,
            input: need(&ctl, "cntevent")? as u8,
            self_reload: get(&ctl, "rldself") == Some(1),
            reload_trigger: (trigger != SELECTOR_FALSE).then_some(trigger),
            chained: get(&ctl, "cntchain") == Some(1),
        });
    }

    let mut sequencer = SequencerConfig::default();
    for k in 0..3 {
        let reg = format!("TRCSEQEVR{k}");
        sequencer.forward[k] = get(&reg, "f").unwrap_or(SELECTOR_FALSE as u64) as u8;
        sequencer.backward[k] = get(&reg, "b").unwrap_or(SELECTOR_FALSE as u64) as u8;
    }
    sequencer.reset = get("TRCSEQRSTEVR", "rst").unwrap_or(SELECTOR_FALSE as u64) as u8;

    let mut comparators = Vec::new();
    for i in 0u8..4 {
        let lo_reg = format!("TRCACVR{}", 2 * i);
        if !etm.contains_key(&lo_reg) {
            continue;
        }
        let modes = get(&format!("TRCACATR{}", 2 * i), "modes").unwrap_or(3);
        let mut match_modes = Vec::new();
        if modes & 1 == 1 {
            match_modes.push(ExecMode::User);
        }
        if modes & 2 == 2 {
            match_modes.push(ExecMode::Kernel);
        }
        comparators.push(AddressRangeComparatorConfig {
            index: i,
            lo: need(&lo_reg, "addr")?,
            hi: need(&format!("TRCACVR{}", 2 * i + 1), "addr")?,
            match_modes,
        });
    }

    let en = get("TRCEVENTCTL1R", "en").unwrap_or(0);
    let mut outputs = Vec::new();
    for k in 0u8..4 {
        if en >> k & 1 == 1 {
            let sel = need("TRCEVENTCTL0R", &format!("evt{k}"))? as u8;
            outputs.push(ExternalOutputConfig { output_index: k, selector: sel });
        }
    }

    let config = EtmConfig { inputs, selectors, counters, sequencer, comparators, outputs };
    validate_config(&config).map_err(|e| bad(e.to_string()))?;
    Ok(config)
}
