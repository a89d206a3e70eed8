//! compile → lift against the direct builder, structurally and by simulation.

use etmreg::accounting::{emit_profile, CoreType, MemOp, ModelVariant};
use etmreg::fabric::{CycleInputs, ExecMode, Fabric};
use etmreg::machine::{
    run_system, CoreModelConfig, CoreSetup, RegulatorAttachment, SystemConfig, WorkloadSpec, KERNEL_PC,
};
use etmreg::regprog::{compile, lift, parse_text, to_json, to_text, RegisterProgram};
use etmreg::regulators::{build_config, Design, RegulatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VARIANTS: [ModelVariant; 4] =
    [ModelVariant::Default, ModelVariant::Pessimistic, ModelVariant::Moderate1, ModelVariant::Moderate2];

pub fn random_spec(rng: &mut ChaCha8Rng) -> RegulatorSpec {
    let designs = Design::ETM;
    let design = designs[rng.random_range(0..designs.len())];
    let budget = if rng.random_bool(0.5) { rng.random_range(1..64) } else { rng.random_range(1..=65535) };
    let period = if rng.random_bool(0.5) { rng.random_range(50..5000) } else { rng.random_range(1..=65535) };
    let core = CoreType::ALL[rng.random_range(0..CoreType::ALL.len())];
    let mut s = RegulatorSpec::new(design, budget, period, core);
    if rng.random_bool(0.5) {
        s.model_variant = Some(VARIANTS[rng.random_range(0..VARIANTS.len())]);
    }
    if design == Design::PrUser && rng.random_bool(0.5) {
        s.user_split = Some(rng.random_range(0x1000..0x7fff_ffff_ffff));
    }
    s
}

fn simulate(model: &CoreModelConfig, regulator: RegulatorAttachment, op: MemOp) -> SystemConfig {
    let mut sys = SystemConfig::single(
        CoreSetup { model: model.clone(), workload: WorkloadSpec::synthetic(op), regulator },
        12_000,
        Some(model.lines_per_cycle(2000.0)),
    );
    sys.seed = 99;
    sys.record_fabric = true;
    sys
}

macro_rules! ensure_eq {
    ($a:expr, $b:expr, $what:expr) => {
        if $a != $b {
            return Err(format!("{} differs", $what));
        }
    };
}

pub enum Checked {
    /// Unrealizable model, or a scaled budget past 16 bits.
    NotBuildable,
    /// Checked; `true` when a whole-system run was compared too.
    Equal(bool),
}

pub fn check(spec: &RegulatorSpec, op: MemOp, seed: u64) -> Result<Checked, String> {
    let Ok(built) = build_config(spec) else { return Ok(Checked::NotBuildable) };
    let program = compile(spec, &CoreModelConfig::new(spec.core_type, 1500.0)).map_err(|e| e.to_string())?;
    let lifted = lift(&program).map_err(|e| e.to_string())?;
    ensure_eq!(lifted, built, "lifted config");
    ensure_eq!(parse_text(&to_text(&program)).map_err(|e| e.to_string())?, program, "text round trip");
    let json: RegisterProgram = serde_json::from_str(&to_json(&program)).map_err(|e| e.to_string())?;
    ensure_eq!(json, program, "json round trip");

    // fabric level: random pulses on the monitored signals, random fetches
    let a = Fabric::new(built.clone()).map_err(|e| e.to_string())?;
    let b = Fabric::new(lifted.clone()).map_err(|e| e.to_string())?;
    let (mut sa, mut sb) = (a.reset(), b.reset());
    let signals: Vec<_> = built.inputs.iter().flat_map(|i| i.monitored.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inp = CycleInputs::default();
    for cycle in 0..5000 {
        inp.clear();
        for &sig in &signals {
            if rng.random_bool(0.3) {
                inp.active_signals.push(sig);
            }
        }
        let user = rng.random_bool(0.7);
        inp.exec_mode = if user { ExecMode::User } else { ExecMode::Kernel };
        inp.instruction_fetch_addr = Some(if user { rng.random_range(0x1000..0x7fff_0000_0000) } else { KERNEL_PC });
        inp.core_idle = rng.random_bool(0.02);
        ensure_eq!(a.step(&mut sa, &inp), b.step(&mut sb, &inp), format!("fabric output at cycle {cycle}"));
        ensure_eq!(sa, sb, format!("fabric state at cycle {cycle}"));
    }

    // whole system, where the core has a signal profile for this model
    let mut model = CoreModelConfig::new(spec.core_type, 1500.0);
    model.variant = Some(spec.variant());
    if emit_profile(spec.core_type, spec.variant(), op).is_err() {
        return Ok(Checked::Equal(false));
    }
    let direct =
        run_system(&simulate(&model, RegulatorAttachment::Etm(spec.clone()), op)).map_err(|e| e.to_string())?;
    let raw = RegulatorAttachment::EtmRaw { config: lifted, period_cycles: Some(spec.period_cycles) };
    let via_program = run_system(&simulate(&model, raw, op)).map_err(|e| e.to_string())?;
    ensure_eq!(direct.cores[0].fabric_samples, via_program.cores[0].fabric_samples, "fabric trace");
    ensure_eq!(direct.cores[0].stats, via_program.cores[0].stats, "core stats");
    ensure_eq!(direct.cores[0].fabric_samples.len(), 12_000, "sample count");
    Ok(Checked::Equal(true))
}
