//! Single-bit, single-cycle transient faults on PE registers.
//!
//! A fault can be placed at three sites:
//!
//! * `Target`: the named register of the named PE is flipped in the middle of
//!   the clock edge at `cycle` (pipelined registers right after they latch,
//!   the accumulator right after it settles). The PE's own datapath and every
//!   downstream consumer see the corrupted value.
//! * `Source`: the upstream register feeding a target is flipped after the
//!   edge at `cycle` completes. The next edge copies the corrupted value into
//!   the target and then overwrites the source with its own clean input, so the
//!   upstream PE never observes the flip.
//! * `Boundary`: as `Source`, but the upstream is the mesh-edge input vector
//!   feeding PE(`row`, `col`).
//!
//! A `Target` fault at cycle `t` and its [`source_equivalent`] at `t - 1` leave
//! the mesh in identical states from the edge at `t` onwards.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryInputs, JobTiming, MeshConfig, MeshState, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    OperandA,
    OperandB,
    Accumulator,
    Propag,
    Valid,
}

impl SignalKind {
    pub const ALL: [SignalKind; 5] = [
        SignalKind::OperandA,
        SignalKind::OperandB,
        SignalKind::Accumulator,
        SignalKind::Propag,
        SignalKind::Valid,
    ];

    /// Number of flippable bits.
    pub fn width(self) -> u32 {
        match self {
            SignalKind::OperandA | SignalKind::OperandB => 8,
            SignalKind::Accumulator => 32,
            SignalKind::Propag | SignalKind::Valid => 1,
        }
    }

    /// True for registers that are copied PE-to-PE every edge.
    pub fn is_pipelined(self) -> bool {
        !matches!(self, SignalKind::Accumulator)
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::OperandA => "operand_a",
            SignalKind::OperandB => "operand_b",
            SignalKind::Accumulator => "accumulator",
            SignalKind::Propag => "propag",
            SignalKind::Valid => "valid",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "operand_a" | "a" | "weight" => Ok(SignalKind::OperandA),
            "operand_b" | "b" | "activation" => Ok(SignalKind::OperandB),
            "accumulator" | "acc" => Ok(SignalKind::Accumulator),
            "propag" | "propagate" => Ok(SignalKind::Propag),
            "valid" => Ok(SignalKind::Valid),
            other => Err(Error::Fault(format!("unknown signal '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    #[default]
    Target,
    Source,
    Boundary,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Site::Target => "target",
            Site::Source => "source",
            Site::Boundary => "boundary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub row: usize,
    pub col: usize,
    pub signal: SignalKind,
    pub bit: u32,
    pub cycle: u64,
    #[serde(default)]
    pub site: Site,
}

impl FaultSpec {
    pub fn target(row: usize, col: usize, signal: SignalKind, bit: u32, cycle: u64) -> Self {
        Self {
            row,
            col,
            signal,
            bit,
            cycle,
            site: Site::Target,
        }
    }

    fn mask(&self) -> u32 {
        1u32 << self.bit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub spec: FaultSpec,
    pub pre_value: i64,
    pub post_value: i64,
    pub applied_cycle: u64,
}

/// Checks coordinates, bit and cycle of `f` against a mesh and a job length.
pub fn validate(f: &FaultSpec, config: &MeshConfig, job_cycles: u64) -> Result<()> {
    let (rows, cols) = (config.rows, config.cols);
    if f.row >= rows || f.col >= cols {
        return Err(Error::Fault(format!(
            "PE({}, {}) outside {rows}x{cols} mesh",
            f.row, f.col
        )));
    }
    if f.bit >= f.signal.width() {
        return Err(Error::Fault(format!(
            "bit {} outside {} (width {})",
            f.bit,
            f.signal,
            f.signal.width()
        )));
    }
    if f.cycle >= job_cycles {
        return Err(Error::Fault(format!(
            "cycle {} outside job of {job_cycles} cycles",
            f.cycle
        )));
    }
    match f.site {
        Site::Target => {}
        Site::Source | Site::Boundary if !has_upstream(f.signal, config) => {
            return Err(Error::Fault(format!("{} has no upstream register", f.signal)));
        }
        Site::Source => {
            let has_downstream = match f.signal {
                SignalKind::OperandA => f.col + 1 < cols,
                _ => f.row + 1 < rows,
            };
            if !has_downstream {
                return Err(Error::Fault(format!(
                    "{} of PE({}, {}) feeds nothing",
                    f.signal, f.row, f.col
                )));
            }
        }
        Site::Boundary => {
            let on_edge = match f.signal {
                SignalKind::OperandA => f.col == 0,
                _ => f.row == 0,
            };
            if !on_edge {
                return Err(Error::Fault(format!(
                    "PE({}, {}) is not fed by a boundary {} input",
                    f.row, f.col, f.signal
                )));
            }
        }
    }
    Ok(())
}

fn has_upstream(signal: SignalKind, config: &MeshConfig) -> bool {
    match signal {
        SignalKind::Accumulator => false,
        SignalKind::Valid => config.valid_propagates,
        _ => true,
    }
}

fn flip_register(mesh: &mut MeshState, f: &FaultSpec) -> (i64, i64) {
    let mask = f.mask();
    let pe = mesh.pe_mut(f.row, f.col);
    match f.signal {
        SignalKind::OperandA => {
            let pre = pe.a_reg;
            pe.a_reg = (pre as u8 ^ mask as u8) as i8;
            (pre.into(), pe.a_reg.into())
        }
        SignalKind::OperandB => {
            let pre = pe.b_reg;
            pe.b_reg = (pre as u8 ^ mask as u8) as i8;
            (pre.into(), pe.b_reg.into())
        }
        SignalKind::Accumulator => {
            let pre = pe.acc;
            pe.acc = (pre as u32 ^ mask) as i32;
            (pre.into(), pe.acc.into())
        }
        SignalKind::Propag => {
            let pre = pe.propag;
            pe.propag = !pre;
            (pre.into(), pe.propag.into())
        }
        SignalKind::Valid => {
            let pre = pe.valid;
            pe.valid = !pre;
            (pre.into(), pe.valid.into())
        }
    }
}

fn check_active(mesh: &MeshState) -> Result<()> {
    if mesh.phase() == Phase::Idle {
        Err(Error::Fault("mesh is idle".into()))
    } else {
        Ok(())
    }
}

/// Flips the target register in place. Call while the mesh is inside the
/// edge at `fault.cycle` (see [`crate::mesh::Checkpoint`]).
pub fn apply_target(mesh: &mut MeshState, fault: &FaultSpec) -> Result<InjectionRecord> {
    check_active(mesh)?;
    if fault.site != Site::Target {
        return Err(Error::Fault("apply_target needs a target-site fault".into()));
    }
    validate(fault, mesh.config(), u64::MAX)?;
    if mesh.cycle() != fault.cycle {
        return Err(Error::Fault(format!(
            "fault scheduled for cycle {}, mesh is at {}",
            fault.cycle,
            mesh.cycle()
        )));
    }
    let (pre, post) = flip_register(mesh, fault);
    Ok(InjectionRecord {
        spec: *fault,
        pre_value: pre,
        post_value: post,
        applied_cycle: fault.cycle,
    })
}

/// Flips an upstream register once the edge at `fault.cycle` has completed.
pub fn apply_source(mesh: &mut MeshState, fault: &FaultSpec) -> Result<InjectionRecord> {
    check_active(mesh)?;
    if fault.site != Site::Source {
        return Err(Error::Fault("apply_source needs a source-site fault".into()));
    }
    validate(fault, mesh.config(), u64::MAX)?;
    if mesh.cycle() != fault.cycle + 1 {
        return Err(Error::Fault(format!(
            "source fault for cycle {} applied at mesh cycle {}",
            fault.cycle,
            mesh.cycle()
        )));
    }
    let (pre, post) = flip_register(mesh, fault);
    Ok(InjectionRecord {
        spec: *fault,
        pre_value: pre,
        post_value: post,
        applied_cycle: fault.cycle,
    })
}

/// Flips the edge input that PE(`row`, `col`) latches at cycle `fault.cycle + 1`.
pub fn apply_boundary(
    inputs: &mut BoundaryInputs,
    fault: &FaultSpec,
    latch_cycle: u64,
) -> Result<InjectionRecord> {
    if fault.site != Site::Boundary || fault.cycle + 1 != latch_cycle {
        return Err(Error::Fault("boundary fault applied at the wrong edge".into()));
    }
    let mask = fault.mask();
    let (pre, post): (i64, i64) = match fault.signal {
        SignalKind::OperandA => {
            let v = &mut inputs.a[fault.row];
            let pre = *v;
            *v = (pre as u8 ^ mask as u8) as i8;
            (pre.into(), (*v).into())
        }
        SignalKind::OperandB => {
            let v = &mut inputs.b[fault.col];
            let pre = *v;
            *v = (pre as u8 ^ mask as u8) as i8;
            (pre.into(), (*v).into())
        }
        SignalKind::Propag => {
            let v = &mut inputs.propag[fault.col];
            *v = !*v;
            ((!*v).into(), (*v).into())
        }
        SignalKind::Valid => {
            let v = &mut inputs.valid[fault.col];
            *v = !*v;
            ((!*v).into(), (*v).into())
        }
        SignalKind::Accumulator => {
            return Err(Error::Fault("accumulator has no boundary input".into()));
        }
    };
    Ok(InjectionRecord {
        spec: *fault,
        pre_value: pre,
        post_value: post,
        applied_cycle: fault.cycle,
    })
}

/// Maps a target fault to the equivalent flip of its upstream register one
/// cycle earlier. Registers without an upstream are returned unchanged.
pub fn source_equivalent(fault: &FaultSpec, config: &MeshConfig) -> Result<FaultSpec> {
    if fault.site != Site::Target {
        return Err(Error::Fault("source_equivalent expects a target-site fault".into()));
    }
    if !has_upstream(fault.signal, config) {
        return Ok(*fault);
    }
    let cycle = fault
        .cycle
        .checked_sub(1)
        .ok_or_else(|| Error::Fault("a cycle-0 fault has no earlier source cycle".into()))?;
    let mut out = FaultSpec { cycle, ..*fault };
    match fault.signal {
        SignalKind::OperandA if fault.col > 0 => {
            out.col -= 1;
            out.site = Site::Source;
        }
        SignalKind::OperandA => out.site = Site::Boundary,
        _ if fault.row > 0 => {
            out.row -= 1;
            out.site = Site::Source;
        }
        _ => out.site = Site::Boundary,
    }
    Ok(out)
}

/// Cycles a sampler may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleWindow {
    #[default]
    Compute,
    Job,
}

/// Draws a target fault uniformly over PEs × (signal, bit) pairs × cycles.
pub fn sample_with<R: Rng + ?Sized>(
    rng: &mut R,
    config: &MeshConfig,
    timing: &JobTiming,
    allowed: &[SignalKind],
    window: CycleWindow,
) -> Result<FaultSpec> {
    let signals: BTreeSet<SignalKind> = allowed.iter().copied().collect();
    if signals.is_empty() {
        return Err(Error::Fault("no signal kinds to sample from".into()));
    }
    let cycles = match window {
        CycleWindow::Compute => timing.compute_window(),
        CycleWindow::Job => 0..timing.total(),
    };
    if cycles.is_empty() {
        return Err(Error::Fault("job has no cycles to sample".into()));
    }
    let row = rng.gen_range(0..config.rows);
    let col = rng.gen_range(0..config.cols);
    let total_bits: u32 = signals.iter().map(|s| s.width()).sum();
    let mut pick = rng.gen_range(0..total_bits);
    let mut chosen = (SignalKind::Accumulator, 0);
    for s in &signals {
        if pick < s.width() {
            chosen = (*s, pick);
            break;
        }
        pick -= s.width();
    }
    let cycle = rng.gen_range(cycles);
    Ok(FaultSpec::target(row, col, chosen.0, chosen.1, cycle))
}

/// Seeded draw over the Compute window of a job of `job_cycles` cycles.
pub fn sample_uniform(
    rng_seed: u64,
    config: &MeshConfig,
    job_cycles: u64,
    allowed: &[SignalKind],
) -> Result<FaultSpec> {
    if job_cycles == 0 {
        return Err(Error::Fault("job_cycles must be positive".into()));
    }
    let dim = config.dim() as u64;
    let k = (job_cycles + 3)
        .checked_sub(5 * dim)
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Fault(format!("{job_cycles} cycles is shorter than any DIM{dim} job")))?;
    let timing = JobTiming::new(config.dim(), k as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_with(&mut rng, config, &timing, allowed, CycleWindow::Compute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{job_cycles, new_mesh, Checkpoint};

    fn active_mesh(dim: usize) -> MeshState {
        let mut m = new_mesh(MeshConfig::square(dim)).unwrap();
        m.begin_job();
        m
    }

    #[test]
    fn accumulator_flip_records_xor() {
        let mut m = active_mesh(2);
        m.pe_mut(0, 0).acc = 19;
        let rec = apply_target(&mut m, &FaultSpec::target(0, 0, SignalKind::Accumulator, 3, 0)).unwrap();
        assert_eq!(m.pe(0, 0).acc, 27);
        assert_eq!((rec.pre_value, rec.post_value), (19, 27));
        assert_eq!(rec.post_value, rec.pre_value ^ (1 << 3));
    }

    #[test]
    fn propag_flip_sets_bit() {
        let mut m = active_mesh(8);
        apply_target(&mut m, &FaultSpec::target(2, 5, SignalKind::Propag, 0, 0)).unwrap();
        assert!(m.pe(2, 5).propag);
    }

    #[test]
    fn sign_bit_of_operand() {
        let mut m = active_mesh(1);
        apply_target(&mut m, &FaultSpec::target(0, 0, SignalKind::OperandB, 7, 0)).unwrap();
        assert_eq!(m.pe(0, 0).b_reg, -128);
    }

    #[test]
    fn rejects_out_of_range() {
        let mut m = active_mesh(2);
        assert!(apply_target(&mut m, &FaultSpec::target(2, 0, SignalKind::Valid, 0, 0)).is_err());
        assert!(apply_target(&mut m, &FaultSpec::target(0, 0, SignalKind::Valid, 1, 0)).is_err());
        assert!(apply_target(&mut m, &FaultSpec::target(0, 0, SignalKind::OperandA, 8, 0)).is_err());
        assert!(apply_target(&mut m, &FaultSpec::target(0, 0, SignalKind::Accumulator, 31, 3)).is_err());
        let mut idle = new_mesh(MeshConfig::square(2)).unwrap();
        assert!(apply_target(&mut idle, &FaultSpec::target(0, 0, SignalKind::Valid, 0, 0)).is_err());
        let cfg = MeshConfig::square(2);
        let f = FaultSpec::target(0, 0, SignalKind::Valid, 0, job_cycles(2, 2));
        assert!(validate(&f, &cfg, job_cycles(2, 2)).is_err());
    }

    #[test]
    fn source_equivalent_mapping() {
        let cfg = MeshConfig::square(8);
        let t = 20;
        let f = FaultSpec::target(1, 0, SignalKind::OperandB, 4, t);
        let s = source_equivalent(&f, &cfg).unwrap();
        assert_eq!((s.row, s.col, s.cycle, s.site), (0, 0, t - 1, Site::Source));

        let f = FaultSpec::target(3, 0, SignalKind::OperandA, 2, t);
        let s = source_equivalent(&f, &cfg).unwrap();
        assert_eq!((s.row, s.col, s.cycle, s.site), (3, 0, t - 1, Site::Boundary));

        let f = FaultSpec::target(3, 4, SignalKind::OperandA, 2, t);
        let s = source_equivalent(&f, &cfg).unwrap();
        assert_eq!((s.row, s.col, s.site), (3, 3, Site::Source));

        let f = FaultSpec::target(4, 4, SignalKind::Accumulator, 9, t);
        assert_eq!(source_equivalent(&f, &cfg).unwrap(), f);

        let f = FaultSpec::target(4, 4, SignalKind::Valid, 0, t);
        assert_eq!(source_equivalent(&f, &cfg.with_valid_propagates(false)).unwrap(), f);
        assert_eq!(source_equivalent(&f, &cfg).unwrap().site, Site::Source);
    }

    #[test]
    fn sampler_domain_and_determinism() {
        let cfg = MeshConfig::square(8);
        let total = job_cycles(8, 8);
        let window = JobTiming::new(8, 8).compute_window();
        for seed in 0..200 {
            let f = sample_uniform(seed, &cfg, total, &[SignalKind::Accumulator]).unwrap();
            assert!(f.bit < 32);
            assert!(window.contains(&f.cycle));
            assert_eq!(f, sample_uniform(seed, &cfg, total, &[SignalKind::Accumulator]).unwrap());
        }
        assert!(sample_uniform(0, &cfg, 0, &[SignalKind::Valid]).is_err());
        assert!(sample_uniform(0, &cfg, total, &[]).is_err());
    }

    #[test]
    fn sampler_is_uniform_over_pes() {
        // Chi-square over the 4 PEs of a DIM2 mesh, 3 degrees of freedom.
        let cfg = MeshConfig::square(2);
        let timing = JobTiming::new(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            let f = sample_with(&mut rng, &cfg, &timing, &[SignalKind::Propag], CycleWindow::Compute).unwrap();
            counts[f.row * 2 + f.col] += 1;
        }
        let expected = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square with 3 dof.
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn sampler_weights_signals_by_bit_count() {
        let cfg = MeshConfig::square(4);
        let timing = JobTiming::new(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let acc = (0..n)
            .filter(|_| {
                sample_with(&mut rng, &cfg, &timing, &[SignalKind::Accumulator, SignalKind::Propag], CycleWindow::Compute)
                    .unwrap()
                    .signal
                    == SignalKind::Accumulator
            })
            .count();
        let frac = acc as f64 / n as f64;
        assert!((frac - 32.0 / 33.0).abs() < 0.01, "{frac}");
    }

    #[test]
    fn source_fault_applies_after_edge() {
        let mut m = active_mesh(2);
        let inp = BoundaryInputs::zeros(m.config());
        m.step(&inp).unwrap();
        let f = FaultSpec {
            site: Site::Source,
            ..FaultSpec::target(0, 0, SignalKind::OperandB, 0, 0)
        };
        apply_source(&mut m, &f).unwrap();
        m.step_with(&inp, |p, m| {
            if p == Checkpoint::Latched {
                assert_eq!(m.pe(1, 0).b_reg, 1);
                assert_eq!(m.pe(0, 0).b_reg, 0);
            }
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn json_shape() {
        let f = FaultSpec::target(1, 2, SignalKind::Propag, 0, 17);
        let v: serde_json::Value = serde_json::to_value(f).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"row":1,"col":2,"signal":"propag","bit":0,"cycle":17,"site":"target"})
        );
        let back: FaultSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
