//! Cycle-accurate output-stationary systolic mesh.
//!
//! Every PE owns two operand pipeline registers (`a_reg` moving right, `b_reg`
//! moving down), two pipelined control bits (`propag`, `valid`, both moving
//! down), the stationary accumulator `acc` and a `shift` register that forms the
//! vertical preload/flush chain. When `propag` is set the PE swaps: `acc` takes
//! the value arriving from the PE above and the old `acc` leaves through
//! `shift`. Otherwise `shift` passes the value from above straight through and
//! `acc` accumulates `a_reg * b_reg` when `valid` is set.
//!
//! One clock edge is split into two halves. `latch` moves every pipelined
//! register one hop; `settle` updates `acc`/`shift` from the freshly latched
//! operands. Both halves are written as a single in-place pass with the
//! register assignments in inverted order (downstream first), so each target
//! reads its source before the source itself is overwritten.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{self, FaultSpec, InjectionRecord, Site};
use crate::matrix::{MatI32, MatI8};

pub const INPUT_WIDTH: u32 = 8;
pub const ACC_WIDTH: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub rows: usize,
    pub cols: usize,
    pub input_width: u32,
    pub acc_width: u32,
    #[serde(default = "default_true")]
    pub valid_propagates: bool,
}

fn default_true() -> bool {
    true
}

impl MeshConfig {
    pub fn square(dim: usize) -> Self {
        Self {
            rows: dim,
            cols: dim,
            input_width: INPUT_WIDTH,
            acc_width: ACC_WIDTH,
            valid_propagates: true,
        }
    }

    pub fn with_valid_propagates(mut self, on: bool) -> Self {
        self.valid_propagates = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(format!(
                "mesh dimensions must be positive, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.rows != self.cols {
            return Err(Error::Config(format!(
                "mesh must be square, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.input_width != INPUT_WIDTH {
            return Err(Error::Config(format!(
                "input width must be {INPUT_WIDTH}, got {}",
                self.input_width
            )));
        }
        if self.acc_width != ACC_WIDTH {
            return Err(Error::Config(format!(
                "accumulator width must be {ACC_WIDTH}, got {}",
                self.acc_width
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.rows
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeState {
    /// Weight operand, flows left to right.
    pub a_reg: i8,
    /// Activation operand, flows top to bottom.
    pub b_reg: i8,
    pub acc: i32,
    /// Preload/flush chain towards the PE below.
    pub shift: i32,
    pub propag: bool,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Preload,
    Compute,
    Flush,
}

impl Phase {
    fn next(self) -> Phase {
        match self {
            Phase::Idle => Phase::Preload,
            Phase::Preload => Phase::Compute,
            Phase::Compute => Phase::Flush,
            Phase::Flush => Phase::Idle,
        }
    }
}

/// Values presented at the mesh edges for one clock edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryInputs {
    /// One per row, enters column 0.
    pub a: Vec<i8>,
    /// One per column, enters row 0.
    pub b: Vec<i8>,
    pub propag: Vec<bool>,
    pub valid: Vec<bool>,
    /// Preload data per column, enters row 0 through the shift chain.
    pub d: Vec<i32>,
}

impl BoundaryInputs {
    pub fn zeros(config: &MeshConfig) -> Self {
        Self {
            a: vec![0; config.rows],
            b: vec![0; config.cols],
            propag: vec![false; config.cols],
            valid: vec![false; config.cols],
            d: vec![0; config.cols],
        }
    }

    fn check(&self, config: &MeshConfig) -> Result<()> {
        let ok = self.a.len() == config.rows
            && self.b.len() == config.cols
            && self.propag.len() == config.cols
            && self.valid.len() == config.cols
            && self.d.len() == config.cols;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(
                "boundary input vectors do not match mesh size".into(),
            ))
        }
    }
}

/// Where inside a clock edge a probe runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checkpoint {
    /// Pipelined registers hold their new values; `acc`/`shift` not yet updated.
    Latched,
    /// The edge is complete; `cycle` has not been incremented yet.
    Settled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshState {
    config: MeshConfig,
    grid: Vec<PeState>,
    /// Fault-free copy of the valid pipeline, consulted when a flipped valid
    /// bit must not travel downstream.
    valid_shadow: Vec<bool>,
    cycle: u64,
    phase: Phase,
}

pub fn new_mesh(config: MeshConfig) -> Result<MeshState> {
    MeshState::new(config)
}

impl MeshState {
    pub fn new(config: MeshConfig) -> Result<Self> {
        config.validate()?;
        let n = config.rows * config.cols;
        Ok(Self {
            config,
            grid: vec![PeState::default(); n],
            valid_shadow: vec![false; n],
            cycle: 0,
            phase: Phase::Idle,
        })
    }

    pub fn config(&self) -> &MeshConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.config.cols + c
    }

    pub fn pe(&self, r: usize, c: usize) -> &PeState {
        &self.grid[self.idx(r, c)]
    }

    pub fn pe_mut(&mut self, r: usize, c: usize) -> &mut PeState {
        let i = self.idx(r, c);
        &mut self.grid[i]
    }

    pub fn grid(&self) -> &[PeState] {
        &self.grid
    }

    /// Zeroes every register, resets the cycle counter and enters Preload.
    pub fn begin_job(&mut self) {
        self.grid.fill(PeState::default());
        self.valid_shadow.fill(false);
        self.cycle = 0;
        self.phase = Phase::Preload;
    }

    /// Moves to the next phase in the Idle → Preload → Compute → Flush → Idle ring.
    pub fn advance_phase(&mut self) {
        self.phase = self.phase.next();
    }

    pub fn step(&mut self, inputs: &BoundaryInputs) -> Result<Vec<i32>> {
        self.step_with(inputs, |_, _| Ok(()))
    }

    /// Simulates one clock edge, calling `probe` between the two halves and
    /// once more after the edge completes. Returns the bottom-row `shift`
    /// values, which is where flushed results leave the mesh.
    pub fn step_with<F>(&mut self, inputs: &BoundaryInputs, mut probe: F) -> Result<Vec<i32>>
    where
        F: FnMut(Checkpoint, &mut MeshState) -> Result<()>,
    {
        if self.phase == Phase::Idle {
            return Err(Error::Idle);
        }
        inputs.check(&self.config)?;
        self.latch(inputs);
        probe(Checkpoint::Latched, self)?;
        self.settle(&inputs.d);
        probe(Checkpoint::Settled, self)?;
        self.cycle += 1;
        let last = self.config.rows - 1;
        Ok((0..self.config.cols).map(|c| self.pe(last, c).shift).collect())
    }

    fn latch(&mut self, inputs: &BoundaryInputs) {
        let (rows, cols) = (self.config.rows, self.config.cols);
        let follow_valid = self.config.valid_propagates;
        for r in 0..rows {
            for c in (1..cols).rev() {
                let src = self.grid[self.idx(r, c - 1)].a_reg;
                let i = self.idx(r, c);
                self.grid[i].a_reg = src;
            }
            let i = self.idx(r, 0);
            self.grid[i].a_reg = inputs.a[r];
        }
        for c in 0..cols {
            for r in (1..rows).rev() {
                let up = self.idx(r - 1, c);
                let here = self.idx(r, c);
                let src = self.grid[up];
                let shadow = self.valid_shadow[up];
                let pe = &mut self.grid[here];
                pe.b_reg = src.b_reg;
                pe.propag = src.propag;
                pe.valid = if follow_valid { src.valid } else { shadow };
                self.valid_shadow[here] = shadow;
            }
            let i = self.idx(0, c);
            let pe = &mut self.grid[i];
            pe.b_reg = inputs.b[c];
            pe.propag = inputs.propag[c];
            pe.valid = inputs.valid[c];
            self.valid_shadow[i] = inputs.valid[c];
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn settle(&mut self, d_in: &[i32]) {
        let (rows, cols) = (self.config.rows, self.config.cols);
        for r in (0..rows).rev() {
            for c in 0..cols {
                let from_above = if r == 0 {
                    d_in[c]
                } else {
                    self.grid[self.idx(r - 1, c)].shift
                };
                let i = self.idx(r, c);
                let pe = &mut self.grid[i];
                if pe.propag {
                    let out = pe.acc;
                    pe.acc = from_above;
                    pe.shift = out;
                } else {
                    if pe.valid {
                        pe.acc = pe
                            .acc
                            .wrapping_add(i32::from(pe.a_reg) * i32::from(pe.b_reg));
                    }
                    pe.shift = from_above;
                }
            }
        }
    }

    /// CSV lines `cycle,row,col,a_reg,b_reg,acc,propag,valid`, one per PE.
    pub fn trace_lines(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.grid.len());
        for r in 0..self.config.rows {
            for c in 0..self.config.cols {
                let pe = self.pe(r, c);
                out.push(format!(
                    "{},{},{},{},{},{},{},{}",
                    self.cycle,
                    r,
                    c,
                    pe.a_reg,
                    pe.b_reg,
                    pe.acc,
                    u8::from(pe.propag),
                    u8::from(pe.valid)
                ));
            }
        }
        out
    }
}

pub const TRACE_HEADER: &str = "cycle,row,col,a_reg,b_reg,acc,propag,valid";

/// One `C = A·B + D` job for a DIM×DIM mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileJob {
    pub a: MatI8,
    pub b: MatI8,
    pub d: MatI32,
}

impl TileJob {
    pub fn new(a: MatI8, b: MatI8, d: MatI32) -> Self {
        Self { a, b, d }
    }

    pub fn depth(&self) -> usize {
        self.a.cols()
    }

    pub fn validate(&self, config: &MeshConfig) -> Result<()> {
        let (rows, cols) = (config.rows, config.cols);
        let k = self.a.cols();
        if k == 0 {
            return Err(Error::Dimension("job depth K must be positive".into()));
        }
        if self.a.rows() != rows {
            return Err(Error::Dimension(format!(
                "A has {} rows, mesh has {rows}",
                self.a.rows()
            )));
        }
        if self.b.rows() != k || self.b.cols() != cols {
            return Err(Error::Dimension(format!(
                "B is {}x{}, expected {k}x{cols}",
                self.b.rows(),
                self.b.cols()
            )));
        }
        if self.d.rows() != rows || self.d.cols() != cols {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {rows}x{cols}",
                self.d.rows(),
                self.d.cols()
            )));
        }
        Ok(())
    }
}

/// Phase lengths of one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobTiming {
    pub dim: usize,
    pub k: usize,
    pub preload: u64,
    pub compute: u64,
    pub flush: u64,
}

impl JobTiming {
    pub fn new(dim: usize, k: usize) -> Self {
        let d = dim as u64;
        Self {
            dim,
            k,
            preload: d,
            compute: k as u64 + 2 * d - 2,
            flush: 2 * d - 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.preload + self.compute + self.flush
    }

    pub fn compute_window(&self) -> Range<u64> {
        self.preload..self.preload + self.compute
    }

    pub fn phase_at(&self, cycle: u64) -> Phase {
        if cycle < self.preload {
            Phase::Preload
        } else if cycle < self.preload + self.compute {
            Phase::Compute
        } else if cycle < self.total() {
            Phase::Flush
        } else {
            Phase::Idle
        }
    }

    /// Absolute cycle at which PE(`row`, `col`) consumes term `k`.
    pub fn mac_cycle(&self, row: usize, col: usize, k: usize) -> u64 {
        self.preload + (k + row + col) as u64
    }

    /// Cycles during which PE(`row`, `col`) performs its MACs.
    pub fn mac_window(&self, row: usize, col: usize) -> Range<u64> {
        self.mac_cycle(row, col, 0)..self.mac_cycle(row, col, self.k)
    }

    /// Absolute cycle of the flush step that hands row `row` to the bottom edge.
    pub fn flush_exit_cycle(&self, row: usize) -> u64 {
        self.preload + self.compute + (2 * self.dim - 2 - row) as u64
    }

    /// Absolute cycle at which PE(`row`, ·) swaps its result into the shift chain.
    pub fn flush_swap_cycle(&self, row: usize) -> u64 {
        self.preload + self.compute + row as u64
    }
}

/// Closed-form job length: `DIM + (K + 2·DIM − 2) + (2·DIM − 1)`.
pub fn job_cycles(dim: usize, k: usize) -> u64 {
    JobTiming::new(dim, k).total()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileOutcome {
    pub c: MatI32,
    pub cycles_used: u64,
    pub injections: Vec<InjectionRecord>,
}

/// Runs a complete preload/compute/flush job, applying `faults` at their cycles.
pub fn matmul_tile(mesh: &mut MeshState, job: &TileJob, faults: &[FaultSpec]) -> Result<TileOutcome> {
    run_job(mesh, job, faults, |_| {})
}

/// As [`matmul_tile`], calling `observe` after every clock edge.
pub fn run_job<O>(
    mesh: &mut MeshState,
    job: &TileJob,
    faults: &[FaultSpec],
    mut observe: O,
) -> Result<TileOutcome>
where
    O: FnMut(&MeshState),
{
    let config = *mesh.config();
    job.validate(&config)?;
    let dim = config.dim();
    let timing = JobTiming::new(dim, job.depth());
    let total = timing.total();
    for f in faults {
        fault::validate(f, &config, total)?;
    }

    mesh.begin_job();
    let mut c = MatI32::zeros(dim, dim);
    let mut injections = Vec::new();

    for s in 0..total {
        let phase = timing.phase_at(s);
        while mesh.phase() != phase {
            mesh.advance_phase();
        }
        let mut inputs = boundary_for(job, &timing, s);
        for f in faults
            .iter()
            .filter(|f| f.site == Site::Boundary && f.cycle + 1 == s)
        {
            injections.push(fault::apply_boundary(&mut inputs, f, s)?);
        }

        let out = mesh.step_with(&inputs, |point, m| {
            for f in faults.iter().filter(|f| f.site == Site::Target && f.cycle == s) {
                let due = match point {
                    Checkpoint::Latched => f.signal.is_pipelined(),
                    Checkpoint::Settled => !f.signal.is_pipelined(),
                };
                if due {
                    injections.push(fault::apply_target(m, f)?);
                }
            }
            Ok(())
        })?;

        for f in faults.iter().filter(|f| f.site == Site::Source && f.cycle == s) {
            injections.push(fault::apply_source(mesh, f)?);
        }

        if phase == Phase::Flush {
            let f = (s - timing.preload - timing.compute) as usize;
            if f + 1 >= dim {
                let row = 2 * dim - 2 - f;
                for (col, v) in out.into_iter().enumerate() {
                    c.set(row, col, v);
                }
            }
        }
        observe(mesh);
    }
    mesh.advance_phase();
    debug_assert_eq!(mesh.phase(), Phase::Idle);

    Ok(TileOutcome {
        c,
        cycles_used: total,
        injections,
    })
}

/// Edge stimulus for absolute cycle `s` of `job`.
fn boundary_for(job: &TileJob, timing: &JobTiming, s: u64) -> BoundaryInputs {
    let dim = timing.dim;
    let k = timing.k;
    let mut inp = BoundaryInputs {
        a: vec![0; dim],
        b: vec![0; dim],
        propag: vec![false; dim],
        valid: vec![false; dim],
        d: vec![0; dim],
    };
    match timing.phase_at(s) {
        Phase::Preload => {
            // D goes in bottom row first so that row i ends up holding D[i].
            let p = s as usize;
            for col in 0..dim {
                inp.propag[col] = true;
                inp.d[col] = job.d.get(dim - 1 - p, col);
            }
        }
        Phase::Compute => {
            let t = (s - timing.preload) as usize;
            for row in 0..dim {
                if let Some(kk) = t.checked_sub(row).filter(|&kk| kk < k) {
                    inp.a[row] = job.a.get(row, kk);
                }
            }
            for col in 0..dim {
                if let Some(kk) = t.checked_sub(col).filter(|&kk| kk < k) {
                    inp.b[col] = job.b.get(kk, col);
                    inp.valid[col] = true;
                }
            }
        }
        Phase::Flush => {
            let f = (s - timing.preload - timing.compute) as usize;
            inp.propag.fill(f < dim);
        }
        Phase::Idle => {}
    }
    inp
}

/// Wrapping triple-loop `A·B + D`.
pub fn reference_matmul(a: &MatI8, b: &MatI8, d: &MatI32) -> Result<MatI32> {
    if a.cols() != b.rows() || d.rows() != a.rows() || d.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "cannot compute {}x{} · {}x{} + {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            d.rows(),
            d.cols()
        )));
    }
    let mut c = d.clone();
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let av = i32::from(a.get(i, k));
            if av == 0 {
                continue;
            }
            for j in 0..b.cols() {
                let v = c.get(i, j).wrapping_add(av * i32::from(b.get(k, j)));
                c.set(i, j, v);
            }
        }
    }
    Ok(c)
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Idle => "idle",
            Phase::Preload => "preload",
            Phase::Compute => "compute",
            Phase::Flush => "flush",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_i8(rng: &mut ChaCha8Rng, r: usize, c: usize) -> MatI8 {
        Matrix::from_fn(r, c, |_, _| rng.gen())
    }

    #[test]
    fn new_mesh_is_zeroed_and_idle() {
        let m = new_mesh(MeshConfig::square(8)).unwrap();
        assert_eq!(m.grid().len(), 64);
        assert!(m.grid().iter().all(|pe| *pe == PeState::default()));
        assert_eq!(m.phase(), Phase::Idle);
        assert_eq!(m.cycle(), 0);
        assert!(new_mesh(MeshConfig::square(1)).is_ok());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = MeshConfig::square(4);
        c.cols = 8;
        assert!(matches!(new_mesh(c), Err(Error::Config(_))));
        assert!(new_mesh(MeshConfig::square(0)).is_err());
        let mut c = MeshConfig::square(4);
        c.input_width = 16;
        assert!(new_mesh(c).is_err());
        let mut c = MeshConfig::square(4);
        c.acc_width = 64;
        assert!(new_mesh(c).is_err());
    }

    #[test]
    fn step_requires_active_phase() {
        let mut m = new_mesh(MeshConfig::square(2)).unwrap();
        let inp = BoundaryInputs::zeros(m.config());
        assert!(matches!(m.step(&inp), Err(Error::Idle)));
    }

    #[test]
    fn zero_step_only_advances_cycle() {
        let mut m = new_mesh(MeshConfig::square(4)).unwrap();
        m.begin_job();
        let before = m.grid().to_vec();
        m.step(&BoundaryInputs::zeros(m.config())).unwrap();
        assert_eq!(m.grid(), &before[..]);
        assert_eq!(m.cycle(), 1);
    }

    #[test]
    fn single_mac() {
        let mut m = new_mesh(MeshConfig::square(1)).unwrap();
        m.begin_job();
        m.advance_phase();
        let inp = BoundaryInputs {
            a: vec![3],
            b: vec![5],
            propag: vec![false],
            valid: vec![true],
            d: vec![0],
        };
        m.step(&inp).unwrap();
        assert_eq!(m.pe(0, 0).acc, 15);
    }

    #[test]
    fn identity_times_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::from_fn(4, 4, |r, c| i8::from(r == c));
        let b = rand_i8(&mut rng, 4, 4);
        let mut m = new_mesh(MeshConfig::square(4)).unwrap();
        let out = matmul_tile(&mut m, &TileJob::new(a, b.clone(), MatI32::zeros(4, 4)), &[]).unwrap();
        assert_eq!(out.c, b.map(i32::from));
    }

    #[test]
    fn identity_plus_bias() {
        let a = Matrix::from_rows(&[vec![1i8, 0], vec![0, 1]]).unwrap();
        let b = Matrix::from_rows(&[vec![5i8, 6], vec![7, 8]]).unwrap();
        let d = Matrix::from_rows(&[vec![1i32, 1], vec![1, 1]]).unwrap();
        let mut m = new_mesh(MeshConfig::square(2)).unwrap();
        let out = matmul_tile(&mut m, &TileJob::new(a, b, d), &[]).unwrap();
        assert_eq!(out.c, Matrix::from_rows(&[vec![6, 7], vec![8, 9]]).unwrap());
    }

    #[test]
    fn dim8_k8_takes_45_cycles() {
        assert_eq!(job_cycles(8, 8), 45);
        let mut m = new_mesh(MeshConfig::square(8)).unwrap();
        let job = TileJob::new(MatI8::zeros(8, 8), MatI8::zeros(8, 8), MatI32::zeros(8, 8));
        let mut steps = 0u64;
        let out = run_job(&mut m, &job, &[], |_| steps += 1).unwrap();
        assert_eq!(out.cycles_used, 45);
        assert_eq!(steps, 45);
        assert_eq!(m.phase(), Phase::Idle);
    }

    #[test]
    fn job_shape_errors() {
        let mut m = new_mesh(MeshConfig::square(2)).unwrap();
        let job = TileJob::new(MatI8::zeros(2, 3), MatI8::zeros(2, 2), MatI32::zeros(2, 2));
        assert!(matches!(matmul_tile(&mut m, &job, &[]), Err(Error::Dimension(_))));
        let job = TileJob::new(MatI8::zeros(2, 2), MatI8::zeros(2, 2), MatI32::zeros(1, 2));
        assert!(matmul_tile(&mut m, &job, &[]).is_err());
    }

    #[test]
    fn accumulator_wraps() {
        let k = 4;
        let a = MatI8::from_fn(1, k, |_, _| 127);
        let b = MatI8::from_fn(k, 1, |_, _| 127);
        let d = Matrix::from_vec(1, 1, vec![i32::MAX]).unwrap();
        let mut m = new_mesh(MeshConfig::square(1)).unwrap();
        let out = matmul_tile(&mut m, &TileJob::new(a, b, d), &[]).unwrap();
        assert_eq!(out.c.get(0, 0), i32::MAX.wrapping_add(4 * 127 * 127));
    }

    #[test]
    fn trace_has_one_line_per_pe() {
        let mut m = new_mesh(MeshConfig::square(3)).unwrap();
        m.begin_job();
        let lines = m.trace_lines();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "0,0,0,0,0,0,0,0");
        assert_eq!(TRACE_HEADER.split(',').count(), lines[0].split(',').count());
    }
}
