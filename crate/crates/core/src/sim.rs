//! Brute-force unitary and density-matrix simulation.
//!
//! Ideal mode alternates exact free propagators with instantaneous pulse
//! unitaries and is the verification backend for every compiled module.
//! Finite mode replaces each soft pulse by a shaped radiofrequency field
//! applied in the single transmitter rotating frame, integrated with
//! piecewise-constant Hamiltonians and exact per-slice exponentials, so
//! the result stays exactly unitary and off-resonance effects
//! (Bloch-Siegert phase pushes, ghost compensation, strong coupling)
//! emerge from the dynamics rather than from closed-form corrections.

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{
    free_hamiltonian_with, hard_pulse, partial_trace_single, selective_pulse, single_spin_operator,
    Axis, CouplingModel, Operator, SpinSystem,
};
use crate::error::{Error, Result};
use crate::scalar::{cmod, Real};
use crate::schedule::{EventKind, PulseEvent, PulseProgram, Schedule};

/// Simulation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimMode {
    #[default]
    Ideal,
    Finite,
}

/// Envelope shape applied to every soft pulse in finite mode. Samples are
/// uniform in time: `(amplitude_hz, phase_rad)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPulseShape<T: Real> {
    pub duration_s: T,
    pub envelope: Vec<(T, T)>,
}

impl<T: Real> SoftPulseShape<T> {
    pub fn new(duration_s: T, envelope: Vec<(T, T)>) -> Result<Self> {
        if envelope.is_empty() {
            return Err(Error::InvalidPulse("empty envelope".into()));
        }
        if duration_s <= T::zero() || !duration_s.is_finite() {
            return Err(Error::InvalidPulse("duration must be positive".into()));
        }
        for (a, p) in &envelope {
            if !a.is_finite() || !p.is_finite() {
                return Err(Error::InvalidPulse("non-finite envelope sample".into()));
            }
        }
        Ok(Self {
            duration_s,
            envelope,
        })
    }

    /// Time-symmetric truncated-Gaussian envelope calibrated so that the
    /// on-resonance flip angle is pi. Samples are taken at interval
    /// midpoints; the truncation is at three standard deviations.
    pub fn gaussian_pi(duration_s: T, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::InvalidPulse("need at least one sample".into()));
        }
        let n = T::from_int(n_samples as i64);
        let sigma = duration_s / T::from_int(6);
        let center = duration_s * T::of(0.5);
        let dt = duration_s / n;
        let mut shape: Vec<T> = (0..n_samples)
            .map(|i| {
                let t = (T::from_int(i as i64) + T::of(0.5)) * dt;
                let x = (t - center) / sigma;
                (-x * x * T::of(0.5)).exp()
            })
            .collect();
        // Flip angle is sum 2 pi A_i dt; scale for a total of pi.
        let total: T = shape.iter().fold(T::zero(), |a, &b| a + b);
        let scale = T::one() / (T::from_int(2) * dt * total);
        for s in shape.iter_mut() {
            *s *= scale;
        }
        Self::new(duration_s, shape.into_iter().map(|a| (a, T::zero())).collect())
    }

    pub fn max_amplitude_hz(&self) -> T {
        self.envelope
            .iter()
            .fold(T::zero(), |m, (a, _)| m.max(a.abs()))
    }

    /// True when the sample list equals its own reverse within `tol`.
    pub fn is_time_symmetric(&self, tol: T) -> bool {
        let n = self.envelope.len();
        for i in 0..n / 2 {
            let (a1, p1) = self.envelope[i];
            let (a2, p2) = self.envelope[n - 1 - i];
            if (a1 - a2).abs() > tol || (p1 - p2).abs() > tol {
                return false;
            }
        }
        true
    }

    /// Sample (amplitude_hz, phase_rad) at a time offset from pulse start.
    fn sample(&self, t_from_start: T) -> (T, T) {
        let n = self.envelope.len();
        let frac = t_from_start / self.duration_s * T::from_int(n as i64);
        let mut idx = frac.floor().to_f64() as i64;
        if idx < 0 {
            idx = 0;
        }
        if idx >= n as i64 {
            idx = n as i64 - 1;
        }
        self.envelope[idx as usize]
    }

    /// Render as the two-column text table with the header carrying
    /// duration and carrier offset.
    pub fn to_table(&self, carrier_offset_hz: T) -> String {
        let mut out = format!("duration={} offset={}\n", self.duration_s, carrier_offset_hz);
        for (a, p) in &self.envelope {
            out.push_str(&format!("{} {}\n", a, crate::schedule::rad_to_deg(*p)));
        }
        out
    }

    /// Parse the text table; returns the shape and the carrier offset from
    /// the header.
    pub fn from_table(text: &str) -> Result<(Self, T)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidPulse("empty table".into()))?;
        let mut duration = None;
        let mut offset = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("duration=") {
                duration = v.parse::<T>().ok();
            } else if let Some(v) = tok.strip_prefix("offset=") {
                offset = v.parse::<T>().ok();
            }
        }
        let (duration, offset) = match (duration, offset) {
            (Some(d), Some(o)) => (d, o),
            _ => {
                return Err(Error::InvalidPulse(
                    "header must carry duration=<s> offset=<hz>".into(),
                ))
            }
        };
        let mut envelope = Vec::new();
        for line in lines {
            let mut cols = line.split_whitespace();
            let amp = cols
                .next()
                .and_then(|s| s.parse::<T>().ok())
                .ok_or_else(|| Error::InvalidPulse(format!("bad row `{line}`")))?;
            let ph_deg = cols
                .next()
                .and_then(|s| s.parse::<T>().ok())
                .ok_or_else(|| Error::InvalidPulse(format!("bad row `{line}`")))?;
            envelope.push((amp, crate::schedule::deg_to_rad(ph_deg)));
        }
        Ok((Self::new(duration, envelope)?, offset))
    }
}

/// A shaped pulse bound to a schedule event: the template envelope plus
/// carrier placement. All spins feel the field; `target_spin` records the
/// nominal selectivity only.
#[derive(Debug, Clone)]
pub struct ShapedPulse<T: Real> {
    pub shape: SoftPulseShape<T>,
    pub carrier_offset_hz: T,
    pub target_spin: usize,
}

/// Options controlling [`simulate_unitary`].
#[derive(Debug, Clone)]
pub struct SimOptions<T: Real> {
    pub mode: SimMode,
    /// Finite-mode slice width; `None` picks
    /// `1 / (50 * max(|delta|_max, amplitude_max))`.
    pub dt_s: Option<T>,
    /// Overrides the system's coupling model when set.
    pub coupling_override: Option<CouplingModel>,
    /// Fractional flip-angle error applied to every soft pulse.
    pub miscalibration: T,
    /// Whether ghost events in the schedule are applied (finite mode).
    pub ghost_compensation: bool,
    /// Envelope bound to soft pulses in finite mode.
    pub soft_pulse: Option<SoftPulseShape<T>>,
}

impl<T: Real> Default for SimOptions<T> {
    fn default() -> Self {
        Self::ideal()
    }
}

impl<T: Real> SimOptions<T> {
    pub fn ideal() -> Self {
        Self {
            mode: SimMode::Ideal,
            dt_s: None,
            coupling_override: None,
            miscalibration: T::zero(),
            ghost_compensation: true,
            soft_pulse: None,
        }
    }

    pub fn finite(shape: SoftPulseShape<T>) -> Self {
        Self {
            mode: SimMode::Finite,
            dt_s: None,
            coupling_override: None,
            miscalibration: T::zero(),
            ghost_compensation: true,
            soft_pulse: Some(shape),
        }
    }

    pub fn with_dt(mut self, dt_s: T) -> Self {
        self.dt_s = Some(dt_s);
        self
    }

    pub fn with_miscalibration(mut self, eps: T) -> Self {
        self.miscalibration = eps;
        self
    }

    pub fn with_ghosts(mut self, on: bool) -> Self {
        self.ghost_compensation = on;
        self
    }

    pub fn with_coupling(mut self, model: CouplingModel) -> Self {
        self.coupling_override = Some(model);
        self
    }

    fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt_s {
            if dt <= T::zero() || !dt.is_finite() {
                return Err(Error::InvalidSimOptions("dt must be positive".into()));
            }
        }
        if self.miscalibration.abs() >= T::of(0.5) {
            return Err(Error::InvalidSimOptions(
                "|miscalibration| must be below 0.5".into(),
            ));
        }
        Ok(())
    }
}

/// Exact free evolution for one Hamiltonian, caching the diagonal or the
/// eigendecomposition.
struct FreeProp<T: Real> {
    dim: usize,
    diag: Option<Vec<T>>,
    eig: Option<(Vec<T>, Operator<T>)>,
}

impl<T: Real> FreeProp<T> {
    fn new(h: &Operator<T>) -> Self {
        if h.is_exactly_diagonal() {
            Self {
                dim: h.dim(),
                diag: Some((0..h.dim()).map(|i| h.entry(i, i).re).collect()),
                eig: None,
            }
        } else {
            Self {
                dim: h.dim(),
                diag: None,
                eig: Some(h.hermitian_eig()),
            }
        }
    }

    fn at(&self, t: T) -> Operator<T> {
        if t == T::zero() {
            return Operator::identity(self.dim);
        }
        if let Some(diag) = &self.diag {
            let entries: Vec<Complex<T>> = diag
                .iter()
                .map(|&e| {
                    let ph = -e * t;
                    Complex::new(ph.cos(), ph.sin())
                })
                .collect();
            return Operator::diagonal(&entries);
        }
        let (vals, vecs) = self.eig.as_ref().unwrap();
        let entries: Vec<Complex<T>> = vals
            .iter()
            .map(|&e| {
                let ph = -e * t;
                Complex::new(ph.cos(), ph.sin())
            })
            .collect();
        &(vecs * &Operator::diagonal(&entries)) * &vecs.adjoint()
    }
}

/// Simulate the total unitary of a pulse program.
pub fn simulate_unitary<T: Real>(
    program: &PulseProgram<T>,
    system: &SpinSystem<T>,
    opts: &SimOptions<T>,
) -> Result<Operator<T>> {
    opts.validate()?;
    let mut u = Operator::identity(system.dim());
    for block in &program.blocks {
        let ub = match opts.mode {
            SimMode::Ideal => simulate_block_ideal(block, system, opts)?,
            SimMode::Finite => simulate_block_finite(block, system, opts)?,
        };
        u = &ub * &u;
    }
    Ok(u)
}

/// Convenience wrapper for a single schedule.
pub fn simulate_schedule<T: Real>(
    schedule: &Schedule<T>,
    system: &SpinSystem<T>,
    opts: &SimOptions<T>,
) -> Result<Operator<T>> {
    simulate_unitary(&PulseProgram::single(schedule.clone()), system, opts)
}

fn model_of<T: Real>(system: &SpinSystem<T>, opts: &SimOptions<T>) -> CouplingModel {
    opts.coupling_override.unwrap_or(system.coupling_model())
}

fn simulate_block_ideal<T: Real>(
    block: &Schedule<T>,
    system: &SpinSystem<T>,
    opts: &SimOptions<T>,
) -> Result<Operator<T>> {
    let h = free_hamiltonian_with(system, model_of(system, opts));
    let free = FreeProp::new(&h);
    let mut u = Operator::identity(system.dim());
    let mut t_prev = T::zero();
    let pi_scaled = T::pi() * (T::one() + opts.miscalibration);

    for ev in block.events() {
        let t_ev = block.to_seconds(ev.time);
        if t_ev > t_prev {
            u = &free.at(t_ev - t_prev) * &u;
            t_prev = t_ev;
        }
        match &ev.kind {
            EventKind::SoftPi { spin, .. } => {
                let p = selective_pulse(system, *spin, pi_scaled, ev.phase_rad())?;
                u = &p * &u;
            }
            EventKind::Hard { .. } => {
                let p = hard_pulse(system, ev.angle_rad(), ev.phase_rad());
                u = &p * &u;
            }
            EventKind::Ghost { .. } => {}
        }
    }
    let t_end = block.duration_seconds();
    if t_end > t_prev {
        u = &free.at(t_end - t_prev) * &u;
    }
    Ok(u)
}

/// A soft or ghost field active over a time window of the block.
struct ActiveField<T: Real> {
    start: T,
    center: T,
    end: T,
    carrier_offset_hz: T,
    event_phase_rad: T,
    shape: SoftPulseShape<T>,
    amp_scale: T,
}

impl<T: Real> ActiveField<T> {
    /// RF Hamiltonian contribution at absolute block time `t`:
    /// amplitude and total phase of the field.
    fn field_at(&self, t: T) -> (T, T) {
        let (amp, env_phase) = self.shape.sample(t - self.start);
        let phase = self.event_phase_rad
            + env_phase
            + T::two_pi() * self.carrier_offset_hz * (t - self.center);
        (amp * self.amp_scale, phase)
    }
}

fn simulate_block_finite<T: Real>(
    block: &Schedule<T>,
    system: &SpinSystem<T>,
    opts: &SimOptions<T>,
) -> Result<Operator<T>> {
    let shape = opts.soft_pulse.as_ref().ok_or_else(|| {
        Error::InvalidSimOptions("finite mode requires a soft-pulse envelope".into())
    })?;

    // Bind shaped fields to soft and ghost events.
    let mut fields: Vec<ActiveField<T>> = Vec::new();
    let half = shape.duration_s * T::of(0.5);
    for ev in block.events() {
        let center = block.to_seconds(ev.time);
        match &ev.kind {
            EventKind::SoftPi { spin, .. } => {
                system.check_spin(*spin)?;
                fields.push(ActiveField {
                    start: center - half,
                    center,
                    end: center + half,
                    carrier_offset_hz: system.delta_hz(*spin),
                    event_phase_rad: ev.phase_rad(),
                    shape: shape.clone(),
                    amp_scale: T::one() + opts.miscalibration,
                });
            }
            EventKind::Ghost { offset_hz, .. } => {
                if !opts.ghost_compensation {
                    continue;
                }
                // Ghosts inherit the phase of the coincident soft pulse.
                let partner_phase = block
                    .events()
                    .iter()
                    .find(|e| e.time == ev.time && matches!(e.kind, EventKind::SoftPi { .. }))
                    .map(|e| e.phase_rad())
                    .ok_or_else(|| {
                        Error::InvalidSchedule(format!(
                            "ghost at t={}tau has no coincident soft pulse",
                            ev.time
                        ))
                    })?;
                fields.push(ActiveField {
                    start: center - half,
                    center,
                    end: center + half,
                    carrier_offset_hz: *offset_hz,
                    event_phase_rad: partner_phase,
                    shape: shape.clone(),
                    amp_scale: T::one() + opts.miscalibration,
                });
            }
            EventKind::Hard { .. } => {}
        }
    }

    let t_total = block.duration_seconds();
    for f in &fields {
        if f.start < -T::OPERATOR_TOL || f.end > t_total + T::OPERATOR_TOL {
            return Err(Error::InvalidSchedule(format!(
                "finite pulse centered at {} s extends outside the block",
                f.center
            )));
        }
    }
    // Soft pulses on different spins must not overlap in time (TSETSE);
    // coincident soft+ghost pairs are the one exception.
    for (i, a) in fields.iter().enumerate() {
        for b in fields[i + 1..].iter() {
            let overlap = a.start < b.end && b.start < a.end;
            if overlap && a.center != b.center {
                return Err(Error::InvalidSchedule(
                    "overlapping finite soft pulses (TSETSE)".into(),
                ));
            }
        }
    }

    // Step guard and default.
    let mut fscale = system.max_frequency_hz();
    fscale = fscale.max(shape.max_amplitude_hz());
    for f in &fields {
        fscale = fscale.max(f.carrier_offset_hz.abs());
    }
    let dt = match opts.dt_s {
        Some(dt) => {
            if fscale > T::zero() && dt > T::one() / (T::from_int(10) * fscale) {
                return Err(Error::InvalidSimOptions(format!(
                    "dt too coarse for the fastest frequency scale ({} Hz)",
                    fscale
                )));
            }
            dt
        }
        None => {
            let denom = T::from_int(50) * fscale;
            if denom <= T::zero() {
                // Static system with no drive: a single slice suffices.
                t_total.max(T::one())
            } else {
                T::one() / denom
            }
        }
    };

    let h_free = free_hamiltonian_with(system, model_of(system, opts));
    let free = FreeProp::new(&h_free);
    let fx = total_axis_operator(system, Axis::X);
    let fy = total_axis_operator(system, Axis::Y);

    // Breakpoints: block edges, field edges, hard-pulse times.
    let mut cuts: Vec<T> = vec![T::zero(), t_total];
    for f in &fields {
        cuts.push(f.start.max(T::zero()));
        cuts.push(f.end.min(t_total));
    }
    let mut hards: Vec<(T, &PulseEvent<T>)> = Vec::new();
    for ev in block.events() {
        if matches!(ev.kind, EventKind::Hard { .. }) {
            let t = block.to_seconds(ev.time);
            cuts.push(t);
            hards.push((t, ev));
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() <= T::zero());

    let mut u = Operator::identity(system.dim());
    let eps = dt * T::of(1e-9);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Hard pulses fire at the left edge of their span.
        for (t, ev) in &hards {
            if (*t - a).abs() <= eps {
                u = &hard_pulse(system, ev.angle_rad(), ev.phase_rad()) * &u;
            }
        }
        if b <= a {
            continue;
        }
        let mid = (a + b) * T::of(0.5);
        let active: Vec<&ActiveField<T>> = fields
            .iter()
            .filter(|f| f.start <= mid && mid < f.end)
            .collect();
        if active.is_empty() {
            u = &free.at(b - a) * &u;
            continue;
        }
        // Segment at the envelope-sample boundaries of the active field
        // (coincident ghosts share the grid), so every slice sees a
        // constant amplitude and the midpoint rule stays second order.
        let lead = active[0];
        let n_env = lead.shape.envelope.len();
        let env_dt = lead.shape.duration_s / T::from_int(n_env as i64);
        let mut seg_bounds: Vec<T> = vec![a];
        let mut i_env = ((a - lead.start) / env_dt).floor().to_f64() as i64 + 1;
        loop {
            let t = lead.start + env_dt * T::from_int(i_env);
            if t >= b {
                break;
            }
            if t > a {
                seg_bounds.push(t);
            }
            i_env += 1;
        }
        seg_bounds.push(b);
        for seg in seg_bounds.windows(2) {
            let (sa, sb) = (seg[0], seg[1]);
            if sb <= sa {
                continue;
            }
            let n_slices = ((sb - sa) / dt).ceil().to_f64() as usize;
            let n_slices = n_slices.max(1);
            let dts = (sb - sa) / T::from_int(n_slices as i64);
            for s in 0..n_slices {
                let tm = sa + (T::from_int(s as i64) + T::of(0.5)) * dts;
                let mut h = h_free.clone();
                for f in &active {
                    let (amp, phase) = f.field_at(tm);
                    if amp == T::zero() {
                        continue;
                    }
                    let w1 = T::two_pi() * amp;
                    let cx = Complex::new(w1 * phase.cos(), T::zero());
                    let cy = Complex::new(w1 * phase.sin(), T::zero());
                    h = &h + &(&fx.scale(cx) + &fy.scale(cy));
                }
                let (vals, vecs) = h.hermitian_eig();
                let entries: Vec<Complex<T>> = vals
                    .iter()
                    .map(|&e| {
                        let ph = -e * dts;
                        Complex::new(ph.cos(), ph.sin())
                    })
                    .collect();
                let ustep = &(&vecs * &Operator::diagonal(&entries)) * &vecs.adjoint();
                u = &ustep * &u;
            }
        }
    }
    // Hard pulse exactly at the end of the block.
    for (t, ev) in &hards {
        if (*t - t_total).abs() <= eps && *t > cuts[cuts.len() - 2] {
            u = &hard_pulse(system, ev.angle_rad(), ev.phase_rad()) * &u;
        }
    }
    // Thousands of slice products accumulate rounding; polish the result
    // back onto the unitary group.
    Ok(u.reunitarize())
}

/// Sum of one axis operator over all spins.
fn total_axis_operator<T: Real>(system: &SpinSystem<T>, axis: Axis) -> Operator<T> {
    let mut f = Operator::zeros(system.dim());
    for k in 0..system.n_spins() {
        f = &f + &single_spin_operator(system, k, axis).expect("valid spin");
    }
    f
}

// ---------------------------------------------------------------------------
// Density states

/// Dense density matrix with the usual physicality checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState<T: Real> {
    mat: DMatrix<Complex<T>>,
}

impl<T: Real> DensityState<T> {
    /// Validate hermiticity, unit trace and positive semidefiniteness
    /// (eigenvalues above `-1e-10` at f64 precision).
    pub fn new(mat: DMatrix<Complex<T>>) -> Result<Self> {
        let op = Operator::from_matrix(mat.clone());
        if !op.is_hermitian(T::OPERATOR_TOL) {
            return Err(Error::InvalidState("not hermitian".into()));
        }
        let tr = op.trace();
        if (tr.re - T::one()).abs() > T::OPERATOR_TOL || tr.im.abs() > T::OPERATOR_TOL {
            return Err(Error::InvalidState(format!(
                "trace {} != 1",
                tr.re
            )));
        }
        let (vals, _) = op.hermitian_eig();
        let floor = -T::OPERATOR_TOL * T::of(100.0);
        if vals.iter().any(|&v| v < floor) {
            return Err(Error::InvalidState("negative eigenvalue".into()));
        }
        Ok(Self { mat })
    }

    pub fn matrix(&self) -> &DMatrix<Complex<T>> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn maximally_mixed(n_spins: usize) -> Self {
        let dim = 1usize << n_spins;
        let w = T::one() / T::from_int(dim as i64);
        Self {
            mat: DMatrix::from_diagonal_element(dim, dim, Complex::new(w, T::zero())),
        }
    }

    /// Product state of spins pointing along the given Bloch vectors
    /// (pure when the vectors are unit length).
    pub fn product_from_bloch(vectors: &[[T; 3]]) -> Self {
        let half = T::of(0.5);
        let mut mat = DMatrix::from_element(1, 1, Complex::new(T::one(), T::zero()));
        for v in vectors {
            let [x, y, z] = *v;
            let rho = DMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex::new(half * (T::one() + z), T::zero()),
                    Complex::new(half * x, -half * y),
                    Complex::new(half * x, half * y),
                    Complex::new(half * (T::one() - z), T::zero()),
                ],
            );
            mat = mat.kronecker(&rho);
        }
        Self { mat }
    }

    /// All spins along +z (the pure state every experiment here starts
    /// from).
    pub fn z_polarized(n_spins: usize) -> Self {
        Self::product_from_bloch(&vec![[T::zero(), T::zero(), T::one()]; n_spins])
    }

    pub fn expectation(&self, op: &Operator<T>) -> Complex<T> {
        (&Operator::from_matrix(self.mat.clone()) * op).trace()
    }

    pub fn purity(&self) -> T {
        (&self.mat * &self.mat).trace().re
    }

    /// Reduced 2x2 state of one spin.
    pub fn reduced_spin(&self, n_spins: usize, spin: usize) -> DMatrix<Complex<T>> {
        partial_trace_single(&self.mat, n_spins, spin)
    }
}

/// Conjugate a state by a unitary: `U rho U^dag`, revalidated.
pub fn evolve_density<T: Real>(rho: &DensityState<T>, u: &Operator<T>) -> Result<DensityState<T>> {
    if rho.dim() != u.dim() {
        return Err(Error::DimensionMismatch(rho.dim(), u.dim()));
    }
    let m = u.matrix() * &rho.mat * u.matrix().adjoint();
    DensityState::new(m)
}

/// Trace distance of two 2x2 hermitian matrices.
pub fn trace_distance_2x2<T: Real>(
    a: &DMatrix<Complex<T>>,
    b: &DMatrix<Complex<T>>,
) -> T {
    let d00 = (a[(0, 0)] - b[(0, 0)]).re;
    let d11 = (a[(1, 1)] - b[(1, 1)]).re;
    let off = a[(0, 1)] - b[(0, 1)];
    let mean = (d00 + d11) * T::of(0.5);
    let radius = (((d00 - d11) * T::of(0.5)).powi(2) + cmod(off).powi(2)).sqrt();
    (((mean + radius).abs()) + ((mean - radius).abs())) * T::of(0.5)
}

/// Random pure product state, one uniformly random Bloch direction per
/// spin.
pub fn random_product_state<T: Real>(rng: &mut impl Rng, n_spins: usize) -> DensityState<T> {
    let mut vs = Vec::with_capacity(n_spins);
    for _ in 0..n_spins {
        let z: f64 = 1.0 - 2.0 * rng.gen::<f64>();
        let phi: f64 = std::f64::consts::TAU * rng.gen::<f64>();
        let r = (1.0 - z * z).sqrt();
        vs.push([T::of(r * phi.cos()), T::of(r * phi.sin()), T::of(z)]);
    }
    DensityState::product_from_bloch(&vs)
}

/// Maximum trace distance between a spectator's input and output reduced
/// states over `trials` random pure product inputs. Deterministic for a
/// given seed.
pub fn spectator_deviation<T: Real>(
    program: &PulseProgram<T>,
    system: &SpinSystem<T>,
    opts: &SimOptions<T>,
    spectator: usize,
    trials: usize,
    seed: u64,
) -> Result<T> {
    system.check_spin(spectator)?;
    let u = simulate_unitary(program, system, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = system.n_spins();
    let mut worst = T::zero();
    for _ in 0..trials {
        let rho = random_product_state::<T>(&mut rng, n);
        let before = rho.reduced_spin(n, spectator);
        let after = evolve_density(&rho, &u)?.reduced_spin(n, spectator);
        worst = worst.max(trace_distance_2x2(&before, &after));
    }
    Ok(worst)
}
