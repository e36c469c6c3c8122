//! Pulse-schedule intermediate representation and the toggling-frame
//! oracle that proves which Hamiltonian terms survive a schedule.
//!
//! Event times are exact rationals in units of the grid step `tau`;
//! seconds only appear when a schedule is handed to the simulator. Pulse
//! phases and angles are stored in degrees, the unit of the text format,
//! so that serialization round-trips bit-exactly; radians are available
//! through accessors.

use num_rational::Ratio;

use crate::algebra::SpinSystem;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Exact event time in units of `tau`.
pub type TauTime = Ratio<i64>;

/// What a pulse event does.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind<T: Real> {
    /// Multiplet-selective pi pulse on one spin about the transverse axis
    /// at the given azimuth.
    SoftPi { spin: usize, phase_deg: T },
    /// Non-selective pulse rotating every spin.
    Hard { angle_deg: T, phase_deg: T },
    /// Compensation pulse mirroring a coincident soft pulse, with its
    /// carrier placed at `offset_hz` from the transmitter. Ideal-mode
    /// simulation ignores ghosts; they matter only for finite pulses.
    Ghost { mirror_of: usize, offset_hz: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseEvent<T: Real> {
    pub time: TauTime,
    pub kind: EventKind<T>,
}

impl<T: Real> PulseEvent<T> {
    pub fn soft_pi(time: TauTime, spin: usize, phase_deg: T) -> Self {
        Self {
            time,
            kind: EventKind::SoftPi { spin, phase_deg },
        }
    }

    pub fn hard(time: TauTime, angle_deg: T, phase_deg: T) -> Self {
        Self {
            time,
            kind: EventKind::Hard {
                angle_deg,
                phase_deg,
            },
        }
    }

    pub fn ghost(time: TauTime, mirror_of: usize, offset_hz: T) -> Self {
        Self {
            time,
            kind: EventKind::Ghost {
                mirror_of,
                offset_hz,
            },
        }
    }

    /// Rotation angle in radians (pi for soft pulses).
    pub fn angle_rad(&self) -> T {
        match &self.kind {
            EventKind::SoftPi { .. } | EventKind::Ghost { .. } => T::pi(),
            EventKind::Hard { angle_deg, .. } => deg_to_rad(*angle_deg),
        }
    }

    pub fn phase_rad(&self) -> T {
        match &self.kind {
            EventKind::SoftPi { phase_deg, .. } | EventKind::Hard { phase_deg, .. } => {
                deg_to_rad(*phase_deg)
            }
            EventKind::Ghost { .. } => T::zero(),
        }
    }
}

pub fn deg_to_rad<T: Real>(deg: T) -> T {
    deg * T::pi() / T::from_int(180)
}

pub fn rad_to_deg<T: Real>(rad: T) -> T {
    rad * T::from_int(180) / T::pi()
}

/// A time-ordered list of pulse events on a single dyadic `tau` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T: Real> {
    tau_s: T,
    duration_tau: i64,
    events: Vec<PulseEvent<T>>,
    non_refocusing: bool,
}

impl<T: Real> Schedule<T> {
    /// Build a schedule; events are stably sorted by time. Zero-duration
    /// segments (instantaneous pulses only) use `tau_s = 0`.
    pub fn new(tau_s: T, duration_tau: i64, events: Vec<PulseEvent<T>>) -> Result<Self> {
        if duration_tau < 0 {
            return Err(Error::InvalidSchedule("negative duration".into()));
        }
        if tau_s < T::zero() || !tau_s.is_finite() {
            return Err(Error::InvalidSchedule("tau must be finite and >= 0".into()));
        }
        if tau_s == T::zero() && duration_tau != 0 {
            return Err(Error::InvalidSchedule(
                "tau = 0 only valid for zero-duration pulse segments".into(),
            ));
        }
        let mut events = events;
        events.sort_by(|a, b| a.time.cmp(&b.time));
        Ok(Self {
            tau_s,
            duration_tau,
            events,
            non_refocusing: false,
        })
    }

    /// Zero-duration segment holding instantaneous pulses only.
    pub fn pulse_only(events: Vec<PulseEvent<T>>) -> Result<Self> {
        let mut s = Self::new(T::zero(), 0, events)?;
        s.non_refocusing = true;
        Ok(s)
    }

    /// Mark the schedule as intentionally leaving odd pulse counts.
    pub fn flag_non_refocusing(mut self) -> Self {
        self.non_refocusing = true;
        self
    }

    pub fn tau_s(&self) -> T {
        self.tau_s
    }

    pub fn duration_tau(&self) -> i64 {
        self.duration_tau
    }

    pub fn duration_seconds(&self) -> T {
        self.tau_s * T::from_int(self.duration_tau)
    }

    pub fn events(&self) -> &[PulseEvent<T>] {
        &self.events
    }

    pub fn is_non_refocusing(&self) -> bool {
        self.non_refocusing
    }

    pub fn push(&mut self, ev: PulseEvent<T>) {
        self.events.push(ev);
        self.events.sort_by(|a, b| a.time.cmp(&b.time));
    }

    /// Seconds corresponding to a grid time.
    pub fn to_seconds(&self, t: TauTime) -> T {
        self.tau_s * ratio_to_scalar(t)
    }

    pub fn soft_pulse_count(&self, spin: usize) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::SoftPi { spin: s, .. } if s == spin))
            .count()
    }

    /// Phase list (radians) of the soft pulses on one spin, in time order.
    pub fn phase_cycle(&self, spin: usize) -> Vec<T> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::SoftPi { spin: s, phase_deg } if *s == spin => {
                    Some(deg_to_rad(*phase_deg))
                }
                _ => None,
            })
            .collect()
    }

    /// Times of soft pulses on one spin.
    pub fn soft_times(&self, spin: usize) -> Vec<TauTime> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::SoftPi { spin: s, .. } if s == spin => Some(e.time),
                _ => None,
            })
            .collect()
    }
}

pub fn ratio_to_scalar<T: Real>(r: TauTime) -> T {
    T::from_int(*r.numer()) / T::from_int(*r.denom())
}

/// A train of schedules executed back to back. Single modules compile to
/// one block; composites (O2, gate assemblies) concatenate blocks, each on
/// its own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseProgram<T: Real> {
    pub blocks: Vec<Schedule<T>>,
    /// Free-form annotation carried through the text format (`# target =`
    /// line); the compiler stores the declared target here.
    pub annotation: Option<String>,
}

impl<T: Real> PulseProgram<T> {
    pub fn single(block: Schedule<T>) -> Self {
        Self {
            blocks: vec![block],
            annotation: None,
        }
    }

    pub fn with_annotation(mut self, a: impl Into<String>) -> Self {
        self.annotation = Some(a.into());
        self
    }

    pub fn total_duration_seconds(&self) -> T {
        self.blocks
            .iter()
            .fold(T::zero(), |acc, b| acc + b.duration_seconds())
    }

    /// Concatenate the blocks of several programs.
    pub fn concat(programs: impl IntoIterator<Item = PulseProgram<T>>) -> Self {
        let mut blocks = Vec::new();
        for p in programs {
            blocks.extend(p.blocks);
        }
        Self {
            blocks,
            annotation: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Validation

/// A broken schedule invariant. Violations are data, not errors: a
/// schedule can be inspected and repaired.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Soft pi pulses on two different spins at the same time (TSETSE).
    TsetseOverlap {
        time: TauTime,
        spin_a: usize,
        spin_b: usize,
    },
    /// The same spin pulsed twice at the same instant.
    DuplicateSoftPulse { time: TauTime, spin: usize },
    /// Odd soft-pulse count on a spin of a schedule not flagged
    /// non-refocusing: the spin ends up inverted.
    OddSoftCount { spin: usize, count: usize },
    /// Event scheduled outside [0, duration].
    OutOfRange { time: TauTime },
    /// Ghost event with no coincident soft pulse to mirror.
    OrphanGhost { time: TauTime },
    /// Soft or ghost event referencing a spin the system does not have.
    UnknownSpin { time: TauTime, spin: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::TsetseOverlap { time, spin_a, spin_b } => write!(
                f,
                "TSETSE violation at t={time}tau: simultaneous soft pulses on spins {spin_a} and {spin_b}"
            ),
            Violation::DuplicateSoftPulse { time, spin } => {
                write!(f, "duplicate soft pulse on spin {spin} at t={time}tau")
            }
            Violation::OddSoftCount { spin, count } => write!(
                f,
                "odd-echo warning: spin {spin} receives {count} soft pi pulses (schedule not flagged non-refocusing)"
            ),
            Violation::OutOfRange { time } => {
                write!(f, "event at t={time}tau outside schedule duration")
            }
            Violation::OrphanGhost { time } => {
                write!(f, "ghost event at t={time}tau mirrors no soft pulse")
            }
            Violation::UnknownSpin { time, spin } => {
                write!(f, "event at t={time}tau targets unknown spin {spin}")
            }
        }
    }
}

/// Check every schedule invariant; an empty list means the schedule is
/// valid. `n_spins` bounds the spin indices.
pub fn validate<T: Real>(schedule: &Schedule<T>, n_spins: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let dur = Ratio::from_integer(schedule.duration_tau());

    for ev in schedule.events() {
        if ev.time < Ratio::from_integer(0) || ev.time > dur {
            out.push(Violation::OutOfRange { time: ev.time });
        }
        match ev.kind {
            EventKind::SoftPi { spin, .. } | EventKind::Ghost { mirror_of: spin, .. } => {
                if spin >= n_spins {
                    out.push(Violation::UnknownSpin {
                        time: ev.time,
                        spin,
                    });
                }
            }
            EventKind::Hard { .. } => {}
        }
    }

    // Same-time soft pulses.
    let softs: Vec<(TauTime, usize)> = schedule
        .events()
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::SoftPi { spin, .. } => Some((e.time, spin)),
            _ => None,
        })
        .collect();
    for (i, (t, a)) in softs.iter().enumerate() {
        for (u, b) in softs[i + 1..].iter() {
            if t == u {
                if a == b {
                    out.push(Violation::DuplicateSoftPulse { time: *t, spin: *a });
                } else {
                    out.push(Violation::TsetseOverlap {
                        time: *t,
                        spin_a: *a,
                        spin_b: *b,
                    });
                }
            }
        }
    }

    if !schedule.is_non_refocusing() {
        for spin in 0..n_spins {
            let count = schedule.soft_pulse_count(spin);
            if count % 2 == 1 {
                out.push(Violation::OddSoftCount { spin, count });
            }
        }
    }

    // Ghosts must ride on a simultaneous soft pulse.
    for ev in schedule.events() {
        if let EventKind::Ghost { .. } = ev.kind {
            let partnered = schedule
                .events()
                .iter()
                .any(|e| e.time == ev.time && matches!(e.kind, EventKind::SoftPi { .. }));
            if !partnered {
                out.push(Violation::OrphanGhost { time: ev.time });
            }
        }
    }

    out
}

/// Validate every block of a program.
pub fn validate_program<T: Real>(program: &PulseProgram<T>, n_spins: usize) -> Vec<Violation> {
    program
        .blocks
        .iter()
        .flat_map(|b| validate(b, n_spins))
        .collect()
}

// ---------------------------------------------------------------------------
// MLEV-4 phases

/// Phase prescription for a spin's train of soft pi pulses, in radians:
/// the four-pulse block (+y, +y, -y, -y), repeated blockwise; a two-pulse
/// train uses (+y, +y). The count must be even.
pub fn mlev4_phases<T: Real>(count: usize) -> Result<Vec<T>> {
    if count % 2 != 0 {
        return Err(Error::OddPhaseCount(count));
    }
    Ok((0..count).map(|i| deg_to_rad(mlev4_phase_deg(i))).collect())
}

/// Degree form of the MLEV-4 phase pattern, indexed position mod 4.
pub fn mlev4_phase_deg<T: Real>(index: usize) -> T {
    match index % 4 {
        0 | 1 => T::from_int(90),
        _ => T::from_int(270),
    }
}

// ---------------------------------------------------------------------------
// Toggling-frame analysis

/// A Hamiltonian term tracked by the toggling analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamTerm {
    Shift(usize),
    Coupling(usize, usize),
}

/// Piecewise-constant sign history of one term over the schedule.
#[derive(Debug, Clone)]
pub struct TermProfile {
    pub term: HamTerm,
    /// Times at which the sign flips, ascending.
    pub flips: Vec<TauTime>,
    /// Net signed evolution time in units of tau.
    pub net_tau: TauTime,
}

impl TermProfile {
    pub fn is_refocused(&self) -> bool {
        self.net_tau == Ratio::from_integer(0)
    }

    pub fn is_fully_active(&self, duration_tau: i64) -> bool {
        self.net_tau == Ratio::from_integer(duration_tau)
    }

    pub fn net_seconds<T: Real>(&self, tau_s: T) -> T {
        tau_s * ratio_to_scalar(self.net_tau)
    }

    /// Sign of the term just after a grid time (+1/-1).
    pub fn sign_at(&self, t: TauTime) -> i32 {
        let flips_before = self.flips.iter().filter(|&&ft| ft <= t).count();
        if flips_before % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

/// Sign histories and net evolution times for every shift and coupling
/// term of a system under a schedule of pi pulses.
#[derive(Debug, Clone)]
pub struct ToggleProfile<T: Real> {
    pub tau_s: T,
    pub duration_tau: i64,
    pub terms: Vec<TermProfile>,
}

impl<T: Real> ToggleProfile<T> {
    pub fn term(&self, term: HamTerm) -> &TermProfile {
        self.terms
            .iter()
            .find(|p| {
                p.term == term
                    || matches!(
                        (p.term, term),
                        (HamTerm::Coupling(a, b), HamTerm::Coupling(c, d)) if a == d && b == c
                    )
            })
            .expect("term tracked")
    }

    /// The effective Hamiltonian implied by the sign integrals: every term
    /// weighted by net signed time / total duration. Zero for
    /// zero-duration schedules.
    pub fn effective_hamiltonian(&self, system: &SpinSystem<T>) -> crate::algebra::Operator<T> {
        use crate::algebra::{term_to_operator, Axis, PauliFactor, ProductOperatorTerm};
        let n = system.n_spins();
        let mut h = crate::algebra::Operator::zeros(system.dim());
        if self.duration_tau == 0 {
            return h;
        }
        let total = T::from_int(self.duration_tau);
        for p in &self.terms {
            let weight = ratio_to_scalar::<T>(p.net_tau) / total;
            if weight == T::zero() {
                continue;
            }
            let term = match p.term {
                HamTerm::Shift(k) => ProductOperatorTerm::single(
                    n,
                    k,
                    Axis::Z,
                    T::two_pi() * system.delta_hz(k) * weight,
                ),
                HamTerm::Coupling(k, l) => {
                    let mut f = vec![PauliFactor::E; n];
                    f[k] = PauliFactor::Iz;
                    f[l] = PauliFactor::Iz;
                    ProductOperatorTerm::new(T::two_pi() * system.j_hz(k, l) * weight, f)
                }
            };
            h = &h + &term_to_operator(system, &term).expect("well-formed term");
        }
        h
    }

    /// One `(term, net_tau, status)` row per tracked term, for reports.
    pub fn rows(&self, system: &SpinSystem<T>) -> Vec<(String, TauTime, &'static str)> {
        self.terms
            .iter()
            .map(|p| {
                let name = match p.term {
                    HamTerm::Shift(k) => format!("shift {}", system.label(k)),
                    HamTerm::Coupling(k, l) => {
                        format!("J({},{})", system.label(k), system.label(l))
                    }
                };
                let status = if p.is_refocused() {
                    "refocused"
                } else if p.is_fully_active(self.duration_tau) {
                    "active"
                } else {
                    "partial"
                };
                (name, p.net_tau, status)
            })
            .collect()
    }
}

/// Track the sign of every shift and coupling term through the schedule:
/// a shift flips at every pi pulse touching its spin, a coupling flips
/// when exactly one of its two spins is flipped (hard pulses flip both,
/// leaving couplings untouched). Net signed times are exact rationals.
///
/// Only applicable when every hard pulse is a pi rotation; anything else
/// must go through brute-force simulation.
pub fn toggling_analysis<T: Real>(
    schedule: &Schedule<T>,
    system: &SpinSystem<T>,
) -> Result<ToggleProfile<T>> {
    let n = system.n_spins();
    for ev in schedule.events() {
        match &ev.kind {
            EventKind::Hard { angle_deg, .. } => {
                let dev = (*angle_deg - T::from_int(180)).abs();
                if dev > T::of(1e-9) {
                    return Err(Error::AnalyzerInapplicable {
                        angle_deg: angle_deg.to_f64(),
                        time: ev.time.to_string(),
                    });
                }
            }
            EventKind::SoftPi { spin, .. } => system.check_spin(*spin)?,
            EventKind::Ghost { .. } => {}
        }
    }

    let duration = Ratio::from_integer(schedule.duration_tau());
    let mut terms = Vec::new();

    let flips_for = |touches: &dyn Fn(&EventKind<T>) -> bool| -> Vec<TauTime> {
        schedule
            .events()
            .iter()
            .filter(|e| touches(&e.kind))
            .map(|e| e.time)
            .collect()
    };

    for k in 0..n {
        let flips = flips_for(&|kind: &EventKind<T>| match kind {
            EventKind::SoftPi { spin, .. } => *spin == k,
            EventKind::Hard { .. } => true,
            EventKind::Ghost { .. } => false,
        });
        terms.push(TermProfile {
            term: HamTerm::Shift(k),
            net_tau: net_signed_time(&flips, duration),
            flips,
        });
    }
    for k in 0..n {
        for l in (k + 1)..n {
            let flips = flips_for(&|kind: &EventKind<T>| match kind {
                EventKind::SoftPi { spin, .. } => *spin == k || *spin == l,
                _ => false,
            });
            terms.push(TermProfile {
                term: HamTerm::Coupling(k, l),
                net_tau: net_signed_time(&flips, duration),
                flips,
            });
        }
    }

    Ok(ToggleProfile {
        tau_s: schedule.tau_s(),
        duration_tau: schedule.duration_tau(),
        terms,
    })
}

fn net_signed_time(flips: &[TauTime], duration: TauTime) -> TauTime {
    let mut net = Ratio::from_integer(0);
    let mut sign = 1i64;
    let mut prev = Ratio::from_integer(0);
    for &t in flips {
        let t = t.min(duration);
        net += (t - prev) * Ratio::from_integer(sign);
        sign = -sign;
        prev = t;
    }
    net += (duration - prev) * Ratio::from_integer(sign);
    net
}

/// Append ghost pulses mirroring every soft pulse on `source_spin`, with
/// the carrier offset of the soft pulse reflected about `protected_spin`'s
/// resonance: `2 delta_protected - delta_source`.
pub fn add_ghost_pulses<T: Real>(
    schedule: &mut Schedule<T>,
    system: &SpinSystem<T>,
    source_spin: usize,
    protected_spin: usize,
) -> Result<()> {
    system.check_spin(source_spin)?;
    system.check_spin(protected_spin)?;
    let offset = T::from_int(2) * system.delta_hz(protected_spin) - system.delta_hz(source_spin);
    let times = schedule.soft_times(source_spin);
    for t in times {
        schedule.push(PulseEvent::ghost(t, source_spin, offset));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Text format

fn format_ratio(r: TauTime) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn parse_ratio(s: &str) -> Option<TauTime> {
    if let Some((n, d)) = s.split_once('/') {
        Some(Ratio::new(n.parse().ok()?, d.parse().ok()?))
    } else {
        Some(Ratio::from_integer(s.parse().ok()?))
    }
}

/// Render a program in the line-oriented schedule format. One block:
///
/// ```text
/// tau=<seconds> duration=<k>tau
/// t=<r>tau soft_pi spin=<label> phase=<deg>
/// t=<r>tau hard angle=<deg> phase=<deg>
/// t=<r>tau ghost mirror=<label> offset=<hz>
/// ```
///
/// Composite programs repeat the header for each block. The format
/// round-trips bit-exactly.
pub fn write_program<T: Real>(program: &PulseProgram<T>, system: &SpinSystem<T>) -> String {
    let mut out = String::new();
    if let Some(a) = &program.annotation {
        out.push_str(&format!("# target = {a}\n"));
    }
    for block in &program.blocks {
        out.push_str(&format!(
            "tau={} duration={}tau\n",
            block.tau_s(),
            block.duration_tau()
        ));
        if block.is_non_refocusing() && block.duration_tau() != 0 {
            out.push_str("non_refocusing\n");
        }
        for ev in block.events() {
            let t = format_ratio(ev.time);
            match &ev.kind {
                EventKind::SoftPi { spin, phase_deg } => {
                    out.push_str(&format!(
                        "t={t}tau soft_pi spin={} phase={}\n",
                        system.label(*spin),
                        phase_deg
                    ));
                }
                EventKind::Hard {
                    angle_deg,
                    phase_deg,
                } => {
                    out.push_str(&format!(
                        "t={t}tau hard angle={angle_deg} phase={phase_deg}\n"
                    ));
                }
                EventKind::Ghost { mirror_of, offset_hz } => {
                    out.push_str(&format!(
                        "t={t}tau ghost mirror={} offset={}\n",
                        system.label(*mirror_of),
                        offset_hz
                    ));
                }
            }
        }
    }
    out
}

pub fn write_schedule<T: Real>(schedule: &Schedule<T>, system: &SpinSystem<T>) -> String {
    write_program(
        &PulseProgram {
            blocks: vec![schedule.clone()],
            annotation: None,
        },
        system,
    )
}

struct LineCtx<'a> {
    no: usize,
    body: &'a str,
}

fn field<'a>(ctx: &LineCtx<'a>, tok: &'a str, key: &str) -> Result<&'a str> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| Error::ScheduleParse {
            line: ctx.no,
            msg: format!("expected `{key}=...`, got `{tok}` in `{}`", ctx.body),
        })
}

fn parse_scalar<T: Real>(ctx: &LineCtx<'_>, s: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| Error::ScheduleParse {
        line: ctx.no,
        msg: format!("bad number `{s}`"),
    })
}

/// Parse the schedule text format. Spin labels resolve against `system`.
pub fn parse_program<T: Real>(text: &str, system: &SpinSystem<T>) -> Result<PulseProgram<T>> {
    let mut blocks: Vec<Schedule<T>> = Vec::new();
    let mut annotation = None;
    let mut current: Option<(T, i64, Vec<PulseEvent<T>>, bool)> = None;

    let finish = |cur: Option<(T, i64, Vec<PulseEvent<T>>, bool)>,
                  blocks: &mut Vec<Schedule<T>>|
     -> Result<()> {
        if let Some((tau, dur, evs, nonref)) = cur {
            let mut s = Schedule::new(tau, dur, evs)?;
            if nonref || s.tau_s() == T::zero() {
                s = s.flag_non_refocusing();
            }
            blocks.push(s);
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let ctx = LineCtx {
            no: idx + 1,
            body: raw,
        };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(a) = rest.trim().strip_prefix("target =") {
                annotation = Some(a.trim().to_string());
            }
            continue;
        }
        if line.starts_with("tau=") {
            finish(current.take(), &mut blocks)?;
            let mut toks = line.split_whitespace();
            let tau: T = parse_scalar(&ctx, field(&ctx, toks.next().unwrap(), "tau")?)?;
            let dur_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
                line: ctx.no,
                msg: "missing duration".into(),
            })?;
            let dur_str = field(&ctx, dur_tok, "duration")?;
            let dur_str = dur_str
                .strip_suffix("tau")
                .ok_or_else(|| Error::ScheduleParse {
                    line: ctx.no,
                    msg: "duration must end in `tau`".into(),
                })?;
            let dur: i64 = dur_str.parse().map_err(|_| Error::ScheduleParse {
                line: ctx.no,
                msg: format!("bad duration `{dur_str}`"),
            })?;
            current = Some((tau, dur, Vec::new(), false));
            continue;
        }
        if line == "non_refocusing" {
            match &mut current {
                Some((_, _, _, nonref)) => *nonref = true,
                None => {
                    return Err(Error::ScheduleParse {
                        line: ctx.no,
                        msg: "flag before any block header".into(),
                    })
                }
            }
            continue;
        }
        let (_, _, events, _) = current.as_mut().ok_or_else(|| Error::ScheduleParse {
            line: ctx.no,
            msg: "event before block header (`tau=... duration=...`)".into(),
        })?;
        let mut toks = line.split_whitespace();
        let t_tok = toks.next().unwrap();
        let t_str = field(&ctx, t_tok, "t")?;
        let t_str = t_str
            .strip_suffix("tau")
            .ok_or_else(|| Error::ScheduleParse {
                line: ctx.no,
                msg: "event time must end in `tau`".into(),
            })?;
        let time = parse_ratio(t_str).ok_or_else(|| Error::ScheduleParse {
            line: ctx.no,
            msg: format!("bad time `{t_str}`"),
        })?;
        let kind_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
            line: ctx.no,
            msg: "missing event kind".into(),
        })?;
        let ev = match kind_tok {
            "soft_pi" => {
                let spin_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
                    line: ctx.no,
                    msg: "missing spin".into(),
                })?;
                let label = field(&ctx, spin_tok, "spin")?;
                let spin = system.index_of(label).map_err(|_| Error::ScheduleParse {
                    line: ctx.no,
                    msg: format!("unknown spin label `{label}`"),
                })?;
                let phase_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
                    line: ctx.no,
                    msg: "missing phase".into(),
                })?;
                let phase: T = parse_scalar(&ctx, field(&ctx, phase_tok, "phase")?)?;
                PulseEvent::soft_pi(time, spin, phase)
            }
            "hard" => {
                let angle_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
                    line: ctx.no,
                    msg: "missing angle".into(),
                })?;
                let angle: T = parse_scalar(&ctx, field(&ctx, angle_tok, "angle")?)?;
                let phase_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
                    line: ctx.no,
                    msg: "missing phase".into(),
                })?;
                let phase: T = parse_scalar(&ctx, field(&ctx, phase_tok, "phase")?)?;
                PulseEvent::hard(time, angle, phase)
            }
            "ghost" => {
                let mirror_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
                    line: ctx.no,
                    msg: "missing mirror".into(),
                })?;
                let label = field(&ctx, mirror_tok, "mirror")?;
                let spin = system.index_of(label).map_err(|_| Error::ScheduleParse {
                    line: ctx.no,
                    msg: format!("unknown spin label `{label}`"),
                })?;
                let off_tok = toks.next().ok_or_else(|| Error::ScheduleParse {
                    line: ctx.no,
                    msg: "missing offset".into(),
                })?;
                let offset: T = parse_scalar(&ctx, field(&ctx, off_tok, "offset")?)?;
                PulseEvent::ghost(time, spin, offset)
            }
            other => {
                return Err(Error::ScheduleParse {
                    line: ctx.no,
                    msg: format!("unknown event kind `{other}`"),
                })
            }
        };
        if let Some(extra) = toks.next() {
            return Err(Error::ScheduleParse {
                line: ctx.no,
                msg: format!("trailing token `{extra}`"),
            });
        }
        events.push(ev);
    }
    finish(current.take(), &mut blocks)?;
    if blocks.is_empty() {
        return Err(Error::ScheduleParse {
            line: 0,
            msg: "no schedule blocks found".into(),
        });
    }
    Ok(PulseProgram { blocks, annotation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::CouplingModel;

    fn isr() -> SpinSystem<f64> {
        SpinSystem::from_pairs(
            &["I", "S", "R"],
            &[12.5, -207.0, -176.0],
            &[("I", "S", -10.1), ("I", "R", 11.3), ("S", "R", 4.3)],
            CouplingModel::WeakZz,
        )
        .unwrap()
    }

    fn r(n: i64) -> TauTime {
        Ratio::from_integer(n)
    }

    /// Three-spin O1 layout: soft pulses on R at odd tau with MLEV-4
    /// phases, on S at 2,6 tau with +y.
    fn o1_layout() -> Schedule<f64> {
        let mut events = Vec::new();
        for (i, t) in [1, 3, 5, 7].into_iter().enumerate() {
            events.push(PulseEvent::soft_pi(r(t), 2, mlev4_phase_deg::<f64>(i)));
        }
        for t in [2, 6] {
            events.push(PulseEvent::soft_pi(r(t), 1, 90.0));
        }
        Schedule::new(1e-3, 8, events).unwrap()
    }

    #[test]
    fn o1_layout_toggling() {
        let sys = isr();
        let prof = toggling_analysis(&o1_layout(), &sys).unwrap();
        assert_eq!(prof.term(HamTerm::Shift(0)).net_tau, r(8));
        assert!(prof.term(HamTerm::Shift(0)).is_fully_active(8));
        for t in [
            HamTerm::Shift(1),
            HamTerm::Shift(2),
            HamTerm::Coupling(0, 1),
            HamTerm::Coupling(0, 2),
            HamTerm::Coupling(1, 2),
        ] {
            assert!(prof.term(t).is_refocused(), "{t:?} should be refocused");
        }
    }

    #[test]
    fn empty_schedule_everything_active() {
        let sys = isr();
        let sched = Schedule::<f64>::new(1e-3, 8, vec![]).unwrap();
        let prof = toggling_analysis(&sched, &sys).unwrap();
        for p in &prof.terms {
            assert_eq!(p.net_tau, r(8));
        }
    }

    #[test]
    fn single_central_pi_refocuses_its_spin() {
        let sys = isr();
        let sched = Schedule::new(1e-3, 8, vec![PulseEvent::soft_pi(r(4), 1, 90.0)])
            .unwrap()
            .flag_non_refocusing();
        let prof = toggling_analysis(&sched, &sys).unwrap();
        assert_eq!(prof.term(HamTerm::Shift(1)).net_tau, r(0));
        assert_eq!(prof.term(HamTerm::Coupling(0, 1)).net_tau, r(0));
        assert_eq!(prof.term(HamTerm::Coupling(1, 2)).net_tau, r(0));
        assert_eq!(prof.term(HamTerm::Shift(0)).net_tau, r(8));
        assert_eq!(prof.term(HamTerm::Shift(2)).net_tau, r(8));
        assert_eq!(prof.term(HamTerm::Coupling(0, 2)).net_tau, r(8));
    }

    #[test]
    fn hard_pulses_flip_shifts_not_couplings() {
        let sys = isr();
        let sched = Schedule::new(
            1e-3,
            8,
            vec![
                PulseEvent::hard(r(2), 180.0, 90.0),
                PulseEvent::hard(r(6), 180.0, 90.0),
            ],
        )
        .unwrap();
        let prof = toggling_analysis(&sched, &sys).unwrap();
        for k in 0..3 {
            assert_eq!(prof.term(HamTerm::Shift(k)).net_tau, r(0));
        }
        for (k, l) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(prof.term(HamTerm::Coupling(k, l)).net_tau, r(8));
        }
    }

    #[test]
    fn analyzer_rejects_non_pi_hard() {
        let sys = isr();
        let sched = Schedule::new(1e-3, 8, vec![PulseEvent::hard(r(4), 90.0, 0.0)]).unwrap();
        assert!(matches!(
            toggling_analysis(&sched, &sys),
            Err(Error::AnalyzerInapplicable { .. })
        ));
    }

    #[test]
    fn soft_phases_do_not_change_integrals() {
        let sys = isr();
        let base = o1_layout();
        let events: Vec<PulseEvent<f64>> = base
            .events()
            .iter()
            .map(|e| match e.kind {
                EventKind::SoftPi { spin, .. } => {
                    PulseEvent::soft_pi(e.time, spin, 13.7 + spin as f64)
                }
                _ => e.clone(),
            })
            .collect();
        let rotated = Schedule::new(base.tau_s(), base.duration_tau(), events).unwrap();
        let pa = toggling_analysis(&base, &sys).unwrap();
        let pb = toggling_analysis(&rotated, &sys).unwrap();
        for (a, b) in pa.terms.iter().zip(pb.terms.iter()) {
            assert_eq!(a.net_tau, b.net_tau);
        }
    }

    #[test]
    fn time_symmetric_schedule_reversal_invariance() {
        let sys = isr();
        let base = o1_layout();
        let dur = r(base.duration_tau());
        let reversed: Vec<PulseEvent<f64>> = base
            .events()
            .iter()
            .map(|e| PulseEvent {
                time: dur - e.time,
                kind: e.kind.clone(),
            })
            .collect();
        let rev = Schedule::new(base.tau_s(), base.duration_tau(), reversed).unwrap();
        let pa = toggling_analysis(&base, &sys).unwrap();
        let pb = toggling_analysis(&rev, &sys).unwrap();
        for (a, b) in pa.terms.iter().zip(pb.terms.iter()) {
            assert_eq!(a.net_tau, b.net_tau, "{:?}", a.term);
        }
    }

    #[test]
    fn validate_clean_schedule() {
        assert!(validate(&o1_layout(), 3).is_empty());
    }

    #[test]
    fn validate_tsetse() {
        let sched = Schedule::new(
            1e-3,
            8,
            vec![
                PulseEvent::soft_pi(r(2), 1, 90.0),
                PulseEvent::soft_pi(r(2), 2, 90.0),
                PulseEvent::soft_pi(r(6), 1, 90.0),
                PulseEvent::soft_pi(r(6), 2, 90.0),
            ],
        )
        .unwrap();
        let v = validate(&sched, 3);
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::TsetseOverlap { time, .. } if *time == r(2))));
    }

    #[test]
    fn validate_odd_count_unless_flagged() {
        let events = vec![
            PulseEvent::soft_pi(r(1), 2, 90.0),
            PulseEvent::soft_pi(r(3), 2, 90.0),
            PulseEvent::soft_pi(r(5), 2, 90.0),
        ];
        let sched = Schedule::new(1e-3, 8, events.clone()).unwrap();
        let v = validate(&sched, 3);
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::OddSoftCount { spin: 2, count: 3 })));
        let flagged = Schedule::new(1e-3, 8, events)
            .unwrap()
            .flag_non_refocusing();
        assert!(validate(&flagged, 3).is_empty());
    }

    #[test]
    fn validate_out_of_range_and_unknown_spin() {
        let sched = Schedule::new(
            1e-3,
            4,
            vec![
                PulseEvent::soft_pi(r(5), 0, 90.0),
                PulseEvent::soft_pi(r(1), 9, 90.0),
            ],
        )
        .unwrap()
        .flag_non_refocusing();
        let v = validate(&sched, 3);
        assert!(v.iter().any(|x| matches!(x, Violation::OutOfRange { .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::UnknownSpin { spin: 9, .. })));
    }

    #[test]
    fn mlev4_values() {
        use std::f64::consts::PI;
        let p4 = mlev4_phases::<f64>(4).unwrap();
        assert_eq!(p4, vec![PI / 2.0, PI / 2.0, 3.0 * PI / 2.0, 3.0 * PI / 2.0]);
        let p2 = mlev4_phases::<f64>(2).unwrap();
        assert_eq!(p2, vec![PI / 2.0, PI / 2.0]);
        let p8 = mlev4_phases::<f64>(8).unwrap();
        assert_eq!(&p8[..4], &p8[4..]);
        assert!(mlev4_phases::<f64>(3).is_err());
    }

    #[test]
    fn ghost_insertion_and_validation() {
        let sys = isr();
        let mut sched = o1_layout();
        add_ghost_pulses(&mut sched, &sys, 1, 2).unwrap();
        assert!(validate(&sched, 3).is_empty());
        let ghosts: Vec<_> = sched
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Ghost { .. }))
            .collect();
        assert_eq!(ghosts.len(), 2);
        // carrier mirrored about R: 2*(-176) - (-207) = -145
        match ghosts[0].kind {
            EventKind::Ghost {
                mirror_of,
                offset_hz,
            } => {
                assert_eq!(mirror_of, 1);
                assert!((offset_hz - (-145.0)).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
        let orphan = Schedule::new(1e-3, 8, vec![PulseEvent::ghost(r(4), 1, -145.0)]).unwrap();
        assert!(validate(&orphan, 3)
            .iter()
            .any(|v| matches!(v, Violation::OrphanGhost { .. })));
    }

    #[test]
    fn text_round_trip_bit_exact() {
        let sys = isr();
        let mut sched = o1_layout();
        add_ghost_pulses(&mut sched, &sys, 1, 2).unwrap();
        let mut program = PulseProgram::single(sched);
        program.blocks.push(
            Schedule::new(
                0.25e-3,
                4,
                vec![
                    PulseEvent::hard(r(1), 180.0, 90.0),
                    PulseEvent::hard(r(3), 180.0, 90.0),
                ],
            )
            .unwrap(),
        );
        program.annotation = Some("o1 spin=I phase=1.5707963267948966".into());

        let text = write_program(&program, &sys);
        let parsed = parse_program(&text, &sys).unwrap();
        assert_eq!(parsed, program);
        let text2 = write_program(&parsed, &sys);
        assert_eq!(text, text2);
    }

    #[test]
    fn round_trip_fractional_times_and_awkward_tau() {
        let sys = isr();
        let sched = Schedule::new(
            1.0 / 3.0,
            2,
            vec![
                PulseEvent::soft_pi(Ratio::new(1, 2), 0, 45.5),
                PulseEvent::soft_pi(Ratio::new(3, 2), 0, 0.1234567890123),
            ],
        )
        .unwrap();
        let program = PulseProgram::single(sched);
        let text = write_program(&program, &sys);
        let parsed = parse_program(&text, &sys).unwrap();
        assert_eq!(parsed, program);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let sys = isr();
        let bad = "tau=0.001 duration=8tau\nt=1tau soft_pi spin=X phase=90\n";
        match parse_program::<f64>(bad, &sys) {
            Err(Error::ScheduleParse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("unknown spin label"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_program::<f64>("", &sys).is_err());
        assert!(parse_program::<f64>("t=1tau hard angle=90 phase=0\n", &sys).is_err());
    }

    #[test]
    fn f32_schedules_work() {
        let sys = SpinSystem::<f32>::from_pairs(
            &["I", "S"],
            &[100.0, -50.0],
            &[("I", "S", 5.0)],
            CouplingModel::WeakZz,
        )
        .unwrap();
        let sched = Schedule::<f32>::new(
            1e-3,
            4,
            vec![
                PulseEvent::soft_pi(r(1), 1, 90.0),
                PulseEvent::soft_pi(r(3), 1, 90.0),
            ],
        )
        .unwrap();
        let text = write_schedule(&sched, &sys);
        let parsed = parse_program::<f32>(&text, &sys).unwrap();
        assert_eq!(parsed.blocks[0], sched);
        let prof = toggling_analysis(&sched, &sys).unwrap();
        assert!(prof.term(HamTerm::Shift(1)).is_refocused());
    }
}
