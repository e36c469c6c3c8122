//! Module compiler: turns declarative targets (switch on one chemical
//! shift, one scalar coupling, or nothing) into verified pulse schedules,
//! and assembles them into gate-level composites.
//!
//! Phase conventions: with the evolution convention `U = exp(-i H t)` and
//! the Hamiltonian of [`crate::algebra::free_hamiltonian`], a selective
//! phase module compiled for phase `phi` advances the observed line phase
//! of its active spin by `+phi` and realizes the unitary
//! `exp(-i phi I_z)` (up to global phase) on that spin, identity on every
//! spectator. Durations follow the phase laws `phi = 2 pi delta T` for
//! shifts and `theta = pi J T` for couplings; a target's sign that the
//! coupling or offset cannot produce directly is reached modulo 2 pi,
//! which only costs a global phase.
//!
//! Every compile is proven twice before it is returned: the toggling
//! oracle must show exactly the declared surviving terms, and the
//! ideal-mode simulated unitary must match the target at the fidelity
//! gate.

use num_rational::Ratio;

use crate::algebra::{
    phase_invariant_fidelity, propagator, single_spin_operator, term_to_operator, Axis,
    CouplingModel, Operator, PauliFactor, ProductOperatorTerm, SpinSystem,
};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::schedule::{
    mlev4_phase_deg, toggling_analysis, HamTerm, PulseEvent, PulseProgram, Schedule, ToggleProfile,
};
use crate::sim::{simulate_unitary, SimOptions};

/// Declarative module target.
#[derive(Debug, Clone, PartialEq)]
pub enum ModuleTarget<T: Real> {
    /// Phase evolution of one spin's chemical shift: observed line phase
    /// advance `phi`.
    Shift { spin: usize, phase: T },
    /// Rotation of one spin by `phase` about the axis tilted `beta` from
    /// +z in the vertical plane at azimuth `gamma` from +x.
    Rotation {
        spin: usize,
        phase: T,
        beta: T,
        gamma: T,
    },
    /// Scalar-coupling evolution of one pair by angle `theta`.
    Coupling { a: usize, b: usize, theta: T },
    /// Identity on everything for the given wall-clock duration.
    DoNothing { duration_s: T },
}

impl<T: Real> ModuleTarget<T> {
    /// The unitary this target denotes, in the crate's `exp(-i...)`
    /// convention.
    pub fn unitary(&self, system: &SpinSystem<T>) -> Result<Operator<T>> {
        match *self {
            ModuleTarget::Shift { spin, phase } => z_phase_target(system, spin, phase),
            ModuleTarget::Rotation {
                spin,
                phase,
                beta,
                gamma,
            } => rotation_target(system, spin, phase, beta, gamma),
            ModuleTarget::Coupling { a, b, theta } => zz_target(system, a, b, theta),
            ModuleTarget::DoNothing { .. } => Ok(Operator::identity(system.dim())),
        }
    }

    /// Annotation form carried in schedule files.
    pub fn annotation(&self, system: &SpinSystem<T>) -> String {
        match *self {
            ModuleTarget::Shift { spin, phase } => {
                format!("o1 spin={} phase={}", system.label(spin), phase)
            }
            ModuleTarget::Rotation {
                spin,
                phase,
                beta,
                gamma,
            } => format!(
                "o2 spin={} phase={} beta={} gamma={}",
                system.label(spin),
                phase,
                beta,
                gamma
            ),
            ModuleTarget::Coupling { a, b, theta } => format!(
                "o3 pair={},{} theta={}",
                system.label(a),
                system.label(b),
                theta
            ),
            ModuleTarget::DoNothing { duration_s } => {
                format!("do_nothing duration={duration_s}")
            }
        }
    }

    /// Parse an annotation written by [`ModuleTarget::annotation`].
    pub fn from_annotation(text: &str, system: &SpinSystem<T>) -> Result<Self> {
        let mut toks = text.split_whitespace();
        let kind = toks.next().unwrap_or_default();
        let mut kv = std::collections::HashMap::new();
        for tok in toks {
            if let Some((k, v)) = tok.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let scalar = |key: &str| -> Result<T> {
            kv.get(key)
                .and_then(|v| v.parse::<T>().ok())
                .ok_or_else(|| Error::InvalidSchedule(format!("bad target field `{key}`")))
        };
        let spin = |key: &str| -> Result<usize> {
            let label = kv
                .get(key)
                .ok_or_else(|| Error::InvalidSchedule(format!("bad target field `{key}`")))?;
            system.index_of(label)
        };
        match kind {
            "o1" => Ok(ModuleTarget::Shift {
                spin: spin("spin")?,
                phase: scalar("phase")?,
            }),
            "o2" => Ok(ModuleTarget::Rotation {
                spin: spin("spin")?,
                phase: scalar("phase")?,
                beta: scalar("beta")?,
                gamma: scalar("gamma")?,
            }),
            "o3" => {
                let pair = kv
                    .get("pair")
                    .ok_or_else(|| Error::InvalidSchedule("bad target field `pair`".into()))?;
                let (a, b) = pair
                    .split_once(',')
                    .ok_or_else(|| Error::InvalidSchedule("pair must be `A,B`".into()))?;
                Ok(ModuleTarget::Coupling {
                    a: system.index_of(a)?,
                    b: system.index_of(b)?,
                    theta: scalar("theta")?,
                })
            }
            "do_nothing" => Ok(ModuleTarget::DoNothing {
                duration_s: scalar("duration")?,
            }),
            other => Err(Error::InvalidSchedule(format!(
                "unknown target kind `{other}`"
            ))),
        }
    }
}

/// A declarative compile request.
#[derive(Debug, Clone)]
pub struct ModuleSpec<'a, T: Real> {
    pub system: &'a SpinSystem<T>,
    pub target: ModuleTarget<T>,
}

impl<'a, T: Real> ModuleSpec<'a, T> {
    pub fn compile(&self) -> Result<CompiledModule<T>> {
        match self.target {
            ModuleTarget::Shift { spin, phase } => compile_o1(self.system, spin, phase),
            ModuleTarget::Rotation {
                spin,
                phase,
                beta,
                gamma,
            } => compile_o2(self.system, spin, phase, beta, gamma),
            ModuleTarget::Coupling { a, b, theta } => compile_o3(self.system, (a, b), theta),
            ModuleTarget::DoNothing { duration_s } => {
                compile_do_nothing(self.system, duration_s)
            }
        }
    }
}

/// Per-block toggling outcome in a verification report.
#[derive(Debug, Clone)]
pub enum BlockToggling<T: Real> {
    /// Profile of a block that the analyzer covers.
    Analyzed(ToggleProfile<T>),
    /// Pulse-only or non-pi-hard block, settled by simulation instead.
    NotApplicable,
}

/// What the compiler proved about a module.
#[derive(Debug, Clone)]
pub struct VerificationReport<T: Real> {
    /// Phase-invariant fidelity of the ideal-mode simulated unitary
    /// against the target.
    pub fidelity: T,
    pub toggling: Vec<BlockToggling<T>>,
}

/// A compiled, verified module: the schedule program, the unitary it
/// promises, and the evidence.
#[derive(Debug, Clone)]
pub struct CompiledModule<T: Real> {
    pub target: ModuleTarget<T>,
    pub program: PulseProgram<T>,
    pub target_unitary: Operator<T>,
    pub report: VerificationReport<T>,
}

impl<T: Real> CompiledModule<T> {
    /// The single schedule of a non-composite module.
    pub fn schedule(&self) -> &Schedule<T> {
        &self.program.blocks[0]
    }

    /// Plain-text verification report: target, fidelity, toggling table.
    pub fn report_text(&self, system: &SpinSystem<T>) -> String {
        let mut out = String::new();
        out.push_str(&format!("target = {}\n", self.target.annotation(system)));
        out.push_str(&format!("fidelity = {}\n", self.report.fidelity));
        out.push_str(&format!(
            "duration_s = {}\n",
            self.program.total_duration_seconds()
        ));
        for (i, (block, tog)) in self
            .program
            .blocks
            .iter()
            .zip(self.report.toggling.iter())
            .enumerate()
        {
            out.push_str(&format!(
                "block {} tau={} duration={}tau\n",
                i + 1,
                block.tau_s(),
                block.duration_tau()
            ));
            match tog {
                BlockToggling::Analyzed(prof) => {
                    for (name, net, status) in prof.rows(system) {
                        out.push_str(&format!("  {name}: net={net}tau ({status})\n"));
                    }
                }
                BlockToggling::NotApplicable => {
                    out.push_str("  toggling n/a (pulse-only block)\n");
                }
            }
        }
        out
    }
}

/// A sequence of compiled modules realizing a composite gate.
#[derive(Debug, Clone)]
pub struct ModuleTrain<T: Real> {
    pub modules: Vec<CompiledModule<T>>,
    pub program: PulseProgram<T>,
    pub target_unitary: Operator<T>,
    pub fidelity: T,
}

// ---------------------------------------------------------------------------
// Target unitaries

/// `exp(-i phi I_z)` on one spin, identity elsewhere.
pub fn z_phase_target<T: Real>(
    system: &SpinSystem<T>,
    spin: usize,
    phase: T,
) -> Result<Operator<T>> {
    let g = single_spin_operator(system, spin, Axis::Z)?;
    propagator(&g, phase)
}

/// `exp(-i theta 2 I_az I_bz)` on one pair, identity elsewhere.
pub fn zz_target<T: Real>(
    system: &SpinSystem<T>,
    a: usize,
    b: usize,
    theta: T,
) -> Result<Operator<T>> {
    system.check_spin(a)?;
    system.check_spin(b)?;
    let mut f = vec![PauliFactor::E; system.n_spins()];
    f[a] = PauliFactor::Iz;
    f[b] = PauliFactor::Iz;
    let g = term_to_operator(system, &ProductOperatorTerm::new(T::from_int(2), f))?;
    propagator(&g, theta)
}

/// Rotation of one spin by `phase` about the axis tilted `beta` from +z
/// at azimuth `gamma`: `exp(-i phase (sin b cos g Ix + sin b sin g Iy +
/// cos b Iz))`.
pub fn rotation_target<T: Real>(
    system: &SpinSystem<T>,
    spin: usize,
    phase: T,
    beta: T,
    gamma: T,
) -> Result<Operator<T>> {
    let ix = single_spin_operator(system, spin, Axis::X)?;
    let iy = single_spin_operator(system, spin, Axis::Y)?;
    let iz = single_spin_operator(system, spin, Axis::Z)?;
    let nx = beta.sin() * gamma.cos();
    let ny = beta.sin() * gamma.sin();
    let nz = beta.cos();
    let re = |x: T| num_complex::Complex::new(x, T::zero());
    let g = &(&ix.scale(re(nx)) + &iy.scale(re(ny))) + &iz.scale(re(nz));
    propagator(&g, phase)
}

// ---------------------------------------------------------------------------
// Phase bookkeeping

/// Reduce an angle modulo 2 pi into `[0, 2pi)` when `positive`, else
/// `(-2pi, 0]`.
fn reduce_phase<T: Real>(phase: T, positive: bool) -> T {
    let two_pi = T::two_pi();
    let mut r = phase - two_pi * (phase / two_pi).floor();
    if r >= two_pi {
        r -= two_pi;
    }
    if !positive && r > T::zero() {
        r -= two_pi;
    }
    r
}

/// Canonical form `(-pi, pi]` used in reports.
pub fn canonical_phase<T: Real>(phase: T) -> T {
    let r = reduce_phase(phase, true);
    if r > T::pi() {
        r - T::two_pi()
    } else {
        r
    }
}

// ---------------------------------------------------------------------------
// Dyadic scheduling

/// Soft-pulse events on the dyadic grid: the spin at position `p` of
/// `dense_first` carries level `j = p + 1`, pulsing at times
/// `(2^j m + 2^{j-1}) tau` below `duration_tau`, phases per MLEV-4.
fn dyadic_soft_events<T: Real>(dense_first: &[usize], duration_tau: i64) -> Vec<PulseEvent<T>> {
    let mut events = Vec::new();
    for (p, &spin) in dense_first.iter().enumerate() {
        let step = 1i64 << (p + 1);
        let offset = 1i64 << p;
        let mut i = 0usize;
        let mut t = offset;
        while t < duration_tau {
            events.push(PulseEvent::soft_pi(
                Ratio::from_integer(t),
                spin,
                mlev4_phase_deg::<T>(i),
            ));
            i += 1;
            t += step;
        }
    }
    events
}

/// Spectators ordered densest-level first: descending spin index, the
/// assignment the four-spin example fixes (last label pulses at odd tau).
fn spectators_dense_first<T: Real>(system: &SpinSystem<T>, active: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = (0..system.n_spins())
        .filter(|k| !active.contains(k))
        .collect();
    v.sort_by(|a, b| b.cmp(a));
    v
}

// ---------------------------------------------------------------------------
// Verification

fn empty_program<T: Real>() -> PulseProgram<T> {
    PulseProgram::single(Schedule::new(T::zero(), 0, vec![]).expect("empty schedule"))
}

/// Prove a compiled program: toggling table per block (each analyzable
/// block must show exactly its declared surviving term), then ideal-mode
/// weak-coupling simulation against the target at the fidelity gate.
fn finalize<T: Real>(
    system: &SpinSystem<T>,
    target: ModuleTarget<T>,
    program: PulseProgram<T>,
    expected: &[Option<HamTerm>],
) -> Result<CompiledModule<T>> {
    debug_assert_eq!(program.blocks.len(), expected.len());
    let mut toggling = Vec::new();
    for (block, expect) in program.blocks.iter().zip(expected.iter()) {
        if block.is_non_refocusing() && block.duration_tau() == 0 {
            toggling.push(BlockToggling::NotApplicable);
            continue;
        }
        match toggling_analysis(block, system) {
            Ok(prof) => {
                if block.duration_tau() > 0 {
                    for p in &prof.terms {
                        let should_be_active = *expect == Some(p.term)
                            || matches!(
                                (*expect, p.term),
                                (Some(HamTerm::Coupling(a, b)), HamTerm::Coupling(c, d))
                                    if a == d && b == c
                            );
                        let ok = if should_be_active {
                            p.is_fully_active(block.duration_tau())
                        } else {
                            p.is_refocused()
                        };
                        if !ok {
                            return Err(Error::InvalidSchedule(format!(
                                "toggling check failed for {:?}: net {} tau",
                                p.term, p.net_tau
                            )));
                        }
                    }
                }
                toggling.push(BlockToggling::Analyzed(prof));
            }
            Err(Error::AnalyzerInapplicable { .. }) => {
                toggling.push(BlockToggling::NotApplicable)
            }
            Err(e) => return Err(e),
        }
    }

    let target_unitary = target.unitary(system)?;
    let opts = SimOptions::ideal().with_coupling(CouplingModel::WeakZz);
    let simulated = simulate_unitary(&program, system, &opts)?;
    let fidelity = phase_invariant_fidelity(&simulated, &target_unitary)?;
    if fidelity < T::one() - T::FIDELITY_TOL {
        return Err(Error::FidelityGate {
            fidelity: fidelity.to_f64(),
            gate: (T::one() - T::FIDELITY_TOL).to_f64(),
        });
    }

    let annotation = target.annotation(system);
    Ok(CompiledModule {
        target,
        program: program.with_annotation(annotation),
        target_unitary,
        report: VerificationReport { fidelity, toggling },
    })
}

// ---------------------------------------------------------------------------
// O1: selective phase evolution

/// Compile the selective-phase module: the active spin's observed line
/// phase advances by `phase` while every other shift and coupling is
/// refocused by dyadically nested soft pi pulses on the spectators.
/// Duration follows `phase = 2 pi delta T`, so the active spin needs a
/// nonzero offset unless the requested phase is a multiple of 2 pi.
pub fn compile_o1<T: Real>(
    system: &SpinSystem<T>,
    active_spin: usize,
    phase: T,
) -> Result<CompiledModule<T>> {
    compile_o1_turns(system, active_spin, phase, 0)
}

/// [`compile_o1`] with `extra_turns` additional whole rotations of the
/// active spin: same target unitary (whole turns cost a global sign), but
/// the duration stretches by `extra_turns / |delta|` seconds, reaching
/// the second-scale sequence lengths of slow-offset experiments.
pub fn compile_o1_turns<T: Real>(
    system: &SpinSystem<T>,
    active_spin: usize,
    phase: T,
    extra_turns: i64,
) -> Result<CompiledModule<T>> {
    system.check_spin(active_spin)?;
    if extra_turns < 0 {
        return Err(Error::InvalidSchedule("extra turns must be >= 0".into()));
    }
    let target = ModuleTarget::Shift {
        spin: active_spin,
        phase,
    };
    let delta = system.delta_hz(active_spin);
    let positive = delta > T::zero();
    let mut phi = reduce_phase(phase, positive);
    if extra_turns > 0 {
        let turns = T::two_pi() * T::from_int(extra_turns);
        phi += if positive { turns } else { -turns };
    }
    if phi == T::zero() {
        return finalize(system, target, empty_program(), &[None]);
    }
    if delta == T::zero() {
        return Err(Error::Unsatisfiable {
            module: "o1",
            label: system.label(active_spin).to_string(),
            reason: "active spin has zero offset; duration is unconstrained".into(),
        });
    }
    let n = system.n_spins();
    let duration_s = phi / (T::two_pi() * delta);
    let slots = 1i64 << n; // total duration in tau units
    let tau_s = duration_s / T::from_int(slots);
    let events = dyadic_soft_events::<T>(&spectators_dense_first(system, &[active_spin]), slots);
    let sched = Schedule::new(tau_s, slots, events)?;
    finalize(
        system,
        target,
        PulseProgram::single(sched),
        &[Some(HamTerm::Shift(active_spin))],
    )
}

// ---------------------------------------------------------------------------
// Do-nothing

/// Refocus everything for the given duration: the O1 pulse pattern for
/// the lowest-index spin plus hard pi pulses at the half-way point and
/// the end, which cancel the remaining active shift.
pub fn compile_do_nothing<T: Real>(
    system: &SpinSystem<T>,
    duration_s: T,
) -> Result<CompiledModule<T>> {
    if duration_s < T::zero() || !duration_s.is_finite() {
        return Err(Error::InvalidSchedule("negative duration".into()));
    }
    let target = ModuleTarget::DoNothing { duration_s };
    if duration_s == T::zero() {
        return finalize(system, target, empty_program(), &[None]);
    }
    let n = system.n_spins();
    let slots = 1i64 << n;
    let tau_s = duration_s / T::from_int(slots);
    let mut events = dyadic_soft_events::<T>(&spectators_dense_first(system, &[0]), slots);
    for (i, t) in [slots / 2, slots].into_iter().enumerate() {
        events.push(PulseEvent::hard(
            Ratio::from_integer(t),
            T::from_int(180),
            mlev4_phase_deg::<T>(i),
        ));
    }
    let sched = Schedule::new(tau_s, slots, events)?;
    finalize(system, target, PulseProgram::single(sched), &[None])
}

// ---------------------------------------------------------------------------
// O2: selective rotation

/// Compile the general selective rotation: the O1 phase module enclosed
/// between hard `beta` pulses along -y and +y, the whole sandwich wrapped
/// in z-rotation modules for the azimuth. Net effect: the active spin
/// rotates by `phase` about the axis tilted `beta` from +z at azimuth
/// `gamma`; spectators come back to where they started.
pub fn compile_o2<T: Real>(
    system: &SpinSystem<T>,
    active_spin: usize,
    phase: T,
    beta: T,
    gamma: T,
) -> Result<CompiledModule<T>> {
    system.check_spin(active_spin)?;
    let target = ModuleTarget::Rotation {
        spin: active_spin,
        phase,
        beta,
        gamma,
    };

    let mut blocks: Vec<Schedule<T>> = Vec::new();
    let mut expected: Vec<Option<HamTerm>> = Vec::new();
    let push_o1 = |phi: T, blocks: &mut Vec<Schedule<T>>, expected: &mut Vec<Option<HamTerm>>| -> Result<()> {
        let m = compile_o1(system, active_spin, phi)?;
        for b in m.program.blocks {
            expected.push(if b.duration_tau() > 0 {
                Some(HamTerm::Shift(active_spin))
            } else {
                None
            });
            blocks.push(b);
        }
        Ok(())
    };

    let beta_deg = crate::schedule::rad_to_deg(beta);
    let neg_y = T::from_int(270);
    let pos_y = T::from_int(90);

    if gamma != T::zero() {
        push_o1(-gamma, &mut blocks, &mut expected)?;
    }
    if beta != T::zero() {
        blocks.push(Schedule::pulse_only(vec![PulseEvent::hard(
            Ratio::from_integer(0),
            beta_deg,
            neg_y,
        )])?);
        expected.push(None);
    }
    push_o1(phase, &mut blocks, &mut expected)?;
    if beta != T::zero() {
        blocks.push(Schedule::pulse_only(vec![PulseEvent::hard(
            Ratio::from_integer(0),
            beta_deg,
            pos_y,
        )])?);
        expected.push(None);
    }
    if gamma != T::zero() {
        push_o1(gamma, &mut blocks, &mut expected)?;
    }

    let program = PulseProgram {
        blocks,
        annotation: None,
    };
    finalize(system, target, program, &expected)
}

// ---------------------------------------------------------------------------
// O3: selective coupling evolution

/// Compile the scalar-coupling module for one pair: spectators are
/// refocused by dyadically nested soft pi pulses, the pair's shifts by a
/// pair of hard pi pulses at the quarter points, while the chosen
/// coupling runs for the whole duration. Duration follows
/// `theta = pi J T`.
pub fn compile_o3<T: Real>(
    system: &SpinSystem<T>,
    pair: (usize, usize),
    theta: T,
) -> Result<CompiledModule<T>> {
    let (a, b) = pair;
    system.check_spin(a)?;
    system.check_spin(b)?;
    if a == b {
        return Err(Error::InvalidSchedule("pair must be two distinct spins".into()));
    }
    let target = ModuleTarget::Coupling { a, b, theta };
    let j = system.j_hz(a, b);
    let th = reduce_phase(theta, j > T::zero());
    if th == T::zero() {
        return finalize(system, target, empty_program(), &[None]);
    }
    if j == T::zero() {
        return Err(Error::Unsatisfiable {
            module: "o3",
            label: format!("{},{}", system.label(a), system.label(b)),
            reason: "pair has zero coupling; duration is unconstrained".into(),
        });
    }
    let n = system.n_spins();
    let duration_s = th / (T::pi() * j);
    let slots = 1i64 << n;
    let tau_s = duration_s / T::from_int(slots);
    let mut events = dyadic_soft_events::<T>(&spectators_dense_first(system, &[a, b]), slots);
    // Hard pi pair at the quarter points, where the spectator-refocused
    // shifts are at a focus.
    let q = slots / 4;
    for (i, t) in [q, 3 * q].into_iter().enumerate() {
        events.push(PulseEvent::hard(
            Ratio::from_integer(t),
            T::from_int(180),
            mlev4_phase_deg::<T>(i),
        ));
    }
    let sched = Schedule::new(tau_s, slots, events)?;
    finalize(
        system,
        target,
        PulseProgram::single(sched),
        &[Some(HamTerm::Coupling(a, b))],
    )
}

// ---------------------------------------------------------------------------
// Gate assembly

/// CNOT permutation matrix on the full space: flips `target` whenever
/// `control` is down, identity on spectators.
pub fn cnot_matrix<T: Real>(
    system: &SpinSystem<T>,
    control: usize,
    target: usize,
) -> Result<Operator<T>> {
    system.check_spin(control)?;
    system.check_spin(target)?;
    if control == target {
        return Err(Error::InvalidSchedule("control must differ from target".into()));
    }
    let n = system.n_spins();
    let dim = system.dim();
    let cbit = n - 1 - control;
    let tbit = n - 1 - target;
    let zero = num_complex::Complex::new(T::zero(), T::zero());
    let one = num_complex::Complex::new(T::one(), T::zero());
    Ok(Operator::from_fn(dim, |i, j| {
        let mapped = if (j >> cbit) & 1 == 1 { j ^ (1 << tbit) } else { j };
        if i == mapped {
            one
        } else {
            zero
        }
    }))
}

/// The doubly-controlled-NOT on three spins (controls 0 and 1, target 2).
pub fn ccnot_matrix<T: Real>() -> Operator<T> {
    let zero = num_complex::Complex::new(T::zero(), T::zero());
    let one = num_complex::Complex::new(T::one(), T::zero());
    Operator::from_fn(8, |i, j| {
        let mapped = if j >> 1 == 3 { j ^ 1 } else { j };
        if i == mapped {
            one
        } else {
            zero
        }
    })
}

/// The line-selective approximation of the CCNOT: identical except the
/// lower-right block carries `i` in place of 1.
pub fn ccnot_tilde_matrix<T: Real>() -> Operator<T> {
    let zero = num_complex::Complex::new(T::zero(), T::zero());
    let one = num_complex::Complex::new(T::one(), T::zero());
    let imag = num_complex::Complex::new(T::zero(), T::one());
    Operator::from_fn(8, |i, j| {
        if j >> 1 == 3 {
            if i == j ^ 1 {
                imag
            } else {
                zero
            }
        } else if i == j {
            one
        } else {
            zero
        }
    })
}

/// The CNOT product-operator factorization, multiplied out explicitly:
///
/// `e^{-i pi/4} e^{+i pi/2 Sz_c} e^{-i pi/2 Iy_t} e^{+i pi/2 Iz_t}
///  e^{-i pi/2 2 Iz_t Sz_c} e^{+i pi/2 Iy_t}`
///
/// The leading z rotation acts on the control spin; with that placement
/// the product equals the CNOT matrix exactly, including the global
/// phase.
pub fn cnot_from_factors<T: Real>(
    system: &SpinSystem<T>,
    control: usize,
    target: usize,
) -> Result<Operator<T>> {
    let half_pi = T::pi() * T::of(0.5);
    let sz = single_spin_operator(system, control, Axis::Z)?;
    let iy = single_spin_operator(system, target, Axis::Y)?;
    let iz = single_spin_operator(system, target, Axis::Z)?;
    let mut f = vec![PauliFactor::E; system.n_spins()];
    f[control] = PauliFactor::Iz;
    f[target] = PauliFactor::Iz;
    let zz = term_to_operator(system, &ProductOperatorTerm::new(T::from_int(2), f))?;

    let e = |g: &Operator<T>, sign_pos: bool| -> Result<Operator<T>> {
        propagator(g, if sign_pos { -half_pi } else { half_pi })
    };
    let f5 = e(&sz, true)?; // e^{+i pi/2 Sz}
    let f4 = e(&iy, false)?; // e^{-i pi/2 Iy}
    let f3 = e(&iz, true)?; // e^{+i pi/2 Iz}
    let f2 = e(&zz, false)?; // e^{-i pi/2 2IzSz}
    let f1 = e(&iy, true)?; // e^{+i pi/2 Iy}
    let prod = &(&(&(&f5 * &f4) * &f3) * &f2) * &f1;
    let quarter = T::pi() * T::of(0.25);
    Ok(prod.scale(num_complex::Complex::new(quarter.cos(), -quarter.sin())))
}

/// Assemble a CNOT from compiled modules: a z module on the control, the
/// coupling module, and z / tilted-rotation modules on the target, in the
/// factor order of [`cnot_from_factors`]. The train's simulated product
/// must match the CNOT matrix at the fidelity gate.
pub fn assemble_cnot<T: Real>(
    system: &SpinSystem<T>,
    control: usize,
    target: usize,
) -> Result<ModuleTrain<T>> {
    if system.j_hz(control, target) == T::zero() {
        return Err(Error::Unsatisfiable {
            module: "cnot",
            label: format!("{},{}", system.label(control), system.label(target)),
            reason: "control-target coupling is zero".into(),
        });
    }
    let half_pi = T::pi() * T::of(0.5);
    let modules = vec![
        // time order; each realizes one factor up to global phase
        compile_o2(system, target, -half_pi, half_pi, half_pi)?, // e^{+i pi/2 Iy}
        compile_o3(system, (control, target), half_pi)?,         // e^{-i pi/2 2IzSz}
        compile_o1(system, target, -half_pi)?,                   // e^{+i pi/2 Iz}
        compile_o2(system, target, half_pi, half_pi, half_pi)?,  // e^{-i pi/2 Iy}
        compile_o1(system, control, -half_pi)?,                  // e^{+i pi/2 Sz}
    ];
    let target_unitary = cnot_matrix(system, control, target)?;
    train_from_modules(system, modules, target_unitary)
}

fn train_from_modules<T: Real>(
    system: &SpinSystem<T>,
    modules: Vec<CompiledModule<T>>,
    target_unitary: Operator<T>,
) -> Result<ModuleTrain<T>> {
    let program = PulseProgram::concat(modules.iter().map(|m| m.program.clone()));
    let opts = SimOptions::ideal().with_coupling(CouplingModel::WeakZz);
    let simulated = simulate_unitary(&program, system, &opts)?;
    let fidelity = phase_invariant_fidelity(&simulated, &target_unitary)?;
    if fidelity < T::one() - T::FIDELITY_TOL {
        return Err(Error::FidelityGate {
            fidelity: fidelity.to_f64(),
            gate: (T::one() - T::FIDELITY_TOL).to_f64(),
        });
    }
    Ok(ModuleTrain {
        modules,
        program,
        target_unitary,
        fidelity,
    })
}

/// The CCNOT correction and its module realization.
#[derive(Debug, Clone)]
pub struct CcnotCorrection<T: Real> {
    /// `exp(i pi/4 Iz_a + i pi/4 Iz_b - i pi/4 2 Iz_a Iz_b)`.
    pub operator: Operator<T>,
    /// O1 + O1 + O3 train realizing the operator up to global phase.
    pub train: ModuleTrain<T>,
    /// Fidelity of `C * ccnot_tilde` against the exact CCNOT.
    pub gate_fidelity: T,
}

/// Build the diagonal correction that upgrades the line-selective
/// `ccnot_tilde` into the exact CCNOT, both as an operator and as a
/// compiled module train on spins `a`, `b` of a three-spin system.
pub fn ccnot_correction<T: Real>(
    system: &SpinSystem<T>,
    a: usize,
    b: usize,
) -> Result<CcnotCorrection<T>> {
    if system.n_spins() != 3 {
        return Err(Error::InvalidSystem(format!(
            "ccnot correction verification needs a 3-spin system, got {}",
            system.n_spins()
        )));
    }
    system.check_spin(a)?;
    system.check_spin(b)?;
    if a == b {
        return Err(Error::InvalidSchedule("pair must be two distinct spins".into()));
    }

    let quarter_pi = T::pi() * T::of(0.25);
    // exp(-i G) with G = -pi/4 Iz_a - pi/4 Iz_b + pi/4 (2 Iz_a Iz_b)
    let iza = single_spin_operator(system, a, Axis::Z)?;
    let izb = single_spin_operator(system, b, Axis::Z)?;
    let mut f = vec![PauliFactor::E; 3];
    f[a] = PauliFactor::Iz;
    f[b] = PauliFactor::Iz;
    let zz = term_to_operator(system, &ProductOperatorTerm::new(T::from_int(2), f))?;
    let m1 = num_complex::Complex::new(-T::one(), T::zero());
    let g = &(&iza.scale(m1) + &izb.scale(m1)) + &zz;
    let operator = propagator(&g, quarter_pi)?;

    let modules = vec![
        compile_o1(system, a, -quarter_pi)?,
        compile_o1(system, b, -quarter_pi)?,
        compile_o3(system, (a, b), quarter_pi)?,
    ];
    let train = train_from_modules(system, modules, operator.clone())?;

    let gate_fidelity =
        phase_invariant_fidelity(&(&operator * &ccnot_tilde_matrix::<T>()), &ccnot_matrix::<T>())?;

    Ok(CcnotCorrection {
        operator,
        train,
        gate_fidelity,
    })
}

/// Free-evolution check helper used in tests and reports: the ideal
/// unitary of a compiled module against an arbitrary reference.
pub fn module_fidelity_vs<T: Real>(
    module: &CompiledModule<T>,
    system: &SpinSystem<T>,
    reference: &Operator<T>,
) -> Result<T> {
    let opts = SimOptions::ideal().with_coupling(CouplingModel::WeakZz);
    let u = simulate_unitary(&module.program, system, &opts)?;
    phase_invariant_fidelity(&u, reference)
}
