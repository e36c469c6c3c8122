//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use num_rational::Ratio;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use spinecho::algebra::{CouplingModel, SpinSystem};
use spinecho::config::ProjectConfig;
use spinecho::schedule::{mlev4_phase_deg, PulseEvent, Schedule};

/// The bundled three-proton system.
pub fn isr() -> SpinSystem<f64> {
    ProjectConfig::bundled().to_system().unwrap()
}

/// Four-spin extension of the bundled system with generic extra
/// constants.
pub fn isrq() -> SpinSystem<f64> {
    SpinSystem::from_pairs(
        &["I", "S", "R", "Q"],
        &[12.5, -207.0, -176.0, 95.0],
        &[
            ("I", "S", -10.1),
            ("I", "R", 11.3),
            ("S", "R", 4.3),
            ("I", "Q", 7.7),
            ("S", "Q", 3.1),
            ("R", "Q", 5.5),
        ],
        CouplingModel::WeakZz,
    )
    .unwrap()
}

/// Random coupled system with nonzero offsets and couplings.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize) -> SpinSystem<f64> {
    let labels: Vec<String> = (0..n).map(|k| format!("s{k}")).collect();
    let label_refs: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
    let deltas: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(20.0..300.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let mut couplings = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let mag = rng.gen_range(2.0..20.0);
            let j = if rng.gen_bool(0.5) { mag } else { -mag };
            couplings.push((a, b, j));
        }
    }
    let coupling_refs: Vec<(&str, &str, f64)> = couplings
        .iter()
        .map(|(a, b, j)| (label_refs[*a], label_refs[*b], *j))
        .collect();
    SpinSystem::from_pairs(
        &label_refs,
        &deltas,
        &coupling_refs,
        CouplingModel::WeakZz,
    )
    .unwrap()
}

/// Random valid dyadic schedule of soft pi pulses (even count per spin,
/// no shared times) with phases that keep the terminal pulse frame
/// trivial (per-spin MLEV-4 or all +y), plus an occasional same-phase
/// hard pi pair.
pub fn random_refocusing_schedule(rng: &mut ChaCha8Rng, n: usize) -> Schedule<f64> {
    let slots: i64 = 1 << (n + 1);
    let tau: f64 = rng.gen_range(2e-4..4e-3);
    let mut used = std::collections::HashSet::new();
    let mut events = Vec::new();
    for spin in 0..n {
        let count = *[0usize, 2, 4].choose(rng).unwrap();
        let mlev = rng.gen_bool(0.5);
        let mut times: Vec<i64> = Vec::new();
        while times.len() < count {
            let t = rng.gen_range(1..slots);
            if used.insert(t) {
                times.push(t);
            }
        }
        times.sort_unstable();
        for (i, t) in times.iter().enumerate() {
            let phase = if mlev {
                mlev4_phase_deg::<f64>(i)
            } else {
                90.0
            };
            events.push(PulseEvent::soft_pi(Ratio::from_integer(*t), spin, phase));
        }
    }
    if rng.gen_bool(0.4) {
        let mut placed = 0;
        while placed < 2 {
            let t = rng.gen_range(1..slots);
            if used.insert(t) {
                events.push(PulseEvent::hard(Ratio::from_integer(t), 180.0, 90.0));
                placed += 1;
            }
        }
    }
    Schedule::new(tau, slots, events).unwrap()
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_to_pi(x: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = x % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// Least-squares slope of y against x.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
