//! Dense operator algebra for N coupled spin-1/2 particles.
//!
//! Conventions used throughout the crate:
//!
//! * basis states are tensor products with spin 0 as the leftmost factor;
//!   bit 0 of a basis index is the *last* spin, and bit value 0 means
//!   `m = +1/2`;
//! * the free Hamiltonian is `H = sum_k 2*pi*delta_k I_kz
//!   + sum_{k<l} 2*pi*J_kl I_kz I_lz` in rad/s (plus the transverse
//!   coupling parts in the strong-coupling model);
//! * time evolution is `U = exp(-i H t)`.
//!
//! Frequencies are stored in Hz on [`SpinSystem`] and converted to rad/s
//! only while building Hamiltonians.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{cmod, Real};

/// Rotation / measurement axis for single-spin operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Which part of the scalar coupling enters the free Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingModel {
    /// Secular ZZ part only (weak-coupling limit). The Hamiltonian is
    /// exactly diagonal in the computational basis.
    #[default]
    WeakZz,
    /// Full isotropic coupling including the flip-flop terms.
    StrongIsotropic,
}

/// A weakly- or strongly-coupled system of spin-1/2 nuclei: labels,
/// chemical-shift offsets from the transmitter (Hz) and the symmetric
/// scalar-coupling matrix (Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem<T: Real> {
    labels: Vec<String>,
    delta_hz: Vec<T>,
    j_hz: Vec<Vec<T>>,
    coupling_model: CouplingModel,
}

impl<T: Real> SpinSystem<T> {
    /// Build a system from labels, per-spin offsets and a full coupling
    /// matrix. The matrix must be symmetric with zero diagonal.
    pub fn new(
        labels: Vec<String>,
        delta_hz: Vec<T>,
        j_hz: Vec<Vec<T>>,
        coupling_model: CouplingModel,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidSystem("at least one spin required".into()));
        }
        if delta_hz.len() != n {
            return Err(Error::InvalidSystem(format!(
                "{} labels but {} offsets",
                n,
                delta_hz.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(Error::InvalidSystem(format!("bad label `{l}`")));
            }
            if labels[..i].contains(l) {
                return Err(Error::InvalidSystem(format!("duplicate label `{l}`")));
            }
        }
        if j_hz.len() != n || j_hz.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSystem(format!("J matrix must be {n}x{n}")));
        }
        for d in &delta_hz {
            if !d.is_finite() {
                return Err(Error::InvalidSystem("non-finite offset".into()));
            }
        }
        for k in 0..n {
            if j_hz[k][k] != T::zero() {
                return Err(Error::InvalidSystem("J diagonal must be zero".into()));
            }
            for l in 0..n {
                if !j_hz[k][l].is_finite() {
                    return Err(Error::InvalidSystem("non-finite coupling".into()));
                }
                if j_hz[k][l] != j_hz[l][k] {
                    return Err(Error::InvalidSystem("J matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            labels,
            delta_hz,
            j_hz,
            coupling_model,
        })
    }

    /// Convenience constructor from string labels and the upper-triangle
    /// couplings given as `(label_a, label_b, j_hz)` entries.
    pub fn from_pairs(
        labels: &[&str],
        delta_hz: &[T],
        couplings: &[(&str, &str, T)],
        coupling_model: CouplingModel,
    ) -> Result<Self> {
        let n = labels.len();
        let owned: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let mut j = vec![vec![T::zero(); n]; n];
        for (a, b, val) in couplings {
            let ka = owned
                .iter()
                .position(|l| l == a)
                .ok_or_else(|| Error::UnknownLabel(a.to_string()))?;
            let kb = owned
                .iter()
                .position(|l| l == b)
                .ok_or_else(|| Error::UnknownLabel(b.to_string()))?;
            if ka == kb {
                return Err(Error::InvalidSystem(format!("self-coupling on `{a}`")));
            }
            j[ka][kb] = *val;
            j[kb][ka] = *val;
        }
        Self::new(owned, delta_hz.to_vec(), j, coupling_model)
    }

    pub fn n_spins(&self) -> usize {
        self.labels.len()
    }

    /// Hilbert-space dimension, `2^n`.
    pub fn dim(&self) -> usize {
        1 << self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, spin: usize) -> &str {
        &self.labels[spin]
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn delta_hz(&self, spin: usize) -> T {
        self.delta_hz[spin]
    }

    pub fn deltas_hz(&self) -> &[T] {
        &self.delta_hz
    }

    pub fn j_hz(&self, a: usize, b: usize) -> T {
        self.j_hz[a][b]
    }

    pub fn coupling_model(&self) -> CouplingModel {
        self.coupling_model
    }

    /// Same system with a different coupling model.
    pub fn with_coupling_model(&self, model: CouplingModel) -> Self {
        let mut s = self.clone();
        s.coupling_model = model;
        s
    }

    pub fn check_spin(&self, spin: usize) -> Result<()> {
        if spin < self.n_spins() {
            Ok(())
        } else {
            Err(Error::SpinOutOfRange {
                spin,
                n_spins: self.n_spins(),
            })
        }
    }

    /// Largest frequency scale present (Hz); used for default time steps.
    pub fn max_frequency_hz(&self) -> T {
        let mut m = T::zero();
        for d in &self.delta_hz {
            m = m.max(d.abs());
        }
        for row in &self.j_hz {
            for j in row {
                m = m.max(j.abs());
            }
        }
        m
    }

    /// `m = +-1/2` for the given spin in the given basis state.
    #[inline]
    pub fn m_value(&self, state: usize, spin: usize) -> T {
        let bit = (state >> (self.n_spins() - 1 - spin)) & 1;
        if bit == 0 {
            T::of(0.5)
        } else {
            T::of(-0.5)
        }
    }
}

/// One tensor factor of a product-operator term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliFactor {
    /// Identity.
    E,
    Ix,
    Iy,
    Iz,
}

/// A weighted product operator, e.g. `2 Iz Sz` as coefficient 2 with
/// factors `[Iz, Iz]`. The coefficient carries any angular frequency or
/// explicit numeric prefactor; factors multiply as a plain tensor product.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductOperatorTerm<T: Real> {
    pub coefficient: T,
    pub factors: Vec<PauliFactor>,
}

impl<T: Real> ProductOperatorTerm<T> {
    pub fn new(coefficient: T, factors: Vec<PauliFactor>) -> Self {
        Self {
            coefficient,
            factors,
        }
    }

    /// Single-axis term on one spin, identity elsewhere.
    pub fn single(n_spins: usize, spin: usize, axis: Axis, coefficient: T) -> Self {
        let mut factors = vec![PauliFactor::E; n_spins];
        factors[spin] = match axis {
            Axis::X => PauliFactor::Ix,
            Axis::Y => PauliFactor::Iy,
            Axis::Z => PauliFactor::Iz,
        };
        Self::new(coefficient, factors)
    }
}

/// Dense complex operator on the full Hilbert space of a spin system.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator<T: Real> {
    mat: DMatrix<Complex<T>>,
}

impl<T: Real> Operator<T> {
    pub fn from_matrix(mat: DMatrix<Complex<T>>) -> Self {
        assert!(mat.is_square(), "operators are square");
        Self { mat }
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> Complex<T>) -> Self {
        Self {
            mat: DMatrix::from_fn(dim, dim, f),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn diagonal(entries: &[Complex<T>]) -> Self {
        let dim = entries.len();
        Self::from_fn(dim, |i, j| {
            if i == j {
                entries[i]
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex<T>> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<Complex<T>> {
        self.mat
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> Complex<T> {
        self.mat[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
        }
    }

    pub fn trace(&self) -> Complex<T> {
        self.mat.trace()
    }

    pub fn scale(&self, c: Complex<T>) -> Self {
        Self {
            mat: self.mat.map(|x| x * c),
        }
    }

    /// Tensor (Kronecker) product, `self` as the left factor.
    pub fn kron(&self, rhs: &Self) -> Self {
        Self {
            mat: self.mat.kronecker(&rhs.mat),
        }
    }

    /// Largest entrywise absolute difference to another operator.
    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        assert_eq!(self.dim(), rhs.dim());
        let mut m = T::zero();
        for (a, b) in self.mat.iter().zip(rhs.mat.iter()) {
            m = m.max(cmod(*a - *b));
        }
        m
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for a in self.mat.iter() {
            m = m.max(cmod(*a));
        }
        m
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    pub fn is_unitary(&self, tol: T) -> bool {
        let prod = Self {
            mat: self.mat.adjoint() * &self.mat,
        };
        prod.max_abs_diff(&Self::identity(self.dim())) <= tol
    }

    /// Hermiticity check with the type's default tolerance.
    pub fn expect_hermitian(&self) -> Result<()> {
        let dev = self.max_abs_diff(&self.adjoint());
        if dev <= T::OPERATOR_TOL {
            Ok(())
        } else {
            Err(Error::NotHermitian(dev.to_f64()))
        }
    }

    pub fn expect_unitary(&self) -> Result<()> {
        let prod = Self {
            mat: self.mat.adjoint() * &self.mat,
        };
        let dev = prod.max_abs_diff(&Self::identity(self.dim()));
        if dev <= T::OPERATOR_TOL {
            Ok(())
        } else {
            Err(Error::NotUnitary(dev.to_f64()))
        }
    }

    /// True when every off-diagonal entry is exactly zero.
    pub fn is_exactly_diagonal(&self) -> bool {
        let zero = Complex::new(T::zero(), T::zero());
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i != j && self.mat[(i, j)] != zero {
                    return false;
                }
            }
        }
        true
    }

    /// Eigendecomposition of a hermitian operator; returns the real
    /// eigenvalues and the unitary of column eigenvectors.
    pub fn hermitian_eig(&self) -> (Vec<T>, Self) {
        let eig = nalgebra::SymmetricEigen::new(self.mat.clone());
        (
            eig.eigenvalues.iter().copied().collect(),
            Self {
                mat: eig.eigenvectors,
            },
        )
    }

    /// Project a nearly-unitary matrix back onto the unitary group by one
    /// Newton-Schulz step, `U (3 I - U^dag U) / 2`. Squares the deviation,
    /// which removes the rounding drift of long slice products.
    pub fn reunitarize(&self) -> Self {
        let dim = self.dim();
        let half = Complex::new(T::of(0.5), T::zero());
        let three = Complex::new(T::of(3.0), T::zero());
        let gram = self.mat.adjoint() * &self.mat;
        let correction = DMatrix::identity(dim, dim) * three - gram;
        Self {
            mat: (&self.mat * correction).map(|x| x * half),
        }
    }
}

impl<T: Real> std::ops::Mul for &Operator<T> {
    type Output = Operator<T>;
    fn mul(self, rhs: &Operator<T>) -> Operator<T> {
        Operator {
            mat: &self.mat * &rhs.mat,
        }
    }
}

impl<T: Real> std::ops::Add for &Operator<T> {
    type Output = Operator<T>;
    fn add(self, rhs: &Operator<T>) -> Operator<T> {
        Operator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl<T: Real> std::ops::Sub for &Operator<T> {
    type Output = Operator<T>;
    fn sub(self, rhs: &Operator<T>) -> Operator<T> {
        Operator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

fn pauli_half<T: Real>(axis: Axis) -> DMatrix<Complex<T>> {
    let h = T::of(0.5);
    let zero = Complex::new(T::zero(), T::zero());
    match axis {
        Axis::X => DMatrix::from_row_slice(
            2,
            2,
            &[
                zero,
                Complex::new(h, T::zero()),
                Complex::new(h, T::zero()),
                zero,
            ],
        ),
        Axis::Y => DMatrix::from_row_slice(
            2,
            2,
            &[
                zero,
                Complex::new(T::zero(), -h),
                Complex::new(T::zero(), h),
                zero,
            ],
        ),
        Axis::Z => DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex::new(h, T::zero()),
                zero,
                zero,
                Complex::new(-h, T::zero()),
            ],
        ),
    }
}

/// Spin-1/2 angular momentum operator for one spin, embedded in the full
/// space: `1 (x) ... (x) sigma_axis/2 (x) ... (x) 1`.
pub fn single_spin_operator<T: Real>(
    system: &SpinSystem<T>,
    spin: usize,
    axis: Axis,
) -> Result<Operator<T>> {
    system.check_spin(spin)?;
    let mut factors = vec![PauliFactor::E; system.n_spins()];
    factors[spin] = match axis {
        Axis::X => PauliFactor::Ix,
        Axis::Y => PauliFactor::Iy,
        Axis::Z => PauliFactor::Iz,
    };
    term_to_operator(system, &ProductOperatorTerm::new(T::one(), factors))
}

/// Realize a product-operator term as a dense matrix:
/// `coefficient * (factor_0 (x) factor_1 (x) ...)`.
pub fn term_to_operator<T: Real>(
    system: &SpinSystem<T>,
    term: &ProductOperatorTerm<T>,
) -> Result<Operator<T>> {
    if term.factors.len() != system.n_spins() {
        return Err(Error::MalformedTerm(format!(
            "{} factors for {} spins",
            term.factors.len(),
            system.n_spins()
        )));
    }
    let mut mat = DMatrix::from_element(1, 1, Complex::new(term.coefficient, T::zero()));
    for f in &term.factors {
        let next = match f {
            PauliFactor::E => DMatrix::identity(2, 2),
            PauliFactor::Ix => pauli_half(Axis::X),
            PauliFactor::Iy => pauli_half(Axis::Y),
            PauliFactor::Iz => pauli_half(Axis::Z),
        };
        mat = mat.kronecker(&next);
    }
    Ok(Operator::from_matrix(mat))
}

/// The free Hamiltonian of the system in rad/s:
/// `sum_k 2 pi delta_k I_kz + sum_{k<l} 2 pi J_kl I_kz I_lz`, the
/// transverse coupling parts added in the strong-coupling model.
///
/// Weak-coupling output is exactly diagonal.
pub fn free_hamiltonian<T: Real>(system: &SpinSystem<T>) -> Operator<T> {
    free_hamiltonian_with(system, system.coupling_model())
}

/// Free Hamiltonian with an explicit coupling-model override.
pub fn free_hamiltonian_with<T: Real>(
    system: &SpinSystem<T>,
    model: CouplingModel,
) -> Operator<T> {
    let n = system.n_spins();
    let dim = system.dim();
    let two_pi = T::two_pi();

    // Diagonal (secular) part, built directly from m-values.
    let mut diag = vec![Complex::new(T::zero(), T::zero()); dim];
    for (state, d) in diag.iter_mut().enumerate() {
        let mut e = T::zero();
        for k in 0..n {
            e += two_pi * system.delta_hz(k) * system.m_value(state, k);
        }
        for k in 0..n {
            for l in (k + 1)..n {
                e += two_pi
                    * system.j_hz(k, l)
                    * system.m_value(state, k)
                    * system.m_value(state, l);
            }
        }
        *d = Complex::new(e, T::zero());
    }
    let mut h = Operator::diagonal(&diag);

    if let CouplingModel::StrongIsotropic = model {
        for k in 0..n {
            for l in (k + 1)..n {
                let j = system.j_hz(k, l);
                if j == T::zero() {
                    continue;
                }
                for axis in [Axis::X, Axis::Y] {
                    let mut factors = vec![PauliFactor::E; n];
                    let f = match axis {
                        Axis::X => PauliFactor::Ix,
                        Axis::Y => PauliFactor::Iy,
                        Axis::Z => unreachable!(),
                    };
                    factors[k] = f;
                    factors[l] = f;
                    let term = ProductOperatorTerm::new(two_pi * j, factors);
                    h = &h + &term_to_operator(system, &term).expect("well-formed term");
                }
            }
        }
    }
    h
}

/// Unitary time evolution `exp(-i H t)` of a hermitian generator.
///
/// Diagonal generators evolve by elementwise phases; anything else goes
/// through the hermitian eigendecomposition.
pub fn propagator<T: Real>(h: &Operator<T>, t_seconds: T) -> Result<Operator<T>> {
    h.expect_hermitian()?;
    let dim = h.dim();
    if h.is_exactly_diagonal() {
        let entries: Vec<Complex<T>> = (0..dim)
            .map(|i| {
                let phase = -h.entry(i, i).re * t_seconds;
                Complex::new(phase.cos(), phase.sin())
            })
            .collect();
        return Ok(Operator::diagonal(&entries));
    }
    let (vals, vecs) = h.hermitian_eig();
    let phases: Vec<Complex<T>> = vals
        .iter()
        .map(|&lam| {
            let phase = -lam * t_seconds;
            Complex::new(phase.cos(), phase.sin())
        })
        .collect();
    let d = Operator::diagonal(&phases);
    Ok(&(&vecs * &d) * &vecs.adjoint())
}

/// 2x2 rotation by `angle` about the transverse axis at azimuth `phase`
/// (radians from +x towards +y): `exp(-i angle (cos(phase) Ix + sin(phase) Iy))`.
fn transverse_rotation_2x2<T: Real>(angle: T, phase: T) -> DMatrix<Complex<T>> {
    let half = angle * T::of(0.5);
    let c = half.cos();
    let s = half.sin();
    // exp(-i a (cos p sx + sin p sy)/2) =
    //   [[cos(a/2), -i sin(a/2) e^{-ip}], [-i sin(a/2) e^{ip}, cos(a/2)]]
    DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex::new(c, T::zero()),
            Complex::new(-s * phase.sin(), -s * phase.cos()),
            Complex::new(s * phase.sin(), -s * phase.cos()),
            Complex::new(c, T::zero()),
        ],
    )
}

/// Instantaneous non-selective pulse: rotation of every spin by `angle`
/// about the transverse axis at azimuth `phase_axis`.
pub fn hard_pulse<T: Real>(system: &SpinSystem<T>, angle: T, phase_axis: T) -> Operator<T> {
    let u2 = transverse_rotation_2x2(angle, phase_axis);
    let mut mat = DMatrix::from_element(1, 1, Complex::new(T::one(), T::zero()));
    for _ in 0..system.n_spins() {
        mat = mat.kronecker(&u2);
    }
    Operator::from_matrix(mat)
}

/// Instantaneous perfectly selective pulse on one spin.
pub fn selective_pulse<T: Real>(
    system: &SpinSystem<T>,
    spin: usize,
    angle: T,
    phase_axis: T,
) -> Result<Operator<T>> {
    system.check_spin(spin)?;
    let u2 = transverse_rotation_2x2(angle, phase_axis);
    let mut mat = DMatrix::from_element(1, 1, Complex::new(T::one(), T::zero()));
    for k in 0..system.n_spins() {
        if k == spin {
            mat = mat.kronecker(&u2);
        } else {
            mat = mat.kronecker(&DMatrix::identity(2, 2));
        }
    }
    Ok(Operator::from_matrix(mat))
}

/// `|tr(U^dag V)| / dim`: 1 iff the unitaries agree up to a global phase.
pub fn phase_invariant_fidelity<T: Real>(u: &Operator<T>, v: &Operator<T>) -> Result<T> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(u.dim(), v.dim()));
    }
    let tr = (&u.adjoint() * v).trace();
    Ok(cmod(tr) / T::from_int(u.dim() as i64))
}

/// Reduced 2x2 matrix of one spin from a full-space matrix (partial trace
/// over all other spins).
pub fn partial_trace_single<T: Real>(
    mat: &DMatrix<Complex<T>>,
    n_spins: usize,
    spin: usize,
) -> DMatrix<Complex<T>> {
    let dim = 1usize << n_spins;
    assert_eq!(mat.nrows(), dim);
    let shift = n_spins - 1 - spin;
    let mut out = DMatrix::zeros(2, 2);
    for a in 0..2usize {
        for b in 0..2usize {
            let mut acc = Complex::new(T::zero(), T::zero());
            // Iterate states of the remaining spins.
            for rest in 0..(dim >> 1) {
                let low = rest & ((1 << shift) - 1);
                let high = (rest >> shift) << (shift + 1);
                let row = high | (a << shift) | low;
                let col = high | (b << shift) | low;
                acc += mat[(row, col)];
            }
            out[(a, b)] = acc;
        }
    }
    out
}
