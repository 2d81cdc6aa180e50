//! Discrete-time single-input single-output linear systems and the classical
//! Youla-Kucera interconnection `u = Q(e + P u)`. Serves as ground truth for
//! the data-driven controller.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: RowDVector<f64>,
    d: f64,
    x: DVector<f64>,
}

/// Matrix-literal form used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpaceSpec {
    /// Rows of `A`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: RowDVector<f64>, d: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n {
            return Err(Error::shape(
                "state-space matrices",
                format!("A {n}x{n}, B {n}x1, C 1x{n}"),
                format!("A {}x{}, B {}x1, C 1x{}", a.nrows(), a.ncols(), b.len(), c.len()),
            ));
        }
        ensure_finite(a.as_slice(), "state-space A")?;
        ensure_finite(b.as_slice(), "state-space B")?;
        ensure_finite(c.as_slice(), "state-space C")?;
        ensure_finite(&[d], "state-space D")?;
        Ok(Self {
            a,
            b,
            c,
            d,
            x: DVector::zeros(n),
        })
    }

    /// A pure static gain `y = d u`.
    pub fn gain(d: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(0, 0), DVector::zeros(0), RowDVector::zeros(0), d)
    }

    pub fn from_spec(spec: &StateSpaceSpec) -> Result<Self> {
        let n = spec.a.len();
        if spec.a.iter().any(|row| row.len() != n) {
            return Err(Error::shape("state-space A rows", n, "ragged rows"));
        }
        let a = DMatrix::from_fn(n, n, |i, j| spec.a[i][j]);
        Self::new(
            a,
            DVector::from_column_slice(&spec.b),
            RowDVector::from_row_slice(&spec.c),
            spec.d,
        )
    }

    pub fn to_spec(&self) -> StateSpaceSpec {
        StateSpaceSpec {
            a: self.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: self.b.iter().copied().collect(),
            c: self.c.iter().copied().collect(),
            d: self.d,
        }
    }

    pub fn order(&self) -> usize {
        self.x.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d == 0.0
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.order() == 0 || spectral_radius(&self.a)? < 1.0)
    }

    pub fn state(&self) -> &[f64] {
        self.x.as_slice()
    }

    pub fn set_state(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.order() {
            return Err(Error::shape("state-space state", self.order(), x.len()));
        }
        ensure_finite(x, "state-space state")?;
        self.x.copy_from_slice(x);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.x.fill(0.0);
    }

    /// `C x`, the part of the output that does not depend on the current input.
    pub fn free_output(&self) -> f64 {
        self.c.dot(&self.x.transpose())
    }

    /// Returns `y = C x + D u` and advances the state.
    pub fn step(&mut self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::NonFinite("state-space input"));
        }
        let y = self.free_output() + self.d * u;
        self.x = &self.a * &self.x + &self.b * u;
        Ok(y)
    }

    /// Runs the recurrence over `u`, starting from `x0` when given and from
    /// the current state otherwise. The state is left at its final value.
    pub fn simulate(&mut self, u: &[f64], x0: Option<&[f64]>) -> Result<Vec<f64>> {
        ensure_finite(u, "state-space input")?;
        if let Some(x0) = x0 {
            self.set_state(x0)?;
        }
        u.iter().map(|&u| self.step(u)).collect()
    }

    /// Markov parameters `D, CB, CAB, CA^2B, ...`.
    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        out.push(self.d);
        let mut v = self.b.clone();
        for _ in 1..len {
            out.push(self.c.dot(&v.transpose()));
            v = &self.a * v;
        }
        out
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::shape("spectral radius", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    ensure_finite(a.as_slice(), "spectral radius input")?;
    let schur = Schur::try_new(a.clone(), 1e-14, 10_000)
        .ok_or(Error::NonFinite("eigenvalue iteration did not converge"))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Random stable system of the given order. Eigenvalue moduli are uniform in
/// `[0.1, 0.9]`; complex pairs appear with probability one half per pair.
/// The modal form is rotated by a random orthogonal matrix. `B`, `C` and (if
/// not strictly proper) `D` are standard normal.
pub fn random_stable<R: Rng + ?Sized>(order: usize, strictly_proper: bool, rng: &mut R) -> StateSpace {
    let mut modal = DMatrix::zeros(order, order);
    let mut k = 0;
    while k < order {
        let r: f64 = rng.random_range(0.1..=0.9);
        if k + 1 < order && rng.random::<bool>() {
            let theta: f64 = rng.random_range(0.1..std::f64::consts::PI - 0.1);
            let (s, c) = theta.sin_cos();
            modal[(k, k)] = r * c;
            modal[(k, k + 1)] = -r * s;
            modal[(k + 1, k)] = r * s;
            modal[(k + 1, k + 1)] = r * c;
            k += 2;
        } else {
            modal[(k, k)] = if rng.random::<bool>() { r } else { -r };
            k += 1;
        }
    }
    let q = random_orthogonal(order, rng);
    let a = &q * modal * q.transpose();
    let b = DVector::from_fn(order, |_, _| rng.sample(StandardNormal));
    let c = RowDVector::from_fn(order, |_, _| rng.sample(StandardNormal));
    let d = if strictly_proper { 0.0 } else { rng.sample(StandardNormal) };
    StateSpace::new(a, b, c, d).expect("dimensions are consistent by construction")
}

fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

/// Classical realization of `u = Q(e + P u)` with internal copies of the
/// plant `P` and the parameter `Q`.
#[derive(Debug, Clone)]
pub struct YoulaControllerLti {
    plant: StateSpace,
    q: StateSpace,
}

impl YoulaControllerLti {
    /// `plant` must be strictly proper and both systems stable.
    pub fn new(plant: StateSpace, q: StateSpace) -> Result<Self> {
        if !plant.is_strictly_proper() {
            return Err(Error::InvalidArgument("plant model must be strictly proper".into()));
        }
        if !plant.is_stable()? || !q.is_stable()? {
            return Err(Error::InvalidArgument("plant model and Q must be stable".into()));
        }
        let mut ctrl = Self { plant, q };
        ctrl.reset();
        Ok(ctrl)
    }

    pub fn reset(&mut self) {
        self.plant.reset();
        self.q.reset();
    }

    /// Feeds `e` plus the internal model's current output into `Q`, applies
    /// the resulting `u` to the internal model and returns it.
    pub fn yk_control_step(&mut self, e: f64) -> Result<f64> {
        if !e.is_finite() {
            return Err(Error::NonFinite("tracking error"));
        }
        let r_hat = e + self.plant.free_output();
        let u = self.q.step(r_hat)?;
        self.plant.step(u)?;
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_system(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
        StateSpace::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            RowDVector::from_element(1, c),
            d,
        )
        .unwrap()
    }

    fn normal_seq(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn zero_input_from_rest_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sys = random_stable(3, false, &mut rng);
        assert!(sys.simulate(&[0.0; 20], None).unwrap().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn geometric_impulse_response() {
        let mut sys = scalar_system(0.5, 1.0, 1.0, 0.0);
        let mut u = vec![0.0; 8];
        u[0] = 1.0;
        let y = sys.simulate(&u, Some(&[0.0])).unwrap();
        let expected: Vec<f64> = std::iter::once(0.0).chain((0..7).map(|k| 0.5f64.powi(k))).collect();
        assert_eq!(y, expected);
    }

    #[test]
    fn simulation_matches_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let mut sys = random_stable(3, false, &mut rng);
            let u = normal_seq(&mut rng, 120);
            let h = sys.impulse_response(u.len());
            let y = sys.simulate(&u, None).unwrap();
            for t in 0..u.len() {
                let conv: f64 = (0..=t).map(|k| h[k] * u[t - k]).sum();
                assert_abs_diff_eq!(y[t], conv, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn superposition_and_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sys = random_stable(3, false, &mut rng);
        let (u1, u2) = (normal_seq(&mut rng, 60), normal_seq(&mut rng, 60));
        let run = |u: &[f64]| sys.clone().simulate(u, None).unwrap();
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| 2.0 * a - 0.7 * b).collect();
        let (y1, y2, ym) = (run(&u1), run(&u2), run(&mix));
        for t in 0..60 {
            assert_abs_diff_eq!(ym[t], 2.0 * y1[t] - 0.7 * y2[t], epsilon = 1e-12);
        }
        let delayed: Vec<f64> = [0.0; 5].iter().chain(&u1).copied().collect();
        let yd = run(&delayed);
        for t in 0..60 {
            assert_abs_diff_eq!(yd[t + 5], y1[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_checks() {
        let a = DMatrix::zeros(2, 2);
        assert!(StateSpace::new(a.clone(), DVector::zeros(3), RowDVector::zeros(2), 0.0).is_err());
        let mut sys = StateSpace::new(a, DVector::zeros(2), RowDVector::zeros(2), 0.0).unwrap();
        assert!(sys.simulate(&[1.0], Some(&[0.0])).is_err());
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        assert_abs_diff_eq!(spectral_radius(&(DMatrix::identity(2, 2) * 0.5)).unwrap(), 0.5, epsilon = 1e-12);
        let nilpotent = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&nilpotent).unwrap(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn spectral_radius_recovers_constructed_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let eig: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let t = DMatrix::from_fn(4, 4, |i, j| {
                let g: f64 = rng.sample(StandardNormal);
                if i == j { 3.0 + g } else { 0.5 * g }
            });
            let a = &t * DMatrix::from_diagonal(&DVector::from_vec(eig.clone())) * t.clone().try_inverse().unwrap();
            let expected = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
            assert_abs_diff_eq!(spectral_radius(&a).unwrap(), expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn random_systems_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for order in 1..=8 {
            let sys = random_stable(order, true, &mut rng);
            let rho = spectral_radius(sys.a()).unwrap();
            assert!((0.1 - 1e-9..=0.9 + 1e-9).contains(&rho), "{rho}");
            assert!(sys.is_strictly_proper());
        }
    }

    #[test]
    fn zero_q_gives_zero_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plant = random_stable(2, true, &mut rng);
        let q = StateSpace::new(DMatrix::identity(1, 1) * 0.5, DVector::from_element(1, 1.0), RowDVector::zeros(1), 0.0)
            .unwrap();
        let mut ctrl = YoulaControllerLti::new(plant, q).unwrap();
        for e in normal_seq(&mut rng, 50) {
            assert_eq!(ctrl.yk_control_step(e).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_biproper_plant_and_bad_error() {
        let plant = scalar_system(0.5, 1.0, 1.0, 0.2);
        assert!(YoulaControllerLti::new(plant, StateSpace::gain(1.0).unwrap()).is_err());
        let unstable = scalar_system(1.1, 1.0, 1.0, 0.0);
        assert!(YoulaControllerLti::new(unstable, StateSpace::gain(1.0).unwrap()).is_err());
        let mut ctrl = YoulaControllerLti::new(scalar_system(0.5, 1.0, 1.0, 0.0), StateSpace::gain(1.0).unwrap()).unwrap();
        assert!(ctrl.yk_control_step(f64::NAN).is_err());
    }

    /// Power-series coefficients of `num(z^-1) / den(z^-1)`.
    fn long_division(num: &[f64], den: &[f64], len: usize) -> Vec<f64> {
        let mut c = vec![0.0; len];
        for k in 0..len {
            let mut acc = num.get(k).copied().unwrap_or(0.0);
            for j in 1..den.len().min(k + 1) {
                acc -= den[j] * c[k - j];
            }
            c[k] = acc / den[0];
        }
        c
    }

    #[test]
    fn step_response_matches_closed_form() {
        // P = 1/(z - 0.5), Q = 0.3, so Q / (1 - QP) = 0.3 (1 - 0.5 z^-1) / (1 - 0.8 z^-1).
        let plant = scalar_system(0.5, 1.0, 1.0, 0.0);
        let mut ctrl = YoulaControllerLti::new(plant, StateSpace::gain(0.3).unwrap()).unwrap();
        let coeffs = long_division(&[0.3, -0.15], &[1.0, -0.8], 101);
        let mut expected = 0.0;
        for c in coeffs {
            expected += c;
            assert_abs_diff_eq!(ctrl.yk_control_step(1.0).unwrap(), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn spec_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sys = random_stable(3, false, &mut rng);
        let text = toml::to_string(&sys.to_spec()).unwrap();
        let back = StateSpace::from_spec(&toml::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, sys);
    }

    proptest! {
        #[test]
        fn zero_error_from_rest_gives_zero_control(seed in 0u64..1000, steps in 1usize..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctrl = YoulaControllerLti::new(random_stable(3, true, &mut rng), random_stable(2, false, &mut rng)).unwrap();
            for _ in 0..steps {
                prop_assert_eq!(ctrl.yk_control_step(0.0).unwrap(), 0.0);
            }
        }
    }
}
