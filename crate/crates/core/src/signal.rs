//! Forward model: steering vectors, RIS responses, channel gains, random
//! phase profiles and noisy per-receiver observations.
//!
//! Observation matrices are `N_c × T` (subcarrier × symbol), stored
//! column-major by `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{Link, RisState, Scenario, SpatialFreqs};

pub type CMatrix = DMatrix<Complex64>;

/// Exponent of the element-pattern factor in the path-gain model.
const ELEMENT_PATTERN_EXP: f64 = 0.285;

/// `exp(-j 2π n Δf τ)` for `n = 0..N_c`.
pub fn delay_steering(tau: f64, num_subcarriers: usize, spacing: f64) -> Vec<Complex64> {
    (0..num_subcarriers)
        .map(|n| Complex64::from_polar(1.0, -TAU * n as f64 * spacing * tau))
        .collect()
}

/// Uniform linear array response `exp(-j 2π n (Δ/λ) ω)`, `n = 0..len`.
pub fn linear_response(omega: f64, len: usize, spacing_over_lambda: f64) -> Vec<Complex64> {
    (0..len)
        .map(|n| Complex64::from_polar(1.0, -TAU * n as f64 * spacing_over_lambda * omega))
        .collect()
}

/// Kronecker product, row-major over `(i, j)`.
pub fn kron(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

/// RIS response `a_0(ω0) ⊗ a_1(ω1)`; element `(r, c)` sits at `r·K_c + c`.
pub fn ris_response(w: SpatialFreqs, rows: usize, cols: usize, spacing: f64, wavelength: f64) -> Vec<Complex64> {
    let ratio = spacing / wavelength;
    kron(&linear_response(w.w0, rows, ratio), &linear_response(w.w1, cols, ratio))
}

/// Planar array response `a_r(ψ) ⊗ a_c(ψ)` for one elevation/azimuth pair.
pub fn planar_response(angles: &crate::geometry::AnglePair, rows: usize, cols: usize, spacing_over_lambda: f64) -> Vec<Complex64> {
    let (se, _) = angles.el.sin_cos();
    let (sa, ca) = angles.az.sin_cos();
    kron(
        &linear_response(se * ca, rows, spacing_over_lambda),
        &linear_response(se * sa, cols, spacing_over_lambda),
    )
}

/// Free-space RIS path amplitude for receiver `m`.
pub fn gain_amplitude(scenario: &Scenario, state: &RisState, m: usize) -> Result<f64> {
    let link = Link::new(scenario, state, m)?;
    let cos_theta = link.a_rm.z;
    let cos_phi = link.a_tr.z;
    if cos_theta <= 0.0 || cos_phi <= 0.0 {
        return Err(Error::BackIlluminated(format!(
            "receiver {m}: cos(theta_el) = {cos_theta:.4}, cos(phi_el) = {cos_phi:.4}"
        )));
    }
    let lambda = scenario.wavelength;
    Ok(lambda * lambda * (cos_theta * cos_phi).powf(ELEMENT_PATTERN_EXP) / (16.0 * PI * link.dist_tx * link.dist_rx))
}

/// Complex gain with amplitude from geometry and phase uniform on `[0, 2π)`.
pub fn channel_gain<R: Rng + ?Sized>(scenario: &Scenario, state: &RisState, m: usize, rng: &mut R) -> Result<Complex64> {
    let rho = gain_amplitude(scenario, state, m)?;
    let phase = rng.random_range(0.0..TAU);
    Ok(Complex64::from_polar(rho, phase))
}

/// RIS phase profile, one row `γ_tᵀ` per symbol; every entry unit modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    /// `T × K`.
    pub gamma: CMatrix,
}

impl PhaseProfile {
    pub fn from_matrix(gamma: CMatrix) -> Result<Self> {
        if gamma.iter().any(|g| (g.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("phase profile entries must be unit modulus".into()));
        }
        Ok(PhaseProfile { gamma })
    }

    /// Constant (all-ones) profile.
    pub fn constant(num_elements: usize, num_symbols: usize) -> Self {
        PhaseProfile { gamma: CMatrix::from_element(num_symbols, num_elements, Complex64::new(1.0, 0.0)) }
    }

    pub fn num_symbols(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn num_elements(&self) -> usize {
        self.gamma.ncols()
    }

    /// `Γ b`, a length-T vector.
    pub fn apply(&self, b: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.num_elements());
        let (t_len, k_len) = self.gamma.shape();
        let mut out = vec![Complex64::new(0.0, 0.0); t_len];
        // Column-major storage: accumulate one element column at a time.
        for k in 0..k_len {
            let col = self.gamma.column(k);
            let bk = b[k];
            for (o, g) in out.iter_mut().zip(col.iter()) {
                *o += g * bk;
            }
        }
        out
    }

    /// `Γᴴ y`, a length-K vector.
    pub fn adjoint_apply(&self, y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(y.len(), self.num_symbols());
        self.gamma
            .column_iter()
            .map(|col| col.iter().zip(y).map(|(g, v)| g.conj() * v).sum())
            .collect()
    }
}

pub fn random_phase_profile<R: Rng + ?Sized>(num_elements: usize, num_symbols: usize, rng: &mut R) -> PhaseProfile {
    let gamma = CMatrix::from_fn(num_symbols, num_elements, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..TAU)));
    PhaseProfile { gamma }
}

/// Per-receiver channel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxChannel {
    pub delay: f64,
    pub omega: SpatialFreqs,
    pub rho: f64,
    pub phase: f64,
}

impl RxChannel {
    pub fn gain(&self) -> Complex64 {
        Complex64::from_polar(self.rho, self.phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub rx: Vec<RxChannel>,
}

impl ChannelParams {
    /// True channel parameters for a state, with the given gain phases.
    pub fn from_state(scenario: &Scenario, state: &RisState, phases: &[f64]) -> Result<Self> {
        if phases.len() != scenario.num_receivers() {
            return Err(Error::InvalidArgument("one gain phase per receiver required".into()));
        }
        let rx = (0..scenario.num_receivers())
            .map(|m| {
                let link = Link::new(scenario, state, m)?;
                Ok(RxChannel {
                    delay: link.delay,
                    omega: link.spatial_freqs(),
                    rho: gain_amplitude(scenario, state, m)?,
                    phase: phases[m],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelParams { rx })
    }

    /// As `from_state`, drawing the gain phases uniformly from `rng`.
    pub fn draw<R: Rng + ?Sized>(scenario: &Scenario, state: &RisState, rng: &mut R) -> Result<Self> {
        let phases: Vec<f64> = (0..scenario.num_receivers()).map(|_| rng.random_range(0.0..TAU)).collect();
        Self::from_state(scenario, state, &phases)
    }
}

/// Noise-free observation `g √P_t d(τ) (Γ b(ω))ᵀ` for one receiver.
pub fn noiseless_observation(scenario: &Scenario, channel: &RxChannel, profile: &PhaseProfile) -> CMatrix {
    let d = delay_steering(channel.delay, scenario.num_subcarriers, scenario.subcarrier_spacing);
    let b = ris_response(channel.omega, scenario.ris_rows, scenario.ris_cols, scenario.element_spacing, scenario.wavelength);
    let c = profile.apply(&b);
    let amp = channel.gain() * scenario.transmit_power.sqrt();
    CMatrix::from_fn(d.len(), c.len(), |n, t| amp * d[n] * c[t])
}

/// Per-sample noise variance for a post-FFT bin: `N0 · nf · Δf`.
pub fn noise_variance(noise_psd: f64, noise_factor: f64, subcarrier_spacing: f64) -> f64 {
    noise_psd * noise_factor * subcarrier_spacing
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    /// One `N_c × T` matrix per receiver.
    pub y: Vec<CMatrix>,
    pub noise_variance: f64,
}

/// Adds circular complex Gaussian noise of variance `sigma2` to the
/// noise-free observations of every receiver.
pub fn simulate_observations<R: Rng + ?Sized>(
    scenario: &Scenario,
    channel: &ChannelParams,
    profile: &PhaseProfile,
    sigma2: f64,
    rng: &mut R,
) -> Result<ObservationSet> {
    if profile.num_elements() != scenario.num_elements() || profile.num_symbols() != scenario.num_symbols {
        return Err(Error::InvalidArgument(format!(
            "profile is {}x{}, scenario needs {}x{}",
            profile.num_symbols(),
            profile.num_elements(),
            scenario.num_symbols,
            scenario.num_elements()
        )));
    }
    if channel.rx.len() != scenario.num_receivers() {
        return Err(Error::InvalidArgument("channel parameters do not match receiver count".into()));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
    }
    let std = (sigma2 / 2.0).sqrt();
    let y = channel
        .rx
        .iter()
        .map(|rx| {
            let mut y = noiseless_observation(scenario, rx, profile);
            if sigma2 > 0.0 {
                for v in y.iter_mut() {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    *v += Complex64::new(re * std, im * std);
                }
            }
            y
        })
        .collect();
    Ok(ObservationSet { y, noise_variance: sigma2 })
}
