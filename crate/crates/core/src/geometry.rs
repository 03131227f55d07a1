//! Geometric kernel: RIS state and anchor placement mapped to local-frame
//! direction vectors, angles, spatial frequencies and path delays.
//!
//! All angles are radians. Receiver indices are zero-based (`m = 0..M`).

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Positions closer than this are treated as coincident.
const MIN_SEPARATION: f64 = 1e-9;

/// Static system description. All quantities are SI and linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tx: Vec3,
    pub anchors: Vec<Vec3>,
    /// Carrier wavelength (m).
    pub wavelength: f64,
    /// RIS inter-element spacing (m).
    pub element_spacing: f64,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub num_subcarriers: usize,
    /// Subcarrier spacing (Hz).
    pub subcarrier_spacing: f64,
    /// Number of OFDM symbols (RIS profiles) per observation.
    pub num_symbols: usize,
    /// Per-subcarrier transmit power (W).
    pub transmit_power: f64,
    /// Noise power spectral density (W/Hz).
    pub noise_psd: f64,
    /// Receiver noise factor (linear).
    pub noise_factor: f64,
    pub ifft_size: usize,
    /// Propagation speed (m/s).
    pub speed_of_light: f64,
}

impl Scenario {
    /// The reference simulation setup: two receivers, a 17×17 RIS at 1 cm
    /// wavelength, 128 subcarriers at 120 kHz, 100 symbols, 20 dBm.
    pub fn table1() -> Self {
        Scenario {
            tx: Vec3::zeros(),
            anchors: vec![Vec3::new(-3.0, 5.0, -1.0), Vec3::new(3.0, -3.0, 0.0)],
            wavelength: 0.01,
            element_spacing: 0.0025,
            ris_rows: 17,
            ris_cols: 17,
            num_subcarriers: 128,
            subcarrier_spacing: 120e3,
            num_symbols: 100,
            transmit_power: crate::units::dbm_to_watts(20.0),
            noise_psd: crate::units::dbm_to_watts(-174.0),
            noise_factor: crate::units::db_to_linear(5.0),
            ifft_size: 4096,
            speed_of_light: 3e8,
        }
    }

    pub fn num_receivers(&self) -> usize {
        self.anchors.len()
    }

    pub fn num_elements(&self) -> usize {
        self.ris_rows * self.ris_cols
    }

    /// Width of one IFFT delay bin, `1 / (N_F Δf)` seconds.
    pub fn delay_bin(&self) -> f64 {
        1.0 / (self.ifft_size as f64 * self.subcarrier_spacing)
    }

    /// Per-sample noise variance `N0 · nf · Δf`.
    pub fn noise_variance(&self) -> f64 {
        crate::signal::noise_variance(self.noise_psd, self.noise_factor, self.subcarrier_spacing)
    }

    pub fn with_transmit_power_dbm(mut self, dbm: f64) -> Self {
        self.transmit_power = crate::units::dbm_to_watts(dbm);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        // Single-receiver scenarios are allowed so the bound code can report
        // their unidentifiability; the estimators enforce their own minimums.
        if self.anchors.is_empty() {
            return bad("at least one receiver is required".into());
        }
        if !(self.wavelength > 0.0) || !(self.element_spacing > 0.0) {
            return bad("wavelength and element spacing must be positive".into());
        }
        if self.element_spacing > self.wavelength / 2.0 * (1.0 + 1e-12) {
            return bad(format!(
                "element spacing {} exceeds half a wavelength {}",
                self.element_spacing,
                self.wavelength / 2.0
            ));
        }
        if self.ris_rows == 0 || self.ris_cols == 0 || self.num_subcarriers == 0 || self.num_symbols == 0 {
            return bad("RIS size, subcarrier count and symbol count must be >= 1".into());
        }
        if self.ifft_size < self.num_subcarriers {
            return bad(format!(
                "IFFT size {} smaller than subcarrier count {}",
                self.ifft_size, self.num_subcarriers
            ));
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.speed_of_light > 0.0) {
            return bad("subcarrier spacing and propagation speed must be positive".into());
        }
        if !(self.transmit_power > 0.0) || !(self.noise_psd >= 0.0) || !(self.noise_factor > 0.0) {
            return bad("power and noise figures must be positive".into());
        }
        let all_finite = std::iter::once(&self.tx)
            .chain(&self.anchors)
            .all(|p| p.iter().all(|c| c.is_finite()));
        if !all_finite {
            return bad("positions must be finite".into());
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if (a - self.tx).norm() < MIN_SEPARATION {
                return bad(format!("receiver {i} coincides with the transmitter"));
            }
            for (j, b) in self.anchors.iter().enumerate().skip(i + 1) {
                if (a - b).norm() < MIN_SEPARATION {
                    return bad(format!("receivers {i} and {j} coincide"));
                }
            }
        }
        Ok(())
    }
}

/// Unknown RIS state: position and rotation about the z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisState {
    pub position: Vec3,
    /// Orientation in `[0, 2π)`.
    pub alpha: f64,
}

impl RisState {
    pub fn new(position: Vec3, alpha: f64) -> Self {
        RisState { position, alpha: wrap_angle(alpha) }
    }

    /// Reference truth: `[4, 1, -4]` m, `π/6`.
    pub fn table1() -> Self {
        RisState::new(Vec3::new(4.0, 1.0, -4.0), PI / 6.0)
    }

    pub fn check_nondegenerate(&self, scenario: &Scenario) -> Result<()> {
        if (self.position - scenario.tx).norm() < MIN_SEPARATION {
            return Err(Error::DegenerateGeometry("RIS coincides with the transmitter".into()));
        }
        for (m, a) in scenario.anchors.iter().enumerate() {
            if (self.position - a).norm() < MIN_SEPARATION {
                return Err(Error::DegenerateGeometry(format!("RIS coincides with receiver {m}")));
            }
        }
        Ok(())
    }
}

/// Elevation / azimuth pair. `el ∈ [0, π]`, `az ∈ (-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    pub el: f64,
    pub az: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpatialFreqs {
    pub w0: f64,
    pub w1: f64,
}

impl SpatialFreqs {
    pub fn new(w0: f64, w1: f64) -> Self {
        SpatialFreqs { w0, w1 }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed angular difference folded into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Rotation about z by `alpha`, mapping global vectors into the RIS frame.
pub fn rotation_matrix(alpha: f64) -> Matrix3<f64> {
    let (s, c) = alpha.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

fn unit_towards(from: &Vec3, to: &Vec3, what: &str) -> Result<(Vec3, f64)> {
    let d = to - from;
    let n = d.norm();
    if n < MIN_SEPARATION {
        return Err(Error::DegenerateGeometry(format!("RIS coincides with the {what}")));
    }
    Ok((d / n, n))
}

/// Local-frame unit directions from the RIS to the TX and to receiver `m`.
pub fn direction_vectors(scenario: &Scenario, state: &RisState, m: usize) -> Result<(Vec3, Vec3)> {
    let link = Link::new(scenario, state, m)?;
    Ok((link.a_tr, link.a_rm))
}

pub fn angles_from_direction(a: &Vec3) -> Result<AnglePair> {
    let n = a.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitDirection(n));
    }
    // atan2(0, 0) = 0 at the poles, where azimuth is unobservable.
    Ok(AnglePair { el: a.z.clamp(-1.0, 1.0).acos(), az: a.y.atan2(a.x) })
}

pub fn direction_from_angles(angles: &AnglePair) -> Vec3 {
    let (se, ce) = angles.el.sin_cos();
    let (sa, ca) = angles.az.sin_cos();
    Vec3::new(se * ca, se * sa, ce)
}

/// Spatial frequencies from the departure angle `theta` (towards the
/// receiver) and the arrival angle `phi` (from the TX).
pub fn spatial_frequencies(theta: &AnglePair, phi: &AnglePair) -> SpatialFreqs {
    SpatialFreqs {
        w0: phi.el.sin() * phi.az.cos() + theta.el.sin() * theta.az.cos(),
        w1: phi.el.sin() * phi.az.sin() + theta.el.sin() * theta.az.sin(),
    }
}

/// TX → RIS → receiver `m` propagation delay in seconds.
pub fn path_delay(scenario: &Scenario, state: &RisState, m: usize) -> f64 {
    let p = &state.position;
    ((scenario.tx - p).norm() + (scenario.anchors[m] - p).norm()) / scenario.speed_of_light
}

/// Everything the models need about one TX → RIS → RX link.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    /// Global unit vector RIS → TX.
    pub u_tx: Vec3,
    /// Global unit vector RIS → receiver.
    pub u_rx: Vec3,
    pub dist_tx: f64,
    pub dist_rx: f64,
    /// Local-frame directions.
    pub a_tr: Vec3,
    pub a_rm: Vec3,
    pub delay: f64,
}

impl Link {
    pub fn new(scenario: &Scenario, state: &RisState, m: usize) -> Result<Self> {
        let anchor = scenario.anchors.get(m).ok_or_else(|| {
            Error::InvalidArgument(format!("receiver index {m} out of range (M = {})", scenario.num_receivers()))
        })?;
        let (u_tx, dist_tx) = unit_towards(&state.position, &scenario.tx, "transmitter")?;
        let (u_rx, dist_rx) = unit_towards(&state.position, anchor, &format!("receiver {m}"))?;
        let r = rotation_matrix(state.alpha);
        Ok(Link {
            u_tx,
            u_rx,
            dist_tx,
            dist_rx,
            a_tr: r * u_tx,
            a_rm: r * u_rx,
            delay: (dist_tx + dist_rx) / scenario.speed_of_light,
        })
    }

    /// Arrival angle at the RIS from the TX.
    pub fn phi(&self) -> AnglePair {
        angles_from_direction(&self.a_tr).expect("normalized by construction")
    }

    /// Departure angle from the RIS towards the receiver.
    pub fn theta(&self) -> AnglePair {
        angles_from_direction(&self.a_rm).expect("normalized by construction")
    }

    pub fn spatial_freqs(&self) -> SpatialFreqs {
        spatial_frequencies(&self.theta(), &self.phi())
    }
}

/// Spatial frequencies for every receiver.
pub fn all_spatial_freqs(scenario: &Scenario, state: &RisState) -> Result<Vec<SpatialFreqs>> {
    (0..scenario.num_receivers())
        .map(|m| Link::new(scenario, state, m).map(|l| l.spatial_freqs()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Frozen from an independent numpy evaluation of the reference geometry.
    const A_TR: [f64; 3] = [-0.69006152, 0.19739964, 0.69631062];
    const PHI_EL: f64 = 0.8005519983805417;
    const PHI_AZ: f64 = 2.8629725411183586;
    const OMEGA: [[f64; 2]; 2] = [
        [-1.1622800976204632, 1.006960008354296],
        [-1.1889725013336536, -0.3185842215551647],
    ];
    const DELAYS: [f64; 2] = [4.782295971193552e-08, 3.8297084310253527e-08];

    #[test]
    fn rotation_identity_and_thirty_degrees() {
        assert_abs_diff_eq!(rotation_matrix(0.0), Matrix3::identity(), epsilon = 1e-15);
        let r = rotation_matrix(PI / 6.0);
        let expect = Matrix3::new(0.8660254037844386, 0.5, 0.0, -0.5, 0.8660254037844386, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(r, expect, epsilon = 1e-12);
    }

    #[test]
    fn table1_directions_and_angles() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let (a_tr, _) = direction_vectors(&sc, &st, 0).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(a_tr[i], A_TR[i], epsilon = 1e-8);
        }
        let ang = angles_from_direction(&a_tr).unwrap();
        assert_abs_diff_eq!(ang.el, PHI_EL, epsilon = 1e-9);
        assert_abs_diff_eq!(ang.az, PHI_AZ, epsilon = 1e-9);
    }

    #[test]
    fn table1_spatial_freqs_and_delays() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        for m in 0..2 {
            let w = Link::new(&sc, &st, m).unwrap().spatial_freqs();
            assert_abs_diff_eq!(w.w0, OMEGA[m][0], epsilon = 1e-12);
            assert_abs_diff_eq!(w.w1, OMEGA[m][1], epsilon = 1e-12);
            assert_abs_diff_eq!(path_delay(&sc, &st, m), DELAYS[m], epsilon = 1e-20);
        }
        assert_abs_diff_eq!(DELAYS[0], (33f64.sqrt() + 74f64.sqrt()) / 3e8, epsilon = 1e-22);
    }

    #[test]
    fn axis_aligned_direction() {
        let mut sc = Scenario::table1();
        sc.tx = Vec3::new(4.0, 1.0, 2.0);
        let st = RisState::new(Vec3::new(4.0, 1.0, -4.0), 0.0);
        let (a_tr, _) = direction_vectors(&sc, &st, 0).unwrap();
        assert_abs_diff_eq!(a_tr, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let ang = angles_from_direction(&a_tr).unwrap();
        assert_eq!((ang.el, ang.az), (0.0, 0.0));
    }

    #[test]
    fn broadside_spatial_freqs_vanish() {
        let up = AnglePair { el: 0.0, az: 1.3 };
        let w = spatial_frequencies(&up, &AnglePair { el: 0.0, az: -2.0 });
        assert_eq!((w.w0, w.w1), (0.0, 0.0));
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let sc = Scenario::table1();
        let st = RisState::new(sc.anchors[1], 0.3);
        assert!(matches!(direction_vectors(&sc, &st, 1), Err(Error::DegenerateGeometry(_))));
        assert!(st.check_nondegenerate(&sc).is_err());
        assert!(matches!(angles_from_direction(&Vec3::new(1.0, 1.0, 0.0)), Err(Error::NonUnitDirection(_))));
    }

    #[test]
    fn collinear_delay_is_minimal() {
        let sc = Scenario::table1();
        let st = RisState::new(sc.anchors[1] * 0.3, 0.0);
        let direct = (sc.tx - sc.anchors[1]).norm() / sc.speed_of_light;
        assert_abs_diff_eq!(path_delay(&sc, &st, 1), direct, epsilon = 1e-22);
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario::table1().validate().is_ok());
        let mut sc = Scenario::table1();
        sc.element_spacing = 0.006;
        assert!(sc.validate().is_err());
        let mut sc = Scenario::table1();
        sc.ifft_size = 64;
        assert!(sc.validate().is_err());
        let mut sc = Scenario::table1();
        sc.anchors[1] = sc.anchors[0];
        assert!(sc.validate().is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn rotation_is_proper_orthogonal(alpha in -100.0..100.0f64) {
            let r = rotation_matrix(alpha);
            let err = (r * r.transpose() - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn link_invariants(tx in vec3(), rx in vec3(), p in vec3(), alpha in 0.0..TAU, alpha2 in 0.0..TAU) {
            prop_assume!((tx - rx).norm() > 0.1 && (p - tx).norm() > 0.1 && (p - rx).norm() > 0.1);
            let mut sc = Scenario::table1();
            sc.tx = tx;
            sc.anchors = vec![rx];
            let st = RisState::new(p, alpha);
            let l = Link::new(&sc, &st, 0).unwrap();
            let w = l.spatial_freqs();
            prop_assert!((w.w0 - (l.a_tr.x + l.a_rm.x)).abs() < 1e-12);
            prop_assert!((w.w1 - (l.a_tr.y + l.a_rm.y)).abs() < 1e-12);
            prop_assert!(w.w0.abs() <= 2.0 && w.w1.abs() <= 2.0);
            prop_assert!(l.delay >= (tx - rx).norm() / sc.speed_of_light * (1.0 - 1e-15));

            let l2 = Link::new(&sc, &RisState::new(p, alpha2), 0).unwrap();
            prop_assert_eq!(l.delay, l2.delay);
            prop_assert!((l.a_tr.z - l2.a_tr.z).abs() < 1e-15);
            prop_assert!((l.a_rm.z - l2.a_rm.z).abs() < 1e-15);
        }

        #[test]
        fn angle_round_trip(el in 0.01..(PI - 0.01), az in -3.14..3.14f64) {
            let a = direction_from_angles(&AnglePair { el, az });
            let back = direction_from_angles(&angles_from_direction(&a).unwrap());
            prop_assert!((a - back).norm() < 1e-12);
        }
    }
}
