//! Fisher information for the channel parameters, the equivalent FIM of the
//! geometric channel parameters, the Jacobian to the RIS state, and the
//! TEB / WEB / PEB / OEB bounds.
//!
//! Channel parameter order (length `5M`):
//! `[τ_1..τ_M, ω0_1..ω0_M, ω1_1..ω1_M, ρ_1..ρ_M, φ_1..φ_M]`.
//! State order: `[x, y, z, α]`.

use nalgebra::{DMatrix, Matrix3, RowVector3, Vector3};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{rotation_matrix, Link, RisState, Scenario};
use crate::linalg;
use crate::signal::{delay_steering, ris_response, ChannelParams, PhaseProfile};

/// Channel-parameter FIM `J_ηch` (`5M × 5M`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFim {
    pub matrix: DMatrix<f64>,
    pub num_receivers: usize,
}

impl ChannelFim {
    pub fn delay_index(&self, m: usize) -> usize {
        m
    }
    pub fn omega0_index(&self, m: usize) -> usize {
        self.num_receivers + m
    }
    pub fn omega1_index(&self, m: usize) -> usize {
        2 * self.num_receivers + m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RxBounds {
    /// Delay bound (s).
    pub teb: f64,
    pub web0: f64,
    pub web1: f64,
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// FIM at the true channel of `state`. The gain phase does not enter the
/// information, so it is fixed to zero.
pub fn fim_channel(scenario: &Scenario, state: &RisState, profile: &PhaseProfile) -> Result<ChannelFim> {
    let channel = ChannelParams::from_state(scenario, state, &vec![0.0; scenario.num_receivers()])?;
    fim_from_channel(scenario, &channel, profile, scenario.noise_variance())
}

/// Analytic FIM `(2/σ²) Σ_t ℜ{∂M_tᴴ ∂M_t}`.
///
/// Every partial derivative of receiver `m`'s observation factors as an
/// outer product `x ⊗ y` (subcarrier vector times symbol vector), so each
/// entry reduces to `ℜ{(x_iᴴ x_j)(y_iᴴ y_j)}`. Receivers do not share
/// parameters, so the matrix is block diagonal across `m`.
pub fn fim_from_channel(scenario: &Scenario, channel: &ChannelParams, profile: &PhaseProfile, sigma2: f64) -> Result<ChannelFim> {
    if !(sigma2 > 0.0) {
        return Err(Error::ZeroNoise);
    }
    let mm = channel.rx.len();
    let nc = scenario.num_subcarriers;
    let (rows, cols) = (scenario.ris_rows, scenario.ris_cols);
    let phase_scale = -TAU * scenario.element_spacing / scenario.wavelength;
    let sqrt_p = scenario.transmit_power.sqrt();
    let j = Complex64::new(0.0, 1.0);

    let mut fim = DMatrix::zeros(5 * mm, 5 * mm);
    for (m, rx) in channel.rx.iter().enumerate() {
        let d = delay_steering(rx.delay, nc, scenario.subcarrier_spacing);
        let dd: Vec<Complex64> = d
            .iter()
            .enumerate()
            .map(|(n, v)| v * Complex64::new(0.0, -TAU * scenario.subcarrier_spacing * n as f64))
            .collect();
        let b = ris_response(rx.omega, rows, cols, scenario.element_spacing, scenario.wavelength);
        let db0: Vec<Complex64> = b.iter().enumerate().map(|(k, v)| v * j * phase_scale * (k / cols) as f64).collect();
        let db1: Vec<Complex64> = b.iter().enumerate().map(|(k, v)| v * j * phase_scale * (k % cols) as f64).collect();
        let c = profile.apply(&b);
        let c0 = profile.apply(&db0);
        let c1 = profile.apply(&db1);

        let g = rx.gain() * sqrt_p;
        let unit_phase = Complex64::from_polar(sqrt_p, rx.phase);
        let scale = |v: &[Complex64], s: Complex64| v.iter().map(|x| x * s).collect::<Vec<_>>();
        let xs: [&[Complex64]; 5] = [&dd, &d, &d, &d, &d];
        let ys = [scale(&c, g), scale(&c0, g), scale(&c1, g), scale(&c, unit_phase), scale(&c, j * g)];
        let idx = [m, mm + m, 2 * mm + m, 3 * mm + m, 4 * mm + m];
        for a in 0..5 {
            for bb in a..5 {
                let v = 2.0 / sigma2 * (inner(xs[a], xs[bb]) * inner(&ys[a], &ys[bb])).re;
                fim[(idx[a], idx[bb])] = v;
                fim[(idx[bb], idx[a])] = v;
            }
        }
    }
    Ok(ChannelFim { matrix: fim, num_receivers: mm })
}

/// Per-receiver TEB / WEB from the full `5M × 5M` inverse.
pub fn teb_web(fim: &ChannelFim) -> Result<Vec<RxBounds>> {
    let inv = linalg::spd_inverse(&fim.matrix).map_err(|_| Error::UnidentifiableChannel)?;
    Ok((0..fim.num_receivers)
        .map(|m| RxBounds {
            teb: inv[(fim.delay_index(m), fim.delay_index(m))].sqrt(),
            web0: inv[(fim.omega0_index(m), fim.omega0_index(m))].sqrt(),
            web1: inv[(fim.omega1_index(m), fim.omega1_index(m))].sqrt(),
        })
        .collect())
}

/// Equivalent FIM of `η = [τ; ω0; ω1]` with the gains eliminated.
pub fn efim_eta(fim: &ChannelFim) -> Result<DMatrix<f64>> {
    linalg::schur_keep(&fim.matrix, 3 * fim.num_receivers).map_err(|_| Error::UnidentifiableChannel)
}

/// Partial derivatives of one spatial frequency pair with respect to the
/// angles of one direction `u` (global frame), chained down to `u`.
struct AngleChain {
    /// ∂ω0/∂u and ∂ω1/∂u contributed through this direction's angles.
    dw_du: [RowVector3<f64>; 2],
    /// ∂ω0/∂α and ∂ω1/∂α contributed through this direction's azimuth.
    dw_dalpha: [f64; 2],
}

fn angle_chain(u: &Vector3<f64>, alpha: f64, what: &str) -> Result<AngleChain> {
    let r = rotation_matrix(alpha);
    let r1: Vector3<f64> = r.row(0).transpose();
    let r2: Vector3<f64> = r.row(1).transpose();
    let r3: Vector3<f64> = r.row(2).transpose();
    // Row derivatives with respect to α.
    let r1p = Vector3::new(-alpha.sin(), alpha.cos(), 0.0);
    let r2p = Vector3::new(-alpha.cos(), -alpha.sin(), 0.0);

    let x = r1.dot(u);
    let y = r2.dot(u);
    let z = r3.dot(u);
    let rho2 = x * x + y * y;
    if rho2 < 1e-24 {
        return Err(Error::AzimuthSingular(format!("{what} direction is along the RIS normal")));
    }
    let el = z.clamp(-1.0, 1.0).acos();
    let az = y.atan2(x);

    let daz_du = ((r2 * x - r1 * y) / rho2).transpose();
    let del_du = (-r3 / (1.0 - z * z).sqrt()).transpose();
    let daz_dalpha = (x * r2p.dot(u) - y * r1p.dot(u)) / rho2;

    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    // ω0 ∋ sin(el)cos(az), ω1 ∋ sin(el)sin(az)
    let dw0_daz = -se * sa;
    let dw0_del = ce * ca;
    let dw1_daz = se * ca;
    let dw1_del = ce * sa;
    Ok(AngleChain {
        dw_du: [daz_du * dw0_daz + del_du * dw0_del, daz_du * dw1_daz + del_du * dw1_del],
        dw_dalpha: [dw0_daz * daz_dalpha, dw1_daz * daz_dalpha],
    })
}

fn du_dp(u: &Vector3<f64>, dist: f64) -> Matrix3<f64> {
    (u * u.transpose() - Matrix3::identity()) / dist
}

/// Jacobian `∂η/∂ζ` (`3M × 4`), rows ordered like `η`.
pub fn jacobian_t(scenario: &Scenario, state: &RisState) -> Result<DMatrix<f64>> {
    let mm = scenario.num_receivers();
    let mut t = DMatrix::zeros(3 * mm, 4);
    for m in 0..mm {
        let link = Link::new(scenario, state, m)?;
        let dtau = -(link.u_tx + link.u_rx).transpose() / scenario.speed_of_light;
        t.view_mut((m, 0), (1, 3)).copy_from(&dtau);

        let arrival = angle_chain(&link.u_tx, state.alpha, "TX")?;
        let departure = angle_chain(&link.u_rx, state.alpha, &format!("receiver {m}"))?;
        let dua = du_dp(&link.u_tx, link.dist_tx);
        let dud = du_dp(&link.u_rx, link.dist_rx);
        for i in 0..2 {
            let row = arrival.dw_du[i] * dua + departure.dw_du[i] * dud;
            let r = (i + 1) * mm + m;
            t.view_mut((r, 0), (1, 3)).copy_from(&row);
            t[(r, 3)] = arrival.dw_dalpha[i] + departure.dw_dalpha[i];
        }
    }
    Ok(t)
}

/// State FIM `Tᵀ J_η T`.
pub fn state_fim(jacobian: &DMatrix<f64>, efim: &DMatrix<f64>) -> DMatrix<f64> {
    let j = jacobian.transpose() * efim * jacobian;
    (&j + j.transpose()) * 0.5
}

/// Bounds for one evaluation point. Matrices are kept for diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CrbReport {
    pub rx: Vec<RxBounds>,
    /// Position bound (m).
    pub peb: f64,
    /// Orientation bound (rad).
    pub oeb: f64,
    #[serde(serialize_with = "ser_matrix")]
    pub channel_fim: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub efim: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub jacobian: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub state_fim: DMatrix<f64>,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().cloned().collect()).collect();
    rows.serialize(s)
}

impl CrbReport {
    pub fn csv_header(num_receivers: usize) -> Vec<String> {
        let mut h = vec!["peb_m".to_string(), "peb_db".into(), "oeb_rad".into(), "oeb_db".into()];
        for m in 1..=num_receivers {
            h.push(format!("teb{m}_s"));
            h.push(format!("web0_{m}"));
            h.push(format!("web1_{m}"));
        }
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            fmt(self.peb),
            fmt(crate::units::linear_to_db(self.peb)),
            fmt(self.oeb),
            fmt(crate::units::linear_to_db(self.oeb)),
        ];
        for b in &self.rx {
            r.extend([fmt(b.teb), fmt(b.web0), fmt(b.web1)]);
        }
        r
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.9e}")
}

/// PEB / OEB from a state FIM.
pub fn peb_oeb(state_fim: &DMatrix<f64>) -> Result<(f64, f64)> {
    let inv = linalg::spd_inverse(state_fim).map_err(|_| Error::UnidentifiableState)?;
    let peb = (inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)]).sqrt();
    Ok((peb, inv[(3, 3)].sqrt()))
}

pub fn state_bounds(scenario: &Scenario, state: &RisState, profile: &PhaseProfile) -> Result<CrbReport> {
    let channel_fim = fim_channel(scenario, state, profile)?;
    bounds_from_fim(scenario, state, channel_fim)
}

pub fn bounds_from_fim(scenario: &Scenario, state: &RisState, channel_fim: ChannelFim) -> Result<CrbReport> {
    let rx = teb_web(&channel_fim)?;
    let efim = efim_eta(&channel_fim)?;
    let jacobian = jacobian_t(scenario, state)?;
    let jz = state_fim(&jacobian, &efim);
    let (peb, oeb) = peb_oeb(&jz)?;
    Ok(CrbReport { rx, peb, oeb, channel_fim: channel_fim.matrix, efim, jacobian, state_fim: jz })
}

/// Position bound when only the delays are used: `τ` keeps its equivalent
/// information (spatial frequencies and gains eliminated) and maps to the
/// position through the delay rows of the Jacobian.
pub fn toa_only_peb(scenario: &Scenario, state: &RisState, profile: &PhaseProfile) -> Result<f64> {
    let fim = fim_channel(scenario, state, profile)?;
    let jacobian = jacobian_t(scenario, state)?;
    toa_only_peb_from(&fim, &jacobian)
}

pub fn toa_only_peb_from(fim: &ChannelFim, jacobian: &DMatrix<f64>) -> Result<f64> {
    let mm = fim.num_receivers;
    let j_tau = linalg::schur_keep(&fim.matrix, mm).map_err(|_| Error::UnidentifiableChannel)?;
    let t_tau = jacobian.view((0, 0), (mm, 3)).into_owned();
    let jp = t_tau.transpose() * j_tau * t_tau;
    let inv = linalg::spd_inverse(&jp).map_err(|_| Error::UnidentifiableState)?;
    Ok(inv.trace().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::signal::{noiseless_observation, random_phase_profile, RxChannel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Scenario {
        Scenario { num_subcarriers: 16, num_symbols: 8, ris_rows: 3, ris_cols: 3, ..Scenario::table1() }
    }

    /// Finite-difference FIM straight from the forward model.
    fn fd_fim(scenario: &Scenario, channel: &ChannelParams, profile: &PhaseProfile, sigma2: f64) -> DMatrix<f64> {
        let mm = channel.rx.len();
        let np = 5 * mm;
        let set = |rx: &mut RxChannel, which: usize, v: f64| match which {
            0 => rx.delay = v,
            1 => rx.omega.w0 = v,
            2 => rx.omega.w1 = v,
            3 => rx.rho = v,
            _ => rx.phase = v,
        };
        let get = |rx: &RxChannel, which: usize| match which {
            0 => rx.delay,
            1 => rx.omega.w0,
            2 => rx.omega.w1,
            3 => rx.rho,
            _ => rx.phase,
        };
        let nc = scenario.num_subcarriers;
        let t_len = scenario.num_symbols;
        // Stacked derivative: rows (m, n), columns t, one matrix per parameter.
        let mut partials = vec![DMatrix::<Complex64>::zeros(nc * mm, t_len); np];
        for p in 0..np {
            let (which, m) = (p / mm, p % mm);
            let v = get(&channel.rx[m], which);
            let h = 1e-6 * v.abs().max(if which == 4 || which == 1 || which == 2 { 1.0 } else { v.abs() });
            let mut plus = channel.rx[m];
            let mut minus = channel.rx[m];
            set(&mut plus, which, v + h);
            set(&mut minus, which, v - h);
            let d = (noiseless_observation(scenario, &plus, profile) - noiseless_observation(scenario, &minus, profile))
                / Complex64::new(2.0 * h, 0.0);
            partials[p].view_mut((m * nc, 0), (nc, t_len)).copy_from(&d);
        }
        DMatrix::from_fn(np, np, |a, b| {
            2.0 / sigma2 * partials[a].iter().zip(partials[b].iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>()
        })
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn fim_matches_finite_differences() {
        let sc = small();
        let st = RisState::table1();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(4));
        let channel = ChannelParams::from_state(&sc, &st, &[0.7, 2.9]).unwrap();
        let s2 = sc.noise_variance();
        let analytic = fim_from_channel(&sc, &channel, &profile, s2).unwrap().matrix;
        let numeric = fd_fim(&sc, &channel, &profile, s2);
        // Compare on the equilibrated scale so every parameter counts.
        let d: Vec<f64> = (0..analytic.nrows()).map(|i| 1.0 / analytic[(i, i)].sqrt()).collect();
        let eq = |a: &DMatrix<f64>| DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[i] * d[j]);
        assert!(rel_frob(&eq(&numeric), &eq(&analytic)) < 1e-5, "{}", rel_frob(&eq(&numeric), &eq(&analytic)));
        assert!(rel_frob(&numeric, &analytic) < 1e-5);
    }

    #[test]
    fn fim_is_psd_and_linear_in_power() {
        let sc = small();
        let st = RisState::table1();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(1));
        let j1 = fim_channel(&sc, &st, &profile).unwrap().matrix;
        assert!(j1.diagonal().iter().all(|v| *v >= 0.0));
        let d: Vec<f64> = (0..j1.nrows()).map(|i| 1.0 / j1[(i, i)].sqrt()).collect();
        let eq = DMatrix::from_fn(j1.nrows(), j1.ncols(), |i, j| j1[(i, j)] * d[i] * d[j]);
        assert!(linalg::min_relative_eigenvalue(&eq) > -1e-9);

        let mut sc2 = sc.clone();
        sc2.transmit_power *= 2.0;
        let j2 = fim_channel(&sc2, &st, &profile).unwrap().matrix;
        assert!(rel_frob(&j2, &(&j1 * 2.0)) < 1e-13);
    }

    #[test]
    fn zero_noise_is_an_error() {
        let sc = small();
        let st = RisState::table1();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(1));
        let ch = ChannelParams::from_state(&sc, &st, &[0.0, 0.0]).unwrap();
        assert_eq!(fim_from_channel(&sc, &ch, &profile, 0.0).unwrap_err(), Error::ZeroNoise);
    }

    fn fd_jacobian(sc: &Scenario, st: &RisState) -> DMatrix<f64> {
        let mm = sc.num_receivers();
        let eta = |s: &RisState| -> Vec<f64> {
            let mut v = vec![0.0; 3 * mm];
            for m in 0..mm {
                let l = Link::new(sc, s, m).unwrap();
                let w = l.spatial_freqs();
                v[m] = l.delay;
                v[mm + m] = w.w0;
                v[2 * mm + m] = w.w1;
            }
            v
        };
        let mut t = DMatrix::zeros(3 * mm, 4);
        for q in 0..4 {
            let h = if q < 3 { 1e-6 } else { 1e-7 };
            let (mut a, mut b) = (*st, *st);
            if q < 3 {
                a.position[q] += h;
                b.position[q] -= h;
            } else {
                a.alpha += h;
                b.alpha -= h;
            }
            let (ea, eb) = (eta(&a), eta(&b));
            for r in 0..3 * mm {
                t[(r, q)] = (ea[r] - eb[r]) / (2.0 * h);
            }
        }
        t
    }

    #[test]
    fn jacobian_matches_finite_differences_table1() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let t = jacobian_t(&sc, &st).unwrap();
        let fd = fd_jacobian(&sc, &st);
        for r in 0..t.nrows() {
            let scale = fd.row(r).abs().max();
            for q in 0..4 {
                assert!((t[(r, q)] - fd[(r, q)]).abs() <= 1e-6 * scale, "row {r} col {q}: {} vs {}", t[(r, q)], fd[(r, q)]);
            }
        }
        for m in 0..2 {
            assert_eq!(t[(m, 3)], 0.0);
        }
    }

    #[test]
    fn jacobian_omega_rows_are_translation_invariant() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let shift = Vec3::new(3.0, -7.0, 2.5);
        let mut sc2 = sc.clone();
        sc2.tx += shift;
        for a in &mut sc2.anchors {
            *a += shift;
        }
        let st2 = RisState::new(st.position + shift, st.alpha);
        let (t1, t2) = (jacobian_t(&sc, &st).unwrap(), jacobian_t(&sc2, &st2).unwrap());
        assert!((t1.rows(2, 4) - t2.rows(2, 4)).abs().max() < 1e-12);
    }

    #[test]
    fn jacobian_pole_is_singular() {
        let mut sc = Scenario::table1();
        sc.tx = Vec3::new(4.0, 1.0, 0.0);
        let err = jacobian_t(&sc, &RisState::table1()).unwrap_err();
        assert!(matches!(err, Error::AzimuthSingular(_)));
    }

    #[test]
    fn efim_is_dominated_by_raw_block() {
        let sc = small();
        let st = RisState::table1();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(8));
        let fim = fim_channel(&sc, &st, &profile).unwrap();
        let e = efim_eta(&fim).unwrap();
        let raw = fim.matrix.view((0, 0), (6, 6)).into_owned();
        let diff = &raw - &e;
        let d: Vec<f64> = (0..6).map(|i| 1.0 / raw[(i, i)].sqrt()).collect();
        let eq = DMatrix::from_fn(6, 6, |i, j| diff[(i, j)] * d[i] * d[j]);
        assert!(linalg::min_relative_eigenvalue(&eq) * eq.norm() > -1e-9);
        let direct = linalg::spd_inverse(&linalg::spd_inverse(&fim.matrix).unwrap().view((0, 0), (6, 6)).into_owned()).unwrap();
        assert!(rel_frob(&direct, &e) < 1e-9);
    }

    #[test]
    fn teb_web_power_law_and_separability() {
        let sc = small();
        let st = RisState::table1();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(2));
        let b1 = teb_web(&fim_channel(&sc, &st, &profile).unwrap()).unwrap();
        let mut sc2 = sc.clone();
        sc2.transmit_power *= 2.0;
        let b2 = teb_web(&fim_channel(&sc2, &st, &profile).unwrap()).unwrap();
        for (a, b) in b1.iter().zip(&b2) {
            assert!((a.teb / b.teb - 2f64.sqrt()).abs() < 1e-9);
            assert!((a.web0 / b.web0 - 2f64.sqrt()).abs() < 1e-9);
            assert!((a.web1 / b.web1 - 2f64.sqrt()).abs() < 1e-9);
        }
        let mut sc3 = sc.clone();
        sc3.anchors[1] = Vec3::new(2.0, -4.0, 0.5);
        let b3 = teb_web(&fim_channel(&sc3, &st, &profile).unwrap()).unwrap();
        assert!((b3[0].teb / b1[0].teb - 1.0).abs() < 1e-9);
        assert!((b3[0].web1 / b1[0].web1 - 1.0).abs() < 1e-9);
        assert!((b3[1].teb / b1[1].teb - 1.0).abs() > 1e-6);
    }

    #[test]
    fn single_receiver_state_is_unidentifiable() {
        let mut sc = small();
        sc.anchors.truncate(1);
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(2));
        let err = state_bounds(&sc, &RisState::table1(), &profile).unwrap_err();
        assert_eq!(err, Error::UnidentifiableState);
        let t = jacobian_t(&sc, &RisState::table1()).unwrap();
        assert_eq!(t.nrows(), 3);
    }

    #[test]
    fn toa_only_needs_three_receivers() {
        let sc = small();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(2));
        let st = RisState::table1();
        assert_eq!(toa_only_peb(&sc, &st, &profile).unwrap_err(), Error::UnidentifiableState);
        let mut sc3 = sc.clone();
        sc3.anchors.push(Vec3::new(0.0, 5.0, 0.0));
        let toa = toa_only_peb(&sc3, &st, &profile).unwrap();
        let full = state_bounds(&sc3, &st, &profile).unwrap().peb;
        assert!(full < toa);
    }

    #[test]
    fn toa_only_two_routes_agree() {
        // Route 1: delay EFIM straight from J_ηch. Route 2: eliminate the
        // spatial frequencies from J_η and use the reduced 3x3 state FIM.
        let mut sc = small();
        sc.anchors.push(Vec3::new(0.0, 5.0, 0.0));
        let st = RisState::table1();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(6));
        let fim = fim_channel(&sc, &st, &profile).unwrap();
        let t = jacobian_t(&sc, &st).unwrap();
        let route1 = toa_only_peb_from(&fim, &t).unwrap();
        let j_eta = efim_eta(&fim).unwrap();
        let j_tau = linalg::schur_keep(&j_eta, 3).unwrap();
        let mut t_tau = DMatrix::zeros(3, 4);
        t_tau.copy_from(&t.rows(0, 3));
        let jz = state_fim(&t_tau, &j_tau);
        let reduced = jz.view((0, 0), (3, 3)).into_owned();
        let route2 = linalg::spd_inverse(&reduced).unwrap().trace().sqrt();
        assert!((route1 / route2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn report_serializes() {
        let sc = small();
        let profile = random_phase_profile(9, 8, &mut ChaCha8Rng::seed_from_u64(2));
        let r = state_bounds(&sc, &RisState::table1(), &profile).unwrap();
        let js = serde_json::to_value(&r).unwrap();
        assert!(js["peb"].as_f64().unwrap() > 0.0);
        assert_eq!(js["jacobian"].as_array().unwrap().len(), 6);
        assert_eq!(CrbReport::csv_header(2).len(), r.csv_row().len());
    }
}
