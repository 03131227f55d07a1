//! Orientation line search, candidate selection and the final
//! maximum-likelihood refinement over `(p_ris, α)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Link, RisState, Scenario, SpatialFreqs, Vec3};
use crate::optim::{minimize, QuasiNewtonOptions, Termination};
use crate::signal::{delay_steering, ris_response, ObservationSet, PhaseProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Refined,
}

/// Which residual `select_position` minimizes over the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCost {
    /// `‖Σ_m y_m^r − Σ_m β_m Γ b_m‖²`, receivers summed before the norm.
    #[default]
    Summed,
    /// `Σ_m ‖y_m^r − β_m Γ b_m‖²`.
    PerReceiver,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateEstimate {
    #[serde(serialize_with = "ser_vec3")]
    pub position: Vec3,
    /// In `[0, 2π)`.
    pub alpha: f64,
    #[serde(serialize_with = "ser_complex")]
    pub gains: Vec<Complex64>,
    pub stage: Stage,
    /// Objective of the stage that produced the estimate.
    pub cost: f64,
    /// Concentrated ML cost `Σ_m min_g ‖Y_m − g s_m‖²`, comparable across stages.
    pub ml_cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl StateEstimate {
    pub fn state(&self) -> RisState {
        RisState::new(self.position, self.alpha)
    }
}

pub(crate) fn ser_vec3<S: serde::Serializer>(p: &Vec3, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&[p.x, p.y, p.z], s)
}

pub(crate) fn ser_complex<S: serde::Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let pairs: Vec<[f64; 2]> = v.iter().map(|c| [c.re, c.im]).collect();
    serde::Serialize::serialize(&pairs, s)
}

/// `(u_tx + u_rx)_{xy}` per receiver: rotating it by `R_α` gives `ω^m(α)`.
fn direction_sums(p: &Vec3, scenario: &Scenario) -> Result<Vec<[f64; 2]>> {
    let state = RisState::new(*p, 0.0);
    (0..scenario.num_receivers())
        .map(|m| {
            let l = Link::new(scenario, &state, m)?;
            let v = l.u_tx + l.u_rx;
            Ok([v.x, v.y])
        })
        .collect()
}

/// `α̂(p̃) = argmin_α Σ_m ‖ω̂^m − ω^m(α; p̃)‖²`: dense grid over `[0, 2π)`
/// with step `grid_step`, then a quasi-Newton polish.
pub fn orientation_for_position(
    p: &Vec3,
    omegas: &[SpatialFreqs],
    scenario: &Scenario,
    grid_step: f64,
    opts: &QuasiNewtonOptions,
) -> Result<f64> {
    if omegas.len() != scenario.num_receivers() {
        return Err(Error::InvalidArgument("one spatial-frequency estimate per receiver required".into()));
    }
    if !(grid_step > 0.0) {
        return Err(Error::InvalidArgument("orientation grid step must be positive".into()));
    }
    let v = direction_sums(p, scenario)?;
    // Σ‖ω̂ − R v‖² = const − 2(cos α · A + sin α · B)
    let (mut a, mut b) = (0.0, 0.0);
    for (w, v) in omegas.iter().zip(&v) {
        a += w.w0 * v[0] + w.w1 * v[1];
        b += w.w0 * v[1] - w.w1 * v[0];
    }
    let cost = |al: f64| {
        let (s, c) = al.sin_cos();
        omegas
            .iter()
            .zip(&v)
            .map(|(w, v)| (w.w0 - (c * v[0] + s * v[1])).powi(2) + (w.w1 - (-s * v[0] + c * v[1])).powi(2))
            .sum::<f64>()
    };
    let n = (TAU / grid_step).round().max(1.0) as usize;
    let mut best = (0, f64::MIN);
    for i in 0..n {
        let (s, c) = (TAU * i as f64 / n as f64).sin_cos();
        let score = c * a + s * b;
        if score > best.1 {
            best = (i, score);
        }
    }
    let start = TAU * best.0 as f64 / n as f64;
    let res = minimize(|x| cost(x[0]), &[start], opts);
    Ok(wrap_angle(res.x[0]))
}

/// Per-receiver model pieces for a given state.
struct ModelTerms {
    /// `c_m = Γ b(ω^m)`.
    c: Vec<Vec<Complex64>>,
    delays: Vec<f64>,
}

fn model_terms(scenario: &Scenario, state: &RisState, profile: &PhaseProfile) -> Result<ModelTerms> {
    let mut c = Vec::with_capacity(scenario.num_receivers());
    let mut delays = Vec::with_capacity(scenario.num_receivers());
    for m in 0..scenario.num_receivers() {
        let l = Link::new(scenario, state, m)?;
        let b = ris_response(l.spatial_freqs(), scenario.ris_rows, scenario.ris_cols, scenario.element_spacing, scenario.wavelength);
        c.push(profile.apply(&b));
        delays.push(l.delay);
    }
    Ok(ModelTerms { c, delays })
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn energy(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub alpha: f64,
    pub cost: f64,
    pub gains: Vec<Complex64>,
}

/// Orientation, per-receiver gains and selection cost for every candidate.
/// Degenerate candidates score `+∞`.
pub fn score_candidates(
    candidates: &[Vec3],
    y_r: &[Vec<Complex64>],
    omegas: &[SpatialFreqs],
    profile: &PhaseProfile,
    scenario: &Scenario,
    alpha_step: f64,
    kind: SelectionCost,
    opts: &QuasiNewtonOptions,
) -> Result<Vec<CandidateScore>> {
    if y_r.len() != scenario.num_receivers() {
        return Err(Error::InvalidArgument("one collapsed observation per receiver required".into()));
    }
    let scale = scenario.num_subcarriers as f64 * scenario.transmit_power.sqrt();
    let score = |p: &Vec3| -> Result<CandidateScore> {
        let alpha = match orientation_for_position(p, omegas, scenario, alpha_step, opts) {
            Ok(a) => a,
            Err(Error::DegenerateGeometry(_)) => {
                return Ok(CandidateScore { alpha: 0.0, cost: f64::INFINITY, gains: vec![] });
            }
            Err(e) => return Err(e),
        };
        let terms = model_terms(scenario, &RisState::new(*p, alpha), profile)?;
        let mut total = vec![Complex64::new(0.0, 0.0); profile.num_symbols()];
        let mut per_rx = 0.0;
        let mut gains = Vec::with_capacity(y_r.len());
        for (c, y) in terms.c.iter().zip(y_r) {
            let den = energy(c);
            let beta = if den > 0.0 { inner(c, y) / den } else { Complex64::new(0.0, 0.0) };
            gains.push(beta / scale);
            for ((t, yv), cv) in total.iter_mut().zip(y).zip(c) {
                *t += yv - beta * cv;
            }
            per_rx += y.iter().zip(c).map(|(yv, cv)| (yv - beta * cv).norm_sqr()).sum::<f64>();
        }
        let cost = match kind {
            SelectionCost::Summed => energy(&total),
            SelectionCost::PerReceiver => per_rx,
        };
        Ok(CandidateScore { alpha, cost, gains })
    };
    candidates.par_iter().map(score).collect()
}

/// Picks the candidate with the lowest selection cost; ties go to the lowest
/// index.
#[allow(clippy::too_many_arguments)]
pub fn select_position(
    candidates: &[Vec3],
    y_r: &[Vec<Complex64>],
    omegas: &[SpatialFreqs],
    obs: &ObservationSet,
    profile: &PhaseProfile,
    scenario: &Scenario,
    alpha_step: f64,
    kind: SelectionCost,
    opts: &QuasiNewtonOptions,
) -> Result<StateEstimate> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates("empty candidate set".into()));
    }
    let scores = score_candidates(candidates, y_r, omegas, profile, scenario, alpha_step, kind, opts)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.cost < scores[best].cost {
            best = i;
        }
    }
    let s = &scores[best];
    if !s.cost.is_finite() {
        return Err(Error::DegenerateGeometry("every candidate coincides with a node".into()));
    }
    let state = RisState::new(candidates[best], s.alpha);
    Ok(StateEstimate {
        position: candidates[best],
        alpha: s.alpha,
        gains: s.gains.clone(),
        stage: Stage::Coarse,
        cost: s.cost,
        ml_cost: ml_cost(obs, &state, profile, scenario)?.0,
        converged: true,
        iterations: 0,
    })
}

/// `Σ_m (‖Y_m‖² − |⟨s_m, Y_m⟩|² / ‖s_m‖²)` with `s_m = √P_t d(τ_m) c_mᵀ`,
/// plus the closed-form gains.
pub fn ml_cost(obs: &ObservationSet, state: &RisState, profile: &PhaseProfile, scenario: &Scenario) -> Result<(f64, Vec<Complex64>)> {
    if obs.y.len() != scenario.num_receivers() {
        return Err(Error::InvalidArgument("observation set does not match receiver count".into()));
    }
    let terms = model_terms(scenario, state, profile)?;
    let sqrt_p = scenario.transmit_power.sqrt();
    let mut total = 0.0;
    let mut gains = Vec::with_capacity(obs.y.len());
    for ((y, c), tau) in obs.y.iter().zip(&terms.c).zip(&terms.delays) {
        let d = delay_steering(*tau, y.nrows(), scenario.subcarrier_spacing);
        // w_t = Σ_n conj(d_n) Y_{n,t}
        let w: Vec<Complex64> = y.column_iter().map(|col| inner(&d, col.as_slice())).collect();
        let proj = inner(c, &w);
        let s_energy = y.nrows() as f64 * energy(c);
        let y_energy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        if s_energy > 0.0 {
            total += y_energy - proj.norm_sqr() / s_energy;
            gains.push(proj / (s_energy * sqrt_p));
        } else {
            total += y_energy;
            gains.push(Complex64::new(0.0, 0.0));
        }
    }
    Ok((total.max(0.0), gains))
}

/// Quasi-Newton descent on [`ml_cost`] over `(p_ris, α)` from `init`.
/// Never returns a state with a higher ML cost than `init`; a failed
/// descent returns `init` with `converged = false`.
pub fn mle_refine(
    obs: &ObservationSet,
    init: &StateEstimate,
    profile: &PhaseProfile,
    scenario: &Scenario,
    opts: &QuasiNewtonOptions,
) -> Result<StateEstimate> {
    let total: f64 = obs.y.iter().flat_map(|y| y.iter()).map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return Err(Error::ZeroObservation);
    }
    let init_state = init.state();
    let (init_cost, init_gains) = ml_cost(obs, &init_state, profile, scenario)?;
    let objective = |x: &[f64]| {
        let st = RisState { position: Vec3::new(x[0], x[1], x[2]), alpha: x[3] };
        match ml_cost(obs, &st, profile, scenario) {
            Ok((c, _)) => c / total,
            Err(_) => 1.0,
        }
    };
    let p = init.position;
    let res = minimize(objective, &[p.x, p.y, p.z, init.alpha], opts);
    let fallback = StateEstimate {
        gains: init_gains,
        stage: Stage::Refined,
        cost: init_cost,
        ml_cost: init_cost,
        converged: false,
        iterations: res.iterations,
        ..init.clone()
    };
    if !res.f.is_finite() || res.x.iter().any(|v| !v.is_finite()) {
        return Ok(fallback);
    }
    let state = RisState::new(Vec3::new(res.x[0], res.x[1], res.x[2]), res.x[3]);
    let (cost, gains) = match ml_cost(obs, &state, profile, scenario) {
        Ok(v) => v,
        Err(_) => return Ok(fallback),
    };
    if cost > init_cost {
        return Ok(fallback);
    }
    Ok(StateEstimate {
        position: state.position,
        alpha: state.alpha,
        gains,
        stage: Stage::Refined,
        cost,
        ml_cost: cost,
        converged: res.termination != Termination::MaxIterations,
        iterations: res.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::all_spatial_freqs;
    use crate::signal::{random_phase_profile, simulate_observations, ChannelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts() -> QuasiNewtonOptions {
        QuasiNewtonOptions::default()
    }

    /// Closed-form orientation: Procrustes rotation in the plane.
    fn procrustes(p: &Vec3, omegas: &[SpatialFreqs], sc: &Scenario) -> f64 {
        let st = RisState::new(*p, 0.0);
        let (mut a, mut b) = (0.0, 0.0);
        for (m, w) in omegas.iter().enumerate() {
            let l = Link::new(sc, &st, m).unwrap();
            let v = l.u_tx + l.u_rx;
            a += w.w0 * v.x + w.w1 * v.y;
            b += w.w0 * v.y - w.w1 * v.x;
        }
        wrap_angle(b.atan2(a))
    }

    #[test]
    fn orientation_at_truth() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let w = all_spatial_freqs(&sc, &st).unwrap();
        let a = orientation_for_position(&st.position, &w, &sc, 0.25f64.to_radians(), &opts()).unwrap();
        assert!((a - st.alpha).abs() < 1e-6, "{a}");
    }

    #[test]
    fn orientation_matches_closed_form_off_truth() {
        let sc = Scenario::table1();
        let w = vec![SpatialFreqs::new(-0.7, 0.4), SpatialFreqs::new(0.9, -1.1)];
        for p in [Vec3::new(3.0, 2.0, -5.0), Vec3::new(-1.0, 0.5, -2.0), Vec3::new(6.0, -3.0, -1.0)] {
            let a = orientation_for_position(&p, &w, &sc, 0.25f64.to_radians(), &opts()).unwrap();
            let oracle = procrustes(&p, &w, &sc);
            assert!(crate::geometry::angle_diff(a, oracle).abs() < 1e-6, "{a} vs {oracle}");
        }
    }

    #[test]
    fn orientation_with_one_receiver_still_returns() {
        let mut sc = Scenario::table1();
        sc.anchors.truncate(1);
        let st = RisState::table1();
        let w = all_spatial_freqs(&sc, &st).unwrap();
        let a = orientation_for_position(&st.position, &w, &sc, 0.01, &opts()).unwrap();
        assert!((0.0..TAU).contains(&a));
    }

    fn noise_free(sc: &Scenario, st: &RisState, prof: &PhaseProfile) -> (ObservationSet, ChannelParams) {
        let ch = ChannelParams::from_state(sc, st, &[0.7, -1.9]).unwrap();
        let obs = simulate_observations(sc, &ch, prof, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (obs, ch)
    }

    fn collapsed(obs: &ObservationSet, ch: &ChannelParams, sc: &Scenario) -> Vec<Vec<Complex64>> {
        obs.y
            .iter()
            .zip(&ch.rx)
            .map(|(y, rx)| {
                let yr = crate::estimator::toa::remove_delay(y, rx.delay, sc.subcarrier_spacing);
                crate::estimator::toa::collapse_subcarriers(&yr)
            })
            .collect()
    }

    #[test]
    fn singleton_candidate_at_truth_has_zero_cost() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let prof = random_phase_profile(sc.num_elements(), sc.num_symbols, &mut ChaCha8Rng::seed_from_u64(1));
        let (obs, ch) = noise_free(&sc, &st, &prof);
        let yr = collapsed(&obs, &ch, &sc);
        let w: Vec<SpatialFreqs> = ch.rx.iter().map(|r| r.omega).collect();
        let est = select_position(&[st.position], &yr, &w, &obs, &prof, &sc, 0.25f64.to_radians(), SelectionCost::Summed, &opts()).unwrap();
        let scale: f64 = yr.iter().map(|y| energy(y)).sum();
        assert!(est.cost < 1e-20 * scale, "{}", est.cost);
        assert_eq!(est.position, st.position);
        for (g, rx) in est.gains.iter().zip(&ch.rx) {
            assert!((g - rx.gain()).norm() < 1e-8 * rx.rho);
        }
    }

    #[test]
    fn selection_is_the_exhaustive_argmin() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let prof = random_phase_profile(sc.num_elements(), sc.num_symbols, &mut ChaCha8Rng::seed_from_u64(1));
        let (obs, ch) = noise_free(&sc, &st, &prof);
        let yr = collapsed(&obs, &ch, &sc);
        let w: Vec<SpatialFreqs> = ch.rx.iter().map(|r| r.omega).collect();
        let cands: Vec<Vec3> = (0..20).map(|i| st.position + Vec3::new(0.05 * i as f64 - 0.5, 0.02, -0.01)).collect();
        for kind in [SelectionCost::Summed, SelectionCost::PerReceiver] {
            let est = select_position(&cands, &yr, &w, &obs, &prof, &sc, 0.25f64.to_radians(), kind, &opts()).unwrap();
            let scores = score_candidates(&cands, &yr, &w, &prof, &sc, 0.25f64.to_radians(), kind, &opts()).unwrap();
            assert!(scores.iter().all(|s| est.cost <= s.cost));
            assert!((est.position - st.position).norm() < 0.05);
        }
        // Duplicated candidates tie; the first one wins.
        let dup = vec![cands[3], cands[10], cands[10]];
        let est = select_position(&dup, &yr, &w, &obs, &prof, &sc, 0.25f64.to_radians(), SelectionCost::Summed, &opts()).unwrap();
        assert_eq!(est.position, cands[10]);
    }

    #[test]
    fn ml_cost_vanishes_at_truth_and_grows_away() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let prof = random_phase_profile(sc.num_elements(), sc.num_symbols, &mut ChaCha8Rng::seed_from_u64(1));
        let (obs, ch) = noise_free(&sc, &st, &prof);
        let total: f64 = obs.y.iter().map(|y| y.norm_squared()).sum();
        let (c, g) = ml_cost(&obs, &st, &prof, &sc).unwrap();
        assert!(c < 1e-12 * total);
        for (g, rx) in g.iter().zip(&ch.rx) {
            assert!((g - rx.gain()).norm() < 1e-8 * rx.rho);
        }
        let off = RisState::new(st.position + Vec3::new(0.01, 0.0, 0.0), st.alpha);
        assert!(ml_cost(&obs, &off, &prof, &sc).unwrap().0 > 1e-6 * total);
    }

    #[test]
    fn refine_from_truth_stays() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let prof = random_phase_profile(sc.num_elements(), sc.num_symbols, &mut ChaCha8Rng::seed_from_u64(1));
        let (obs, _) = noise_free(&sc, &st, &prof);
        let init = StateEstimate {
            position: st.position,
            alpha: st.alpha,
            gains: vec![],
            stage: Stage::Coarse,
            cost: 0.0,
            ml_cost: 0.0,
            converged: true,
            iterations: 0,
        };
        let r = mle_refine(&obs, &init, &prof, &sc, &opts()).unwrap();
        assert!((r.position - st.position).norm() < 1e-6);
        assert!(crate::geometry::angle_diff(r.alpha, st.alpha).abs() < 1e-6);
        assert_eq!(r.stage, Stage::Refined);
    }

    #[test]
    fn refine_recovers_from_a_perturbed_start() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let prof = random_phase_profile(sc.num_elements(), sc.num_symbols, &mut ChaCha8Rng::seed_from_u64(1));
        let (obs, _) = noise_free(&sc, &st, &prof);
        let p0 = st.position + Vec3::new(0.03, -0.02, 0.025);
        let a0 = st.alpha + 0.01;
        let (c0, _) = ml_cost(&obs, &RisState::new(p0, a0), &prof, &sc).unwrap();
        let init = StateEstimate {
            position: p0,
            alpha: a0,
            gains: vec![],
            stage: Stage::Coarse,
            cost: c0,
            ml_cost: c0,
            converged: true,
            iterations: 0,
        };
        let r = mle_refine(&obs, &init, &prof, &sc, &opts()).unwrap();
        assert!(r.ml_cost <= c0);
        assert!((r.position - st.position).norm() < 1e-3, "{:?}", r.position - st.position);
        assert!(crate::geometry::angle_diff(r.alpha, st.alpha).abs() < 0.01f64.to_radians());
    }
}
