//! Position candidates from TOAs.
//!
//! Each delay puts the RIS on a prolate spheroid with foci at the TX and one
//! receiver. Two receivers leave a curve of candidates; three or more pin
//! the position down by least squares on the range-sum residuals.

use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{Scenario, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    #[serde(serialize_with = "ser_points")]
    pub points: Vec<Vec3>,
    /// Worst range-sum residual over the receivers, per point (m).
    pub residuals: Vec<f64>,
}

fn ser_points<S: serde::Serializer>(pts: &[Vec3], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(pts.len()))?;
    for p in pts {
        seq.serialize_element(&[p.x, p.y, p.z])?;
    }
    seq.end()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshOptions {
    pub azimuth: usize,
    pub polar: usize,
    /// Keep threshold on the spheroid-2 range-sum residual (m).
    pub threshold: f64,
    pub max_candidates: usize,
    /// Project kept mesh points onto the exact two-spheroid intersection.
    pub snap: bool,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions { azimuth: 400, polar: 200, threshold: 0.1, max_candidates: 500, snap: true }
    }
}

/// `‖q − p_tx‖ + ‖q − p_m‖ − L_m`.
fn range_residual(q: &Vec3, tx: &Vec3, anchor: &Vec3, range_sum: f64) -> f64 {
    (q - tx).norm() + (q - anchor).norm() - range_sum
}

fn range_sums(delays: &[f64], scenario: &Scenario) -> Result<Vec<f64>> {
    if delays.len() != scenario.num_receivers() {
        return Err(Error::InvalidArgument("one delay per receiver required".into()));
    }
    delays
        .iter()
        .zip(&scenario.anchors)
        .enumerate()
        .map(|(m, (t, a))| {
            let l = scenario.speed_of_light * t;
            let focal = (scenario.tx - a).norm();
            if !(l > focal) {
                return Err(Error::NoCandidates(format!(
                    "receiver {m}: range sum {l:.6} m does not exceed the focal distance {focal:.6} m"
                )));
            }
            Ok(l)
        })
        .collect()
}

/// Point on the spheroid with foci `f1`, `f2` and range sum `l`, at polar
/// angle `theta` from the focal axis and azimuth `phi` around it.
struct Spheroid {
    center: Vec3,
    axes: [Vec3; 3],
    a: f64,
    b: f64,
}

impl Spheroid {
    fn new(f1: &Vec3, f2: &Vec3, l: f64) -> Self {
        let d = f2 - f1;
        let e0 = d / d.norm();
        let helper = if e0.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = e0.cross(&helper).normalize();
        let e2 = e0.cross(&e1);
        let a = l / 2.0;
        let f = d.norm() / 2.0;
        Spheroid { center: (f1 + f2) / 2.0, axes: [e0, e1, e2], a, b: (a * a - f * f).sqrt() }
    }

    fn point(&self, theta: f64, phi: f64) -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        self.center + self.axes[0] * (self.a * ct) + (self.axes[1] * cp + self.axes[2] * sp) * (self.b * st)
    }
}

/// Minimum-norm Gauss-Newton projection onto the zero set of two residuals.
fn snap_two(q: Vec3, tx: &Vec3, anchors: [&Vec3; 2], sums: [f64; 2]) -> Option<Vec3> {
    let mut q = q;
    for _ in 0..20 {
        let r = [
            range_residual(&q, tx, anchors[0], sums[0]),
            range_residual(&q, tx, anchors[1], sums[1]),
        ];
        if r[0].abs().max(r[1].abs()) < 1e-12 {
            break;
        }
        let ut = (q - tx).normalize();
        let j0 = ut + (q - anchors[0]).normalize();
        let j1 = ut + (q - anchors[1]).normalize();
        let (a, b, c) = (j0.dot(&j0), j0.dot(&j1), j1.dot(&j1));
        let det = a * c - b * b;
        if det <= 1e-12 * a * c {
            return None;
        }
        // (J Jᵀ)⁻¹ r
        let l0 = (c * r[0] - b * r[1]) / det;
        let l1 = (a * r[1] - b * r[0]) / det;
        q -= j0 * l0 + j1 * l1;
    }
    Some(q)
}

/// The TX and every receiver lie in front of the surface (positive
/// elevation cosines). The reflection model is undefined behind it.
fn front_illuminated(q: &Vec3, scenario: &Scenario) -> bool {
    q.z < scenario.tx.z && scenario.anchors.iter().all(|a| q.z < a.z)
}

fn max_residual(q: &Vec3, scenario: &Scenario, sums: &[f64]) -> f64 {
    scenario
        .anchors
        .iter()
        .zip(sums)
        .map(|(a, l)| range_residual(q, &scenario.tx, a, *l).abs())
        .fold(0.0, f64::max)
}

/// Greedy minimum-distance thinning: walks the points in order and keeps one
/// only if no kept point lies within `r`. Every dropped point is therefore
/// within `r` of a kept one.
fn thin_radius(points: &[(Vec3, f64)], r: f64) -> Vec<(Vec3, f64)> {
    let key = |p: &Vec3| ((p.x / r).floor() as i64, (p.y / r).floor() as i64, (p.z / r).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<Vec3>> = HashMap::new();
    let mut kept = Vec::new();
    for (p, res) in points {
        let (i, j, k) = key(p);
        let near = (-1..=1).any(|di| {
            (-1..=1).any(|dj| {
                (-1..=1).any(|dk| {
                    grid.get(&(i + di, j + dj, k + dk)).is_some_and(|c| c.iter().any(|q| (q - p).norm() < r))
                })
            })
        });
        if !near {
            grid.entry((i, j, k)).or_default().push(*p);
            kept.push((*p, *res));
        }
    }
    kept
}

/// Smallest thinning radius (to 1%) that leaves at most `cap` points.
fn thin(points: Vec<(Vec3, f64)>, cap: usize) -> Vec<(Vec3, f64)> {
    if points.len() <= cap {
        return points;
    }
    let (mut lo, mut hi) = (0.0, 1e-3);
    let mut best = thin_radius(&points, hi);
    while best.len() > cap {
        lo = hi;
        hi *= 2.0;
        best = thin_radius(&points, hi);
    }
    while hi - lo > 0.01 * hi {
        let mid = 0.5 * (lo + hi);
        let t = thin_radius(&points, mid);
        if t.len() <= cap {
            hi = mid;
            best = t;
        } else {
            lo = mid;
        }
    }
    best
}

/// Candidate RIS positions consistent with the delays. Points behind the
/// surface plane of any node are discarded.
pub fn spheroid_candidates(delays: &[f64], scenario: &Scenario, mesh: &MeshOptions) -> Result<CandidateSet> {
    let sums = range_sums(delays, scenario)?;
    match sums.len() {
        0 => Err(Error::InvalidArgument("no receivers".into())),
        1 => Err(Error::Underdetermined("a single spheroid does not bound the position".into())),
        2 => two_spheroid_candidates(&sums, scenario, mesh),
        _ => {
            let fix = range_sum_solve(&sums, scenario)?;
            Ok(CandidateSet { points: vec![fix.position], residuals: vec![max_residual(&fix.position, scenario, &sums)] })
        }
    }
}

/// Extra snapped points per mesh crossing on each side along the curve.
const DENSIFY: usize = 4;

fn two_spheroid_candidates(sums: &[f64], scenario: &Scenario, mesh: &MeshOptions) -> Result<CandidateSet> {
    if mesh.azimuth == 0 || mesh.polar == 0 || mesh.max_candidates == 0 {
        return Err(Error::InvalidArgument("mesh sizes and candidate cap must be positive".into()));
    }
    let tx = scenario.tx;
    let (p1, p2) = (&scenario.anchors[0], &scenario.anchors[1]);
    let sph = Spheroid::new(&tx, p1, sums[0]);
    // Upper bound on the distance between neighbouring mesh points.
    let pitch = (PI * sph.a / mesh.polar as f64).max(TAU * sph.b / mesh.azimuth as f64);
    let snap = |q: Vec3| snap_two(q, &tx, [p1, p2], [sums[0], sums[1]]);
    let mut kept = Vec::new();
    let mut push = |q: Vec3| {
        if front_illuminated(&q, scenario) {
            kept.push((q, max_residual(&q, scenario, sums)));
        }
    };
    for j in 0..mesh.polar {
        let theta = PI * (j as f64 + 0.5) / mesh.polar as f64;
        for i in 0..mesh.azimuth {
            let phi = TAU * i as f64 / mesh.azimuth as f64;
            let q = sph.point(theta, phi);
            if range_residual(&q, &tx, p2, sums[1]).abs() >= mesh.threshold {
                continue;
            }
            if !mesh.snap {
                push(q);
                continue;
            }
            let Some(q) = snap(q) else {
                push(q);
                continue;
            };
            push(q);
            // Fill the gap to the next mesh crossing along the curve tangent.
            let ut = (q - tx).normalize();
            let t = (ut + (q - p1).normalize()).cross(&(ut + (q - p2).normalize()));
            let Some(t) = t.try_normalize(1e-12) else { continue };
            for k in 1..=DENSIFY {
                for sign in [-1.0, 1.0] {
                    if let Some(d) = snap(q + t * (sign * pitch * k as f64 / DENSIFY as f64)) {
                        push(d);
                    }
                }
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::NoCandidates(format!("no front-facing mesh point within d_th = {} m", mesh.threshold)));
    }
    let kept = thin(kept, mesh.max_candidates);
    let (points, residuals) = kept.into_iter().unzip();
    Ok(CandidateSet { points, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeSumFix {
    #[serde(serialize_with = "ser_vec3")]
    pub position: Vec3,
    /// RMS range-sum residual at the solution (m).
    pub residual_rms: f64,
}

fn ser_vec3<S: serde::Serializer>(p: &Vec3, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&[p.x, p.y, p.z], s)
}

fn sum_sq(q: &Vec3, scenario: &Scenario, sums: &[f64]) -> f64 {
    scenario.anchors.iter().zip(sums).map(|(a, l)| range_residual(q, &scenario.tx, a, *l).powi(2)).sum()
}

/// Levenberg-Marquardt on the range-sum residuals.
fn levenberg_marquardt(q0: Vec3, scenario: &Scenario, sums: &[f64]) -> Vec3 {
    let tx = scenario.tx;
    let mut q = q0;
    let mut cost = sum_sq(&q, scenario, sums);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = Vec3::zeros();
        let ut = match (q - tx).try_normalize(1e-12) {
            Some(u) => u,
            None => break,
        };
        for (a, l) in scenario.anchors.iter().zip(sums) {
            let Some(ua) = (q - a).try_normalize(1e-12) else { continue };
            let j = ut + ua;
            let r = range_residual(&q, &tx, a, *l);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj;
            for i in 0..3 {
                m[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = m.try_inverse().map(|inv| inv * jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cand = q - step;
            let c = sum_sq(&cand, scenario, sums);
            if c < cost {
                let done = step.norm() < 1e-13 * (1.0 + q.norm());
                q = cand;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || cost == 0.0 {
            break;
        }
    }
    q
}

/// Least-squares position from `M ≥ 3` range sums, multi-started from a
/// coarse mesh on spheroid 1.
///
/// A planar anchor layout leaves a mirror solution on the other side of
/// the plane. Equal-residual solutions are resolved in favour of the one
/// that sees the TX and every anchor from the front (`z` above the RIS).
fn range_sum_solve(sums: &[f64], scenario: &Scenario) -> Result<RangeSumFix> {
    let tx = scenario.tx;
    let sph = Spheroid::new(&tx, &scenario.anchors[0], sums[0]);
    let (na, np) = (24, 12);
    let mut starts: Vec<(f64, Vec3)> = Vec::with_capacity(na * np);
    for j in 0..np {
        let theta = PI * (j as f64 + 0.5) / np as f64;
        for i in 0..na {
            let q = sph.point(theta, TAU * i as f64 / na as f64);
            starts.push((sum_sq(&q, scenario, sums), q));
        }
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let front = |q: &Vec3| front_illuminated(q, scenario);
    let mut best: Option<(f64, Vec3)> = None;
    for (_, q0) in starts.iter().take(12) {
        let q = levenberg_marquardt(*q0, scenario, sums);
        let c = sum_sq(&q, scenario, sums);
        best = match best {
            None => Some((c, q)),
            Some((bc, bq)) => {
                let tie = (c - bc).abs() <= 1e-9 * (1.0 + bc.min(c)) + 1e-12;
                let better = if tie { front(&q) && !front(&bq) } else { c < bc };
                Some(if better { (c, q) } else { (bc, bq) })
            }
        };
    }
    let (c, position) = best.expect("non-empty start set");
    Ok(RangeSumFix { position, residual_rms: (c / sums.len() as f64).sqrt() })
}

/// TOA-only multilateration from range sums. Needs at least three receivers.
pub fn toa_only_position(delays: &[f64], scenario: &Scenario) -> Result<RangeSumFix> {
    if scenario.num_receivers() < 3 {
        return Err(Error::Underdetermined(format!(
            "{} range sums cannot fix a 3-D position",
            scenario.num_receivers()
        )));
    }
    let sums = range_sums(delays, scenario)?;
    range_sum_solve(&sums, scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{path_delay, RisState};

    fn delays(sc: &Scenario, st: &RisState) -> Vec<f64> {
        (0..sc.num_receivers()).map(|m| path_delay(sc, st, m)).collect()
    }

    #[test]
    fn truth_lies_on_both_spheroids() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let sums = range_sums(&delays(&sc, &st), &sc).unwrap();
        for (a, l) in sc.anchors.iter().zip(&sums) {
            assert!(range_residual(&st.position, &sc.tx, a, *l).abs() < 1e-12);
        }
    }

    #[test]
    fn spheroid_parameterization_has_constant_range_sum() {
        let sc = Scenario::table1();
        let sph = Spheroid::new(&sc.tx, &sc.anchors[0], 14.0);
        for (t, p) in [(0.1, 0.0), (1.0, 2.0), (2.5, 5.0), (PI / 2.0, 1.0)] {
            let q = sph.point(t, p);
            assert!(((q - sc.tx).norm() + (q - sc.anchors[0]).norm() - 14.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_receivers_give_a_candidate_near_truth() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let set = spheroid_candidates(&delays(&sc, &st), &sc, &MeshOptions::default()).unwrap();
        assert!(!set.points.is_empty() && set.points.len() <= 500);
        let best = set.points.iter().map(|p| (p - st.position).norm()).fold(f64::MAX, f64::min);
        assert!(best < 0.02, "closest candidate {best} m");
        assert!(set.residuals.iter().all(|r| *r < 1e-6));

        let raw = MeshOptions { snap: false, ..Default::default() };
        let set = spheroid_candidates(&delays(&sc, &st), &sc, &raw).unwrap();
        let best = set.points.iter().map(|p| (p - st.position).norm()).fold(f64::MAX, f64::min);
        assert!(best < 0.1, "closest raw mesh point {best} m");
        assert!(set.residuals.iter().all(|r| *r < 0.1));
    }

    #[test]
    fn inconsistent_delays_are_reported() {
        let sc = Scenario::table1();
        let st = RisState::table1();
        let mut d = delays(&sc, &st);
        d[1] += 50.0 / sc.speed_of_light;
        d[0] = (sc.tx - sc.anchors[0]).norm() / sc.speed_of_light * 1.01;
        assert!(matches!(spheroid_candidates(&d, &sc, &MeshOptions::default()), Err(Error::NoCandidates(_))));
        d[0] = 0.0;
        assert!(matches!(spheroid_candidates(&d, &sc, &MeshOptions::default()), Err(Error::NoCandidates(_))));
    }

    #[test]
    fn three_receivers_give_a_single_point() {
        let mut sc = Scenario::table1();
        sc.anchors.push(Vec3::new(0.0, 5.0, 0.0));
        let st = RisState::table1();
        let set = spheroid_candidates(&delays(&sc, &st), &sc, &MeshOptions::default()).unwrap();
        assert_eq!(set.points.len(), 1);
        assert!((set.points[0] - st.position).norm() < 1e-3, "{:?}", set.points[0]);
    }

    fn circle(sc: &mut Scenario, m: usize) {
        sc.anchors = (0..m)
            .map(|i| {
                let a = TAU * i as f64 / m as f64;
                sc.tx + Vec3::new(5.0 * a.cos(), 5.0 * a.sin(), 0.0)
            })
            .collect();
    }

    #[test]
    fn toa_only_on_the_circle_layout() {
        let mut sc = Scenario::table1();
        circle(&mut sc, 4);
        let st = RisState::table1();
        let d = delays(&sc, &st);
        let fix = toa_only_position(&d, &sc).unwrap();
        assert!((fix.position - st.position).norm() < 1e-3, "{:?}", fix);
        assert!(fix.residual_rms < 1e-6);

        // Permuting the anchors (with their delays) leaves the fix unchanged.
        let mut sp = sc.clone();
        sp.anchors.reverse();
        let dp: Vec<f64> = d.iter().rev().cloned().collect();
        let fp = toa_only_position(&dp, &sp).unwrap();
        assert!((fp.position - fix.position).norm() < 1e-6);
    }

    #[test]
    fn toa_only_with_two_receivers_is_underdetermined() {
        let sc = Scenario::table1();
        let d = delays(&sc, &RisState::table1());
        assert!(matches!(toa_only_position(&d, &sc), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn thinning_respects_the_cap() {
        let pts: Vec<(Vec3, f64)> = (0..5000).map(|i| (Vec3::new(i as f64 * 1e-3, 0.0, 0.0), 0.0)).collect();
        let t = thin(pts.clone(), 500);
        assert!(t.len() <= 500 && t.len() > 250);
        assert_eq!(t[0], pts[0]);
        assert_eq!(thin(pts[..10].to_vec(), 500).len(), 10);
    }
}
