//! CSV / JSON writers. Files are written to a temporary sibling and renamed,
//! so an interrupted run never leaves a truncated result behind.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fisher::fmt;
use crate::geometry::RisState;
use crate::harness::experiments::{ContourCell, RmseReport, SweepAxis, SweepPoint, ToaComparisonRow};
use crate::units::{dbm_to_watts, linear_to_db};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateDump {
    pub position_m: [f64; 3],
    pub orientation_rad: f64,
    pub orientation_deg: f64,
}

impl From<&RisState> for StateDump {
    fn from(s: &RisState) -> Self {
        StateDump {
            position_m: [s.position.x, s.position.y, s.position.z],
            orientation_rad: s.alpha,
            orientation_deg: s.alpha.to_degrees(),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "nan".into())
}

fn opt_db(v: Option<f64>) -> String {
    opt(v.map(linear_to_db))
}

fn csv_string(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn point_columns(m: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "trials",
        "failures",
        "flagged",
        "rmse_position_m",
        "rmse_position_coarse_m",
        "peb_m",
        "peb_db",
        "position_ratio",
        "rmse_orientation_rad",
        "oeb_rad",
        "oeb_db",
        "orientation_ratio",
    ]
    .map(String::from)
    .to_vec();
    for k in 1..=m {
        h.extend([
            format!("rmse_delay_s_rx{k}"),
            format!("teb_s_rx{k}"),
            format!("rmse_omega0_rx{k}"),
            format!("web0_rx{k}"),
            format!("rmse_omega1_rx{k}"),
            format!("web1_rx{k}"),
        ]);
    }
    h
}

fn point_row(p: &SweepPoint) -> Vec<String> {
    let mut r = vec![
        p.trials.to_string(),
        p.failures.to_string(),
        p.flagged.to_string(),
        opt(p.rmse_position_m),
        opt(p.rmse_position_coarse_m),
        opt(p.peb_m),
        opt_db(p.peb_m),
        opt(p.position_ratio()),
        opt(p.rmse_orientation_rad),
        opt(p.oeb_rad),
        opt_db(p.oeb_rad),
        opt(p.orientation_ratio()),
    ];
    for k in 0..p.teb_s.len() {
        r.extend([
            opt(p.rmse_delay_s[k]),
            opt(p.teb_s[k]),
            opt(p.rmse_omega0[k]),
            opt(p.web0[k]),
            opt(p.rmse_omega1[k]),
            opt(p.web1[k]),
        ]);
    }
    r
}

/// One row per sweep point. Both the linear and dB forms of the swept
/// quantity are written.
pub fn rmse_csv(report: &RmseReport, subcarrier_spacing_hz: f64) -> Result<String> {
    let (axis, rows): (Vec<String>, Vec<Vec<String>>) = match report.axis {
        SweepAxis::TransmitPowerDbm => (
            vec!["transmit_power_dbm".into(), "transmit_power_w".into()],
            report.points.iter().map(|p| vec![fmt(p.value), fmt(dbm_to_watts(p.value))]).collect(),
        ),
        SweepAxis::NumSubcarriers => (
            vec!["num_subcarriers".into(), "bandwidth_hz".into()],
            report.points.iter().map(|p| vec![(p.value as usize).to_string(), fmt(p.value * subcarrier_spacing_hz)]).collect(),
        ),
        SweepAxis::NumReceivers => (
            vec!["num_receivers".into()],
            report.points.iter().map(|p| vec![(p.value as usize).to_string()]).collect(),
        ),
    };
    let mut header = axis;
    header.extend(point_columns(report.num_receivers));
    let rows = rows
        .into_iter()
        .zip(&report.points)
        .map(|(mut a, p)| {
            a.extend(point_row(p));
            a
        })
        .collect();
    csv_string(header, rows)
}

/// Receiver counts differ between rows, so only the position columns are
/// tabulated; JSON keeps the per-receiver detail.
pub fn toa_comparison_csv(rows: &[ToaComparisonRow]) -> Result<String> {
    let header = [
        "num_receivers",
        "peb_m",
        "peb_toa_only_m",
        "toa_only_identifiable",
        "trials",
        "failures",
        "rmse_position_m",
        "rmse_toa_only_m",
        "toa_only_failures",
    ]
    .map(String::from)
    .to_vec();
    let body = rows
        .iter()
        .map(|r| {
            let mc = r.monte_carlo.as_ref();
            vec![
                r.num_receivers.to_string(),
                opt(r.peb_m),
                opt(r.peb_toa_only_m),
                r.toa_only_identifiable.to_string(),
                mc.map_or("0".into(), |p| p.trials.to_string()),
                mc.map_or("0".into(), |p| p.failures.to_string()),
                opt(mc.and_then(|p| p.rmse_position_m)),
                opt(mc.and_then(|p| p.rmse_toa_only_m)),
                mc.map_or("0".into(), |p| p.toa_only_failures.to_string()),
            ]
        })
        .collect();
    csv_string(header, body)
}

/// Singular cells carry `nan` bounds and `singular = true`.
pub fn contour_csv(cells: &[ContourCell]) -> Result<String> {
    let header = ["orientation_deg", "x_m", "y_m", "z_m", "peb_m", "peb_db", "oeb_rad", "oeb_db", "singular"]
        .map(String::from)
        .to_vec();
    let body = cells
        .iter()
        .map(|c| {
            vec![
                fmt(c.orientation_deg),
                fmt(c.x_m),
                fmt(c.y_m),
                fmt(c.z_m),
                opt(c.peb_m),
                opt(c.peb_db()),
                opt(c.oeb_rad),
                opt(c.oeb_db()),
                c.singular.to_string(),
            ]
        })
        .collect();
    csv_string(header, body)
}

pub fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    // Non-finite floats serialize as null.
    serde_json::to_string_pretty(v).expect("result serializes")
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn point(v: f64) -> SweepPoint {
        SweepPoint {
            value: v,
            trials: 10,
            failures: 1,
            flagged: false,
            failure_reasons: BTreeMap::new(),
            rmse_position_m: Some(0.01),
            rmse_position_coarse_m: Some(0.05),
            rmse_orientation_rad: None,
            rmse_delay_s: vec![Some(1e-10); 2],
            rmse_omega0: vec![Some(1e-3); 2],
            rmse_omega1: vec![Some(1e-3); 2],
            peb_m: Some(0.008),
            oeb_rad: Some(1e-3),
            teb_s: vec![Some(1e-10); 2],
            web0: vec![Some(1e-3); 2],
            web1: vec![Some(1e-3); 2],
            rmse_toa_only_m: None,
            toa_only_failures: 0,
        }
    }

    #[test]
    fn power_csv_layout() {
        let r = RmseReport { axis: SweepAxis::TransmitPowerDbm, master_seed: 1, trials: 10, num_receivers: 2, points: vec![point(10.0), point(30.0)] };
        let text = rmse_csv(&r, 120e3).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let h = rd.headers().unwrap().clone();
        assert_eq!(&h[0], "transmit_power_dbm");
        assert_eq!(&h[1], "transmit_power_w");
        assert_eq!(h.len(), 2 + 12 + 12);
        let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        let w: f64 = rows[1][1].parse().unwrap();
        assert!((w - 1.0).abs() < 1e-9);
        assert_eq!(&rows[0][h.iter().position(|c| c == "rmse_orientation_rad").unwrap()], "nan");
        let ratio: f64 = rows[0][h.iter().position(|c| c == "position_ratio").unwrap()].parse().unwrap();
        assert!((ratio - 1.25).abs() < 1e-9);
    }

    #[test]
    fn bandwidth_csv_has_hz_column() {
        let r = RmseReport { axis: SweepAxis::NumSubcarriers, master_seed: 1, trials: 10, num_receivers: 2, points: vec![point(16.0)] };
        let text = rmse_csv(&r, 120e3).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("16,1.920000000e6,"), "{line}");
    }

    #[test]
    fn atomic_write_replaces_and_reports_bad_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, "a").unwrap();
        write_atomic(&p, "b").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "b");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/out.csv"), "x").is_err());
    }
}
