use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::risk_ellipse::SweepCell;
use crate::sim::{compute_metrics, ControllerKind, ControllerSummary, Metrics, SimulationLog};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

/// `<out>/<scenario>/<controller>/<seed>`.
pub fn run_dir(out: &Path, scenario: &str, controller: ControllerKind, seed: u64) -> PathBuf {
    out.join(scenario)
        .join(controller.name())
        .join(seed.to_string())
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

/// One trajectory row as exported.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a_cmd: f64,
    pub vy_cmd: f64,
    pub distances: Vec<f64>,
    pub v_erpf: f64,
    pub etas: Vec<f64>,
}

pub fn trajectory_header(ids: &[u32]) -> Vec<String> {
    let mut h: Vec<String> = ["t", "x", "y", "v", "a_cmd", "vy_cmd"]
        .map(String::from)
        .into();
    h.extend(ids.iter().map(|id| format!("d_{id}")));
    h.push("v_erpf".into());
    h.extend(ids.iter().map(|id| format!("eta_{id}")));
    h
}

pub fn trajectory_rows(log: &SimulationLog) -> Vec<TrajectoryRow> {
    log.records
        .iter()
        .map(|r| TrajectoryRow {
            t: r.t,
            x: r.state.x,
            y: r.state.y,
            v: r.state.v,
            a_cmd: r.control.a,
            vy_cmd: r.control.v_y,
            distances: r.diagnostics.distances.clone(),
            v_erpf: r.diagnostics.risk,
            etas: r.diagnostics.etas.clone(),
        })
        .collect()
}

pub fn write_trajectory<W: Write>(log: &SimulationLog, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(trajectory_header(&log.obstacle_ids))?;
    for row in trajectory_rows(log) {
        let mut fields = vec![
            num(row.t),
            num(row.x),
            num(row.y),
            num(row.v),
            num(row.a_cmd),
            num(row.vy_cmd),
        ];
        fields.extend(row.distances.iter().map(|&d| num(d)));
        fields.push(num(row.v_erpf));
        fields.extend(row.etas.iter().map(|&e| num(e)));
        csv.write_record(&fields)?;
    }
    csv.flush()?;
    Ok(())
}

/// Parses a trajectory CSV back into obstacle ids and rows.
pub fn read_trajectory<R: Read>(r: R) -> Result<(Vec<u32>, Vec<TrajectoryRow>)> {
    let mut csv = csv::Reader::from_reader(r);
    let header: Vec<String> = csv.headers()?.iter().map(String::from).collect();
    let ids: Vec<u32> = header
        .iter()
        .filter_map(|h| h.strip_prefix("d_"))
        .map(|s| {
            s.parse()
                .map_err(|_| invalid("trajectory header", format!("bad column d_{s}")))
        })
        .collect::<Result<_>>()?;
    if header != trajectory_header(&ids) {
        return Err(invalid("trajectory header", header.join(",")));
    }
    let n = ids.len();
    let mut rows = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.parse()
                    .map_err(|_| invalid("trajectory value", f.to_string()))
            })
            .collect::<Result<_>>()?;
        if v.len() != header.len() {
            return Err(invalid(
                "trajectory row",
                format!("expected {} fields", header.len()),
            ));
        }
        rows.push(TrajectoryRow {
            t: v[0],
            x: v[1],
            y: v[2],
            v: v[3],
            a_cmd: v[4],
            vy_cmd: v[5],
            distances: v[6..6 + n].to_vec(),
            v_erpf: v[6 + n],
            etas: v[7 + n..].to_vec(),
        });
    }
    Ok((ids, rows))
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    scenario: &'a str,
    controller: ControllerKind,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a str>,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

pub fn write_metrics<W: Write>(log: &SimulationLog, metrics: &Metrics, mut w: W) -> Result<()> {
    let report = MetricsReport {
        scenario: &log.scenario,
        controller: log.controller,
        seed: log.seed,
        failure: log.failure.as_deref(),
        metrics,
    };
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub const DIAGNOSTICS_HEADER: [&str; 12] = [
    "t",
    "iterations",
    "starts",
    "cost",
    "grad_norm",
    "converged",
    "active_constraints",
    "filter",
    "a_nominal",
    "vy_nominal",
    "flops",
    "interactions",
];

pub fn write_diagnostics<W: Write>(log: &SimulationLog, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(DIAGNOSTICS_HEADER)?;
    for r in &log.records {
        let d = &r.diagnostics;
        let filter = serde_json::to_value(r.filter)?;
        csv.write_record([
            num(r.t),
            d.iterations.to_string(),
            d.starts.to_string(),
            num(d.cost),
            num(d.grad_norm),
            d.converged.to_string(),
            d.active_constraints.to_string(),
            filter.as_str().unwrap_or_default().to_string(),
            num(r.nominal.a),
            num(r.nominal.v_y),
            d.flops.flops.to_string(),
            d.flops.interactions.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportPaths {
    pub dir: PathBuf,
    pub trajectory: PathBuf,
    pub metrics: PathBuf,
    pub diagnostics: PathBuf,
}

/// Writes the three run files into the run's own directory under `out`.
pub fn export_log(log: &SimulationLog, out: &Path) -> Result<ExportPaths> {
    let metrics = compute_metrics(log)?;
    let dir = run_dir(out, &log.scenario, log.controller, log.seed);
    fs::create_dir_all(&dir)?;
    let paths = ExportPaths {
        trajectory: dir.join(TRAJECTORY_FILE),
        metrics: dir.join(METRICS_FILE),
        diagnostics: dir.join(DIAGNOSTICS_FILE),
        dir,
    };
    write_trajectory(log, BufWriter::new(File::create(&paths.trajectory)?))?;
    write_metrics(log, &metrics, BufWriter::new(File::create(&paths.metrics)?))?;
    write_diagnostics(log, BufWriter::new(File::create(&paths.diagnostics)?))?;
    Ok(paths)
}

pub const SWEEP_HEADER: [&str; 5] = ["ttc", "twh", "a", "b", "aspect_ratio"];

pub fn write_sweep<W: Write>(cells: &[SweepCell], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SWEEP_HEADER)?;
    for c in cells {
        csv.write_record([
            num(c.ttc),
            num(c.twh),
            num(c.a),
            num(c.b),
            num(c.aspect_ratio),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub const BENCH_HEADER: [&str; 9] = [
    "controller",
    "seed",
    "collision_count",
    "min_distance",
    "avg_speed",
    "max_control_change",
    "flops_per_step",
    "valid",
    "failure",
];

/// Per-run table of a Monte Carlo comparison.
pub fn write_bench<W: Write>(summaries: &[ControllerSummary], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(BENCH_HEADER)?;
    for s in summaries {
        for r in &s.runs {
            let m = &r.metrics;
            csv.write_record([
                s.controller.name().to_string(),
                r.seed.to_string(),
                m.collision_count.to_string(),
                m.min_distance.map(num).unwrap_or_default(),
                num(m.avg_speed),
                num(m.max_control_change),
                num(m.flops_per_step),
                m.valid.to_string(),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Aggregated Monte Carlo results as pretty JSON.
pub fn write_summary<W: Write>(summaries: &[ControllerSummary], mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, summaries)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, scenario1, SimConfig, UncertaintyModel};

    fn short_log(seed: u64) -> SimulationLog {
        let mut s = scenario1();
        s.duration = 1.5;
        let cfg = SimConfig {
            uncertainty: Some(UncertaintyModel::default()),
            ..SimConfig::default()
        };
        run_scenario(&s, ControllerKind::ErpfMpc, seed, &cfg).unwrap()
    }

    #[test]
    fn header_order() {
        assert_eq!(
            trajectory_header(&[1, 2]).join(","),
            "t,x,y,v,a_cmd,vy_cmd,d_1,d_2,v_erpf,eta_1,eta_2"
        );
        assert_eq!(
            trajectory_header(&[]).join(","),
            "t,x,y,v,a_cmd,vy_cmd,v_erpf"
        );
    }

    #[test]
    fn trajectory_round_trip() {
        let log = short_log(3);
        let mut buf = Vec::new();
        write_trajectory(&log, &mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        assert!(first.starts_with("t,x,y,v,a_cmd,vy_cmd,d_1,d_2,v_erpf,eta_1,eta_2\n"));
        let (ids, rows) = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(ids, log.obstacle_ids);
        let expected = trajectory_rows(&log);
        assert_eq!(rows.len(), expected.len());
        for (a, b) in rows.iter().zip(&expected) {
            let pa = [a.t, a.x, a.y, a.v, a.a_cmd, a.vy_cmd, a.v_erpf];
            let pb = [b.t, b.x, b.y, b.v, b.a_cmd, b.vy_cmd, b.v_erpf];
            for (u, v) in pa
                .iter()
                .chain(&a.distances)
                .chain(&a.etas)
                .zip(pb.iter().chain(&b.distances).chain(&b.etas))
            {
                assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(read_trajectory("t,x,y\n1,2,3\n".as_bytes()).is_err());
        assert!(
            read_trajectory("t,x,y,v,a_cmd,vy_cmd,v_erpf\n1,2,3,4,5,6,oops\n".as_bytes()).is_err()
        );
    }

    #[test]
    fn metrics_keys_present() {
        let log = short_log(0);
        let mut buf = Vec::new();
        write_metrics(&log, &compute_metrics(&log).unwrap(), &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in [
            "collision_count",
            "min_distance",
            "avg_speed",
            "scenario",
            "controller",
            "seed",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn exports_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = export_log(&short_log(9), a.path()).unwrap();
        let pb = export_log(&short_log(9), b.path()).unwrap();
        assert!(pa.dir.ends_with("scenario1/erpf_mpc/9"));
        for (x, y) in [
            (pa.trajectory, pb.trajectory),
            (pa.metrics, pb.metrics),
            (pa.diagnostics, pb.diagnostics),
        ] {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
}
