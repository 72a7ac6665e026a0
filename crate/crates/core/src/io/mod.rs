//! Run configuration, result exports, field grids and replay ingestion.

mod config;
mod export;
mod field;

use std::io::Read;

use crate::error::{invalid, Result};
use crate::sim::{read_tracks, Scenario};

pub use config::{apply_override, load_config, load_scenario_file, parse_config, RunConfig};
pub use export::{
    export_log, read_trajectory, run_dir, trajectory_header, trajectory_rows, write_bench,
    write_diagnostics, write_metrics, write_summary, write_sweep, write_trajectory, ExportPaths,
    TrajectoryRow, BENCH_HEADER, DIAGNOSTICS_FILE, DIAGNOSTICS_HEADER, METRICS_FILE, SWEEP_HEADER,
    TRAJECTORY_FILE,
};
pub use field::{
    dump_field, field_at_record, write_field, FieldCell, FieldGrid, GridSpec, FIELD_HEADER,
};

/// Replaces the scenario's traffic with recorded tracks. The run is cut to
/// the recorded span when that is shorter than the scenario.
pub fn replay_scenario<R: Read>(base: &Scenario, tracks_csv: R) -> Result<Scenario> {
    let tracks = read_tracks(tracks_csv)?;
    if tracks.is_empty() {
        return Err(invalid("replay", "no tracks"));
    }
    let end = tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(|s| s[0]))
        .fold(f64::NEG_INFINITY, f64::max);
    let whole_ticks = (end / base.dt + 1e-9).floor() * base.dt;
    let mut s = base.clone();
    s.name = format!("{}_replay", base.name);
    s.obstacles.clear();
    s.replay = tracks;
    if whole_ticks > 0.0 && whole_ticks < s.duration {
        s.duration = whole_ticks;
    }
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, scenario2, ControllerKind, SimConfig};

    #[test]
    fn replay_builds_runnable_scenario() {
        let mut csv = String::from("t,vehicle_id,x,y\n");
        for k in 0..=40 {
            let t = k as f64 * 0.1;
            csv.push_str(&format!("{t},7,{},1.75\n", 40.0 + 15.0 * t));
            csv.push_str(&format!("{t},9,{},5.25\n", 20.0 + 32.0 * t));
        }
        let s = replay_scenario(&scenario2(), csv.as_bytes()).unwrap();
        assert!(s.obstacles.is_empty());
        assert_eq!(s.obstacle_ids(), vec![7, 9]);
        assert!((s.duration - 4.0).abs() < 1e-12);
        let log = run_scenario(&s, ControllerKind::ErpfMpc, 0, &SimConfig::default()).unwrap();
        assert_eq!(log.records.len(), 40);
        assert!(log.records.iter().all(|r| r.obstacles.len() == 2));
    }

    #[test]
    fn empty_replay_rejected() {
        assert!(replay_scenario(&scenario2(), "t,vehicle_id,x,y\n".as_bytes()).is_err());
    }
}
