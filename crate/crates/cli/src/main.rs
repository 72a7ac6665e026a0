use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use erpf::io::{
    dump_field, export_log, field_at_record, load_config, replay_scenario, run_dir, write_bench,
    write_field, write_summary, write_sweep, GridSpec, RunConfig,
};
use erpf::risk_ellipse::aspect_ratio_sweep;
use erpf::sim::{
    compute_metrics, monte_carlo, run_scenario, ControllerKind, Scenario, UncertaintyModel,
};

#[derive(Parser)]
#[command(
    name = "erpf",
    version,
    about = "Risk-field MPC planner and driving simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation and export its logs.
    Simulate(Common),
    /// Seeded Monte Carlo comparison of the controllers.
    Bench(BenchArgs),
    /// Ellipse semi-axes over a TTC x TWH grid.
    Sweep(SweepArgs),
    /// Field values on a grid at one tick of a run.
    Field(FieldArgs),
    /// Run against recorded obstacle tracks (CSV: t,vehicle_id,x,y).
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name or scenario file.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    controller: Option<ControllerKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any configuration key, e.g. planner.risk.d_safe=8.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref(), &self.set)?;
        if let Some(s) = &self.scenario {
            cfg.scenario = s.clone();
        }
        if let Some(c) = self.controller {
            cfg.controller = c;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Runs per controller.
    #[arg(long)]
    runs: Option<usize>,
    /// Compare every controller even when one is configured.
    #[arg(long)]
    all: bool,
    /// Disable the surrounding-traffic noise.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated TTC values (s).
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0])]
    ttc: Vec<f64>,
    /// Comma-separated time-headway values (s).
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.6, 0.8, 1.0])]
    twh: Vec<f64>,
    /// Closing speed (m/s).
    #[arg(long, default_value_t = 10.0)]
    v_rel: f64,
    /// Obstacle width (m).
    #[arg(long, default_value_t = 2.0)]
    w_obs: f64,
}

#[derive(Args)]
struct FieldArgs {
    #[command(flatten)]
    common: Common,
    /// Simulation time of the sampled tick (s).
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    /// Grid extent behind the ego vehicle (m).
    #[arg(long, default_value_t = 20.0)]
    behind: f64,
    /// Grid extent ahead of the ego vehicle (m).
    #[arg(long, default_value_t = 80.0)]
    ahead: f64,
    #[arg(long, default_value_t = 0.5)]
    resolution: f64,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: Common,
    /// Recorded tracks.
    #[arg(long)]
    tracks: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(c) => simulate(&c),
        Command::Bench(b) => bench(&b),
        Command::Sweep(s) => sweep(&s),
        Command::Field(f) => field(&f),
        Command::Replay(r) => replay(&r),
    }
}

fn run_and_export(cfg: &RunConfig, scenario: &Scenario) -> Result<()> {
    let log = run_scenario(scenario, cfg.controller, cfg.seed, &cfg.sim_config())?;
    let metrics = compute_metrics(&log)?;
    let paths = export_log(&log, &cfg.out)?;
    if let Some(f) = &log.failure {
        eprintln!("warning: run stopped early: {f}");
    }
    println!(
        "{} / {} / seed {}: collisions {}, min distance {}, avg speed {:.3} m/s, lane change {}",
        scenario.name,
        cfg.controller,
        cfg.seed,
        metrics.collision_count,
        metrics
            .min_distance
            .map_or("n/a".into(), |d| format!("{d:.3} m")),
        metrics.avg_speed,
        metrics
            .lane_change_time
            .map_or("n/a".into(), |t| format!("{t:.1} s")),
    );
    println!("wrote {}", paths.dir.display());
    Ok(())
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    run_and_export(&cfg, &cfg.load_scenario()?)
}

fn bench(b: &BenchArgs) -> Result<()> {
    let mut cfg = b.common.load()?;
    if let Some(r) = b.runs {
        if r == 0 {
            bail!("--runs must be at least 1");
        }
        cfg.runs = r;
    }
    if b.no_noise {
        cfg.uncertainty = None;
    } else if cfg.uncertainty.is_none() {
        cfg.uncertainty = Some(UncertaintyModel::default());
    }
    let controllers: Vec<ControllerKind> = if b.common.controller.is_some() && !b.all {
        vec![cfg.controller]
    } else {
        ControllerKind::ALL.to_vec()
    };
    let scenario = cfg.load_scenario()?;
    let summaries = monte_carlo(
        &scenario,
        &controllers,
        cfg.runs,
        cfg.seed,
        &cfg.sim_config(),
    )?;

    let dir = cfg.out.join(&scenario.name);
    fs::create_dir_all(&dir)?;
    write_bench(
        &summaries,
        BufWriter::new(File::create(dir.join("bench.csv"))?),
    )?;
    write_summary(
        &summaries,
        BufWriter::new(File::create(dir.join("summary.json"))?),
    )?;

    println!(
        "{:<12} {:>10} {:>12} {:>12} {:>8}",
        "controller", "collisions", "min dist", "avg speed", "invalid"
    );
    for s in &summaries {
        let mean =
            |x: Option<erpf::sim::Stats>| x.map_or("n/a".to_string(), |s| format!("{:.3}", s.mean));
        println!(
            "{:<12} {:>10} {:>12} {:>12} {:>8}",
            s.controller.name(),
            mean(s.collisions),
            s.min_distance
                .map_or("n/a".to_string(), |d| format!("{:.3}", d.min)),
            mean(s.avg_speed),
            s.invalid_seeds.len()
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn sweep(s: &SweepArgs) -> Result<()> {
    let cfg = s.common.load()?;
    let cells = aspect_ratio_sweep(&s.ttc, &s.twh, s.v_rel, s.w_obs, &cfg.planner.ellipse)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("sweep.csv");
    write_sweep(&cells, BufWriter::new(File::create(&path)?))?;
    let peak = cells.iter().map(|c| c.aspect_ratio).fold(0.0, f64::max);
    println!(
        "{} cells, largest a/b {peak:.3}; wrote {}",
        cells.len(),
        path.display()
    );
    Ok(())
}

fn field(f: &FieldArgs) -> Result<()> {
    let cfg = f.common.load()?;
    let mut scenario = cfg.load_scenario()?;
    if !(f.time >= 0.0 && f.time < scenario.duration) {
        bail!("--time must lie in [0, {})", scenario.duration);
    }
    let tick = (f.time / scenario.dt).round() as usize;
    scenario.duration = (tick + 1) as f64 * scenario.dt;
    let log = run_scenario(&scenario, cfg.controller, cfg.seed, &cfg.sim_config())?;
    let record = log
        .records
        .get(tick)
        .with_context(|| format!("run stopped before t = {}", f.time))?;
    let (lo, hi) = scenario.lanes.band();
    let grid = GridSpec {
        x_min: record.state.x - f.behind,
        x_max: record.state.x + f.ahead,
        y_min: lo,
        y_max: hi,
        resolution: f.resolution,
    };
    let values = dump_field(
        &field_at_record(record, &cfg.planner.risk, scenario.dt),
        &grid,
    )?;
    let dir = run_dir(&cfg.out, &scenario.name, cfg.controller, cfg.seed);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("field_{tick}.csv"));
    write_field(&values, BufWriter::new(File::create(&path)?))?;
    println!(
        "{} x {} grid at t = {:.1} s, peak {:.4}; wrote {}",
        values.nx,
        values.ny,
        record.t,
        values.peak_erpf(),
        path.display()
    );
    Ok(())
}

fn replay(r: &ReplayArgs) -> Result<()> {
    let cfg = r.common.load()?;
    let file = File::open(&r.tracks).with_context(|| format!("opening {}", r.tracks.display()))?;
    let scenario = replay_scenario(&cfg.load_scenario()?, file)?;
    run_and_export(&cfg, &scenario)
}
