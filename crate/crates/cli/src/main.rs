use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use geotrace::aggregate::{apply, infer_homes, AggregationConfig, Level, LevelData};
use geotrace::config::RunConfig;
use geotrace::curve::{emit_breakdown, emit_curve, sweep};
use geotrace::io::{self, TruthRow};
use geotrace::model::{TemporalResolution, Trace, ZoneGrid};
use geotrace::risk::reconstruct::cohort_sizes_from_homes;
use geotrace::risk::{
    reconstruct, reconstruction_accuracy, unicity, unicity_decay, write_reconstruction, AggregatedRecords,
    CohortSizes, PointSets, ReconstructConfig, RiskReport, TrialMode,
};
use geotrace::synth::generate_population;
use geotrace::utility::{
    evaluate, od_from_candidates, od_matrix, write_utility_csv, Baseline, UtilityTask,
};

/// Location-trace aggregation, re-identification attacks and utility scoring.
#[derive(Parser, Debug)]
#[command(name = "geotrace", version)]
struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic population: pings.csv and truth.csv.
    Synth(SynthArgs),
    /// Transform raw pings to an aggregation level.
    Aggregate(AggregateArgs),
    /// Run a re-identification attack.
    Attack(AttackArgs),
    /// Score a level file against the raw data.
    Utility(UtilityArgs),
    /// Sweep aggregation rungs and write the risk-utility curve.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct Resolution {
    /// Run configuration file (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Zone size in degrees; defaults to the config grid.
    #[arg(long)]
    cell_deg: Option<f64>,
    /// Time bin width in seconds; defaults to the config task bin.
    #[arg(long)]
    bin_s: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    seed: u64,
    /// Output directory; defaults to the config's paths.out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[command(flatten)]
    res: Resolution,
    /// Ping CSV; defaults to the config's paths.pings.
    #[arg(long)]
    pings: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
    level: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(subcommand)]
    kind: AttackKind,
}

#[derive(Subcommand, Debug)]
enum AttackKind {
    /// p-point unicity of a ping or level 1 file.
    Unicity(UnicityArgs),
    /// Trajectory reconstruction from a level 2 or level 3 file.
    Reconstruct(ReconstructArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Mode {
    Sampled,
    Exhaustive,
    TracePings,
}

#[derive(Args, Debug)]
struct UnicityArgs {
    #[command(flatten)]
    res: Resolution,
    /// Ping CSV or level 1 CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Also run the cell x bin ladder and fit the decay exponent (pings only).
    #[arg(long)]
    decay: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0025, 0.01, 0.04, 0.16])]
    spatial: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [3600, 21_600, 43_200, 86_400])]
    temporal: Vec<u64>,
    #[arg(long)]
    seed: u64,
    /// Risk report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[command(flatten)]
    res: Resolution,
    /// Level 2 or level 3 CSV.
    #[arg(long)]
    input: PathBuf,
    /// Raw pings: give cohort sizes and score the reconstruction.
    #[arg(long)]
    pings: Option<PathBuf>,
    /// Risk report CSV; needs --pings.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reconstructed trajectories as candidate_id,zone,time_bin.
    #[arg(long)]
    candidates_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct UtilityArgs {
    #[command(flatten)]
    res: Resolution,
    /// Level file to score (any level).
    #[arg(long)]
    input: PathBuf,
    /// Raw pings the level file was made from.
    #[arg(long)]
    pings: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Bin width the tasks are judged at; defaults to the config task bin.
    #[arg(long)]
    task_bin_s: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// OD matrix of the level file as from_zone,to_zone,count.
    #[arg(long)]
    od_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ping CSV; without it a population is generated from the config.
    #[arg(long, requires = "truth")]
    pings: Option<PathBuf>,
    #[arg(long, requires = "pings")]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Receives curve.csv and breakdown.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Cmd {
    fn config_path(&self) -> Option<&Path> {
        match self {
            Cmd::Synth(a) => a.config.as_deref(),
            Cmd::Aggregate(a) => a.res.config.as_deref(),
            Cmd::Attack(a) => match &a.kind {
                AttackKind::Unicity(u) => u.res.config.as_deref(),
                AttackKind::Reconstruct(r) => r.res.config.as_deref(),
            },
            Cmd::Utility(a) => a.res.config.as_deref(),
            Cmd::Sweep(a) => a.config.as_deref(),
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    match flag.or_else(|| from_config.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} given (flag or config paths entry)"),
    }
}

fn resolution(res: &Resolution, cfg: &RunConfig) -> anyhow::Result<(ZoneGrid, TemporalResolution)> {
    let base = cfg.sweep.base_grid;
    let grid = match res.cell_deg {
        Some(c) => base.with_cell(c)?,
        None => base,
    };
    let temporal = TemporalResolution::new(res.bin_s.unwrap_or(cfg.sweep.task_bin_seconds))?;
    Ok((grid, temporal))
}

/// Reads any of the five record files by its header.
fn read_any(path: &Path) -> anyhow::Result<LevelData> {
    let header = io::sniff_header(path)?;
    let data = match header.as_str() {
        io::PING_HEADER => LevelData::Raw(io::read_pings(path)?),
        io::LEVEL1_HEADER => LevelData::Coarse(io::read_level1(path)?),
        io::LEVEL2_HEADER => LevelData::Aggregated(io::read_level2(path)?),
        io::LEVEL3_HEADER => LevelData::CoarseAggregated(io::read_level3(path)?),
        h => {
            return Err(geotrace::Error::MalformedRow {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("unrecognized header `{h}`"),
            }
            .into())
        }
    };
    Ok(data)
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_synth(a: SynthArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut pop = cfg.population.clone();
    pop.n_users = a.users.unwrap_or(pop.n_users);
    pop.n_days = a.days.unwrap_or(pop.n_days);
    pop.seed = a.seed;
    let dir = out_dir(a.out_dir, cfg)?;
    let (traces, truth) = generate_population(&pop)?;
    log::info!("generated {} users", traces.len());
    io::write_pings(&traces, &dir.join("pings.csv"))?;
    io::write_truth(&truth.rows(), &dir.join("truth.csv"))?;
    Ok(())
}

fn cmd_aggregate(a: AggregateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (grid, temporal) = resolution(&a.res, cfg)?;
    let traces = io::read_pings(&required(a.pings, &cfg.paths.pings, "ping file")?)?;
    let mut agg = AggregationConfig::new(Level::from_index(a.level)?, grid, temporal);
    agg.night = cfg.sweep.night;
    match apply(&traces, &agg)? {
        LevelData::Raw(t) => io::write_pings(&t, &a.out)?,
        LevelData::Coarse(r) => io::write_level1(&r, &a.out)?,
        LevelData::Aggregated(r) => io::write_level2(&r, &a.out)?,
        LevelData::CoarseAggregated(r) => io::write_level3(&r, &a.out)?,
    }
    Ok(())
}

fn cmd_unicity(a: UnicityArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (grid, temporal) = resolution(&a.res, cfg)?;
    let mut ucfg = cfg.sweep.unicity.clone();
    ucfg.p = a.p.unwrap_or(ucfg.p);
    ucfg.n_targets = a.targets.unwrap_or(ucfg.n_targets);
    ucfg.trials_per_target = a.trials.unwrap_or(ucfg.trials_per_target);
    ucfg.seed = a.seed;
    if let Some(m) = a.mode {
        ucfg.mode = match m {
            Mode::Sampled => TrialMode::Sampled,
            Mode::Exhaustive => TrialMode::Exhaustive,
            Mode::TracePings => TrialMode::TracePings,
        };
    }
    let mut report = RiskReport::default();
    match read_any(&a.input)? {
        LevelData::Raw(traces) => {
            let sets = PointSets::from_traces(&traces, &grid, temporal)?;
            ucfg.n_targets = ucfg.n_targets.min(sets.n_users());
            let est = unicity(&sets, &ucfg)?;
            report.push("unicity", 0, grid.cell_deg(), temporal.bin_seconds(), Some(ucfg.p), est.value);
            report.push("unicity_std_error", 0, grid.cell_deg(), temporal.bin_seconds(), Some(ucfg.p), est.std_error());
            if a.decay {
                let decay = unicity_decay(&traces, &cfg.sweep.base_grid, &a.spatial, &a.temporal, &ucfg)?;
                report.add_decay(0, ucfg.p, &decay);
            }
        }
        LevelData::Coarse(rows) => {
            if a.decay {
                bail!("--decay needs raw pings");
            }
            let sets = PointSets::from_level1(&rows);
            ucfg.n_targets = ucfg.n_targets.min(sets.n_users());
            if ucfg.mode == TrialMode::TracePings {
                ucfg.mode = TrialMode::Sampled;
            }
            let est = unicity(&sets, &ucfg)?;
            report.push("unicity", 1, grid.cell_deg(), temporal.bin_seconds(), Some(ucfg.p), est.value);
            report.push("unicity_std_error", 1, grid.cell_deg(), temporal.bin_seconds(), Some(ucfg.p), est.std_error());
        }
        other => return Err(geotrace::Error::UnlinkableInput(other.level().index()).into()),
    }
    report.write_csv(&a.out)?;
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (grid, temporal) = resolution(&a.res, cfg)?;
    if a.out.is_some() && a.pings.is_none() {
        bail!("--out needs --pings to score against");
    }
    let data = read_any(&a.input)?;
    let traces = a.pings.as_deref().map(io::read_pings).transpose()?;
    let sizes = match &traces {
        Some(t) => cohort_sizes_from_homes(&infer_homes(t, &grid, cfg.sweep.night)?),
        None => CohortSizes::NightOccupancy,
    };
    let mut rcfg = ReconstructConfig::new(grid, temporal, sizes);
    rcfg.night = cfg.sweep.night;
    let records = match &data {
        LevelData::Aggregated(r) => AggregatedRecords::Points(r),
        LevelData::CoarseAggregated(r) => AggregatedRecords::Zones(r),
        other => bail!("reconstruction needs a level 2 or 3 file, got level {}", other.level().index()),
    };
    let rec = reconstruct(records, &rcfg)?;
    if let Some(p) = &a.candidates_out {
        write_reconstruction(&rec.candidates, p)?;
    }
    if let (Some(out), Some(traces)) = (&a.out, &traces) {
        let acc = reconstruction_accuracy(&rec.candidates, traces, &grid, temporal)?;
        let mut report = RiskReport::default();
        report.add_accuracy(data.level().index(), grid.cell_deg(), temporal.bin_seconds(), &acc);
        report.write_csv(out)?;
    }
    Ok(())
}

fn cmd_utility(a: UtilityArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (grid, temporal) = resolution(&a.res, cfg)?;
    let traces = io::read_pings(&required(a.pings, &cfg.paths.pings, "ping file")?)?;
    let truth: Vec<TruthRow> = io::read_truth(&required(a.truth, &cfg.paths.truth, "truth file")?)?;
    let mut task = UtilityTask::new(
        cfg.sweep.base_grid,
        TemporalResolution::new(a.task_bin_s.unwrap_or(cfg.sweep.task_bin_seconds))?,
    );
    task.night = cfg.sweep.night;
    task.weights = cfg.sweep.weights;
    let baseline = Baseline::new(&traces, &task)?;
    let data = read_any(&a.input)?;
    let candidates = match &data {
        LevelData::Aggregated(_) | LevelData::CoarseAggregated(_) => {
            let homes = infer_homes(&traces, &grid, cfg.sweep.night)?;
            let mut rcfg = ReconstructConfig::new(grid, temporal, cohort_sizes_from_homes(&homes));
            rcfg.night = cfg.sweep.night;
            let records = match &data {
                LevelData::Aggregated(r) => AggregatedRecords::Points(r),
                LevelData::CoarseAggregated(r) => AggregatedRecords::Zones(r),
                _ => unreachable!(),
            };
            Some(reconstruct(records, &rcfg)?.candidates)
        }
        _ => None,
    };
    let report = evaluate(&data, &grid, temporal, candidates.as_deref(), &truth, &baseline, &task)?;
    write_utility_csv(&[(data.level(), grid.cell_deg(), temporal.bin_seconds(), &report)], &a.out)?;
    if let Some(p) = &a.od_out {
        let od = match &candidates {
            Some(c) => od_from_candidates(c, &grid)?,
            None => od_matrix(&data, &grid, temporal)?,
        };
        od.write_csv(p)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut scfg = cfg.sweep.clone();
    scfg.unicity.seed = a.seed;
    scfg.validate()?;
    let (traces, truth): (Vec<Trace>, Vec<TruthRow>) = match (a.pings.or(cfg.paths.pings.clone()), a.truth.or(cfg.paths.truth.clone())) {
        (Some(p), Some(t)) => (io::read_pings(&p)?, io::read_truth(&t)?),
        (None, None) => {
            let mut pop = cfg.population.clone();
            pop.seed = a.seed;
            let (traces, gt) = generate_population(&pop)?;
            (traces, gt.rows())
        }
        _ => bail!("pings and truth must be given together"),
    };
    let dir = out_dir(a.out_dir, cfg)?;
    let points = sweep(&traces, &truth, &scfg)?;
    emit_curve(&points, &dir.join("curve.csv"))?;
    emit_breakdown(&points, &dir.join("breakdown.csv"))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli.cmd.config_path())?;
    let filter = cfg.log_level.clone().unwrap_or_else(|| "warn".into());
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GEOTRACE_LOG", filter)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(geotrace::Error::InvalidConfig("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a, &cfg),
        Cmd::Aggregate(a) => cmd_aggregate(a, &cfg),
        Cmd::Attack(a) => match a.kind {
            AttackKind::Unicity(u) => cmd_unicity(u, &cfg),
            AttackKind::Reconstruct(r) => cmd_reconstruct(r, &cfg),
        },
        Cmd::Utility(a) => cmd_utility(a, &cfg),
        Cmd::Sweep(a) => cmd_sweep(a, &cfg),
    }
}

/// One line: `error: kind=<Kind> msg="<message>"`.
fn error_line(kind: &str, msg: &str) -> String {
    let msg = msg.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error: kind={kind} msg=\"{msg}\"")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("Usage", e.render().to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<geotrace::Error>())
                .map_or("Error", |g| g.kind());
            eprintln!("{}", error_line(kind, &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
