//! One function per subcommand. Every output file starts with the same
//! header: tool version, SHA-256 of the effective configuration, seed.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use chemostat_core::classic::{classic_solve, ClassicState, ClassicTrajectory, Monod, DEFAULT_STEP};
use chemostat_core::ensemble::{mass_histogram, run_ensemble_with, EnsembleSpec, EnsembleStats, MassHistogram};
use chemostat_core::fit::{fit_monod, FitOptions, MonodFit};
use chemostat_core::ibm::{run_ibm_with_events, IbmOptions, IbmRun};
use chemostat_core::ide::{ide_solve, initial_density_grid, IdeOptions, IdeSolution, InitialScale, MassGrid};
use chemostat_core::io::{self, event_log_file, num, Header};
use chemostat_core::rng::root_stream;
use chemostat_core::{Error, InitialMassDensity, Model, SampleGrid, Trajectory};

use crate::config::{ConfigError, Initial, LoadError, RunConfig};
use crate::plot::{LineChart, Series};

pub const TOOL: &str = "chemostat-kit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Ibm,
    Ide,
    Ode,
    Fit,
    Ensemble,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ibm => "ibm",
            Self::Ide => "ide",
            Self::Ode => "ode",
            Self::Fit => "fit",
            Self::Ensemble => "ensemble",
            Self::Compare => "compare",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numeric(Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) => 3,
            Self::Io(_) => 4,
        }
    }

    fn config(msg: impl Into<String>) -> Self {
        Self::Config(ConfigError(vec![msg.into()]))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Numeric(Error::Cfl { ratio, dt, dx }) => write!(
                f,
                "CFL condition violated: ratio {ratio:.6} > 1 (dt_ide = {dt} h, dx = {dx} mg); \
                 lower dt_ide, coarsen I, or set force_cfl = true"
            ),
            Self::Numeric(e) => write!(f, "numerical failure: {e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        // Parameter problems surface as configuration errors.
        match e {
            Error::InvalidParams(p) => Self::Config(ConfigError(p)),
            Error::Domain { .. } | Error::Bandwidth(_) | Error::Unsupported(_) => Self::Config(ConfigError(vec![e.to_string()])),
            e => Self::Numeric(e),
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io(m) => Self::Io(m),
            LoadError::Config(c) => Self::Config(c),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Files written and one-line facts worth printing.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    header: Header,
    plot: bool,
    out: Outcome,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(&cfg.hashed_value()).expect("a JSON value always serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn header(cfg: &RunConfig) -> Header {
    Header {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
    }
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&mut self, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
        let path = self.path(name);
        let f = File::create(&path).map_err(io_err(&path))?;
        self.out.files.push(path.clone());
        Ok((BufWriter::new(f), path))
    }

    fn write_with(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>, &Header) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let (mut w, path) = self.create(name)?;
        let header = self.header.clone();
        body(&mut w, &header).and_then(|_| w.flush()).map_err(io_err(&path))
    }

    fn svg(&mut self, name: &str, chart: LineChart) -> Result<(), CliError> {
        if !self.plot {
            return Ok(());
        }
        let path = self.path(name);
        fs::write(&path, chart.to_svg()).map_err(io_err(&path))?;
        self.out.files.push(path);
        Ok(())
    }

    fn note(&mut self, line: String) {
        self.out.summary.push(line);
    }
}

fn density(cfg: &RunConfig) -> Result<InitialMassDensity, CliError> {
    Ok(cfg.density.build()?)
}

/// Individuals for a biomass-specified start: round(X0·V / mean mass), at least 1.
fn initial_count(cfg: &RunConfig, d: &InitialMassDensity) -> Result<usize, CliError> {
    Ok(match cfg.initial {
        Initial::Count(n) => n,
        Initial::Biomass(b) => ((b * cfg.params.volume / d.mean_mass()?).round() as usize).max(1),
    })
}

fn initial_biomass(cfg: &RunConfig, d: &InitialMassDensity) -> Result<f64, CliError> {
    Ok(match cfg.initial {
        Initial::Count(n) => n as f64 * d.mean_mass()? / cfg.params.volume,
        Initial::Biomass(b) => b,
    })
}

fn grid(cfg: &RunConfig) -> SampleGrid {
    SampleGrid::uniform(cfg.t_max, cfg.sample_dt)
}

/// Runs one subcommand, writing into `cfg.out` (created if needed).
pub fn dispatch(cmd: Command, cfg: &RunConfig, plot: bool) -> Result<Outcome, CliError> {
    if let Some(m) = &cfg.model {
        if m != cmd.name() {
            return Err(CliError::config(format!(
                "model = \"{m}\" in the configuration, but the {} subcommand was invoked",
                cmd.name()
            )));
        }
    }
    let model = Model::new(cfg.params)?;
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut ctx = Ctx {
        cfg,
        dir,
        header: header(cfg),
        plot,
        out: Outcome::default(),
    };
    let text = serde_json::to_string_pretty(&cfg.to_value()).expect("a JSON value always serializes");
    let path = ctx.path("config.json");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    ctx.out.files.push(path);

    match cmd {
        Command::Ibm => ibm(&mut ctx, &model)?,
        Command::Ide => {
            ide(&mut ctx, &model, "")?;
        }
        Command::Ode => {
            let kinetics = cfg
                .ode
                .ok_or_else(|| CliError::config("ode: required for the ode subcommand ({\"mu_max\": .., \"K_s\": ..})"))?;
            ode(&mut ctx, kinetics, "")?;
        }
        Command::Fit => {
            fit(&mut ctx, &model)?;
        }
        Command::Ensemble => {
            ensemble(&mut ctx, &model)?;
        }
        Command::Compare => compare(&mut ctx, &model)?,
    }
    Ok(ctx.out)
}

fn trajectory_charts(ctx: &mut Ctx, prefix: &str, label: &str, traj: &Trajectory) -> Result<(), CliError> {
    ctx.svg(
        &format!("{prefix}biomass.svg"),
        LineChart::new("Biomass", "t (h)", "X (mg/l)").with(Series::new(label, &traj.times, &traj.biomass)),
    )?;
    ctx.svg(
        &format!("{prefix}substrate.svg"),
        LineChart::new("Substrate", "t (h)", "S (mg/l)").with(Series::new(label, &traj.times, &traj.substrate)),
    )
}

fn washout_note(traj: &Trajectory) -> String {
    match traj.washout_time {
        Some(t) => format!("washout at t = {} h", num(t)),
        None => "no washout".into(),
    }
}

fn ibm(ctx: &mut Ctx, model: &Model) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let d = density(cfg)?;
    let n0 = initial_count(cfg, &d)?;
    let opts = IbmOptions {
        sample_grid: grid(cfg),
        snapshot_times: cfg.snapshot_times.clone(),
        h_max: cfg.h_max_ibm,
    };
    let mut rng = root_stream(cfg.seed);
    let run: IbmRun = if cfg.event_log {
        let path = ctx.path("events.csv");
        let mut log = event_log_file(&path, &ctx.header).map_err(io_err(&path))?;
        ctx.out.files.push(path.clone());
        let run = run_ibm_with_events(model, n0, &d, cfg.t_max, &mut rng, &opts, |e| log.record(e))?;
        let events = log.finish().map_err(io_err(&path))?;
        ctx.note(format!("{events} events logged"));
        run
    } else {
        run_ibm_with_events(model, n0, &d, cfg.t_max, &mut rng, &opts, |_| {})?
    };
    ctx.write_with("trajectory.csv", |w, h| io::write_trajectory(w, h, &run.trajectory))?;
    if !run.snapshots.is_empty() {
        let hists = run
            .snapshots
            .iter()
            .map(|s| Ok((s.t, mass_histogram(&s.masses, cfg.histogram_bins, cfg.params.m_max)?)))
            .collect::<Result<Vec<(f64, MassHistogram)>, Error>>()?;
        ctx.write_with("histograms.csv", |w, h| io::write_histograms(w, h, &hists))?;
    }
    let dg = &run.diagnostics;
    ctx.note(format!(
        "n0 = {n0}, final N = {}, {} divisions, {} uptakes, {} rejections",
        run.final_state.masses.len(),
        dg.divisions,
        dg.uptakes,
        dg.rejections
    ));
    ctx.note(washout_note(&run.trajectory));
    trajectory_charts(ctx, "", "ibm", &run.trajectory)
}

fn solve_ide(ctx: &Ctx, model: &Model) -> Result<IdeSolution, CliError> {
    let cfg = ctx.cfg;
    let d = density(cfg)?;
    let scale = match cfg.initial {
        Initial::Count(n) => InitialScale::Population(n),
        Initial::Biomass(b) => InitialScale::Biomass(b),
    };
    let init = initial_density_grid(model, &d, MassGrid::new(cfg.params.m_max, cfg.cells), scale)?;
    let snapshot_times = if cfg.snapshot_times.is_empty() {
        vec![0.0, cfg.t_max]
    } else {
        cfg.snapshot_times.clone()
    };
    let opts = IdeOptions {
        dt: cfg.dt_ide,
        sample_grid: grid(cfg),
        snapshot_times,
        force: cfg.force_cfl,
    };
    Ok(ide_solve(model, init, cfg.t_max, &opts)?)
}

fn ide(ctx: &mut Ctx, model: &Model, prefix: &str) -> Result<IdeSolution, CliError> {
    let sol = solve_ide(ctx, model)?;
    let grid = sol.final_state.grid;
    ctx.write_with(&format!("{prefix}trajectory.csv"), |w, h| io::write_trajectory(w, h, &sol.trajectory))?;
    ctx.write_with(&format!("{prefix}density.csv"), |w, h| {
        io::write_density_snapshots(w, h, &grid, &sol.snapshots)
    })?;
    ctx.note(format!("CFL ratio {:.4}, {} negative values clamped", sol.cfl, sol.clamps));
    if sol.cfl > 1.0 {
        ctx.note("warning: ran with CFL ratio above 1 because force_cfl is set".into());
    }
    trajectory_charts(ctx, prefix, "ide", &sol.trajectory)?;
    if ctx.plot {
        let x: Vec<f64> = grid.nodes().collect();
        let chart = sol.snapshots.iter().fold(
            LineChart::new("Normalized mass density", "x (mg)", "p / <p, 1>"),
            |c, s| c.with(Series::new(format!("t = {} h", num(s.t)), &x, &s.normalized)),
        );
        ctx.svg(&format!("{prefix}density.svg"), chart)?;
    }
    Ok(sol)
}

fn solve_ode(ctx: &Ctx, kinetics: Monod, init: ClassicState) -> Result<ClassicTrajectory, CliError> {
    Ok(classic_solve(init, &ctx.cfg.params, &kinetics, &grid(ctx.cfg), DEFAULT_STEP)?)
}

/// The fitted curve starts where the fit did: the reference's first sample.
fn solve_fitted(ctx: &Ctx, fit: &MonodFit, reference: &Trajectory) -> Result<ClassicTrajectory, CliError> {
    let init = ClassicState {
        y: reference.biomass[0],
        s: reference.substrate[0],
    };
    solve_ode(ctx, fit.kinetics(), init)
}

fn ode(ctx: &mut Ctx, kinetics: Monod, prefix: &str) -> Result<ClassicTrajectory, CliError> {
    let cfg = ctx.cfg;
    let init = ClassicState {
        y: initial_biomass(cfg, &density(cfg)?)?,
        s: cfg.params.s0,
    };
    let traj = solve_ode(ctx, kinetics, init)?;
    ctx.write_with(&format!("{prefix}trajectory.csv"), |w, h| io::write_classic(w, h, &traj))?;
    match kinetics.equilibrium(&ctx.cfg.params) {
        Some(eq) => ctx.note(format!("equilibrium Y* = {} mg/l, S* = {} mg/l", num(eq.y), num(eq.s))),
        None => ctx.note("no positive equilibrium: washout is the only steady state".into()),
    }
    ctx.svg(
        &format!("{prefix}biomass.svg"),
        LineChart::new("Biomass", "t (h)", "Y (mg/l)").with(Series::new("ode", &traj.times, &traj.biomass)),
    )?;
    ctx.svg(
        &format!("{prefix}substrate.svg"),
        LineChart::new("Substrate", "t (h)", "S (mg/l)").with(Series::new("ode", &traj.times, &traj.substrate)),
    )?;
    Ok(traj)
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        weights: cfg.fit_weights,
        horizon: cfg.fit_horizon,
        ..FitOptions::default()
    }
}

fn write_fit(ctx: &mut Ctx, fit: &MonodFit) -> Result<(), CliError> {
    let h = &ctx.header;
    let doc = serde_json::json!({
        "tool": h.tool, "version": h.version, "config_sha256": h.config_hash, "seed": h.seed,
        "fit": fit,
    });
    let path = ctx.path("fit.json");
    let text = serde_json::to_string_pretty(&doc).expect("a JSON value always serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    ctx.out.files.push(path);
    ctx.note(format!(
        "fitted mu_max = {} 1/h, K_s = {} mg/l (residual {:.3e}, weight {:.4})",
        num(fit.mu_max),
        num(fit.k_s),
        fit.residual,
        fit.weight
    ));
    Ok(())
}

fn fit(ctx: &mut Ctx, model: &Model) -> Result<(MonodFit, ClassicTrajectory), CliError> {
    let sol = ide(ctx, model, "ide_")?;
    let fit = fit_monod(&sol.trajectory, &ctx.cfg.params, &fit_options(ctx.cfg))?;
    write_fit(ctx, &fit)?;
    let traj = solve_fitted(ctx, &fit, &sol.trajectory)?;
    ctx.write_with("ode_trajectory.csv", |w, h| io::write_classic(w, h, &traj))?;
    let t = &sol.trajectory;
    ctx.svg(
        "fit_biomass.svg",
        LineChart::new("Biomass: density model vs fitted Monod", "t (h)", "X (mg/l)")
            .with(Series::new("ide", &t.times, &t.biomass))
            .with(Series::new("fitted ode", &traj.times, &traj.biomass).dashed()),
    )?;
    ctx.svg(
        "fit_substrate.svg",
        LineChart::new("Substrate: density model vs fitted Monod", "t (h)", "S (mg/l)")
            .with(Series::new("ide", &t.times, &t.substrate))
            .with(Series::new("fitted ode", &traj.times, &traj.substrate).dashed()),
    )?;
    Ok((fit, traj))
}

fn ensemble_spec(cfg: &RunConfig, model: &Model) -> Result<EnsembleSpec, CliError> {
    let d = density(cfg)?;
    let n0 = initial_count(cfg, &d)?;
    let mut spec = EnsembleSpec::new(model.clone(), cfg.n_runs, cfg.seed, n0, cfg.t_max, cfg.sample_dt);
    spec.density = d;
    spec.snapshot_times = cfg.snapshot_times.clone();
    spec.histogram_bins = cfg.histogram_bins;
    spec.h_max = cfg.h_max_ibm;
    spec.bandwidth = cfg.kde_bandwidth;
    spec.workers = cfg.workers;
    spec.quantile_budget = cfg.quantile_budget;
    Ok(spec)
}

fn ensemble(ctx: &mut Ctx, model: &Model) -> Result<EnsembleStats, CliError> {
    let spec = ensemble_spec(ctx.cfg, model)?;
    let mut write_failure = None;
    let stats = if ctx.cfg.write_runs {
        let runs = ctx.path("runs");
        fs::create_dir_all(&runs).map_err(io_err(&runs))?;
        let header = ctx.header.clone();
        let stats = run_ensemble_with(&spec, |i, run| {
            if write_failure.is_none() {
                if let Err(e) = io::write_run(&ctx.dir, &header, i, &run.trajectory) {
                    write_failure = Some(format!("{}: {e}", io::run_path(&ctx.dir, i).display()));
                }
            }
        })?;
        if let Some(e) = write_failure {
            return Err(CliError::Io(e));
        }
        ctx.out.files.push(runs);
        stats
    } else {
        run_ensemble_with(&spec, |_, _| {})?
    };
    let files = io::write_ensemble_dir(&ctx.dir, &ctx.header, &stats).map_err(io_err(&ctx.dir))?;
    ctx.out.files.extend(files);

    let w = &stats.washout;
    ctx.note(format!(
        "{} runs, {} washed out: P = {:.4} +/- {:.4} (95%)",
        stats.n_runs, w.count, w.probability, w.ci_half_width
    ));
    if let Some(k) = &stats.kde {
        ctx.note(format!("washout-time KDE bandwidth {:.4} h", k.bandwidth));
    }
    if ctx.plot {
        let t = &stats.times;
        for (name, title, unit, band) in [
            ("biomass.svg", "Biomass", "X (mg/l)", &stats.biomass),
            ("substrate.svg", "Substrate", "S (mg/l)", &stats.substrate),
        ] {
            ctx.svg(
                name,
                LineChart::new(&format!("{title}, {} runs", stats.n_runs), "t (h)", unit)
                    .with(Series::new("mean", t, &band.mean))
                    .with(Series::new("median", t, &band.q50))
                    .with(Series::new("2.5%", t, &band.q025).dashed())
                    .with(Series::new("97.5%", t, &band.q975).dashed()),
            )?;
        }
        if let Some(k) = &stats.kde {
            ctx.svg(
                "washout_kde.svg",
                LineChart::new("Washout time density", "t (h)", "density (1/h)").with(Series::new("kde", &k.t, &k.density)),
            )?;
        }
    }
    Ok(stats)
}

fn compare(ctx: &mut Ctx, model: &Model) -> Result<(), CliError> {
    let stats = ensemble(ctx, model)?;
    let sol = ide(ctx, model, "ide_")?;
    let fitted = if ctx.cfg.compare_fit {
        let fit = fit_monod(&sol.trajectory, &ctx.cfg.params, &fit_options(ctx.cfg))?;
        write_fit(ctx, &fit)?;
        let traj = solve_fitted(ctx, &fit, &sol.trajectory)?;
        ctx.write_with("ode_trajectory.csv", |w, h| io::write_classic(w, h, &traj))?;
        Some(traj)
    } else {
        None
    };
    let ide_t = &sol.trajectory;
    if ide_t.times != stats.times || fitted.as_ref().is_some_and(|f| f.times != stats.times) {
        return Err(CliError::Numeric(Error::NonFinite {
            t: 0.0,
            detail: "model outputs are not on a common time grid".into(),
        }));
    }
    ctx.write_with("compare.csv", |w, h| {
        h.write_to(w)?;
        write!(
            w,
            "t,ibm_mean_N,ibm_mean_X,ibm_q025_X,ibm_q50_X,ibm_q975_X,\
             ibm_mean_S,ibm_q025_S,ibm_q50_S,ibm_q975_S,ide_N,ide_X,ide_S"
        )?;
        if fitted.is_some() {
            write!(w, ",ode_X,ode_S")?;
        }
        writeln!(w)?;
        for (i, &t) in stats.times.iter().enumerate() {
            let (x, s) = (&stats.biomass, &stats.substrate);
            let mut cells = vec![
                t,
                stats.count.mean[i],
                x.mean[i],
                x.q025[i],
                x.q50[i],
                x.q975[i],
                s.mean[i],
                s.q025[i],
                s.q50[i],
                s.q975[i],
                ide_t.count[i],
                ide_t.biomass[i],
                ide_t.substrate[i],
            ];
            if let Some(f) = &fitted {
                cells.extend([f.biomass[i], f.substrate[i]]);
            }
            let line: Vec<String> = cells.into_iter().map(num).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })?;
    if ctx.plot {
        let t = &stats.times;
        for (name, title, unit, band, ide_v, ode_v) in [
            (
                "compare_biomass.svg",
                "Biomass",
                "X (mg/l)",
                &stats.biomass,
                &ide_t.biomass,
                fitted.as_ref().map(|f| &f.biomass),
            ),
            (
                "compare_substrate.svg",
                "Substrate",
                "S (mg/l)",
                &stats.substrate,
                &ide_t.substrate,
                fitted.as_ref().map(|f| &f.substrate),
            ),
        ] {
            let mut chart = LineChart::new(&format!("{title}: three models"), "t (h)", unit)
                .with(Series::new("ibm mean", t, &band.mean))
                .with(Series::new("ibm 2.5%", t, &band.q025).dashed())
                .with(Series::new("ibm 97.5%", t, &band.q975).dashed())
                .with(Series::new("ide", t, ide_v));
            if let Some(v) = ode_v {
                chart = chart.with(Series::new("fitted ode", t, v));
            }
            ctx.svg(name, chart)?;
        }
    }
    Ok(())
}

/// Loads the configuration, applies command-line overrides, and runs.
pub fn run_from_file(
    cmd: Command,
    config: &Path,
    sets: &[String],
    out: Option<&Path>,
    workers: Option<usize>,
    plot: bool,
) -> Result<Outcome, CliError> {
    let mut cfg = crate::config::load_config(config, sets)?;
    if let Some(o) = out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::config("--workers 0: must be >= 1"));
        }
        cfg.workers = Some(w);
    }
    dispatch(cmd, &cfg, plot)
}
