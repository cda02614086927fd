//! CSV emission. Every file starts with `#` comment lines identifying the
//! producer, the effective configuration hash and the root seed; numbers use
//! the shortest representation that round-trips, lines end with LF.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::classic::ClassicTrajectory;
use crate::ensemble::{Band, EnsembleStats, KdeCurve, MassHistogram, WashoutStats};
use crate::ibm::IbmEvent;
use crate::ide::{DensitySnapshot, MassGrid};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "# {} {}", self.tool, self.version)?;
        writeln!(w, "# config-sha256 {}", self.config_hash)?;
        writeln!(w, "# seed {}", self.seed)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn row<W: Write>(w: &mut W, cells: &[f64]) -> io::Result<()> {
    let mut first = true;
    for &c in cells {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        write!(w, "{c}")?;
    }
    w.write_all(b"\n")
}

/// Columns t, N, X, S (biomass and substrate as concentrations).
pub fn write_trajectory<W: Write>(w: &mut W, header: &Header, traj: &Trajectory) -> io::Result<()> {
    header.write_to(w)?;
    match traj.washout_time {
        Some(t) => writeln!(w, "# washout_time {t}")?,
        None => writeln!(w, "# washout_time NONE")?,
    }
    writeln!(w, "t,N,X,S")?;
    for i in 0..traj.len() {
        row(w, &[traj.times[i], traj.count[i], traj.biomass[i], traj.substrate[i]])?;
    }
    Ok(())
}

pub fn write_trajectory_file(path: &Path, header: &Header, traj: &Trajectory) -> io::Result<()> {
    let mut w = create(path)?;
    write_trajectory(&mut w, header, traj)?;
    w.flush()
}

/// Columns t, Y, S.
pub fn write_classic<W: Write>(w: &mut W, header: &Header, traj: &ClassicTrajectory) -> io::Result<()> {
    header.write_to(w)?;
    writeln!(w, "t,Y,S")?;
    for i in 0..traj.times.len() {
        row(w, &[traj.times[i], traj.biomass[i], traj.substrate[i]])?;
    }
    Ok(())
}

/// Streaming event log: t, kind, index, alpha, N_after, S_after.
pub struct EventLog<W: Write> {
    w: W,
    error: Option<io::Error>,
    written: u64,
}

impl<W: Write> EventLog<W> {
    pub fn new(mut w: W, header: &Header) -> io::Result<Self> {
        header.write_to(&mut w)?;
        writeln!(w, "t,kind,index,alpha,N_after,S_after")?;
        Ok(Self {
            w,
            error: None,
            written: 0,
        })
    }

    /// Records an event; the first I/O error is kept and reported by
    /// [`EventLog::finish`].
    pub fn record(&mut self, e: &IbmEvent) {
        if self.error.is_some() {
            return;
        }
        let alpha = e.alpha.map(num).unwrap_or_default();
        if let Err(err) = writeln!(
            self.w,
            "{},{},{},{},{},{}",
            e.t, e.kind, e.index, alpha, e.n_after, e.s_after
        ) {
            self.error = Some(err);
        } else {
            self.written += 1;
        }
    }

    pub fn finish(mut self) -> io::Result<u64> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.w.flush()?;
        Ok(self.written)
    }
}

pub fn event_log_file(path: &Path, header: &Header) -> io::Result<EventLog<BufWriter<File>>> {
    EventLog::new(create(path)?, header)
}

/// Long format: t, x, p, p_normalized.
pub fn write_density_snapshots<W: Write>(
    w: &mut W,
    header: &Header,
    grid: &MassGrid,
    snapshots: &[DensitySnapshot],
) -> io::Result<()> {
    header.write_to(w)?;
    writeln!(w, "t,x,p,p_normalized")?;
    for s in snapshots {
        for (i, (&p, &q)) in s.p.iter().zip(&s.normalized).enumerate() {
            row(w, &[s.t, grid.node(i), p, q])?;
        }
    }
    Ok(())
}

fn band_header(name: &str) -> String {
    format!("mean_{name},q025_{name},q50_{name},q975_{name}")
}

fn band_cells(b: &Band, i: usize) -> [f64; 4] {
    [b.mean[i], b.q025[i], b.q50[i], b.q975[i]]
}

/// Columns t, then mean and 2.5/50/97.5% quantiles of N, X and S, then the
/// fraction of runs washed out by t.
pub fn write_stats<W: Write>(w: &mut W, header: &Header, stats: &EnsembleStats) -> io::Result<()> {
    header.write_to(w)?;
    writeln!(w, "# runs {}", stats.n_runs)?;
    writeln!(w, "# quantiles {:?}", stats.quantiles)?;
    writeln!(
        w,
        "t,{},{},{},washout_fraction",
        band_header("N"),
        band_header("X"),
        band_header("S")
    )?;
    for (i, &t) in stats.times.iter().enumerate() {
        let mut cells = vec![t];
        cells.extend(band_cells(&stats.count, i));
        cells.extend(band_cells(&stats.biomass, i));
        cells.extend(band_cells(&stats.substrate, i));
        cells.push(stats.washout.by_time[i]);
        row(w, &cells)?;
    }
    Ok(())
}

/// Columns run, washout_time (or NONE).
pub fn write_washout<W: Write>(w: &mut W, header: &Header, washout: &WashoutStats) -> io::Result<()> {
    header.write_to(w)?;
    writeln!(
        w,
        "# washed_out {} of {}, probability {} +/- {}",
        washout.count,
        washout.times.len(),
        washout.probability,
        washout.ci_half_width
    )?;
    writeln!(w, "run,washout_time")?;
    for (i, t) in washout.times.iter().enumerate() {
        match t {
            Some(t) => writeln!(w, "{i},{t}")?,
            None => writeln!(w, "{i},NONE")?,
        }
    }
    Ok(())
}

/// Columns t, density; a header-only file when no estimate exists.
pub fn write_kde<W: Write>(w: &mut W, header: &Header, kde: Option<&KdeCurve>) -> io::Result<()> {
    header.write_to(w)?;
    match kde {
        Some(k) => writeln!(w, "# bandwidth {}", k.bandwidth)?,
        None => writeln!(w, "# bandwidth NONE (fewer than two washout times)")?,
    }
    writeln!(w, "t,density")?;
    if let Some(k) = kde {
        for (&t, &d) in k.t.iter().zip(&k.density) {
            row(w, &[t, d])?;
        }
    }
    Ok(())
}

/// Columns t, bin_left, bin_right, density; empty populations are written as
/// a single EMPTY row.
pub fn write_histograms<W: Write>(w: &mut W, header: &Header, hists: &[(f64, MassHistogram)]) -> io::Result<()> {
    header.write_to(w)?;
    writeln!(w, "t,bin_left,bin_right,density")?;
    for (t, h) in hists {
        match h {
            MassHistogram::Empty { .. } => writeln!(w, "{t},EMPTY,EMPTY,EMPTY")?,
            MassHistogram::Density { density, bin_width, .. } => {
                for (left, &d) in h.edges().iter().zip(density) {
                    row(w, &[*t, *left, left + bin_width, d])?;
                }
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> io::Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()
}

/// Writes stats.csv, washout.csv, kde.csv and histograms.csv into `dir`;
/// returns the paths written.
pub fn write_ensemble_dir(dir: &Path, header: &Header, stats: &EnsembleStats) -> io::Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = ["stats.csv", "washout.csv", "kde.csv", "histograms.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_file(&paths[0], |w| write_stats(w, header, stats))?;
    write_file(&paths[1], |w| write_washout(w, header, &stats.washout))?;
    write_file(&paths[2], |w| write_kde(w, header, stats.kde.as_ref()))?;
    write_file(&paths[3], |w| write_histograms(w, header, &stats.histograms))?;
    Ok(paths)
}

/// Path of replicate `index` under `dir/runs/`.
pub fn run_path(dir: &Path, index: u64) -> PathBuf {
    dir.join("runs").join(format!("run_{index:06}.csv"))
}

pub fn write_run(dir: &Path, header: &Header, index: u64, traj: &Trajectory) -> io::Result<PathBuf> {
    let path = run_path(dir, index);
    write_trajectory_file(&path, header, traj)?;
    Ok(path)
}
