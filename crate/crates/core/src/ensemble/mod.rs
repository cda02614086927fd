//! Independent replicates of the individual-based model and their
//! cross-replicate statistics.
//!
//! Replicate i draws from stream i of the root seed, so every run is
//! reproducible on its own. Runs are executed in chunks, possibly in
//! parallel, and folded into the statistics strictly in index order: the
//! result is bit-for-bit independent of the worker count.

mod histogram;
mod kde;
mod quantile;

pub use histogram::{mass_histogram, MassHistogram};
pub use kde::{local_maxima, silverman_bandwidth, washout_kde, KdeCurve, KDE_MARGIN};
pub use quantile::{exact_quantile, P2};

use serde::{Deserialize, Serialize};

use crate::density::InitialMassDensity;
use crate::error::{Error, Result};
use crate::ibm::{run_ibm, IbmOptions, IbmRun, DEFAULT_H_MAX};
use crate::rates::Model;
use crate::rng::replicate_stream;
use crate::trajectory::SampleGrid;

/// Pointwise quantile levels reported in the bands.
pub const QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];
/// Normal quantile for the 95% binomial interval.
pub const Z95: f64 = 1.96;
/// Default cap on retained samples (runs × times × 3) for exact quantiles.
pub const DEFAULT_QUANTILE_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Bandwidth {
    /// 1.06·σ̂·n^(−1/5)
    #[default]
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub model: Model,
    pub n_runs: u64,
    pub root_seed: u64,
    pub n0: usize,
    pub density: InitialMassDensity,
    pub t_max: f64,
    pub sample_grid: SampleGrid,
    pub snapshot_times: Vec<f64>,
    pub histogram_bins: usize,
    pub h_max: f64,
    pub bandwidth: Bandwidth,
    /// Worker threads; None uses all available.
    pub workers: Option<usize>,
    pub quantile_budget: usize,
}

impl EnsembleSpec {
    pub fn new(model: Model, n_runs: u64, root_seed: u64, n0: usize, t_max: f64, sample_dt: f64) -> Self {
        Self {
            model,
            n_runs,
            root_seed,
            n0,
            density: InitialMassDensity::Transient,
            t_max,
            sample_grid: SampleGrid::uniform(t_max, sample_dt),
            snapshot_times: Vec::new(),
            histogram_bins: 50,
            h_max: DEFAULT_H_MAX,
            bandwidth: Bandwidth::Silverman,
            workers: None,
            quantile_budget: DEFAULT_QUANTILE_BUDGET,
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_runs < 1 {
            out.push("n_runs must be >= 1".into());
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            out.push(format!("t_max must be > 0 (got {})", self.t_max));
        }
        if self.histogram_bins == 0 {
            out.push("histogram_bins must be >= 1".into());
        }
        if self.workers == Some(0) {
            out.push("workers must be >= 1".into());
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                out.push(format!("bandwidth must be > 0 (got {h})"));
            }
        }
        if self.sample_grid.times().iter().any(|&t| t > self.t_max) {
            out.push("sample times must not exceed t_max".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub q50: Vec<f64>,
    pub q975: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantileMethod {
    Exact,
    Streaming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WashoutStats {
    pub count: u64,
    pub probability: f64,
    /// 95% normal-approximation half-width, z·sqrt(p(1−p)/n).
    pub ci_half_width: f64,
    /// Washout time of each run, by run index.
    pub times: Vec<Option<f64>>,
    /// Fraction of runs washed out at or before each sample time.
    pub by_time: Vec<f64>,
}

impl WashoutStats {
    pub fn samples(&self) -> Vec<f64> {
        self.times.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_runs: u64,
    pub times: Vec<f64>,
    pub count: Band,
    pub biomass: Band,
    pub substrate: Band,
    pub quantiles: QuantileMethod,
    pub washout: WashoutStats,
    /// KDE over washed-out runs; None with fewer than two such runs or a
    /// degenerate sample.
    pub kde: Option<KdeCurve>,
    /// Pooled mass histograms at the snapshot times.
    pub histograms: Vec<(f64, MassHistogram)>,
}

enum Quantiles {
    Exact(Vec<Vec<f64>>),
    Streaming(Vec<[P2; 3]>),
}

struct Series {
    sums: Vec<f64>,
    q: Quantiles,
}

impl Series {
    fn new(len: usize, exact: bool, runs: usize) -> Self {
        let q = if exact {
            Quantiles::Exact((0..len).map(|_| Vec::with_capacity(runs)).collect())
        } else {
            Quantiles::Streaming((0..len).map(|_| QUANTILES.map(P2::new)).collect())
        };
        Self {
            sums: vec![0.0; len],
            q,
        }
    }

    fn add(&mut self, values: &[f64]) {
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += v;
        }
        match &mut self.q {
            Quantiles::Exact(cols) => cols.iter_mut().zip(values).for_each(|(c, &v)| c.push(v)),
            Quantiles::Streaming(est) => est
                .iter_mut()
                .zip(values)
                .for_each(|(e, &v)| e.iter_mut().for_each(|p| p.push(v))),
        }
    }

    fn finish(self, n: u64) -> Band {
        let mean = self.sums.iter().map(|s| s / n as f64).collect();
        let mut bands: [Vec<f64>; 3] = Default::default();
        match self.q {
            Quantiles::Exact(cols) => {
                for mut c in cols {
                    c.sort_by(f64::total_cmp);
                    for (b, p) in bands.iter_mut().zip(QUANTILES) {
                        b.push(exact_quantile(&c, p));
                    }
                }
            }
            Quantiles::Streaming(est) => {
                for e in est {
                    for (b, p) in bands.iter_mut().zip(&e) {
                        b.push(p.estimate());
                    }
                }
            }
        }
        let [q025, q50, q975] = bands;
        Band {
            mean,
            q025,
            q50,
            q975,
        }
    }
}

struct Accumulator {
    runs: u64,
    series: [Series; 3],
    washout: Vec<Option<f64>>,
    hist: Vec<Vec<u64>>,
    exact: bool,
}

impl Accumulator {
    fn new(spec: &EnsembleSpec) -> Self {
        let len = spec.sample_grid.len();
        let exact = (spec.n_runs as u128) * (len as u128) * 3 <= spec.quantile_budget as u128;
        let runs = if exact { spec.n_runs as usize } else { 0 };
        Self {
            runs: 0,
            series: [(); 3].map(|_| Series::new(len, exact, runs)),
            washout: Vec::with_capacity(spec.n_runs as usize),
            hist: vec![vec![0; spec.histogram_bins]; spec.snapshot_times.len()],
            exact,
        }
    }

    fn add(&mut self, run: &IbmRun, m_max: f64) {
        let t = &run.trajectory;
        self.series[0].add(&t.count);
        self.series[1].add(&t.biomass);
        self.series[2].add(&t.substrate);
        self.washout.push(t.washout_time);
        for (counts, snap) in self.hist.iter_mut().zip(&run.snapshots) {
            let bins = counts.len();
            for &x in &snap.masses {
                counts[histogram::bin_of(x, bins, m_max)] += 1;
            }
        }
        self.runs += 1;
    }

    fn finish(self, spec: &EnsembleSpec) -> Result<EnsembleStats> {
        let n = self.runs;
        let [count, biomass, substrate] = self.series.map(|s| s.finish(n));
        let washed = self.washout.iter().flatten().count() as u64;
        let p = washed as f64 / n as f64;
        let times = spec.sample_grid.times().to_vec();
        let by_time = times
            .iter()
            .map(|&t| self.washout.iter().flatten().filter(|&&w| w <= t).count() as f64 / n as f64)
            .collect();
        let washout = WashoutStats {
            count: washed,
            probability: p,
            ci_half_width: Z95 * (p * (1.0 - p) / n as f64).sqrt(),
            times: self.washout,
            by_time,
        };
        let samples = washout.samples();
        let bandwidth = match spec.bandwidth {
            Bandwidth::Silverman => silverman_bandwidth(&samples).ok(),
            Bandwidth::Fixed(h) => (samples.len() >= 2).then_some(h),
        };
        let kde = bandwidth.map(|h| washout_kde(&samples, h)).transpose()?;
        let m_max = spec.model.params.m_max;
        let histograms = spec
            .snapshot_times
            .iter()
            .zip(&self.hist)
            .map(|(&t, c)| (t, histogram::from_counts(c, m_max)))
            .collect();
        Ok(EnsembleStats {
            n_runs: n,
            times,
            count,
            biomass,
            substrate,
            quantiles: if self.exact {
                QuantileMethod::Exact
            } else {
                QuantileMethod::Streaming
            },
            washout,
            kde,
            histograms,
        })
    }
}

fn run_one(spec: &EnsembleSpec, opts: &IbmOptions, index: u64) -> Result<IbmRun> {
    let mut rng = replicate_stream(spec.root_seed, index);
    run_ibm(&spec.model, spec.n0, &spec.density, spec.t_max, &mut rng, opts).map_err(|e| Error::Replicate {
        index,
        seed: spec.root_seed,
        source: Box::new(e),
    })
}

/// Runs replicates `start..end`, results in index order.
trait Executor {
    fn map(&self, spec: &EnsembleSpec, opts: &IbmOptions, start: u64, end: u64) -> Vec<Result<IbmRun>>;
    fn workers(&self) -> usize;
}

struct Sequential;

impl Executor for Sequential {
    fn map(&self, spec: &EnsembleSpec, opts: &IbmOptions, start: u64, end: u64) -> Vec<Result<IbmRun>> {
        (start..end).map(|i| run_one(spec, opts, i)).collect()
    }

    fn workers(&self) -> usize {
        1
    }
}

#[cfg(feature = "parallel")]
struct Parallel(rayon::ThreadPool);

#[cfg(feature = "parallel")]
impl Executor for Parallel {
    fn map(&self, spec: &EnsembleSpec, opts: &IbmOptions, start: u64, end: u64) -> Vec<Result<IbmRun>> {
        use rayon::prelude::*;
        self.0
            .install(|| (start..end).into_par_iter().map(|i| run_one(spec, opts, i)).collect())
    }

    fn workers(&self) -> usize {
        self.0.current_num_threads()
    }
}

#[cfg(feature = "parallel")]
fn executor(workers: Option<usize>) -> Box<dyn Executor> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    match builder.build() {
        Ok(pool) if pool.current_num_threads() > 1 => Box::new(Parallel(pool)),
        _ => Box::new(Sequential),
    }
}

#[cfg(not(feature = "parallel"))]
fn executor(_workers: Option<usize>) -> Box<dyn Executor> {
    Box::new(Sequential)
}

/// Runs the ensemble and returns its statistics.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleStats> {
    run_ensemble_with(spec, |_, _| {})
}

/// As [`run_ensemble`], handing each finished run to `on_run` in index
/// order, e.g. to persist per-run trajectories.
pub fn run_ensemble_with<F>(spec: &EnsembleSpec, mut on_run: F) -> Result<EnsembleStats>
where
    F: FnMut(u64, &IbmRun),
{
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidParams(problems));
    }
    let mut opts = IbmOptions::new(spec.sample_grid.clone());
    opts.snapshot_times = spec.snapshot_times.clone();
    opts.h_max = spec.h_max;

    let exec = executor(spec.workers);
    let chunk = (exec.workers() as u64 * 4).max(1);
    let mut acc = Accumulator::new(spec);
    let mut start = 0;
    while start < spec.n_runs {
        let end = (start + chunk).min(spec.n_runs);
        for (i, run) in (start..end).zip(exec.map(spec, &opts, start, end)) {
            let run = run?;
            acc.add(&run, spec.model.params.m_max);
            on_run(i, &run);
        }
        start = end;
    }
    acc.finish(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ChemostatParams;

    fn spec(n_runs: u64, d: f64) -> EnsembleSpec {
        let m = Model::new(ChemostatParams::new(d, 0.05)).unwrap();
        let mut s = EnsembleSpec::new(m, n_runs, 17, 20, 30.0, 1.0);
        s.snapshot_times = vec![0.0, 10.0];
        s.histogram_bins = 20;
        s
    }

    #[test]
    fn single_run_statistics_equal_the_run() {
        let s = spec(1, 0.2);
        let stats = run_ensemble(&s).unwrap();
        let mut rng = replicate_stream(17, 0);
        let mut opts = IbmOptions::new(s.sample_grid.clone());
        opts.snapshot_times = s.snapshot_times.clone();
        let run = run_ibm(&s.model, 20, &s.density, 30.0, &mut rng, &opts).unwrap();
        let t = &run.trajectory;
        for band in [(&stats.count, &t.count), (&stats.biomass, &t.biomass), (&stats.substrate, &t.substrate)] {
            assert_eq!(&band.0.mean, band.1);
            assert_eq!(&band.0.q025, band.1);
            assert_eq!(&band.0.q50, band.1);
            assert_eq!(&band.0.q975, band.1);
        }
        assert_eq!(stats.washout.times, vec![t.washout_time]);
    }

    #[test]
    fn bands_are_ordered_and_deterministic() {
        let s = spec(24, 0.2);
        let a = run_ensemble(&s).unwrap();
        let b = run_ensemble(&s).unwrap();
        assert_eq!(a, b);
        for band in [&a.count, &a.biomass, &a.substrate] {
            for i in 0..band.mean.len() {
                assert!(band.q025[i] <= band.q50[i] && band.q50[i] <= band.q975[i]);
            }
        }
        assert!(a.washout.by_time.windows(2).all(|w| w[0] <= w[1]));
        assert!((0.0..=1.0).contains(&a.washout.probability));
        for (_, h) in &a.histograms {
            if let MassHistogram::Density { density, bin_width, .. } = h {
                let total: f64 = density.iter().map(|d| d * bin_width).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut s = spec(13, 0.2);
        s.workers = Some(1);
        let one = run_ensemble(&s).unwrap();
        s.workers = Some(3);
        let three = run_ensemble(&s).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn runs_stream_in_index_order() {
        let s = spec(9, 0.2);
        let mut seen = Vec::new();
        let stats = run_ensemble_with(&s, |i, run| seen.push((i, run.trajectory.washout_time))).unwrap();
        assert_eq!(seen.iter().map(|x| x.0).collect::<Vec<_>>(), (0..9).collect::<Vec<_>>());
        assert_eq!(seen.iter().map(|x| x.1).collect::<Vec<_>>(), stats.washout.times);
    }

    #[test]
    fn streaming_quantiles_when_over_budget() {
        let mut s = spec(30, 0.2);
        s.quantile_budget = 10;
        let stream = run_ensemble(&s).unwrap();
        assert_eq!(stream.quantiles, QuantileMethod::Streaming);
        s.quantile_budget = DEFAULT_QUANTILE_BUDGET;
        let exact = run_ensemble(&s).unwrap();
        assert_eq!(exact.quantiles, QuantileMethod::Exact);
        assert_eq!(stream.count.mean, exact.count.mean);
        let last = exact.times.len() - 1;
        let spread = exact.substrate.q975[last] - exact.substrate.q025[last];
        assert!((stream.substrate.q50[last] - exact.substrate.q50[last]).abs() <= spread);
    }

    #[test]
    fn high_dilution_washes_out() {
        let mut s = spec(20, 1.5);
        s.t_max = 60.0;
        s.sample_grid = SampleGrid::uniform(60.0, 1.0);
        let stats = run_ensemble(&s).unwrap();
        assert_eq!(stats.washout.count, 20);
        assert_eq!(stats.washout.probability, 1.0);
        assert_eq!(stats.washout.ci_half_width, 0.0);
        assert_eq!(*stats.washout.by_time.last().unwrap(), 1.0);
        let kde = stats.kde.unwrap();
        assert!((kde.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut s = spec(0, 0.2);
        s.histogram_bins = 0;
        let Err(Error::InvalidParams(p)) = run_ensemble(&s) else { panic!() };
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn failing_replicate_reports_index_and_seed() {
        let mut s = spec(3, 0.2);
        s.h_max = 0.0;
        match run_ensemble(&s) {
            Err(Error::Replicate { index, seed, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(seed, 17);
            }
            other => panic!("{other:?}"),
        }
    }
}
