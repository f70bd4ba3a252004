//! Experiment harness behind the `stokes-ctm` binary: configuration,
//! snapshot persistence, CSV output, run manifests, sweeps and the
//! cost-model fits.
//!
//! Every subcommand writes its CSV files plus `manifest.json` into the output
//! directory. CSV floats use 17 significant digits so values round-trip.
//! Sweep points run on the rayon pool and are collected in input order, so a
//! rerun with the same configuration, seed and thread count reproduces every
//! file byte for byte.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ControlMask, DomainSpec, MaskKind};
use crate::fit::{linear_fit, LinearFit};
use crate::hum::{self, ObservedSystem};
use crate::kernel::{self, KernelSpec, TransmutationKernel};
use crate::observability::{self as obs, MultiplierField, ObservationKind};
use crate::sampling;
use crate::stokesop::{StokesModes, StokesOperator};
use crate::transmute::{self, TransmuteConfig};
use crate::{Error, Result};

/// First 12 bytes of every snapshot; a little-endian `u32` version follows.
pub const SNAPSHOT_MAGIC: &[u8; 12] = b"STOKESCTMSNP";
pub const SNAPSHOT_VERSION: u32 = 1;

/// An n-dimensional `f64` array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn new(dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        let n: u64 = dims.iter().product();
        if n as usize != data.len() {
            return Err(Error::ShapeMismatch {
                expected: n as usize,
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (self.dims.len() + self.data.len()));
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u64).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Snapshot(m.to_string());
        if bytes.len() < 24 || &bytes[..12] != SNAPSHOT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let word = |k: usize| -> Option<[u8; 8]> { bytes.get(k..k + 8).map(|b| b.try_into().unwrap()) };
        let rank = u64::from_le_bytes(word(16).ok_or_else(|| bad("truncated rank"))?) as usize;
        let mut dims = Vec::with_capacity(rank);
        for r in 0..rank {
            dims.push(u64::from_le_bytes(word(24 + 8 * r).ok_or_else(|| bad("truncated dims"))?));
        }
        let start = 24 + 8 * rank;
        let n = dims
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| bad("dimension overflow"))? as usize;
        if bytes.len() != start + 8 * n {
            return Err(Error::Snapshot(format!(
                "expected {} payload bytes, found {}",
                8 * n,
                bytes.len().saturating_sub(start)
            )));
        }
        let data = bytes[start..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Modes as a `(1 + ndof) × M` array: eigenvalues in row 0, fields below.
pub fn modes_snapshot(modes: &StokesModes) -> Snapshot {
    let (ndof, m) = (modes.fields.nrows(), modes.count());
    let mut data = modes.eigenvalues.clone();
    for r in 0..ndof {
        data.extend((0..m).map(|j| modes.fields[(r, j)]));
    }
    Snapshot {
        dims: vec![1 + ndof as u64, m as u64],
        data,
    }
}

pub fn modes_from_snapshot(snap: &Snapshot, domain: &DomainSpec) -> Result<StokesModes> {
    if snap.dims.len() != 2 || snap.dims[0] as usize != 1 + domain.ndof() {
        return Err(Error::Snapshot(format!(
            "mode snapshot dims {:?} do not match a grid with {} velocity unknowns",
            snap.dims,
            domain.ndof()
        )));
    }
    let m = snap.dims[1] as usize;
    let eigenvalues = snap.data[..m].to_vec();
    let fields = Mat::from_fn(domain.ndof(), m, |r, j| snap.data[m * (1 + r) + j]);
    StokesModes::from_parts(domain.clone(), eigenvalues, fields)
}

/// Kernel samples as an `(n_t + 1) × n_s` array.
pub fn kernel_snapshot(k: &TransmutationKernel) -> Snapshot {
    Snapshot {
        dims: vec![k.times.len() as u64, k.n_s() as u64],
        data: k.values.clone(),
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    pub half_width: f64,
    pub collar: f64,
    /// Cells per side.
    pub n: usize,
    /// `sharp`, `smoothed` or `full`.
    pub mask: String,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            half_width: 0.5,
            collar: 0.15,
            n: 32,
            mask: "sharp".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModesSection {
    /// Modes computed (`M`).
    pub count: usize,
    /// Modes controlled (`M_f`).
    pub filtered: usize,
    /// Mode snapshot to load instead of solving, if it exists.
    pub snapshot: Option<PathBuf>,
}

impl Default for ModesSection {
    fn default() -> Self {
        Self {
            count: 60,
            filtered: 40,
            snapshot: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonsSection {
    /// Parabolic horizons for kernels, transmutation and the cost sweep.
    pub t_list: Vec<f64>,
    /// Horizon of the hyperbolic experiments.
    pub wave: f64,
}

impl Default for HorizonsSection {
    fn default() -> Self {
        Self {
            t_list: vec![0.2, 0.3, 0.4, 0.5, 0.7, 1.0],
            wave: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub half_length: f64,
    pub n_t: usize,
    pub activation: f64,
    pub tol: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            half_length: 2.5,
            n_t: 256,
            activation: 0.2,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TolerancesSection {
    /// Conjugate-gradient tolerance of the wave HUM.
    pub wave: f64,
    /// Terminal tolerance of the direct parabolic controls, relative to the
    /// uncontrolled terminal state.
    pub parabolic: f64,
}

impl Default for TolerancesSection {
    fn default() -> Self {
        Self {
            wave: 1e-8,
            parabolic: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ObservabilitySection {
    pub samples: usize,
    pub slack: f64,
    pub control_time_grid: Vec<f64>,
    pub threshold: f64,
    /// Grids for the manufactured identity residuals.
    pub identity_grids: Vec<usize>,
}

impl Default for ObservabilitySection {
    fn default() -> Self {
        Self {
            samples: 100,
            slack: 0.15,
            control_time_grid: vec![0.05, 0.1, 0.2, 0.4, 0.8, 1.6],
            threshold: hum::SINGULAR_RATIO,
            identity_grids: vec![24, 32, 48],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplesSection {
    /// Random data for `wave-control`.
    pub wave: usize,
    /// Random rough data per `ε` for `transmute`.
    pub rough: usize,
    pub epsilons: Vec<f64>,
    /// Horizon of the rough-data runs.
    pub rough_horizon: f64,
}

impl Default for SamplesSection {
    fn default() -> Self {
        Self {
            wave: 20,
            rough: 10,
            epsilons: vec![0.05, 0.1, 0.2],
            rough_horizon: 0.5,
        }
    }
}

/// Resolved experiment configuration; missing keys take their defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub domain: DomainSection,
    pub modes: ModesSection,
    pub horizons: HorizonsSection,
    pub kernel: KernelSection,
    pub tolerances: TolerancesSection,
    pub observability: ObservabilitySection,
    pub samples: SamplesSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("runs/default"),
            domain: DomainSection::default(),
            modes: ModesSection::default(),
            horizons: HorizonsSection::default(),
            kernel: KernelSection::default(),
            tolerances: TolerancesSection::default(),
            observability: ObservabilitySection::default(),
            samples: SamplesSection::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Replaces the parabolic horizon list.
    pub horizon: Option<f64>,
    pub half_length: Option<f64>,
    /// Sets `M_f`, raising `M` if needed.
    pub modes: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(t) = o.horizon {
            self.horizons.t_list = vec![t];
        }
        if let Some(l) = o.half_length {
            self.kernel.half_length = l;
        }
        if let Some(m) = o.modes {
            self.modes.filtered = m;
            self.modes.count = self.modes.count.max(m + (m / 4).max(1));
        }
        self.validate()
    }

    /// Re-checks every admissibility constraint of the library.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let d = self.domain();
        d?;
        self.mask_kind()?;
        if self.modes.filtered == 0 || self.modes.filtered > self.modes.count {
            return err(format!(
                "need 0 < M_f = {} ≤ M = {}",
                self.modes.filtered, self.modes.count
            ));
        }
        let ndof = 2 * self.domain.n * (self.domain.n - 1);
        if self.modes.count > ndof {
            return err(format!("M = {} exceeds the {ndof} velocity unknowns", self.modes.count));
        }
        if self.horizons.t_list.is_empty() {
            return err("t_list is empty".into());
        }
        let t_max = KernelSpec::max_horizon(self.kernel.half_length);
        for &t in &self.horizons.t_list {
            if !(t > 0.0 && t <= t_max) {
                return Err(Error::InadmissibleHorizon(format!(
                    "T = {t} must lie in (0, min(π/2, L)²] = (0, {t_max:.4}] for L = {}",
                    self.kernel.half_length
                )));
            }
        }
        if !(self.horizons.wave > 0.0) {
            return err(format!("wave horizon {} must be positive", self.horizons.wave));
        }
        if self.kernel.n_t < 4 || !(0.0..=0.75).contains(&self.kernel.activation) || !(self.kernel.tol > 0.0) {
            return err("kernel needs n_t ≥ 4, activation in [0, 0.75] and tol > 0".into());
        }
        if !(self.tolerances.wave > 0.0 && self.tolerances.parabolic > 0.0) {
            return err("tolerances must be positive".into());
        }
        let o = &self.observability;
        if o.control_time_grid.windows(2).any(|w| w[1] <= w[0]) || o.control_time_grid.iter().any(|t| *t <= 0.0) {
            return err("control_time_grid must be positive and strictly ascending".into());
        }
        if o.identity_grids.iter().any(|n| *n < 8) {
            return err("identity grids need at least 8 cells per side".into());
        }
        let s = &self.samples;
        if !(s.rough_horizon > 0.0 && s.rough_horizon <= t_max) {
            return Err(Error::InadmissibleHorizon(format!(
                "rough_horizon {} outside (0, {t_max:.4}]",
                s.rough_horizon
            )));
        }
        if s.epsilons.iter().any(|e| !(*e >= 0.0 && *e < s.rough_horizon)) {
            return err("each ε must lie in [0, rough_horizon)".into());
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        DomainSpec::new(self.domain.half_width, self.domain.collar, self.domain.n, self.domain.n)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mask_kind(&self) -> Result<MaskKind> {
        match self.domain.mask.as_str() {
            "sharp" => Ok(MaskKind::Sharp),
            "smoothed" => Ok(MaskKind::Smoothed {
                transition: self.domain.collar / 3.0,
            }),
            "full" => Ok(MaskKind::Full),
            other => Err(Error::Config(format!("unknown mask `{other}`"))),
        }
    }

    fn transmute_config(&self, horizon: f64) -> TransmuteConfig {
        TransmuteConfig {
            half_length: self.kernel.half_length,
            horizon,
            n_t: self.kernel.n_t,
            kernel_tol: self.kernel.tol,
            activation: self.kernel.activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Modes,
    WaveControl,
    DirectControl,
    BuildKernel,
    Transmute,
    CostSweep,
    Observability,
    Report,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Self::Modes,
        Self::WaveControl,
        Self::DirectControl,
        Self::BuildKernel,
        Self::Transmute,
        Self::CostSweep,
        Self::Observability,
        Self::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Modes => "modes",
            Self::WaveControl => "wave-control",
            Self::DirectControl => "direct-control",
            Self::BuildKernel => "build-kernel",
            Self::Transmute => "transmute",
            Self::CostSweep => "cost-sweep",
            Self::Observability => "observability",
            Self::Report => "report",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand `{s}`")))
    }
}

/// Control method of a cost-curve row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    DirectStokes,
    Transmuted,
    DirectHeat1d,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::DirectStokes => "direct-stokes",
            Self::Transmuted => "transmuted",
            Self::DirectHeat1d => "direct-heat-1d",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::DirectStokes, Self::Transmuted, Self::DirectHeat1d]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// One `(T, method)` point of the cost curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub horizon: f64,
    pub method: Method,
    /// `∫∫|h|²` for unit initial data; NaN when the run failed.
    pub cost: f64,
    /// Terminal norm relative to the initial norm.
    pub terminal_ratio: f64,
    pub iterations: usize,
    /// `ok` or the error kind.
    pub status: String,
}

pub const COST_COLUMNS: [&str; 6] = ["T", "method", "cost", "terminal_ratio", "iterations", "status"];

pub fn write_cost_csv(path: &Path, rows: &[CostRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COST_COLUMNS)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.horizon),
            r.method.name().to_string(),
            fmt_f64(r.cost),
            fmt_f64(r.terminal_ratio),
            r.iterations.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cost_csv(path: &Path) -> Result<Vec<CostRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != COST_COLUMNS {
        return Err(Error::Config(format!("{} is not a cost curve", path.display())));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}")));
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(CostRow {
                horizon: num(&rec[0])?,
                method: rec[1].parse()?,
                cost: num(&rec[2])?,
                terminal_ratio: num(&rec[3])?,
                iterations: rec[4].parse().map_err(|e| Error::Config(format!("bad count: {e}")))?,
                status: rec[5].to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CostModel {
    /// `log cost = a + b/T`.
    InverseT,
    /// `log cost = a + b/T⁴`.
    InverseT4,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostModelFit {
    pub inverse_t: LinearFit,
    pub inverse_t4: LinearFit,
    /// Model with the smaller residual sum.
    pub preferred: CostModel,
}

/// Least squares of `log cost` against `1/T` and `1/T⁴`.
pub fn fit_cost_models(horizons: &[f64], costs: &[f64]) -> Result<CostModelFit> {
    for (&t, &c) in horizons.iter().zip(costs) {
        if !(c > 0.0) {
            return Err(Error::NonPositiveCost { horizon: t, cost: c });
        }
    }
    let y: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let x1: Vec<f64> = horizons.iter().map(|t| 1.0 / t).collect();
    let x4: Vec<f64> = horizons.iter().map(|t| t.powi(-4)).collect();
    let inverse_t = linear_fit(&x1, &y, 4)?;
    let inverse_t4 = linear_fit(&x4, &y, 4)?;
    let preferred = if inverse_t.ssr <= inverse_t4.ssr {
        CostModel::InverseT
    } else {
        CostModel::InverseT4
    };
    Ok(CostModelFit {
        inverse_t,
        inverse_t4,
        preferred,
    })
}

/// Fits per method over the successful rows; methods with fewer than four
/// usable rows are skipped.
pub fn fit_cost_curve(rows: &[CostRow]) -> Vec<(Method, CostModelFit)> {
    let mut out = Vec::new();
    for m in [Method::Transmuted, Method::DirectStokes, Method::DirectHeat1d] {
        let (t, c): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.method == m && r.status == "ok")
            .map(|r| (r.horizon, r.cost))
            .unzip();
        if let Ok(f) = fit_cost_models(&t, &c) {
            out.push((m, f));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: Subcommand,
    pub seed: u64,
    pub threads: usize,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per phase; the only non-reproducible numbers.
    pub timings: Vec<(String, f64)>,
}

/// Machine-readable failure record.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
            exit_code: e.exit_code(),
        }
    }
}

/// Result of one subcommand: the files written and lines for stdout.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub lines: Vec<String>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    outputs: Vec<PathBuf>,
    lines: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.cfg.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.push((label.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    fn modes(&mut self) -> Result<StokesModes> {
        let d = self.cfg.domain()?;
        if let Some(p) = &self.cfg.modes.snapshot {
            if p.exists() {
                let m = modes_from_snapshot(&Snapshot::read(p)?, &d)?;
                if m.count() >= self.cfg.modes.count {
                    return Ok(m);
                }
            }
        }
        let count = self.cfg.modes.count;
        self.timed("modes", || StokesOperator::new(&d).eig_modes(count))
    }

    fn mask(&self, modes: &StokesModes) -> Result<ControlMask> {
        Ok(modes.domain().control_mask(self.cfg.mask_kind()?))
    }
}

fn status_of<T>(r: &Result<T>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => e.kind().into(),
    }
}

/// Unit `H` data for the parabolic experiments.
fn parabolic_datum(seed: u64, m: usize) -> Vec<f64> {
    let mut rng = sampling::rng(seed);
    sampling::normalized_coefficients(&mut rng, &vec![1.0; m])
}

/// Runs one subcommand. `input` is the cost CSV read by `report`
/// (default `out/cost_curve.csv`).
pub fn run(cmd: Subcommand, cfg: &ExperimentConfig, input: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let mut run = Run {
        cfg,
        outputs: Vec::new(),
        lines: Vec::new(),
        timings: Vec::new(),
    };
    match cmd {
        Subcommand::Modes => run_modes(&mut run)?,
        Subcommand::WaveControl => run_wave_control(&mut run)?,
        Subcommand::DirectControl => {
            let rows = direct_rows(&mut run)?;
            let p = run.path("direct_control.csv");
            write_cost_csv(&p, &rows)?;
        }
        Subcommand::BuildKernel => run_build_kernel(&mut run)?,
        Subcommand::Transmute => run_transmute(&mut run)?,
        Subcommand::CostSweep => run_cost_sweep(&mut run)?,
        Subcommand::Observability => run_observability(&mut run)?,
        Subcommand::Report => {
            let default = cfg.out.join("cost_curve.csv");
            run_report(&mut run, input.unwrap_or(&default))?
        }
    }
    let manifest = Manifest {
        tool: "stokes-ctm",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cmd,
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        config: cfg.clone(),
        outputs: run
            .outputs
            .iter()
            .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
        timings: run.timings.clone(),
    };
    let mp = cfg.out.join("manifest.json");
    fs::write(&mp, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    run.outputs.push(mp);
    Ok(RunSummary {
        outputs: run.outputs,
        lines: run.lines,
    })
}

fn run_modes(run: &mut Run) -> Result<()> {
    let modes = run.modes()?;
    let snap = run.path("modes.snp");
    modes_snapshot(&modes).write(&snap)?;
    let rows: Vec<Vec<String>> = modes
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, l)| vec![j.to_string(), fmt_f64(*l), fmt_f64(l.sqrt())])
        .collect();
    run.csv("eigenvalues.csv", &["index", "eigenvalue", "frequency"], &rows)?;
    run.lines.push(format!(
        "{} modes, λ₁ = {:.10}, λ_M = {:.6}",
        modes.count(),
        modes.eigenvalues[0],
        modes.eigenvalues[modes.count() - 1]
    ));
    Ok(())
}

fn run_wave_control(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let modes = run.modes()?;
    let mask = run.mask(&modes)?;
    let m_f = cfg.modes.filtered;
    let g = run.timed("gramian", || hum::assemble_wave_gramian(&modes, &mask, cfg.horizons.wave, m_f))?;
    let weights: Vec<f64> = modes.eigenvalues[..m_f].iter().cloned().chain((0..m_f).map(|_| 1.0)).collect();
    let mut rng = sampling::rng(cfg.seed);
    let data: Vec<Vec<f64>> = (0..cfg.samples.wave)
        .map(|_| sampling::normalized_coefficients(&mut rng, &weights))
        .collect();
    let results = run.timed("controls", || {
        data.par_iter()
            .map(|x| hum::wave_null_control_with(&g, &x[..m_f], &x[m_f..], cfg.tolerances.wave))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .enumerate()
        .map(|(k, s)| {
            vec![
                k.to_string(),
                fmt_f64(s.initial_norm),
                fmt_f64(s.terminal_norm / s.initial_norm),
                fmt_f64(s.cost),
                fmt_f64(s.cost / s.initial_norm.powi(2)),
                s.iterations.to_string(),
            ]
        })
        .collect();
    run.csv(
        "wave_control.csv",
        &["sample", "initial_norm", "terminal_ratio", "cost", "cost_ratio", "iterations"],
        &rows,
    )?;
    let (lo, hi) = g.extreme_eigenvalues();
    let worst = results.iter().map(|s| s.terminal_norm / s.initial_norm).fold(0.0, f64::max);
    let max_cost = results.iter().map(|s| s.cost / s.initial_norm.powi(2)).fold(0.0, f64::max);
    run.lines.push(format!(
        "T = {}: worst terminal ratio {worst:.3e}, max cost ratio {max_cost:.6}, HUM bound 1/λ_min = {:.6} (λ_min/λ_max = {:.3e})",
        cfg.horizons.wave,
        1.0 / lo,
        lo / hi
    ));
    Ok(())
}

fn direct_rows(run: &mut Run) -> Result<Vec<CostRow>> {
    let cfg = run.cfg;
    let modes = run.modes()?;
    let mask = run.mask(&modes)?;
    let m_f = cfg.modes.filtered;
    let y0 = parabolic_datum(cfg.seed, m_f);
    let heat = ObservedSystem::heat_1d(m_f, cfg.domain.collar);
    // the terminal tolerance is taken relative to the uncontrolled state;
    // relative to |y0| free decay alone meets it once T ≳ 1/λ₁
    let tol_for = |lambdas: &[f64], t: f64| -> f64 {
        let free: f64 = y0
            .iter()
            .zip(lambdas)
            .map(|(c, l)| (c * (-l * t).exp()).powi(2))
            .sum::<f64>()
            .sqrt();
        cfg.tolerances.parabolic * free / crate::linalg::norm2(&y0)
    };
    let stokes_lambdas = &modes.eigenvalues[..m_f];
    let row = |method: Method, t: f64, r: Result<hum::ControlSignal>| -> CostRow {
        let status = status_of(&r);
        match r {
            Ok(s) => CostRow {
                horizon: t,
                method,
                cost: s.cost,
                terminal_ratio: s.terminal_norm / s.initial_norm,
                iterations: s.iterations,
                status,
            },
            Err(_) => CostRow {
                horizon: t,
                method,
                cost: f64::NAN,
                terminal_ratio: f64::NAN,
                iterations: 0,
                status,
            },
        }
    };
    run.timed("direct", || {
        Ok(cfg
            .horizons
            .t_list
            .par_iter()
            .flat_map_iter(|&t| {
                [
                    row(
                        Method::DirectStokes,
                        t,
                        hum::stokes_null_control_direct(&modes, &mask, &y0, t, m_f, tol_for(stokes_lambdas, t)),
                    ),
                    row(
                        Method::DirectHeat1d,
                        t,
                        hum::parabolic_null_control(&heat, &y0, t, tol_for(&heat.lambdas, t)),
                    ),
                ]
            })
            .collect())
    })
}

fn run_build_kernel(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let l = cfg.kernel.half_length;
    let spec_for = |t: f64| KernelSpec {
        n_t: cfg.kernel.n_t,
        tol: cfg.kernel.tol,
        activation: cfg.kernel.activation,
        ..KernelSpec::recommended(l, t)
    };
    let kernels = run.timed("kernels", || {
        cfg.horizons
            .t_list
            .par_iter()
            .map(|&t| kernel::build_kernel(spec_for(t)))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for k in &kernels {
        let t = k.spec.horizon;
        let p = run.path(&format!("kernel_T{t}.snp"));
        kernel_snapshot(k).write(&p)?;
        rows.push(vec![
            fmt_f64(t),
            fmt_f64(l),
            k.n_s().to_string(),
            k.spec.n_t.to_string(),
            fmt_f64(k.norm_sq),
            fmt_f64(k.norm_sq.ln()),
            fmt_f64(k.terminal_ratio),
            fmt_f64(k.penalty),
            fmt_f64(kernel::gaussian_mismatch(k, 0.1 * t)),
        ]);
    }
    run.csv(
        "kernels.csv",
        &[
            "T",
            "L",
            "n_s",
            "n_t",
            "norm_sq",
            "log_norm_sq",
            "terminal_ratio",
            "penalty",
            "gaussian_mismatch",
        ],
        &rows,
    )?;
    if kernels.len() >= 4 {
        let norms: Vec<f64> = kernels.iter().map(|k| k.norm_sq).collect();
        let fit = kernel::norm_scaling_fit(l, &cfg.horizons.t_list, &norms)?;
        run.csv("kernel_fit.csv", &FIT_COLUMNS, &[fit_row("kernel", "L2/T", &fit, "")])?;
        run.lines
            .push(format!("log‖k‖² = {:.4} + {:.4}·L²/T (R² = {:.5})", fit.intercept, fit.slope, fit.r2));
    }
    Ok(())
}

const FIT_COLUMNS: [&str; 8] = ["method", "model", "intercept", "slope", "r2", "ssr", "points", "preferred"];

fn fit_row(method: &str, model: &str, f: &LinearFit, preferred: &str) -> Vec<String> {
    vec![
        method.to_string(),
        model.to_string(),
        fmt_f64(f.intercept),
        fmt_f64(f.slope),
        fmt_f64(f.r2),
        fmt_f64(f.ssr),
        f.points.to_string(),
        preferred.to_string(),
    ]
}

fn transmuted_rows(run: &mut Run) -> Result<Vec<(f64, Result<transmute::TransmutedSolution>)>> {
    let cfg = run.cfg;
    let modes = run.modes()?;
    let mask = run.mask(&modes)?;
    let system = ObservedSystem::from_modes(&modes, &mask, cfg.modes.filtered)?;
    let y0 = parabolic_datum(cfg.seed, cfg.modes.filtered);
    run.timed("transmute", || {
        Ok(cfg
            .horizons
            .t_list
            .par_iter()
            .map(|&t| (t, transmute::transmute(&system, &y0, &cfg.transmute_config(t))))
            .collect())
    })
}

fn run_transmute(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let sols = transmuted_rows(run)?;
    let mut rows = Vec::new();
    for (t, s) in &sols {
        let Ok(s) = s else {
            let nan = fmt_f64(f64::NAN);
            rows.push([fmt_f64(*t)].into_iter().chain(std::iter::repeat(nan).take(5)).collect());
            continue;
        };
        let (order, _, _) = transmute::residual_order(s)?;
        rows.push(vec![
            fmt_f64(*t),
            fmt_f64(s.terminal_norm / s.initial_norm),
            fmt_f64(s.cost),
            fmt_f64(s.wave_cost),
            fmt_f64(s.chain_bound),
            fmt_f64(order),
        ]);
    }
    run.csv(
        "transmute.csv",
        &["T", "terminal_ratio", "cost", "wave_cost", "chain_bound", "residual_order"],
        &rows,
    )?;
    if let Some((t, Err(e))) = sols.iter().find(|(_, s)| s.is_err()) {
        run.lines.push(format!("transmutation failed at T = {t}: {e}"));
    }

    // rough data: free smoothing on [0, ε) in front of the control
    let modes = run.modes()?;
    let mask = run.mask(&modes)?;
    let system = ObservedSystem::from_modes(&modes, &mask, cfg.modes.filtered)?;
    let mut rng = sampling::rng(cfg.seed ^ 0x5EED);
    let data: Vec<Vec<f64>> = (0..cfg.samples.rough)
        .map(|_| sampling::normalized_coefficients(&mut rng, &vec![1.0; cfg.modes.filtered]))
        .collect();
    let jobs: Vec<(f64, usize)> = cfg
        .samples
        .epsilons
        .iter()
        .flat_map(|&e| (0..data.len()).map(move |k| (e, k)))
        .collect();
    let tc = cfg.transmute_config(cfg.samples.rough_horizon);
    let rough = run.timed("rough", || {
        jobs.par_iter()
            .map(|&(e, k)| transmute::regularize_then_control(&system, &data[k], e, &tc))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut violations = 0;
    let rows: Vec<Vec<String>> = jobs
        .iter()
        .zip(&rough)
        .map(|(&(e, k), s)| {
            let (v, b, holds) = s
                .regularization
                .as_ref()
                .map(|r| (r.v_norm_sq, r.smoothing_bound, r.smoothing_holds))
                .unwrap_or((f64::NAN, f64::NAN, true));
            violations += usize::from(!holds);
            vec![
                fmt_f64(e),
                k.to_string(),
                fmt_f64(v),
                fmt_f64(b),
                holds.to_string(),
                fmt_f64(s.terminal_norm / s.initial_norm),
            ]
        })
        .collect();
    run.csv(
        "rough.csv",
        &["epsilon", "sample", "v_norm_sq", "smoothing_bound", "holds", "terminal_ratio"],
        &rows,
    )?;
    run.lines.push(format!(
        "{} transmuted horizons, {} rough runs with {violations} smoothing violations",
        sols.len(),
        rough.len()
    ));
    Ok(())
}

fn run_cost_sweep(run: &mut Run) -> Result<()> {
    let mut rows: Vec<CostRow> = transmuted_rows(run)?
        .into_iter()
        .map(|(t, s)| {
            let status = status_of(&s);
            match s {
                Ok(s) => CostRow {
                    horizon: t,
                    method: Method::Transmuted,
                    cost: s.cost,
                    terminal_ratio: s.terminal_norm / s.initial_norm,
                    iterations: 0,
                    status,
                },
                Err(_) => CostRow {
                    horizon: t,
                    method: Method::Transmuted,
                    cost: f64::NAN,
                    terminal_ratio: f64::NAN,
                    iterations: 0,
                    status,
                },
            }
        })
        .collect();
    rows.extend(direct_rows(run)?);
    let p = run.path("cost_curve.csv");
    write_cost_csv(&p, &rows)?;
    write_fits(run, &rows)
}

fn write_fits(run: &mut Run, rows: &[CostRow]) -> Result<()> {
    let fits = fit_cost_curve(rows);
    let mut out = Vec::new();
    for (m, f) in &fits {
        let pref = |c: CostModel| if f.preferred == c { "yes" } else { "no" };
        out.push(fit_row(m.name(), "1/T", &f.inverse_t, pref(CostModel::InverseT)));
        out.push(fit_row(m.name(), "1/T^4", &f.inverse_t4, pref(CostModel::InverseT4)));
        run.lines.push(format!(
            "{:<15} 1/T: a = {:.4}, b = {:.4}, R² = {:.5}, SSR = {:.4e} | 1/T⁴: a = {:.4}, b = {:.4e}, R² = {:.5}, SSR = {:.4e} | preferred {}",
            m.name(),
            f.inverse_t.intercept,
            f.inverse_t.slope,
            f.inverse_t.r2,
            f.inverse_t.ssr,
            f.inverse_t4.intercept,
            f.inverse_t4.slope,
            f.inverse_t4.r2,
            f.inverse_t4.ssr,
            match f.preferred {
                CostModel::InverseT => "1/T",
                CostModel::InverseT4 => "1/T⁴",
            }
        ));
    }
    run.csv("cost_fits.csv", &FIT_COLUMNS, &out)
}

fn run_report(run: &mut Run, input: &Path) -> Result<()> {
    let rows = read_cost_csv(input)?;
    if fit_cost_curve(&rows).is_empty() {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: rows.iter().filter(|r| r.status == "ok").count(),
        });
    }
    write_fits(run, &rows)
}

fn run_observability(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let o = &cfg.observability;
    let modes = run.modes()?;
    let mask = run.mask(&modes)?;
    let m_f = cfg.modes.filtered;
    let t = cfg.horizons.wave;

    let b = run.timed("boundary", || {
        obs::boundary_observability_check(&modes, t, m_f, o.samples, cfg.seed, o.slack)
    });
    match &b {
        Ok(b) => {
            run.lines.push(format!(
                "boundary observability at T = {t}: max E(0)/flux = {:.4}, bound {:.4}·(1 + {}), {} violations",
                b.max_ratio, b.multiplier_constant, b.slack, b.violations
            ));
            let row = vec![
                fmt_f64(t),
                m_f.to_string(),
                b.samples.to_string(),
                fmt_f64(b.max_ratio),
                fmt_f64(b.mean_ratio),
                fmt_f64(b.subspace_constant),
                fmt_f64(b.multiplier_constant),
                b.violations.to_string(),
            ];
            run.csv(
                "boundary.csv",
                &[
                    "T",
                    "m_f",
                    "samples",
                    "max_ratio",
                    "mean_ratio",
                    "subspace_constant",
                    "multiplier_constant",
                    "violations",
                ],
                &[row],
            )?;
        }
        Err(Error::InadmissibleHorizon(m)) => run.lines.push(format!("boundary observability skipped: {m}")),
        Err(_) => {
            b?;
        }
    }

    let horizons: Vec<f64> = cfg.horizons.t_list.iter().cloned().chain([t]).collect();
    let internal = run.timed("internal", || {
        horizons
            .par_iter()
            .map(|&h| -> Result<Vec<String>> {
                let c = |k| obs::internal_observability_constant(&modes, &mask, h, m_f, k);
                Ok(vec![
                    fmt_f64(h),
                    fmt_f64(c(ObservationKind::Velocity)?),
                    fmt_f64(c(ObservationKind::Position)?),
                    fmt_f64(c(ObservationKind::Combined)?),
                ])
            })
            .collect::<Result<Vec<_>>>()
    })?;
    run.csv("internal.csv", &["T", "velocity", "position", "combined"], &internal)?;

    if !o.control_time_grid.is_empty() && m_f + (m_f / 4).max(1) <= modes.count() {
        let ct = run.timed("control_time", || {
            obs::empirical_control_time(&modes, &mask, m_f, &o.control_time_grid, o.threshold)
        })?;
        let rows: Vec<Vec<String>> = ct
            .rows
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.horizon),
                    fmt_f64(r.ratio),
                    fmt_f64(r.ratio_refined),
                    r.qualifies.to_string(),
                ]
            })
            .collect();
        run.csv("control_time.csv", &["T", "ratio", "ratio_refined", "qualifies"], &rows)?;
        run.lines.push(match ct.control_time {
            Some(t) => format!("empirical control time ≤ {t} (smallest qualifying grid horizon)"),
            None => "empirical control time lies beyond the grid".into(),
        });
    }

    let ids = run.timed("identities", || {
        o.identity_grids
            .par_iter()
            .map(|&n| identity_residuals(n))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<Vec<String>> = o
        .identity_grids
        .iter()
        .zip(&ids)
        .map(|(n, r)| vec![n.to_string(), fmt_f64(r[0]), fmt_f64(r[1]), fmt_f64(r[2]), fmt_f64(r[3])])
        .collect();
    run.csv(
        "identities.csv",
        &["n", "multiplier", "multiplier_forcing_plus", "pressure", "pressure_flipped"],
        &rows,
    )?;
    Ok(())
}

/// Multiplier and pressure identity residuals on the manufactured solution:
/// `[multiplier, multiplier with +f, pressure, pressure sign-flipped]`.
pub fn identity_residuals(n: usize) -> Result<[f64; 4]> {
    let s = obs::Manufactured::new(n, 3.0)?;
    let m = obs::multiplier_identity_residual(&s, &MultiplierField::radial(), 1.0, 8)?;
    let u = obs::SpaceTimeSolution::sample(&s, 0.0)?.u;
    let p = crate::domain::CellField::from_fn(&s.domain, |x, y| (1.3 * x + 0.4).sin() * (0.8 * y - 0.2).cos() + x * y);
    let affine = MultiplierField::Affine {
        b: [0.1, -0.2],
        a: [[1.0, 0.4], [-0.3, 0.7]],
    };
    let pr = obs::pressure_identity_residual(&s.domain, &p, &u, &affine);
    Ok([m.residual, m.residual_forcing_plus, pr.residual, pr.residual_flipped])
}
