//! Experiment configuration, orchestration and CSV reports.
//!
//! A config is a TOML document. Only `[plant]` is required; every other key
//! falls back to the four-tank benchmark value. Unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//! modes = ["passive", "2s-lkb", "1s", "nominal"]
//!
//! [plant]
//! builtin = "four_tank"
//!
//! [exploration]
//! epsilon = 1e-3
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::controllers::{run_deeprc, ExperimentMode, RunReport, RunSettings};
use crate::error::{Error, Result};
use crate::lin_plant::{four_tank, generate_initial_trajectory, InitConfig, InitFeedback, PlantModel, Trajectory};
use crate::robust::BoxSet;
use crate::safe_set::{cost_to_go, StageCost};
use crate::Layout;

/// First line of every CSV artifact.
pub const CSV_VERSION: &str = "# deeprc_csv_v1";

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "DEEPRC_OUT";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantModel,
    pub init: InitConfig,
    pub settings: RunSettings,
    pub seed: u64,
    pub modes: Vec<ExperimentMode>,
    pub output_dir: PathBuf,
    /// Write wall times into `costs.csv`; off keeps artifacts reproducible.
    pub timing: bool,
}

impl ExperimentConfig {
    /// Four-tank benchmark with every mode.
    pub fn four_tank() -> Self {
        let settings = RunSettings::four_tank();
        let init = InitConfig {
            feedback: InitFeedback::ExtendedState,
            lqr_q: DMatrix::identity(16, 16),
            lqr_r: DMatrix::identity(2, 2) * 50.0,
            amplitude: 0.05,
            duration: 20,
            ell: settings.layout.ell,
            u_start: settings.u_start.clone(),
            y_start: settings.y_start.clone(),
            u_target: settings.cost.u_target.clone(),
            y_target: settings.cost.y_target.clone(),
            terminal_tol: 1e-4,
            max_steps: 2000,
            input_box: settings.input_box.clone(),
            output_box: settings.output_box.clone(),
        };
        ExperimentConfig {
            plant: four_tank(),
            init,
            settings,
            seed: 0,
            modes: ExperimentMode::ALL.to_vec(),
            output_dir: PathBuf::from("deeprc-out"),
            timing: false,
        }
    }

    /// `DEEPRC_OUT` if set, else the configured directory.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    modes: Option<Vec<String>>,
    output_dir: Option<String>,
    timing: Option<bool>,
    plant: Option<RawPlant>,
    horizon: Option<RawHorizon>,
    constraints: Option<RawConstraints>,
    cost: Option<RawCost>,
    initial: Option<RawInitial>,
    exploration: Option<RawExploration>,
    tube: Option<RawTube>,
    tolerances: Option<RawTolerances>,
    limits: Option<RawLimits>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    builtin: Option<String>,
    a: Option<Vec<Vec<f64>>>,
    b: Option<Vec<Vec<f64>>>,
    c: Option<Vec<Vec<f64>>>,
    d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHorizon {
    ell: Option<usize>,
    nbar: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    input_lower: Option<Vec<f64>>,
    input_upper: Option<Vec<f64>>,
    output_lower: Option<Vec<f64>>,
    output_upper: Option<Vec<f64>>,
    /// Half-widths of the symmetric disturbance box.
    disturbance: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    q: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
    u_target: Option<Vec<f64>>,
    y_target: Option<Vec<f64>>,
    u_start: Option<Vec<f64>>,
    y_start: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    feedback: Option<InitFeedback>,
    /// Scalar multiples of the identity.
    lqr_q: Option<f64>,
    lqr_r: Option<f64>,
    amplitude: Option<f64>,
    duration: Option<usize>,
    terminal_tol: Option<f64>,
    max_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExploration {
    epsilon: Option<f64>,
    lambda: Option<f64>,
    image_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTube {
    q: Option<f64>,
    r: Option<f64>,
    rpi_truncation: Option<usize>,
    rpi_alpha_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    rank_tol: Option<f64>,
    terminal_tol: Option<f64>,
    box_tol: Option<f64>,
    output_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimits {
    max_iterations: Option<usize>,
    step_cap: Option<usize>,
    fixed_horizon: Option<usize>,
}

/// Line (1-based) of `key` inside `[section]`, or 0 if absent.
fn line_of(src: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current != section {
            continue;
        }
        if let Some((lhs, _)) = t.split_once('=') {
            if lhs.trim() == key {
                return i + 1;
            }
        }
    }
    0
}

/// Dotted key and line at byte `offset`.
fn key_at(src: &str, offset: usize) -> (String, usize) {
    let mut section = String::new();
    let mut pos = 0;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
        }
        let end = pos + line.len();
        if offset <= end {
            let key = match t.split_once('=') {
                Some((lhs, _)) if section.is_empty() => lhs.trim().to_string(),
                Some((lhs, _)) => format!("{section}.{}", lhs.trim()),
                None if section.is_empty() => "<root>".to_string(),
                None => section.clone(),
            };
            return (key, i + 1);
        }
        pos = end + 1;
    }
    ("<root>".to_string(), src.lines().count())
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        Error::Config {
            key: full,
            line: line_of(self.src, section, key),
            message: message.into(),
        }
    }

    fn vector(&self, section: &str, key: &str, v: Option<Vec<f64>>, default: &DVector<f64>, dim: usize) -> Result<DVector<f64>> {
        let v = v.map(DVector::from_vec).unwrap_or_else(|| default.clone());
        if v.len() != dim {
            return Err(self.err(section, key, format!("expected {dim} entries, got {}", v.len())));
        }
        Ok(v)
    }

    fn matrix(&self, section: &str, key: &str, rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(self.err(section, key, "rows have different lengths"));
        }
        Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
    }

    fn square(&self, section: &str, key: &str, m: Option<Vec<Vec<f64>>>, default: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
        let m = match m {
            Some(rows) => self.matrix(section, key, rows)?,
            None => default.clone(),
        };
        if m.shape() != (dim, dim) {
            return Err(self.err(
                section,
                key,
                format!("expected a {dim}x{dim} matrix, got {}x{}", m.nrows(), m.ncols()),
            ));
        }
        Ok(m)
    }

    fn boxed(&self, section: &str, keys: (&str, &str), lo: Option<Vec<f64>>, hi: Option<Vec<f64>>, default: &BoxSet, dim: usize) -> Result<BoxSet> {
        let lower = self.vector(section, keys.0, lo, &default.lower, dim)?;
        let upper = self.vector(section, keys.1, hi, &default.upper, dim)?;
        BoxSet::new(lower, upper).map_err(|e| self.err(section, keys.1, e.to_string()))
    }

    fn positive(&self, section: &str, key: &str, v: f64) -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(section, key, format!("must be positive, got {v}")))
        }
    }
}

/// Parse and validate a config document.
pub fn parse_config(src: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| {
        let (key, line) = match e.span() {
            Some(span) => key_at(src, span.start),
            None => ("<root>".to_string(), 0),
        };
        Error::Config {
            key,
            line,
            message: e.message().to_string(),
        }
    })?;
    let cx = Ctx { src };
    let base = ExperimentConfig::four_tank();
    let bs = &base.settings;

    let plant_raw = raw
        .plant
        .ok_or_else(|| cx.err("", "plant", "missing [plant] section"))?;
    let plant = match (&plant_raw.builtin, &plant_raw.a) {
        (Some(name), None) => match name.as_str() {
            "four_tank" => four_tank(),
            other => return Err(cx.err("plant", "builtin", format!("unknown builtin plant `{other}`"))),
        },
        (None, Some(_)) => {
            let take = |key: &str, m: Option<Vec<Vec<f64>>>| -> Result<DMatrix<f64>> {
                let rows = m.ok_or_else(|| cx.err("plant", key, "required with a user plant"))?;
                cx.matrix("plant", key, rows)
            };
            let a = take("a", plant_raw.a)?;
            let b = take("b", plant_raw.b)?;
            let c = take("c", plant_raw.c)?;
            let d = match plant_raw.d {
                Some(rows) => cx.matrix("plant", "d", rows)?,
                None => DMatrix::zeros(c.nrows(), b.ncols()),
            };
            PlantModel::new(a, b, c, d).map_err(|e| cx.err("plant", "a", e.to_string()))?
        }
        (Some(_), Some(_)) => return Err(cx.err("plant", "builtin", "give either `builtin` or matrices, not both")),
        (None, None) => return Err(cx.err("", "plant", "needs `builtin` or matrices a, b, c")),
    };
    let (n, m, p) = (plant.n(), plant.m(), plant.p());

    let hz = raw.horizon.unwrap_or_default();
    let ell = hz.ell.unwrap_or(bs.layout.ell);
    let nbar = hz.nbar.unwrap_or(bs.nbar);
    if ell < plant.lag() {
        return Err(cx.err(
            "horizon",
            "ell",
            format!("must be at least the plant lag {}", plant.lag()),
        ));
    }
    if nbar == 0 {
        return Err(cx.err("horizon", "nbar", "must be positive"));
    }
    let layout = Layout::new(m, p, ell);

    let cons = raw.constraints.unwrap_or_default();
    let input_box = cx.boxed(
        "constraints",
        ("input_lower", "input_upper"),
        cons.input_lower,
        cons.input_upper,
        &bs.input_box,
        m,
    )?;
    let output_box = cx.boxed(
        "constraints",
        ("output_lower", "output_upper"),
        cons.output_lower,
        cons.output_upper,
        &bs.output_box,
        p,
    )?;
    let dbar = cx.vector("constraints", "disturbance", cons.disturbance, &bs.disturbance.upper, m)?;
    if dbar.iter().any(|v| *v < 0.0) {
        return Err(cx.err("constraints", "disturbance", "half-widths must be nonnegative"));
    }
    let disturbance = BoxSet::new(-&dbar, dbar.clone()).map_err(|e| cx.err("constraints", "disturbance", e.to_string()))?;

    let c = raw.cost.unwrap_or_default();
    let cost = StageCost {
        q: cx.square("cost", "q", c.q, &bs.cost.q, p)?,
        r: cx.square("cost", "r", c.r, &bs.cost.r, m)?,
        u_target: cx.vector("cost", "u_target", c.u_target, &bs.cost.u_target, m)?,
        y_target: cx.vector("cost", "y_target", c.y_target, &bs.cost.y_target, p)?,
    };
    let u_start = cx.vector("cost", "u_start", c.u_start, &bs.u_start, m)?;
    let y_start = cx.vector("cost", "y_start", c.y_start, &bs.y_start, p)?;

    let ex = raw.exploration.unwrap_or_default();
    let epsilon = cx.positive("exploration", "epsilon", ex.epsilon.unwrap_or(bs.epsilon))?;
    let lambda = ex.lambda.unwrap_or(bs.lambda);
    if lambda < 0.0 {
        return Err(cx.err("exploration", "lambda", "must be nonnegative"));
    }
    let image_tol = cx.positive("exploration", "image_tol", ex.image_tol.unwrap_or(bs.image_tol))?;
    let dmin = disturbance.upper.min();
    if epsilon > dmin {
        return Err(cx.err(
            "exploration",
            "epsilon",
            format!("epsilon {epsilon} exceeds the disturbance half-width {dmin}"),
        ));
    }

    let tb = raw.tube.unwrap_or_default();
    let tol = raw.tolerances.unwrap_or_default();
    let lim = raw.limits.unwrap_or_default();
    let settings = RunSettings {
        layout,
        nbar,
        order: n,
        input_box: input_box.clone(),
        output_box: output_box.clone(),
        disturbance,
        cost: cost.clone(),
        u_start: u_start.clone(),
        y_start: y_start.clone(),
        rank_tol: cx.positive("tolerances", "rank_tol", tol.rank_tol.unwrap_or(bs.rank_tol))?,
        image_tol,
        epsilon,
        lambda,
        tube_q: cx.positive("tube", "q", tb.q.unwrap_or(bs.tube_q))?,
        tube_r: cx.positive("tube", "r", tb.r.unwrap_or(bs.tube_r))?,
        rpi_truncation: tb.rpi_truncation.unwrap_or(bs.rpi_truncation),
        rpi_alpha_tol: cx.positive("tube", "rpi_alpha_tol", tb.rpi_alpha_tol.unwrap_or(bs.rpi_alpha_tol))?,
        terminal_tol: cx.positive("tolerances", "terminal_tol", tol.terminal_tol.unwrap_or(bs.terminal_tol))?,
        box_tol: tol.box_tol.unwrap_or(bs.box_tol),
        step_cap: lim.step_cap,
        max_iterations: lim.max_iterations.unwrap_or(bs.max_iterations),
        output_tol: cx.positive("tolerances", "output_tol", tol.output_tol.unwrap_or(bs.output_tol))?,
        fixed_horizon: lim.fixed_horizon,
        solver: bs.solver,
    };

    let ini = raw.initial.unwrap_or_default();
    let feedback = ini.feedback.unwrap_or(base.init.feedback);
    let q_dim = match feedback {
        InitFeedback::PlantState => n,
        InitFeedback::ExtendedState => layout.n_xi(),
    };
    let init = InitConfig {
        feedback,
        lqr_q: DMatrix::identity(q_dim, q_dim) * cx.positive("initial", "lqr_q", ini.lqr_q.unwrap_or(1.0))?,
        lqr_r: DMatrix::identity(m, m) * cx.positive("initial", "lqr_r", ini.lqr_r.unwrap_or(50.0))?,
        amplitude: ini.amplitude.unwrap_or(base.init.amplitude),
        duration: ini.duration.unwrap_or(base.init.duration),
        ell,
        u_start,
        y_start,
        u_target: cost.u_target.clone(),
        y_target: cost.y_target.clone(),
        terminal_tol: cx.positive("initial", "terminal_tol", ini.terminal_tol.unwrap_or(base.init.terminal_tol))?,
        max_steps: ini.max_steps.unwrap_or(base.init.max_steps),
        input_box,
        output_box,
    };
    if init.amplitude < 0.0 {
        return Err(cx.err("initial", "amplitude", "must be nonnegative"));
    }

    let modes = match raw.modes {
        Some(list) => {
            let mut out = Vec::new();
            for name in list {
                let mode = ExperimentMode::parse(&name).ok_or_else(|| {
                    cx.err("", "modes", format!("unknown mode `{name}`; expected passive, 2s-lkb, 1s or nominal"))
                })?;
                if !out.contains(&mode) {
                    out.push(mode);
                }
            }
            if out.is_empty() {
                return Err(cx.err("", "modes", "no modes selected"));
            }
            out
        }
        None => base.modes.clone(),
    };

    Ok(ExperimentConfig {
        plant,
        init,
        settings,
        seed: raw.seed.unwrap_or(base.seed),
        modes,
        output_dir: raw.output_dir.map(PathBuf::from).unwrap_or(base.output_dir),
        timing: raw.timing.unwrap_or(false),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let src = fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    parse_config(&src)
}

/// Outcome of every requested mode on one shared initial trajectory.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub seed: u64,
    pub initial: Trajectory,
    pub initial_cost: f64,
    pub runs: Vec<RunReport>,
    pub timing: bool,
}

impl ExperimentReport {
    pub fn run(&self, mode: ExperimentMode) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.mode == mode)
    }
}

/// Runs every mode of `cfg` in its own thread from the same seeded initial
/// trajectory. Results are ordered as `cfg.modes`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let initial = generate_initial_trajectory(&cfg.plant, &cfg.init, cfg.seed)
        .map_err(|e| e.context(format!("initial trajectory, seed {}", cfg.seed)))?;
    let results: Vec<Result<RunReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .modes
            .iter()
            .map(|&mode| {
                let initial = &initial;
                scope.spawn(move || run_deeprc(&cfg.settings, mode, &cfg.plant, initial))
            })
            .collect();
        handles
            .into_iter()
            .zip(&cfg.modes)
            .map(|(h, mode)| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Numerical(format!("{mode} worker panicked"))))
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        seed: cfg.seed,
        initial_cost: cost_to_go(&initial, 0, &cfg.settings.cost),
        initial,
        runs,
        timing: cfg.timing,
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `costs.csv` contents.
pub fn costs_csv(report: &ExperimentReport) -> String {
    let mut s = format!("{CSV_VERSION}\nmode,j,N,J_real,J_nominal,steps,ms\n");
    for run in &report.runs {
        for it in &run.iterations {
            let n = it.horizon.map(|n| n.to_string()).unwrap_or_default();
            let ms = if report.timing { format!("{:.3}", it.millis) } else { "0".into() };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                run.mode,
                it.j,
                n,
                num(it.cost_real),
                num(it.cost_nominal),
                it.steps,
                ms
            );
        }
    }
    s
}

/// `rank_trace_<mode>.csv` contents.
pub fn rank_trace_csv(run: &RunReport) -> String {
    let mut s = format!("{CSV_VERSION}\nmode,columns,rank\n");
    for pt in &run.rank_trace {
        let _ = writeln!(s, "{},{},{}", run.mode, pt.columns, pt.rank);
    }
    s
}

/// `trajectory_<mode>_<j>.csv` contents: real `u`, `y` and, in the tube
/// modes, nominal `v`, `z`.
pub fn trajectory_csv(real: &Trajectory, nominal: Option<&Trajectory>) -> String {
    let (m, p) = (real.m(), real.p());
    let mut head = vec!["t".to_string()];
    head.extend((0..m).map(|i| format!("u{i}")));
    head.extend((0..p).map(|i| format!("y{i}")));
    if nominal.is_some() {
        head.extend((0..m).map(|i| format!("v{i}")));
        head.extend((0..p).map(|i| format!("z{i}")));
    }
    let mut s = format!("{CSV_VERSION}\n{}\n", head.join(","));
    for t in 0..real.len() {
        let k = t + real.ell;
        let mut row = vec![t.to_string()];
        row.extend(real.inputs[k].iter().map(|v| num(*v)));
        row.extend(real.outputs[k].iter().map(|v| num(*v)));
        if let Some(nom) = nominal {
            let k = t + nom.ell;
            row.extend(nom.inputs[k].iter().map(|v| num(*v)));
            row.extend(nom.outputs[k].iter().map(|v| num(*v)));
        }
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Write all artifacts into `dir`; returns the written paths.
pub fn write_artifacts(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))?;
        written.push(path);
        Ok(())
    };
    put("costs.csv".into(), costs_csv(report))?;
    for run in &report.runs {
        put(format!("rank_trace_{}.csv", run.mode), rank_trace_csv(run))?;
        for it in &run.iterations {
            put(
                format!("trajectory_{}_{}.csv", run.mode, it.j),
                trajectory_csv(&it.real, it.nominal.as_ref()),
            )?;
        }
    }
    Ok(written)
}

/// Table of `j, N, J, J_nom` per mode. Numbers are printed exactly as in
/// `costs.csv`; the nominal cost column is only shown for 2s-LKB.
pub fn emit_summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed {}", report.seed);
    for run in &report.runs {
        let split = run.mode == ExperimentMode::TwoStageLkb;
        let _ = writeln!(s, "\n[{}] initial rank {} of {}", run.mode, run.initial_rank, run.full_rank);
        if split {
            let _ = writeln!(s, "{:>3} {:>4} {:>22} {:>22}", "j", "N", "J", "J_nom");
        } else {
            let _ = writeln!(s, "{:>3} {:>4} {:>22}", "j", "N", "J");
        }
        for it in &run.iterations {
            let n = it.horizon.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
            if split {
                let _ = writeln!(s, "{:>3} {:>4} {:>22} {:>22}", it.j, n, num(it.cost_real), num(it.cost_nominal));
            } else {
                let _ = writeln!(s, "{:>3} {:>4} {:>22}", it.j, n, num(it.cost_real));
            }
        }
        let explored: usize = run.iterations.iter().map(|it| it.designed + it.natural).sum();
        if run.mode.explores() {
            let _ = writeln!(
                s,
                "exploration: {} steps ({} designed), rank {} -> {}",
                explored,
                run.designed_steps(),
                run.initial_rank,
                run.iterations.last().map(|it| it.rank_end).unwrap_or(run.initial_rank)
            );
        }
        if !run.converged {
            let _ = writeln!(s, "not converged within the iteration cap");
        }
        if report.timing {
            let total: f64 = run.iterations.iter().map(|it| it.millis).sum();
            let _ = writeln!(s, "wall time {:.1} s", total / 1e3);
        }
    }
    s
}
