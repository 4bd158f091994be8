//! Experiment driver: configuration parsing, per-cell pipeline runs over
//! (coarse size, contrast) grids, CSV emission, convergence-order fits and
//! the structure/spectrum diagnosis report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::assembly::{assemble_load, assemble_mass, assemble_stiffness, assemble_weighted_mass, energy_norm};
use crate::auxiliary::{build_aux_space, mu_lower_bound};
use crate::basis_io;
use crate::coefficient::{self, CoefficientField};
use crate::corrector::{build_multiscale_space, ideal_corrector, CorrectorPlan, MultiscaleSpace};
use crate::dual::{build_dual_functions, select_dual_nodes, DualNodeSet};
use crate::error::{LodError, Result};
use crate::kernel::{build_kernel_basis, verify_structure, BlockKernelBasis, KtAK, StructureReport};
use crate::mesh::{classify_nodes, MeshHierarchy};
use crate::solver::{
    compute_errors, galerkin_with_vectors, solve_fine, solve_galerkin, source_l2_norm, Certificate,
    ErrorReport,
};
use crate::sparse::estimate_condition;

/// Diffusion coefficient selection.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    FourChannels,
    Raster(PathBuf),
}

impl CoefficientSpec {
    pub fn tag(&self) -> String {
        match self {
            CoefficientSpec::Constant(c) => format!("constant:{c:e}"),
            CoefficientSpec::FourChannels => "four_channels".into(),
            CoefficientSpec::Raster(p) => format!("raster:{}", p.display()),
        }
    }
}

/// Source term selection.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// Indicator of the right half of the square.
    RightHalf,
    Constant(f64),
    Raster(PathBuf),
}

/// Flat key=value experiment configuration with printed defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub coarse_divisions: Vec<usize>,
    pub fine_divisions: usize,
    pub betas: Vec<f64>,
    pub coefficient: CoefficientSpec,
    pub source: SourceSpec,
    pub dual_seed: u64,
    pub cond_seed: u64,
    pub out_dir: PathBuf,
    pub run_ideal: bool,
    pub dump_basis: bool,
    pub verify_structure: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            coarse_divisions: vec![8, 16, 32],
            fine_divisions: 128,
            betas: vec![1.0e2, 1.0e4, 1.0e6],
            coefficient: CoefficientSpec::FourChannels,
            source: SourceSpec::RightHalf,
            dual_seed: 1,
            cond_seed: 2,
            out_dir: PathBuf::from("out"),
            run_ideal: false,
            dump_basis: false,
            verify_structure: false,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(LodError::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| LodError::Config(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Parses flat `key = value` text; `#` starts a comment, unknown keys
    /// are errors, omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LodError::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "coarse_divisions" => cfg.coarse_divisions = parse_list(key, value)?,
                "fine_divisions" => {
                    cfg.fine_divisions = value
                        .parse()
                        .map_err(|_| LodError::Config(format!("bad fine_divisions {value:?}")))?
                }
                "beta" => cfg.betas = parse_list(key, value)?,
                "coefficient" => {
                    cfg.coefficient = match value.split_once(':') {
                        None if value == "four_channels" => CoefficientSpec::FourChannels,
                        Some(("constant", c)) => CoefficientSpec::Constant(
                            c.parse()
                                .map_err(|_| LodError::Config(format!("bad constant {c:?}")))?,
                        ),
                        Some(("raster", p)) => CoefficientSpec::Raster(PathBuf::from(p)),
                        _ => {
                            return Err(LodError::Config(format!(
                                "coefficient: expected four_channels | constant:C | raster:PATH, got {value:?}"
                            )))
                        }
                    }
                }
                "source" => {
                    cfg.source = match value.split_once(':') {
                        None if value == "right_half" => SourceSpec::RightHalf,
                        Some(("constant", c)) => SourceSpec::Constant(
                            c.parse()
                                .map_err(|_| LodError::Config(format!("bad constant {c:?}")))?,
                        ),
                        Some(("raster", p)) => SourceSpec::Raster(PathBuf::from(p)),
                        _ => {
                            return Err(LodError::Config(format!(
                                "source: expected right_half | constant:C | raster:PATH, got {value:?}"
                            )))
                        }
                    }
                }
                "dual_seed" => {
                    cfg.dual_seed = value
                        .parse()
                        .map_err(|_| LodError::Config(format!("bad dual_seed {value:?}")))?
                }
                "cond_seed" => {
                    cfg.cond_seed = value
                        .parse()
                        .map_err(|_| LodError::Config(format!("bad cond_seed {value:?}")))?
                }
                "out" => cfg.out_dir = PathBuf::from(value),
                "run_ideal" => cfg.run_ideal = parse_bool(key, value)?,
                "dump_basis" => cfg.dump_basis = parse_bool(key, value)?,
                "verify_structure" => cfg.verify_structure = parse_bool(key, value)?,
                _ => return Err(LodError::Config(format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_divisions.is_empty() || self.betas.is_empty() {
            return Err(LodError::Config("empty coarse_divisions or beta list".into()));
        }
        for &nh in &self.coarse_divisions {
            if nh < 2 {
                return Err(LodError::Config(format!("coarse_divisions {nh} < 2")));
            }
            if self.fine_divisions % nh != 0 || self.fine_divisions / nh < 2 {
                return Err(LodError::Config(format!(
                    "fine_divisions {} is not a >=2 multiple of coarse size {nh}",
                    self.fine_divisions
                )));
            }
        }
        if self.coefficient == CoefficientSpec::FourChannels && self.fine_divisions % 32 != 0 {
            return Err(LodError::Config(format!(
                "four_channels needs fine_divisions divisible by 32, got {}",
                self.fine_divisions
            )));
        }
        for &b in &self.betas {
            if !(b > 0.0) {
                return Err(LodError::Config(format!("beta {b} must be positive")));
            }
        }
        Ok(())
    }

    /// All keys with their effective values, the provenance record.
    pub fn render(&self) -> String {
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let blist = self
            .betas
            .iter()
            .map(|x| format!("{x:e}"))
            .collect::<Vec<_>>()
            .join(",");
        let source = match &self.source {
            SourceSpec::RightHalf => "right_half".into(),
            SourceSpec::Constant(c) => format!("constant:{c:e}"),
            SourceSpec::Raster(p) => format!("raster:{}", p.display()),
        };
        format!(
            "coarse_divisions = {}\nfine_divisions = {}\nbeta = {}\ncoefficient = {}\nsource = {}\ndual_seed = {}\ncond_seed = {}\nout = {}\nrun_ideal = {}\ndump_basis = {}\nverify_structure = {}\n",
            list(&self.coarse_divisions),
            self.fine_divisions,
            blist,
            self.coefficient.tag(),
            source,
            self.dual_seed,
            self.cond_seed,
            self.out_dir.display(),
            self.run_ideal,
            self.dump_basis,
            self.verify_structure,
        )
    }

    pub fn build_coefficient(&self, hier: &MeshHierarchy, beta: f64) -> Result<CoefficientField> {
        match &self.coefficient {
            CoefficientSpec::Constant(c) => coefficient::constant_field(hier, *c),
            CoefficientSpec::FourChannels => coefficient::four_channels(hier, beta),
            CoefficientSpec::Raster(p) => coefficient::from_raster(hier, p, beta),
        }
    }

    pub fn build_source(&self, hier: &MeshHierarchy) -> Result<Vec<f64>> {
        match &self.source {
            SourceSpec::RightHalf => Ok(coefficient::right_half_source(hier)),
            SourceSpec::Constant(c) => Ok(coefficient::constant_source(hier, *c)),
            SourceSpec::Raster(p) => {
                let mask = coefficient::RasterMask::read(p)?;
                let nf = hier.fine_divisions;
                if mask.width != nf || mask.height != nf {
                    return Err(LodError::Raster(format!(
                        "source mask is {}x{}, fine grid is {nf}x{nf}",
                        mask.width, mask.height
                    )));
                }
                let mut values = Vec::with_capacity(nf * nf);
                for ey in 0..nf {
                    let row = &mask.rows[nf - 1 - ey];
                    for ex in 0..nf {
                        values.push(if row[ex] { 1.0 } else { 0.0 });
                    }
                }
                Ok(values)
            }
        }
    }

    /// ‖f‖ value used in the printed certificate: the nominal 1/2 for the
    /// right-half source, otherwise the true norm.
    fn stated_f_norm(&self, true_norm: f64) -> f64 {
        match self.source {
            SourceSpec::RightHalf => 0.5,
            _ => true_norm,
        }
    }

    fn basis_path(&self, nh: usize, beta: f64) -> PathBuf {
        self.out_dir.join(format!("basis_H{nh}_beta{beta:e}.bin"))
    }
}

/// Wall-clock split of one cell.
#[derive(Debug, Clone, Default)]
pub struct CellTimings {
    pub offline_s: f64,
    pub fine_s: f64,
    pub online_s: f64,
}

/// Ideal-method comparison, only populated when `run_ideal` is on.
#[derive(Debug, Clone)]
pub struct IdealOutcome {
    /// ‖u_h - ideal u_ms‖_a.
    pub e_energy_abs: f64,
    /// C* H ‖kappa^{-1/2} f‖.
    pub bound: f64,
}

/// Everything one (H, beta) cell produces.
#[derive(Debug)]
pub struct CellOutcome {
    pub coarse_divisions: usize,
    pub beta: f64,
    pub cert: Certificate,
    pub report: ErrorReport,
    /// (element, dual index, CG iterations) per localized basis vector.
    pub iterations: Vec<(usize, usize, usize)>,
    pub dropped_entries: usize,
    pub timings: CellTimings,
    pub ideal: Option<IdealOutcome>,
    pub structure: Option<StructureReport>,
    pub pass: bool,
}

struct Offline {
    hier: MeshHierarchy,
    kappa: CoefficientField,
    a: crate::sparse::CsrMatrix,
    dual: DualNodeSet,
    basis: BlockKernelBasis,
    m_max: f64,
}

/// Dense structure verification is capped to keep diagnosis tractable.
const STRUCTURE_DIM_CAP: usize = 3000;

fn build_offline(cfg: &ExperimentConfig, nh: usize, beta: f64) -> Result<Offline> {
    let hier = MeshHierarchy::build(nh, cfg.fine_divisions / nh)?;
    let kappa = cfg.build_coefficient(&hier, beta)?;
    let a = assemble_stiffness(&hier, &kappa);
    let hash = basis_io::config_hash(nh, hier.refine_ratio, beta, &cfg.coefficient.tag(), cfg.dual_seed);
    let path = cfg.basis_path(nh, beta);

    let (dual, basis) = if cfg.dump_basis && path.is_file() {
        match basis_io::read_basis(&path, hash) {
            Ok((_, _, dual, basis)) => (dual, basis),
            // stale or foreign file: rebuild and overwrite below
            Err(_) => build_offline_fresh(cfg, &hier, &kappa, &a, hash, &path)?,
        }
    } else {
        build_offline_fresh(cfg, &hier, &kappa, &a, hash, &path)?
    };

    let fns = build_dual_functions(&dual, &a)?;
    let m_max = fns.m_max;
    Ok(Offline {
        hier,
        kappa,
        a,
        dual,
        basis,
        m_max,
    })
}

fn build_offline_fresh(
    cfg: &ExperimentConfig,
    hier: &MeshHierarchy,
    kappa: &CoefficientField,
    a: &crate::sparse::CsrMatrix,
    hash: u64,
    path: &Path,
) -> Result<(DualNodeSet, BlockKernelBasis)> {
    let cls = classify_nodes(hier);
    let aux = build_aux_space(hier, kappa, &cls)?;
    let dual = select_dual_nodes(hier, &aux, a, cfg.dual_seed)?;
    let fns = build_dual_functions(&dual, a)?;
    let basis = build_kernel_basis(hier, &cls, &aux, &dual, &fns, a)?;
    if cfg.dump_basis {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        basis_io::write_basis(path, hash, hier, cfg.dual_seed, &dual, &basis)?;
    }
    Ok((dual, basis))
}

/// Runs the full offline + online pipeline of one (H, beta) cell.
pub fn run_cell(cfg: &ExperimentConfig, nh: usize, beta: f64) -> Result<CellOutcome> {
    let t0 = Instant::now();
    let off = build_offline(cfg, nh, beta)?;
    let op = KtAK {
        basis: &off.basis,
        a: &off.a,
    };
    let (cond, q) = estimate_condition(&op, cfg.cond_seed)?;
    let plan = CorrectorPlan::new(cond, q, off.dual.n_aux, off.m_max, beta, off.hier.coarse_h)?;
    let ms = build_multiscale_space(&off.hier, &off.a, &off.basis, &off.dual, plan.clone())?;
    let offline_s = t0.elapsed().as_secs_f64();

    let f = cfg.build_source(&off.hier)?;
    let load = assemble_load(&off.hier, &f);
    let f_true = source_l2_norm(&off.hier, &f);

    let u_h = solve_fine(&off.a, &load)?;
    let t2 = Instant::now();
    let u_ms = solve_galerkin(&ms, &off.a, &load)?;
    let online_s = t2.elapsed().as_secs_f64();

    let kmin = off.kappa.values.iter().cloned().fold(f64::MAX, f64::min);
    let kmax = off.kappa.values.iter().cloned().fold(f64::MIN, f64::max);
    let cert = Certificate::new(
        &plan,
        off.hier.fine_h,
        kmax / kmin,
        cfg.stated_f_norm(f_true),
        f_true,
    );
    let mass = assemble_mass(&off.hier);
    let wmass = assemble_weighted_mass(&off.hier, &off.kappa, 1.0);
    let report = compute_errors(&u_h.fine, &u_ms.fine, &off.a, &mass, &wmass, &cert);
    let pass = report.e_energy_abs <= cert.energy_estimate && report.e_l2_abs <= cert.l2_estimate;

    let ideal = if cfg.run_ideal {
        Some(run_ideal(&off, &op, &load, &u_h.fine, &f)?)
    } else {
        None
    };
    let structure = if cfg.verify_structure && off.basis.ell <= STRUCTURE_DIM_CAP {
        let cls = classify_nodes(&off.hier);
        Some(verify_structure(&off.basis, &off.a, &cls))
    } else {
        None
    };

    let iterations = iteration_rows(&off.dual, &ms);
    Ok(CellOutcome {
        coarse_divisions: nh,
        beta,
        cert,
        report,
        iterations,
        dropped_entries: ms.dropped_entries,
        timings: CellTimings {
            offline_s,
            fine_s: u_h.seconds,
            online_s,
        },
        ideal,
        structure,
        pass,
    })
}

fn iteration_rows(dual: &DualNodeSet, ms: &MultiscaleSpace) -> Vec<(usize, usize, usize)> {
    let _ = dual;
    ms.owners
        .iter()
        .zip(&ms.iterations)
        .map(|(&(e, j), &it)| (e, j, it))
        .collect()
}

fn run_ideal(
    off: &Offline,
    op: &KtAK,
    load: &[f64],
    u_h: &[f64],
    f: &[f64],
) -> Result<IdealOutcome> {
    let mut vectors = Vec::new();
    for ed in &off.dual.per_element {
        for (j, &p) in ed.nodes.iter().enumerate() {
            let mut hat = vec![0.0; off.hier.n];
            hat[p] = ed.hat_scale[j];
            let corr = ideal_corrector(op, &off.basis, &off.a, &hat)?;
            vectors.push(hat.iter().zip(&corr).map(|(h, c)| h - c).collect::<Vec<f64>>());
        }
    }
    let u_ms = galerkin_with_vectors(&vectors, &off.a, load)?;
    let diff: Vec<f64> = u_h.iter().zip(&u_ms.fine).map(|(x, y)| x - y).collect();
    let nf = off.hier.fine_divisions;
    let h2 = off.hier.fine_h * off.hier.fine_h;
    let wf = (f
        .iter()
        .enumerate()
        .map(|(e, &fe)| fe * fe / off.kappa.at(&off.hier, e % nf, e / nf))
        .sum::<f64>()
        * h2)
        .sqrt();
    Ok(IdealOutcome {
        e_energy_abs: energy_norm(&off.a, &diff),
        bound: crate::auxiliary::c_star() * off.hier.coarse_h * wf,
    })
}

fn fe(x: f64) -> String {
    format!("{x:.12e}")
}

/// Fixed experiments.csv header.
pub const EXPERIMENTS_HEADER: &str =
    "H,h,beta,L,sqrt_M,cond,q,k,e_energy_abs,e_energy_rel,e_l2_abs,e_l2_rel,e_l2k_abs,est_energy,est_l2,ideal_est,pass";

pub fn experiments_row(c: &CellOutcome) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fe(c.cert.h_coarse),
        fe(c.cert.h_fine),
        fe(c.cert.beta),
        c.cert.l,
        fe(c.cert.sqrt_m),
        fe(c.cert.cond),
        fe(c.cert.q),
        c.cert.k,
        fe(c.report.e_energy_abs),
        fe(c.report.e_energy_rel),
        fe(c.report.e_l2_abs),
        fe(c.report.e_l2_rel),
        fe(c.report.e_l2k_abs),
        fe(c.cert.energy_estimate),
        fe(c.cert.l2_estimate),
        fe(c.cert.ideal_estimate),
        c.pass,
    )
}

/// Every cell of a solve run plus the failure log.
#[derive(Debug)]
pub struct SweepResult {
    pub cells: Vec<CellOutcome>,
    /// (coarse size, beta, error message) of aborted cells.
    pub failures: Vec<(usize, f64, String)>,
}

impl SweepResult {
    pub fn all_pass(&self) -> bool {
        self.failures.is_empty() && self.cells.iter().all(|c| c.pass)
    }
}

/// Runs the whole (H, beta) grid; cell failures are recorded, not fatal.
pub fn run_sweep(cfg: &ExperimentConfig) -> SweepResult {
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &nh in &cfg.coarse_divisions {
        for &beta in &cfg.betas {
            match run_cell(cfg, nh, beta) {
                Ok(c) => cells.push(c),
                Err(e) => failures.push((nh, beta, e.to_string())),
            }
        }
    }
    SweepResult { cells, failures }
}

fn write_common_artifacts(cfg: &ExperimentConfig, sweep: &SweepResult) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config_resolved.txt"), cfg.render())?;

    let mut exp = String::from(EXPERIMENTS_HEADER);
    exp.push('\n');
    for c in &sweep.cells {
        exp.push_str(&experiments_row(c));
        exp.push('\n');
    }
    fs::write(cfg.out_dir.join("experiments.csv"), exp)?;

    let mut tim = String::from("H,beta,offline_s,fine_s,online_s\n");
    for c in &sweep.cells {
        let _ = writeln!(
            tim,
            "{},{},{:.6},{:.6},{:.6}",
            c.coarse_divisions, c.beta, c.timings.offline_s, c.timings.fine_s, c.timings.online_s
        );
    }
    fs::write(cfg.out_dir.join("timings.csv"), tim)?;

    let mut fail = String::from("H,beta,error\n");
    for (nh, beta, msg) in &sweep.failures {
        let _ = writeln!(fail, "{nh},{beta:e},{:?}", msg);
    }
    fs::write(cfg.out_dir.join("failures.csv"), fail)?;

    for c in &sweep.cells {
        let stem = format!("H{}_beta{:e}", c.coarse_divisions, c.beta);
        let mut cert = c.cert.render();
        let _ = writeln!(cert, "dropped_entries={}", c.dropped_entries);
        let _ = writeln!(cert, "pass={}", c.pass);
        if let Some(id) = &c.ideal {
            let _ = writeln!(cert, "ideal_energy_error={}", fe(id.e_energy_abs));
            let _ = writeln!(cert, "ideal_bound={}", fe(id.bound));
        }
        fs::write(cfg.out_dir.join(format!("certificate_{stem}.txt")), cert)?;

        let mut cg = String::from("index,element,dual_index,iterations\n");
        for (i, (e, j, it)) in c.iterations.iter().enumerate() {
            let _ = writeln!(cg, "{i},{e},{j},{it}");
        }
        fs::write(cfg.out_dir.join(format!("cg_{stem}.csv")), cg)?;
    }

    // coefficient raster provenance, one per contrast
    if let Some(&nh) = cfg.coarse_divisions.first() {
        for &beta in &cfg.betas {
            let hier = MeshHierarchy::build(nh, cfg.fine_divisions / nh)?;
            if let Ok(kappa) = cfg.build_coefficient(&hier, beta) {
                let path = cfg.out_dir.join(format!("coefficient_beta{beta:e}.mask"));
                coefficient::write_raster(&hier, &kappa, &path)?;
            }
        }
    }
    Ok(())
}

/// `solve` subcommand: run the grid, write artifacts, report overall pass.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<SweepResult> {
    fs::create_dir_all(&cfg.out_dir)?;
    let sweep = run_sweep(cfg);
    write_common_artifacts(cfg, &sweep)?;
    Ok(sweep)
}

/// Least-squares slope of y against x.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// Per-contrast convergence orders from a sweep.
#[derive(Debug, Clone)]
pub struct SlopeRow {
    pub beta: f64,
    pub energy_slope: f64,
    pub l2_slope: f64,
}

pub fn fit_slopes(sweep: &SweepResult) -> Vec<SlopeRow> {
    let mut betas: Vec<f64> = sweep.cells.iter().map(|c| c.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    betas
        .iter()
        .map(|&beta| {
            let cells: Vec<&CellOutcome> =
                sweep.cells.iter().filter(|c| c.beta == beta).collect();
            let logh: Vec<f64> = cells.iter().map(|c| c.cert.h_coarse.ln()).collect();
            let loge: Vec<f64> = cells.iter().map(|c| c.report.e_energy_rel.ln()).collect();
            let logl: Vec<f64> = cells.iter().map(|c| c.report.e_l2_rel.ln()).collect();
            SlopeRow {
                beta,
                energy_slope: least_squares_slope(&logh, &loge),
                l2_slope: least_squares_slope(&logh, &logl),
            }
        })
        .collect()
}

/// `table` subcommand: sweep plus log-log convergence-order fits.
pub fn cmd_table(cfg: &ExperimentConfig) -> Result<(SweepResult, Vec<SlopeRow>)> {
    if cfg.coarse_divisions.len() < 2 {
        return Err(LodError::Config(
            "table needs at least two coarse_divisions values".into(),
        ));
    }
    let sweep = cmd_solve(cfg)?;
    let slopes = fit_slopes(&sweep);
    let mut out = String::from("beta,energy_slope,l2_slope\n");
    for s in &slopes {
        let _ = writeln!(out, "{},{},{}", fe(s.beta), fe(s.energy_slope), fe(s.l2_slope));
    }
    fs::write(cfg.out_dir.join("table.csv"), out)?;
    Ok((sweep, slopes))
}

/// Diagnosis of the first grid cell: mode-count histogram, unit-coefficient
/// spectral lower bounds, operator structure and conditioning.
#[derive(Debug)]
pub struct DiagnoseReport {
    pub coarse_divisions: usize,
    pub beta: f64,
    /// L_i value -> element count.
    pub histogram: BTreeMap<usize, usize>,
    pub l_total: usize,
    /// Interior elements of the unit-coefficient companion problem that
    /// select exactly the constant mode.
    pub unit_interior_single_mode: bool,
    /// min over elements of next_eigenvalue / mu_hat with unit coefficient.
    pub unit_min_next_over_mu: f64,
    pub cond: f64,
    pub q: f64,
    pub structure: Option<StructureReport>,
}

/// `diagnose` subcommand, run on the first (H, beta) pair of the config.
pub fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseReport> {
    let nh = cfg.coarse_divisions[0];
    let beta = cfg.betas[0];
    let off = build_offline(cfg, nh, beta)?;
    let cls = classify_nodes(&off.hier);
    let aux = build_aux_space(&off.hier, &off.kappa, &cls)?;

    let mut histogram = BTreeMap::new();
    for lb in &aux.locals {
        *histogram.entry(lb.l).or_insert(0usize) += 1;
    }

    // companion eigensolve with unit coefficient checks the analytic
    // spectral floor per boundary class
    let ones = coefficient::constant_field(&off.hier, 1.0)?;
    let unit_aux = build_aux_space(&off.hier, &ones, &cls)?;
    let mut single = true;
    let mut min_ratio = f64::MAX;
    for lb in &unit_aux.locals {
        let class = cls.element_boundary_class[lb.element];
        let mu = mu_lower_bound(class);
        if class == crate::mesh::BoundaryClass::Interior && lb.l != 1 {
            single = false;
        }
        min_ratio = min_ratio.min(lb.next_eigenvalue / mu);
    }

    let op = KtAK {
        basis: &off.basis,
        a: &off.a,
    };
    let (cond, q) = estimate_condition(&op, cfg.cond_seed)?;
    let structure = if off.basis.ell <= STRUCTURE_DIM_CAP {
        Some(verify_structure(&off.basis, &off.a, &cls))
    } else {
        None
    };

    let rep = DiagnoseReport {
        coarse_divisions: nh,
        beta,
        histogram,
        l_total: aux.l_total,
        unit_interior_single_mode: single,
        unit_min_next_over_mu: min_ratio,
        cond,
        q,
        structure,
    };

    fs::create_dir_all(&cfg.out_dir)?;
    let mut txt = String::new();
    let _ = writeln!(txt, "coarse_divisions={nh}");
    let _ = writeln!(txt, "beta={beta:e}");
    let _ = writeln!(txt, "L={}", rep.l_total);
    for (l, count) in &rep.histogram {
        let _ = writeln!(txt, "histogram_L{l}={count}");
    }
    let _ = writeln!(txt, "unit_interior_single_mode={}", rep.unit_interior_single_mode);
    let _ = writeln!(txt, "unit_min_next_over_mu={}", fe(rep.unit_min_next_over_mu));
    let _ = writeln!(txt, "cond={}", fe(rep.cond));
    let _ = writeln!(txt, "q={}", fe(rep.q));
    match &rep.structure {
        Some(st) => {
            let _ = writeln!(txt, "structure_max_diag_dev={}", fe(st.max_diag_dev));
            let _ = writeln!(txt, "structure_max_disjoint={}", fe(st.max_disjoint));
            let _ = writeln!(txt, "structure_max_projected={}", fe(st.max_projected));
            let _ = writeln!(txt, "structure_max_asymmetry={}", fe(st.max_asymmetry));
            for (class, count, mag) in &st.nonzero_classes {
                let _ = writeln!(txt, "structure_class_{class}={count},{}", fe(*mag));
            }
        }
        None => {
            let _ = writeln!(txt, "structure=skipped (dimension above cap)");
        }
    }
    fs::write(cfg.out_dir.join("diagnose.txt"), txt)?;
    Ok(rep)
}

/// `dump-basis` subcommand: run the offline stage of every cell and write
/// the binary basis files.
pub fn cmd_dump_basis(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut with_dump = cfg.clone();
    with_dump.dump_basis = true;
    fs::create_dir_all(&with_dump.out_dir)?;
    let mut paths = Vec::new();
    for &nh in &with_dump.coarse_divisions {
        for &beta in &with_dump.betas {
            build_offline(&with_dump, nh, beta)?;
            paths.push(with_dump.basis_path(nh, beta));
        }
    }
    Ok(paths)
}
