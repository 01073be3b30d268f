//! Batch driver: run configuration, experiments and file outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cell::homogenize_all;
use crate::coeffs::{CoefficientField, CoefficientParams, SourceField, SourceParams};
use crate::error::{Error, Result};
use crate::errors::{
    aggregate_to, error_triple, mms_reference, modeling_error, observed_rate, solve_direct_fine, RESOLUTION_GUARD,
};
use crate::estimate::{compute_indicators, Effectivity};
use crate::fespace::EdgeSpace;
use crate::hmm::{solve_hmm, solve_macro, HmmConfig, HmmSolution};
use crate::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain};
use crate::output::{write_csv, write_vtk, Cell};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Cell,
    Solve,
    Converge,
    Estimate,
    Modeling,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cell => "cell",
            Self::Solve => "solve",
            Self::Converge => "converge",
            Self::Estimate => "estimate",
            Self::Modeling => "modeling",
        }
    }
}

/// Mesh sizes given either as one number or as a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sizes {
    One(usize),
    Many(Vec<usize>),
}

impl Sizes {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            Self::One(n) => vec![*n],
            Self::Many(v) => v.clone(),
        }
    }
}

/// Flat run configuration; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub domain_lo: [f64; 3],
    pub domain_hi: [f64; 3],
    pub macro_n: Sizes,
    pub micro_n: Sizes,
    pub preset: String,
    pub m0: f64,
    pub k0_re: f64,
    pub k0_im: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub axis: usize,
    pub source: String,
    pub source_amp_re: f64,
    pub source_amp_im: f64,
    pub source_vector: [f64; 3],
    pub delta: f64,
    /// Overkill reference sizes are this factor times the finest level
    /// unless given explicitly.
    pub reference_factor: usize,
    pub reference_macro_n: Option<usize>,
    pub reference_micro_n: Option<usize>,
    pub fh_degree: usize,
    /// Refinement of the Helmholtz-split mesh relative to the macro mesh.
    pub split_factor: usize,
    pub fine_n: usize,
    pub deltas: Vec<f64>,
    pub resolution_guard: f64,
    /// Macro point at which `cell` samples x-dependent coefficients.
    pub cell_x: Option<[f64; 3]>,
    pub vtk: bool,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CoefficientParams::default();
        let s = SourceParams::default();
        Self {
            experiment: None,
            domain_lo: [0.0; 3],
            domain_hi: [1.0; 3],
            macro_n: Sizes::One(4),
            micro_n: Sizes::One(4),
            preset: "laminate_y1".into(),
            m0: c.m0,
            k0_re: c.k0_re,
            k0_im: c.k0_im,
            a: c.a,
            b: c.b,
            gamma: c.gamma,
            axis: c.axis,
            source: "sin_e1".into(),
            source_amp_re: s.amp_re,
            source_amp_im: s.amp_im,
            source_vector: s.vector,
            delta: 0.25,
            reference_factor: 4,
            reference_macro_n: None,
            reference_micro_n: None,
            fh_degree: 1,
            split_factor: 4,
            fine_n: 24,
            deltas: vec![0.5, 0.25],
            resolution_guard: RESOLUTION_GUARD,
            cell_x: None,
            vtk: false,
            out: PathBuf::from("out"),
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn coefficient_params(&self) -> CoefficientParams {
        CoefficientParams {
            m0: self.m0,
            k0_re: self.k0_re,
            k0_im: self.k0_im,
            a: self.a,
            b: self.b,
            gamma: self.gamma,
            axis: self.axis,
        }
    }

    pub fn k0(&self) -> Complex64 {
        Complex64::new(self.k0_re, self.k0_im)
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.domain_lo, self.domain_hi)
    }

    pub fn coefficients(&self) -> Result<CoefficientField> {
        CoefficientField::preset(&self.preset, &self.coefficient_params(), &self.domain()?)
    }

    pub fn source_field(&self) -> Result<SourceField> {
        let p = SourceParams {
            amp_re: self.source_amp_re,
            amp_im: self.source_amp_im,
            vector: self.source_vector,
        };
        SourceField::preset(&self.source, &p, self.k0())
    }

    /// Pairs `(macro n, micro n)`; a single size is broadcast.
    pub fn levels(&self) -> Vec<(usize, usize)> {
        let (m, h) = (self.macro_n.to_vec(), self.micro_n.to_vec());
        let len = m.len().max(h.len());
        let pick = |v: &[usize], i: usize| if v.len() == 1 { v[0] } else { v.get(i).copied().unwrap_or(0) };
        (0..len).map(|i| (pick(&m, i), pick(&h, i))).collect()
    }

    pub fn reference_sizes(&self) -> (usize, usize) {
        let lv = self.levels();
        let fm = lv.iter().map(|l| l.0).max().unwrap_or(1);
        let fh = lv.iter().map(|l| l.1).max().unwrap_or(2);
        (
            self.reference_macro_n.unwrap_or(self.reference_factor * fm),
            self.reference_micro_n.unwrap_or(self.reference_factor * fh),
        )
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.experiment.is_none() {
            bad.push("experiment: missing (cell, solve, converge, estimate or modeling)".to_string());
        }
        if let Err(e) = self.domain() {
            bad.push(format!("domain_lo/domain_hi: {e}"));
        }
        let (m, h) = (self.macro_n.to_vec(), self.micro_n.to_vec());
        if m.is_empty() || m.iter().any(|&n| n < 1) {
            bad.push("macro_n: every size must be at least 1".into());
        }
        if h.is_empty() || h.iter().any(|&n| n < 2) {
            bad.push("micro_n: every size must be at least 2".into());
        }
        if m.len() > 1 && h.len() > 1 && m.len() != h.len() {
            bad.push("macro_n/micro_n: sequences must have equal length".into());
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            bad.push(format!("delta: must lie in (0, 1], got {}", self.delta));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            bad.push("deltas: every value must lie in (0, 1]".into());
        }
        match self.coefficients() {
            Err(Error::UnknownPreset(p)) => bad.push(format!("preset: unknown preset `{p}`")),
            Err(e) => bad.push(format!("preset: {e}")),
            Ok(_) => {}
        }
        match self.source_field() {
            Err(Error::UnknownPreset(p)) => bad.push(format!("source: unknown preset `{p}`")),
            Err(e) => bad.push(format!("source: {e}")),
            Ok(_) => {}
        }
        if self.fh_degree > 1 {
            bad.push("fh_degree: must be 0 or 1".into());
        }
        if self.reference_factor < 1 || self.split_factor < 1 {
            bad.push("reference_factor/split_factor: must be at least 1".into());
        }
        if self.fine_n < 1 {
            bad.push("fine_n: must be at least 1".into());
        }
        if !(self.resolution_guard > 0.0) {
            bad.push("resolution_guard: must be positive".into());
        }
        if self.jobs == Some(0) {
            bad.push("jobs: must be at least 1".into());
        }
        if matches!(self.experiment, Some(Experiment::Estimate)) || self.needs_reference() {
            let (rm, rh) = self.reference_sizes();
            for (n, k) in self.levels() {
                if n == 0 || k == 0 || rm % n != 0 || rh % k != 0 {
                    bad.push(format!(
                        "reference_macro_n/reference_micro_n: ({rm}, {rh}) does not refine level ({n}, {k})"
                    ));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn needs_reference(&self) -> bool {
        match self.experiment {
            Some(Experiment::Estimate) => true,
            Some(Experiment::Converge) => self.preset != "constant",
            _ => false,
        }
    }
}

/// `maxwell-hmm <experiment> --config <file> [overrides]`
#[derive(Debug, Parser)]
#[command(name = "maxwell-hmm", version, about = "HMM for the time-harmonic Maxwell curl-curl problem")]
pub struct Args {
    pub experiment: Experiment,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Macro mesh sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub macro_n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub micro_n: Option<Vec<usize>>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Args {
    /// The file configuration with the flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.experiment = Some(self.experiment);
        let sizes = |v: &Vec<usize>| if v.len() == 1 { Sizes::One(v[0]) } else { Sizes::Many(v.clone()) };
        if let Some(v) = &self.macro_n {
            c.macro_n = sizes(v);
        }
        if let Some(v) = &self.micro_n {
            c.micro_n = sizes(v);
        }
        if let Some(d) = self.delta {
            c.delta = d;
        }
        if let Some(p) = &self.preset {
            c.preset = p.clone();
        }
        if let Some(j) = self.jobs {
            c.jobs = Some(j);
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        Ok(c)
    }
}

/// Outcome of a run: files written and the manifest contents.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub manifest: Value,
}

struct Recorder {
    out: PathBuf,
    files: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    results: serde_json::Map<String, Value>,
}

impl Recorder {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f();
        *self.timings.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        r
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
        let p = self.out.join(name);
        write_csv(&p, header, rows)?;
        self.files.push(p);
        Ok(())
    }

    fn result(&mut self, key: &str, v: Value) {
        self.results.insert(key.to_string(), v);
    }
}

/// Runs the configured experiment inside a pool of `jobs` threads.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &RunConfig) -> Result<RunReport> {
    let experiment = config.experiment.expect("validated");
    fs::create_dir_all(&config.out)?;
    let mut rec = Recorder {
        out: config.out.clone(),
        files: Vec::new(),
        timings: BTreeMap::new(),
        results: serde_json::Map::new(),
    };
    let start = Instant::now();
    match experiment {
        Experiment::Cell => run_cell(config, &mut rec)?,
        Experiment::Solve => run_solve(config, &mut rec)?,
        Experiment::Converge if config.preset == "constant" => run_mms(config, &mut rec)?,
        Experiment::Converge | Experiment::Estimate => run_two_scale(config, &mut rec, experiment == Experiment::Estimate)?,
        Experiment::Modeling => run_modeling(config, &mut rec)?,
    }
    rec.timings.insert("total".into(), start.elapsed().as_secs_f64());
    let (rm, rh) = config.reference_sizes();
    let manifest = json!({
        "experiment": experiment.name(),
        "config": config,
        "versions": {
            "maxwell_hmm": env!("CARGO_PKG_VERSION"),
        },
        "threads": rayon::current_num_threads(),
        "parameters": {
            "levels": config.levels(),
            "reference": [rm, rh],
            "macro_quadrature_degree": 4,
            "energy_norm_quadrature_degree": {"discrete": 2, "analytic": 4},
            "helmholtz_split_quadrature_degree": 4,
            "zeta_micro_quadrature_degree": 2,
            "resolution_guard": config.resolution_guard,
            "fh_degree": config.fh_degree,
            "split_factor": config.split_factor,
        },
        "timings_s": rec.timings,
        "results": rec.results,
        "outputs": rec.files.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    let mp = config.out.join("manifest.json");
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?)?;
    rec.files.push(mp);
    Ok(RunReport {
        files: rec.files,
        manifest,
    })
}

fn run_cell(config: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let domain = config.domain()?;
    let coeffs = config.coefficients()?;
    let x = config.cell_x.unwrap_or_else(|| std::array::from_fn(|a| 0.5 * (domain.lo[a] + domain.hi[a])));
    let limits = coeffs.laminate_limits();
    let mut rows = Vec::new();
    for (_, m) in config.levels() {
        // A one-element macro mesh around `x` carries the sample point.
        let h = 1e-3;
        let lo = x.map(|v| v - h);
        let hi = x.map(|v| v + h);
        let mac = build_box_mesh(BoxDomain::new(lo, hi)?, 1)?;
        let micro = Arc::new(build_periodic_cube_mesh(m)?);
        let cells = rec.time("homogenize", || homogenize_all(&mac, micro, &coeffs))?;
        let mh = cells.mhom(0);
        let kh = cells.khom(0);
        for r in 0..3 {
            for c in 0..3 {
                let exact_m = limits.map(|(mm, _)| if r == c { mm[r] } else { 0.0 });
                let exact_k = limits.map(|(_, kk)| if r == c { kk[r] } else { Complex64::from(0.0) });
                let rel = |v: Complex64, e: Option<Complex64>| {
                    e.and_then(|e| if e.norm() > 0.0 { Some((v - e).norm() / e.norm()) } else { None })
                };
                rows.push(vec![
                    m.into(),
                    "mhom".into(),
                    r.into(),
                    c.into(),
                    mh[r][c].into(),
                    0.0.into(),
                    exact_m.into(),
                    exact_m.map(|_| 0.0).into(),
                    rel(Complex64::from(mh[r][c]), exact_m.map(Complex64::from)).into(),
                ]);
                rows.push(vec![
                    m.into(),
                    "khom".into(),
                    r.into(),
                    c.into(),
                    kh[r][c].re.into(),
                    kh[r][c].im.into(),
                    exact_k.map(|e| e.re).into(),
                    exact_k.map(|e| e.im).into(),
                    rel(kh[r][c], exact_k).into(),
                ]);
            }
        }
    }
    rec.result("laminate_reference", json!(limits.is_some()));
    rec.csv(
        "cell_tensors.csv",
        &["n_micro", "tensor", "row", "col", "re", "im", "exact_re", "exact_im", "rel_error"],
        &rows,
    )
}

fn hmm_config(config: &RunConfig, n: usize, m: usize, delta: f64) -> Result<HmmConfig> {
    Ok(HmmConfig {
        domain: config.domain()?,
        macro_n: n,
        micro_n: m,
        coeffs: config.coefficients()?,
        source: config.source_field()?,
        delta,
    })
}

fn vtk_fields(rec: &mut Recorder, name: &str, sol: &HmmSolution) -> Result<()> {
    let p = rec.out.join(name);
    write_vtk(
        &p,
        &sol.space.mesh,
        "maxwell-hmm macro field",
        &[("e_h", &sol.centers), ("curl_e_h", &sol.curls)],
    )?;
    rec.files.push(p);
    Ok(())
}

fn run_solve(config: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let mut rows = Vec::new();
    for (n, m) in config.levels() {
        let cfg = hmm_config(config, n, m, config.delta)?;
        let sol = rec.time("solve", || solve_hmm(&cfg))?;
        let norm = crate::errors::energy_norm(&crate::errors::TwoScaleField::from_hmm(&sol), &sol.space.mesh, sol.micro())?;
        rows.push(vec![
            n.into(),
            m.into(),
            config.delta.into(),
            sol.dofs.len().into(),
            sol.cells.cells.len().into(),
            sol.residual.into(),
            norm.curl.into(),
            norm.div.into(),
            norm.l2.into(),
            norm.total.into(),
        ]);
        if config.vtk {
            vtk_fields(rec, &format!("field_n{n}_m{m}.vtk"), &sol)?;
        }
    }
    rec.csv(
        "solve.csv",
        &["n_macro", "n_micro", "delta", "n_dofs", "n_cell_sets", "residual", "curl_part", "div_part", "l2_part", "energy_norm"],
        &rows,
    )
}

const CONVERGENCE_HEADER: [&str; 11] = [
    "n_macro",
    "n_micro",
    "delta",
    "energy_error",
    "curl_part",
    "div_part",
    "l2_part",
    "theta_norm",
    "z_norm",
    "estimator_total",
    "effectivity",
];

fn run_mms(config: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let levels = config.levels();
    let ns: Vec<usize> = levels.iter().map(|l| l.0).collect();
    let m = levels[0].1;
    let table = rec.time("mms", || mms_reference(config.k0(), &ns, m, config.split_factor))?;
    let mut rows = Vec::new();
    let mut detail = Vec::new();
    for r in &table {
        let cfg = HmmConfig {
            source: SourceField::mms(config.k0()),
            ..hmm_config(config, r.n, m, config.delta)?
        };
        let sol = rec.time("solve", || solve_hmm(&cfg))?;
        let tab = rec.time("estimate", || compute_indicators(&sol, config.fh_degree))?;
        let energy = r.l2 + r.curl;
        rows.push(vec![
            r.n.into(),
            m.into(),
            config.delta.into(),
            energy.into(),
            r.curl.into(),
            0.0.into(),
            r.l2.into(),
            r.theta.into(),
            r.z.into(),
            tab.aggregates.eta_total().into(),
            tab.effectivity(energy).value().into(),
        ]);
        detail.push(vec![
            r.n.into(),
            r.h.into(),
            r.hcurl.into(),
            r.interpolation_hcurl.into(),
            r.h_minus1.into(),
            r.residual.into(),
        ]);
    }
    let h: Vec<f64> = table.iter().map(|r| r.h).collect();
    let col = |f: fn(&crate::errors::MmsRow) -> f64| table.iter().map(f).collect::<Vec<_>>();
    if table.len() >= 2 {
        rec.result("hcurl_rate", json!(observed_rate(&h, &col(|r| r.hcurl))));
        rec.result("interpolation_rate", json!(observed_rate(&h, &col(|r| r.interpolation_hcurl))));
        rec.result("split_rate", json!(observed_rate(&h, &col(|r| r.theta + r.z))));
        rec.result("h_minus1_rate", json!(observed_rate(&h, &col(|r| r.h_minus1))));
    }
    rec.csv("convergence.csv", &CONVERGENCE_HEADER, &rows)?;
    rec.csv(
        "mms_detail.csv",
        &["n_macro", "h", "hcurl_error", "interpolation_hcurl_error", "h_minus1_error", "residual"],
        &detail,
    )
}

fn run_two_scale(config: &RunConfig, rec: &mut Recorder, per_level_tables: bool) -> Result<()> {
    let (rm, rh) = config.reference_sizes();
    let rcfg = hmm_config(config, rm, rh, config.delta)?;
    let reference = rec.time("reference", || solve_hmm(&rcfg))?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let (mut hs, mut errs, mut effs, mut locs) = (vec![], vec![], vec![], vec![]);
    for (n, m) in config.levels() {
        let cfg = hmm_config(config, n, m, config.delta)?;
        let sol = rec.time("solve", || solve_hmm(&cfg))?;
        let err = rec.time("error", || error_triple(&sol, &reference))?;
        let tab = rec.time("estimate", || compute_indicators(&sol, config.fh_degree))?;
        let local: Vec<f64> = aggregate_to(&reference.space.mesh, &err.local_sq, &sol.space.mesh)?
            .iter()
            .map(|v| v.sqrt())
            .collect();
        let eff = tab.effectivity(err.total);
        let le = tab.local_efficiency(&local);
        rows.push(vec![
            n.into(),
            m.into(),
            config.delta.into(),
            err.total.into(),
            err.curl.into(),
            err.div.into(),
            err.l2.into(),
            Cell::Empty,
            Cell::Empty,
            tab.aggregates.eta_total().into(),
            eff.value().into(),
        ]);
        let a = tab.aggregates;
        summary.push(vec![
            n.into(),
            m.into(),
            a.element.into(),
            a.face.into(),
            a.micro.into(),
            a.zeta.into(),
            a.zeta_micro.into(),
            le.element.into(),
            le.divergence.into(),
            le.face.into(),
            le.micro.into(),
        ]);
        if per_level_tables {
            let p = rec.out.join(format!("indicators_n{n}_m{m}.csv"));
            tab.write_csv(fs::File::create(&p)?, Some(eff))?;
            rec.files.push(p);
        }
        if config.vtk {
            vtk_fields(rec, &format!("field_n{n}_m{m}.vtk"), &sol)?;
        }
        hs.push(sol.space.mesh.max_diameter());
        errs.push(err.total);
        if let Effectivity::Value(v) = eff {
            effs.push(v);
        }
        locs.push(le.max());
    }
    if hs.len() >= 2 {
        rec.result("energy_rate", json!(observed_rate(&hs, &errs)));
    }
    if !effs.is_empty() {
        let mx = effs.iter().cloned().fold(f64::MIN, f64::max);
        let mn = effs.iter().cloned().fold(f64::MAX, f64::min);
        rec.result("effectivity", json!({"values": effs, "max_over_min": mx / mn}));
    }
    rec.result("local_efficiency_max", json!(locs));
    rec.result("reference_residual", json!(reference.residual));
    rec.csv("convergence.csv", &CONVERGENCE_HEADER, &rows)?;
    rec.csv(
        "estimator_summary.csv",
        &[
            "n_macro",
            "n_micro",
            "eta_element",
            "eta_face",
            "eta_micro",
            "zeta",
            "zeta_micro",
            "local_efficiency_element",
            "local_efficiency_divergence",
            "local_efficiency_face",
            "local_efficiency_micro",
        ],
        &summary,
    )
}

fn run_modeling(config: &RunConfig, rec: &mut Recorder) -> Result<()> {
    let domain = config.domain()?;
    let coeffs = config.coefficients()?;
    let source = config.source_field()?;
    let (n, m) = config.levels()[0];
    let mac = Arc::new(build_box_mesh(domain, n)?);
    let micro = Arc::new(build_periodic_cube_mesh(m)?);
    let cells = Arc::new(rec.time("homogenize", || homogenize_all(&mac, micro, &coeffs))?);
    let space = Arc::new(EdgeSpace::new(mac));
    let mut rows = Vec::new();
    let mut l2s = Vec::new();
    for &delta in &config.deltas {
        let hmm = rec.time("solve", || solve_macro(space.clone(), cells.clone(), coeffs.clone(), source.clone(), delta))?;
        let fine = rec.time("fine_solve", || {
            solve_direct_fine(&coeffs, delta, &source, domain, config.fine_n, config.resolution_guard)
        })?;
        let (l2, curl) = rec.time("modeling_error", || modeling_error(&fine, &hmm))?;
        rows.push(vec![
            delta.into(),
            config.fine_n.into(),
            n.into(),
            m.into(),
            l2.into(),
            curl.into(),
            fine.residual.into(),
        ]);
        l2s.push(l2);
    }
    let ratios: Vec<f64> = l2s.windows(2).map(|w| w[0] / w[1]).collect();
    rec.result("l2_ratios", json!(ratios));
    rec.csv(
        "modeling.csv",
        &["delta", "fine_n", "n_macro", "n_micro", "l2_error", "curl_error", "fine_residual"],
        &rows,
    )
}

/// Machine-readable error record.
pub fn error_record(e: &Error) -> Value {
    let mut rec = json!({ "error": e.to_string() });
    let mut cur = e;
    loop {
        match cur {
            Error::Config(fields) => {
                rec["kind"] = json!("config");
                rec["fields"] = json!(fields);
                break;
            }
            Error::Stage { stage, source } => {
                rec["stage"] = json!(stage);
                cur = source;
            }
            Error::Cell { element, source } => {
                rec["element"] = json!(element);
                cur = source;
            }
            Error::Resolution { given, required } => {
                rec["kind"] = json!("resolution");
                rec["given"] = json!(given);
                rec["required"] = json!(required);
                break;
            }
            other => {
                rec["kind"] = json!(kind_name(other));
                break;
            }
        }
    }
    rec
}

fn kind_name(e: &Error) -> &'static str {
    match e {
        Error::InvalidMesh(_) | Error::DegenerateTet(_) | Error::OutOfDomain(_) => "mesh",
        Error::UnknownPreset(_) | Error::BoundViolation(_) => "coefficients",
        Error::Singular { .. } | Error::Solver { .. } => "solver",
        Error::TooLarge { .. } => "too_large",
        Error::NotNested(_) => "not_nested",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        _ => "other",
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args(args: Args) -> i32 {
    let out = args.resolve().and_then(|c| run(&c).map(|r| (c, r)));
    match out {
        Ok((_, report)) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            let rec = error_record(&e);
            eprintln!("{}", serde_json::to_string(&rec).unwrap_or_default());
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(exp: Experiment) -> RunConfig {
        RunConfig {
            experiment: Some(exp),
            ..Default::default()
        }
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"macro_n": [2, 4], "delta": 0.5, "preset": "constant"}"#).unwrap();
        let args = Args::parse_from(["maxwell-hmm", "solve", "--config", p.to_str().unwrap(), "--delta", "0.125", "--micro-n", "2,4"]);
        let c = args.resolve().unwrap();
        assert_eq!(c.delta, 0.125);
        assert_eq!(c.preset, "constant");
        assert_eq!(c.levels(), vec![(2, 2), (4, 4)]);
        assert_eq!(c.experiment, Some(Experiment::Solve));
    }

    #[test]
    fn validation_lists_every_field() {
        let c = RunConfig {
            preset: "nope".into(),
            delta: 2.0,
            micro_n: Sizes::One(1),
            ..cfg(Experiment::Solve)
        };
        let Err(Error::Config(fields)) = c.validate() else { panic!() };
        assert_eq!(fields.len(), 3, "{fields:?}");
        assert!(fields.iter().any(|f| f.starts_with("preset:")));
        assert!(fields.iter().any(|f| f.starts_with("delta:")));
        assert!(fields.iter().any(|f| f.starts_with("micro_n:")));
        let rec = error_record(&Error::Config(fields));
        assert_eq!(rec["kind"], "config");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"macro": 3}"#).is_err());
        let c = RunConfig::from_json(r#"{"macro_n": 3}"#).unwrap();
        assert_eq!(c.macro_n, Sizes::One(3));
    }

    #[test]
    fn stage_errors_carry_stage_and_element() {
        let e = Error::Cell {
            element: 7,
            source: Box::new(Error::Solver {
                tag: "t".into(),
                detail: "d".into(),
            }),
        }
        .in_stage("homogenize");
        let r = error_record(&e);
        assert_eq!(r["stage"], "homogenize");
        assert_eq!(r["element"], 7);
        assert_eq!(r["kind"], "solver");
    }

    #[test]
    fn solve_outputs_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |sub: &str| RunConfig {
            macro_n: Sizes::One(2),
            micro_n: Sizes::One(2),
            out: dir.path().join(sub),
            vtk: true,
            ..cfg(Experiment::Solve)
        };
        run(&mk("a")).unwrap();
        let mut b = mk("b");
        b.jobs = Some(1);
        run(&b).unwrap();
        for f in ["solve.csv", "field_n2_m2.vtk"] {
            let x = fs::read(dir.path().join("a").join(f)).unwrap();
            let y = fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
        assert_eq!(m["config"]["delta"], 0.25);
        assert!(m["parameters"]["resolution_guard"].is_number());
    }
}
