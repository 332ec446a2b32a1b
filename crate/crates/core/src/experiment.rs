//! Registration experiments on synthetic pairs, written out as CSV.
//!
//! A spec file is plain text with one `key = value` per line. Blank lines and
//! lines starting with `#` are ignored, and list values are comma-separated.
//!
//! | key         | meaning                                              | default          |
//! |-------------|------------------------------------------------------|------------------|
//! | `kind`      | `convergence`, `alpha_sweep`, `size_sweep`, `noise_sweep` | required    |
//! | `size`      | image side for every kind except `size_sweep`        | `50`             |
//! | `sizes`     | image sides for `size_sweep`                         | `50,75,100`      |
//! | `square`    | square side in `I₀`                                  | `20`             |
//! | `rect`      | `WxH` rectangle in `I₁`; omit for a translated square | none            |
//! | `shift`     | `dx` or `dx,dy` in pixels                            | `10`             |
//! | `alpha`     | regularity weight for every kind except `alpha_sweep` | `5`             |
//! | `alphas`    | weights for `alpha_sweep`                            | `1,2,4,8,16`     |
//! | `noise`     | salt-and-pepper levels for `noise_sweep`             | `0,0.1,0.2,0.3`  |
//! | `seed`      | noise seed (`I₀` uses `seed`, `I₁` uses `seed + 1`)  | `0`              |
//! | `schemes`   | subset of `agd, gd, agd_nodissip, epdiff, wave`      | `agd,gd`         |
//! | `tol`, `max_iters`, `safety`, `p`, `c`, `eps_visc`, `t0` | solver settings | solver defaults |
//! | `gd_budget` | `converge`, or `agd` to stop GD after AGD's step count | `converge`     |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolution::{RunOutcome, Runner, Scheme, SolverConfig};
use crate::field::{warp, GridSpec, MapField, ScalarField};
use crate::io::{save_flow, save_pgm};
use crate::metrics::{endpoint_error, recon_error};
use crate::potential::{HsPotential, Potential};
use crate::synth::{add_salt_pepper, gen_rect_pair, gen_square_pair, SyntheticPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Convergence,
    AlphaSweep,
    SizeSweep,
    NoiseSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Convergence => "convergence",
            Self::AlphaSweep => "alpha_sweep",
            Self::SizeSweep => "size_sweep",
            Self::NoiseSweep => "noise_sweep",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Self::Convergence, Self::AlphaSweep, Self::SizeSweep, Self::NoiseSweep]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown kind '{s}'"))
    }
}

/// How long gradient descent is allowed to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GdBudget {
    /// Until convergence or `max_iters`.
    Converge,
    /// Exactly as many steps as the AGD run of the same configuration took.
    MatchAgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub size: usize,
    pub sizes: Vec<usize>,
    pub square: usize,
    pub rect: Option<(usize, usize)>,
    pub shift: (isize, isize),
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub noise: Vec<f64>,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    /// Template for every run; `scheme` and `alpha` are overwritten per run.
    pub solver: SolverConfig,
    pub gd_budget: GdBudget,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            size: 50,
            sizes: vec![50, 75, 100],
            square: 20,
            rect: None,
            shift: (10, 0),
            alpha: 5.0,
            alphas: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            noise: vec![0.0, 0.1, 0.2, 0.3],
            seed: 0,
            schemes: vec![Scheme::Agd, Scheme::Gd],
            solver: SolverConfig::new(Scheme::Agd, 5.0),
            gd_budget: GdBudget::Converge,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Spec { line: n + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "kind" {
                kind = Some(v.parse::<ExperimentKind>().map_err(err)?);
            } else {
                pairs.push((n + 1, k.to_owned(), v.to_owned()));
            }
        }
        let kind = kind.ok_or(Error::Spec {
            line: 0,
            msg: "missing 'kind'".into(),
        })?;
        let mut spec = Self::new(kind);
        for (line, k, v) in pairs {
            spec.set(&k, &v).map_err(|msg| Error::Spec { line, msg })?;
        }
        spec.solver.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let s = &mut self.solver;
        match key {
            "size" => self.size = num(key, v)?,
            "sizes" => self.sizes = list(key, v)?,
            "square" => self.square = num(key, v)?,
            "rect" => {
                let (w, h) = v
                    .split_once(['x', 'X'])
                    .ok_or_else(|| format!("rect must be WxH, got '{v}'"))?;
                self.rect = Some((num(key, w)?, num(key, h)?));
            }
            "shift" => {
                let parts: Vec<isize> = list(key, v)?;
                self.shift = match parts[..] {
                    [dx] => (dx, 0),
                    [dx, dy] => (dx, dy),
                    _ => return Err(format!("shift takes one or two values, got '{v}'")),
                };
            }
            "alpha" => self.alpha = num(key, v)?,
            "alphas" => self.alphas = list(key, v)?,
            "noise" => self.noise = list(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "schemes" => self.schemes = list(key, v)?,
            "tol" => s.tol = num(key, v)?,
            "max_iters" => s.max_iters = num(key, v)?,
            "safety" => s.safety = num(key, v)?,
            "p" => s.p = num(key, v)?,
            "c" | "C" => s.c = num(key, v)?,
            "eps_visc" => s.eps_visc = num(key, v)?,
            "t0" => s.t0 = num(key, v)?,
            "gd_budget" => {
                self.gd_budget = match v {
                    "converge" => GdBudget::Converge,
                    "agd" => GdBudget::MatchAgd,
                    _ => return Err(format!("gd_budget must be 'converge' or 'agd', got '{v}'")),
                }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// `key = value` lines that reproduce this spec.
    pub fn to_text(&self) -> String {
        let join = |xs: Vec<String>| xs.join(",");
        let s = &self.solver;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("kind", self.kind.name().into());
        kv("size", self.size.to_string());
        kv("sizes", join(self.sizes.iter().map(|x| x.to_string()).collect()));
        kv("square", self.square.to_string());
        if let Some((w, h)) = self.rect {
            kv("rect", format!("{w}x{h}"));
        }
        kv("shift", format!("{},{}", self.shift.0, self.shift.1));
        kv("alpha", self.alpha.to_string());
        kv("alphas", join(self.alphas.iter().map(|x| x.to_string()).collect()));
        kv("noise", join(self.noise.iter().map(|x| x.to_string()).collect()));
        kv("seed", self.seed.to_string());
        kv("schemes", join(self.schemes.iter().map(|x| x.to_string()).collect()));
        kv("tol", s.tol.to_string());
        kv("max_iters", s.max_iters.to_string());
        kv("safety", s.safety.to_string());
        kv("p", s.p.to_string());
        kv("c", s.c.to_string());
        kv("eps_visc", s.eps_visc.to_string());
        kv("t0", s.t0.to_string());
        kv(
            "gd_budget",
            match self.gd_budget {
                GdBudget::Converge => "converge".into(),
                GdBudget::MatchAgd => "agd".into(),
            },
        );
        out
    }

    /// The configurations swept by this spec, in output order.
    pub fn configs(&self) -> Vec<RunConfig> {
        let base = RunConfig {
            size: self.size,
            alpha: self.alpha,
            noise: 0.0,
        };
        match self.kind {
            ExperimentKind::Convergence => vec![base],
            ExperimentKind::AlphaSweep => self.alphas.iter().map(|&alpha| RunConfig { alpha, ..base }).collect(),
            ExperimentKind::SizeSweep => self.sizes.iter().map(|&size| RunConfig { size, ..base }).collect(),
            ExperimentKind::NoiseSweep => self.noise.iter().map(|&noise| RunConfig { noise, ..base }).collect(),
        }
    }

    /// Images (noise applied) and the clean pair for a configuration.
    pub fn images(&self, rc: &RunConfig) -> Result<(ScalarField, ScalarField, SyntheticPair)> {
        let grid = GridSpec::square(rc.size)?;
        let pair = match self.rect {
            Some((w, h)) => gen_rect_pair(grid, self.square, w, h, self.shift)?,
            None => gen_square_pair(grid, self.square, self.shift)?,
        };
        let i0 = add_salt_pepper(&pair.i0, rc.noise, self.seed)?;
        let i1 = add_salt_pepper(&pair.i1, rc.noise, self.seed.wrapping_add(1))?;
        Ok((i0, i1, pair))
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.trim()
        .parse()
        .map_err(|_| format!("bad value '{v}' for '{key}'"))
}

fn list<T: FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
    let xs = v
        .split(',')
        .map(|x| num(key, x))
        .collect::<std::result::Result<Vec<T>, _>>()?;
    if xs.is_empty() {
        return Err(format!("'{key}' needs at least one value"));
    }
    Ok(xs)
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub size: usize,
    pub alpha: f64,
    pub noise: f64,
}

impl RunConfig {
    fn tag(&self) -> String {
        format!("n{}_a{}_s{}", self.size, self.alpha, self.noise)
    }
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub config: RunConfig,
    /// `ok`, `max_iters` or `aborted: <reason>`.
    pub status: String,
    pub iterations: usize,
    pub converged: bool,
    pub initial_potential: f64,
    pub final_potential: f64,
    pub initial_data_term: f64,
    pub data_term: f64,
    pub recon_l2: f64,
    pub endpoint_error: Option<f64>,
    /// Potential at every step, as written to the trace file.
    pub potentials: Vec<f64>,
}

impl SummaryRow {
    /// Iterations to convergence, when the run converged.
    pub fn iters_to_converge(&self) -> Option<usize> {
        self.converged.then_some(self.iterations)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

impl ExperimentReport {
    pub fn row(&self, scheme: Scheme, pick: impl Fn(&RunConfig) -> bool) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.scheme == scheme && pick(&r.config))
    }
}

/// Run every configuration and scheme, writing traces, warped images, flows
/// and `summary.csv` into `out_dir`.
///
/// Failed runs are reported in the status column instead of stopping the sweep.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    spec.solver.validate()?;
    let header = spec
        .to_text()
        .lines()
        .map(|l| format!("# {l}\n"))
        .collect::<String>();

    let configs = spec.configs();
    let per_config: Vec<Result<Vec<SummaryRow>>> = configs
        .par_iter()
        .map(|rc| run_config(spec, rc, out_dir, &header))
        .collect();
    let mut rows = Vec::new();
    for r in per_config {
        rows.extend(r?);
    }

    let mut csv = header.clone();
    csv.push_str(
        "scheme,size,square,shift_x,shift_y,alpha,noise,status,iterations,iters_to_converge,\
         final_potential,data_term,recon_l2,endpoint_error\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{:e},{:e},{:e},{}",
            r.scheme,
            r.config.size,
            spec.square,
            spec.shift.0,
            spec.shift.1,
            r.config.alpha,
            r.config.noise,
            r.status,
            r.iterations,
            r.iters_to_converge().map(|n| n.to_string()).unwrap_or_default(),
            r.final_potential,
            r.data_term,
            r.recon_l2,
            r.endpoint_error.map(|e| format!("{e:e}")).unwrap_or_default(),
        );
    }
    let summary_path = out_dir.join("summary.csv");
    fs::write(&summary_path, csv).map_err(|e| Error::io(&summary_path, e))?;
    Ok(ExperimentReport { rows, summary_path })
}

fn run_config(spec: &ExperimentSpec, rc: &RunConfig, out_dir: &Path, header: &str) -> Result<Vec<SummaryRow>> {
    let (i0, i1, pair) = spec.images(rc)?;
    let pot = HsPotential::new(i0.clone(), i1.clone(), rc.alpha)?;
    let initial_data_term = recon_error(&i0, &i1, &MapField::identity(*i0.grid()))?.data_term;

    // AGD goes first so GD can borrow its step count.
    let mut order = spec.schemes.clone();
    order.sort_by_key(|s| *s != Scheme::Agd);
    let mut agd_iters = None;
    let mut rows = Vec::new();
    for scheme in order {
        let mut cfg = spec.solver.clone();
        cfg.scheme = scheme;
        cfg.alpha = rc.alpha;
        let runner = Runner::new(&pot, &cfg);
        let result = match (scheme, spec.gd_budget, agd_iters) {
            (Scheme::Gd, GdBudget::MatchAgd, Some(n)) => runner.run_steps(n),
            _ => runner.run_to_end(),
        };
        let (outcome, status) = match result {
            Ok(o) => {
                let status = if o.converged { "ok" } else { "max_iters" };
                (o, status.to_owned())
            }
            Err(e) => {
                let reason = e.error.to_string();
                let state = *e.last_state;
                let o = RunOutcome {
                    phi: state.phi.clone(),
                    psi: state.psi.clone(),
                    state,
                    trace: e.trace,
                    converged: false,
                };
                (o, format!("aborted: {reason}").replace(',', ";"))
            }
        };
        if scheme == Scheme::Agd {
            agd_iters = Some(outcome.iterations());
        }
        let name = format!("{scheme}_{}", rc.tag());
        write_trace(&outcome, header, &out_dir.join(format!("trace_{name}.csv")))?;
        save_pgm(&warp(&i1, &outcome.phi)?, out_dir.join(format!("warped_{name}.pgm")))?;
        save_flow(&outcome.phi, out_dir.join(format!("flow_{name}.dflo")))?;
        let rec = recon_error(&i0, &i1, &outcome.phi)?;
        let epe = match &pair.gt_flow {
            Some(gt) => Some(endpoint_error(&outcome.phi, gt, None)?),
            None => None,
        };
        rows.push(SummaryRow {
            scheme,
            config: *rc,
            status,
            iterations: outcome.iterations(),
            converged: outcome.converged,
            initial_potential: outcome.trace.first().map_or(0.0, |t| t.potential),
            final_potential: pot.value(&outcome.phi),
            initial_data_term,
            data_term: rec.data_term,
            recon_l2: rec.l2,
            endpoint_error: epe,
            potentials: outcome.trace.iter().map(|t| t.potential).collect(),
        });
    }
    // Report in the order the schemes were listed.
    rows.sort_by_key(|r| spec.schemes.iter().position(|s| *s == r.scheme));
    Ok(rows)
}

/// Trace CSV with the spec as a `#` comment header.
pub fn write_trace(outcome: &RunOutcome, header: &str, path: &Path) -> Result<()> {
    let mut csv = String::with_capacity(64 * outcome.trace.len() + header.len());
    csv.push_str(header);
    csv.push_str("iter,t,potential,kinetic,total,dt,map_increment\n");
    for r in &outcome.trace {
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.iter, r.t, r.potential, r.kinetic, r.total, r.dt, r.map_increment
        );
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "# demo\nkind = alpha_sweep\nsquare = 16\nshift = 7\nalphas = 1, 2,4\nschemes = agd,gd,wave\nrect = 20x14\nmax_iters = 77\ngd_budget = agd\n";
        let spec = ExperimentSpec::parse(text).unwrap();
        assert_eq!(spec.kind, ExperimentKind::AlphaSweep);
        assert_eq!(spec.shift, (7, 0));
        assert_eq!(spec.alphas, vec![1.0, 2.0, 4.0]);
        assert_eq!(spec.schemes, vec![Scheme::Agd, Scheme::Gd, Scheme::Wave]);
        assert_eq!(spec.rect, Some((20, 14)));
        assert_eq!(spec.solver.max_iters, 77);
        assert_eq!(spec.gd_budget, GdBudget::MatchAgd);
        assert_eq!(ExperimentSpec::parse(&spec.to_text()).unwrap(), spec);
        assert_eq!(spec.configs().len(), 3);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = ExperimentSpec::parse("kind = convergence\n\nalpha = lots\n").unwrap_err();
        assert!(matches!(e, Error::Spec { line: 3, .. }), "{e}");
        let e = ExperimentSpec::parse("kind = convergence\nfrobnicate = 1\n").unwrap_err();
        assert!(matches!(e, Error::Spec { line: 2, .. }));
        assert!(ExperimentSpec::parse("alpha = 1\n").is_err());
        assert!(ExperimentSpec::parse("kind = convergence\nsafety = 2\n").is_err());
    }
}
