//! `matdist` command-line front end.
//!
//! Settings come from an optional config file (`key = value` lines, or a JSON
//! output of an earlier run) and are overridden by flags. Every output embeds
//! the effective configuration, so feeding an output back through `--config`
//! repeats the run.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

use commands::Output;
use config::{CliError, CliResult, Settings};

const GRADE_HELP: &str = "\
SVG output is a 720x720 view. Grade colours: 0 black, 1 blue, 2 orange, 3 green;
grey marks skipped or failed nodes.

Exit codes: 0 pass, 1 runtime error, 2 flagged numerical result,
3 negative verdict, 64 usage error, 65 model parse error.";

#[derive(Parser, Debug)]
#[command(name = "matdist", version, about = "Material distributions, grades of uniformity and homogeneity checks", after_help = GRADE_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fibre, grade and symmetry algebra at one body point.
    Fibre {
        #[command(flatten)]
        common: Common,
        /// Body point, e.g. -0.5,0,0.
        #[arg(long, allow_hyphen_values = true)]
        point: Option<String>,
    },
    /// Grade of uniformity on a regular grid.
    #[command(after_help = GRADE_HELP)]
    GradeMap {
        #[command(flatten)]
        common: Common,
        /// Lower grid corner (one number or three).
        #[arg(long, allow_hyphen_values = true)]
        lo: Option<String>,
        /// Upper grid corner (one number or three).
        #[arg(long, allow_hyphen_values = true)]
        hi: Option<String>,
        /// Nodes per axis (one number or three).
        #[arg(long)]
        n: Option<String>,
        /// Skip nodes outside this radius.
        #[arg(long)]
        ball: Option<String>,
        /// SVG slice, e.g. x3=0.
        #[arg(long, allow_hyphen_values = true)]
        slice: Option<String>,
    },
    /// Trace a leaf of the material foliation.
    #[command(after_help = GRADE_HELP)]
    Leaf {
        #[command(flatten)]
        common: Common,
        /// Seed point.
        #[arg(long, allow_hyphen_values = true)]
        point: Option<String>,
        /// Initial direction hint.
        #[arg(long, allow_hyphen_values = true)]
        dir: Option<String>,
        #[arg(long)]
        steps: Option<String>,
        /// Step length (at most 0.05).
        #[arg(long)]
        h: Option<String>,
    },
    /// Test a chart for homogeneity (exit 3 when it is not homogeneous).
    Homog {
        #[command(flatten)]
        common: Common,
        /// identity, affine, spherical_cap or a .chart file.
        #[arg(long)]
        chart: Option<String>,
        /// Identity chart axis order, e.g. 2,3,1 (chosen automatically if absent).
        #[arg(long)]
        axes: Option<String>,
        /// Affine chart matrix, 9 numbers row-major.
        #[arg(long, allow_hyphen_values = true)]
        affine_matrix: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        affine_offset: Option<String>,
        /// Chart region, e.g. "x1>=0.1,r<=0.8".
        #[arg(long)]
        region: Option<String>,
        /// Number of leading chart coordinates tangent to the leaves.
        #[arg(long)]
        leafwise: Option<String>,
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        /// auto, analytic or traced.
        #[arg(long)]
        oracle: Option<String>,
        #[arg(long)]
        trace_steps: Option<String>,
        #[arg(long)]
        trace_h: Option<String>,
    },
    /// Check whether P is a material isomorphism between two points (exit 3 when not).
    CheckIso {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        from: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        to: Option<String>,
        /// `identity` or 9 numbers row-major.
        #[arg(long = "P", allow_hyphen_values = true)]
        p: Option<String>,
    },
    /// Syntax-check a .mdl or .chart file and print it in canonical form.
    Parse {
        file: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// text or json.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Config file (key = value lines, or JSON output of an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in model: example1, example2, det_cal, identity_cal.
    #[arg(long)]
    model: Option<String>,
    /// Model source file.
    #[arg(long)]
    mdl: Option<String>,
    /// Built-in model parameter, NAME=VALUE (repeatable).
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    tol_rank: Option<String>,
    #[arg(long)]
    tol_residual: Option<String>,
    #[arg(long)]
    fd_step_rel: Option<String>,
    #[arg(long)]
    fd_step_abs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    k_init: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    #[arg(long)]
    det_min: Option<String>,
    #[arg(long)]
    cond_max: Option<String>,
    /// pointwise or germ1.
    #[arg(long)]
    mode: Option<String>,
    /// germ1 cloud radius.
    #[arg(long)]
    rho: Option<String>,
    /// germ1 cloud size.
    #[arg(long)]
    cloud: Option<String>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Write an SVG picture to this path.
    #[arg(long)]
    svg: Option<String>,
    /// Worker threads (0: all cores).
    #[arg(long)]
    threads: Option<String>,
    /// Output path (default stdout).
    #[arg(long)]
    out: Option<String>,
}

impl Common {
    fn settings(self, command: &str) -> CliResult<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::from_file(p, command)?,
            None => Settings::default(),
        };
        let flags = [
            ("model", self.model),
            ("mdl", self.mdl),
            ("tol_rank", self.tol_rank),
            ("tol_residual", self.tol_residual),
            ("fd_step_rel", self.fd_step_rel),
            ("fd_step_abs", self.fd_step_abs),
            ("seed", self.seed),
            ("k_init", self.k_init),
            ("k_max", self.k_max),
            ("det_min", self.det_min),
            ("cond_max", self.cond_max),
            ("mode", self.mode),
            ("rho", self.rho),
            ("cloud", self.cloud),
            ("format", self.format),
            ("svg", self.svg),
            ("threads", self.threads),
            ("out", self.out),
        ];
        for (k, v) in flags {
            s.flag(k, v)?;
        }
        s.param_flags(&self.params)?;
        Ok(s)
    }
}

/// Apply command-specific flags; returns the keys this command accepts.
fn apply(
    s: &mut Settings,
    flags: Vec<(&'static str, Option<String>)>,
) -> CliResult<Vec<&'static str>> {
    let mut keys = Vec::new();
    for (k, v) in flags {
        s.flag(k, v)?;
        keys.push(k);
    }
    Ok(keys)
}

fn dispatch(cli: Cli) -> CliResult<(Output, Settings)> {
    type Runner = fn(&mut Settings) -> CliResult<Output>;
    let (mut s, keys, run): (Settings, Vec<&str>, Runner) = match cli.command {
        Command::Fibre { common, point } => {
            let mut s = common.settings("fibre")?;
            let keys = apply(&mut s, vec![("point", point)])?;
            (s, keys, commands::fibre)
        }
        Command::GradeMap {
            common,
            lo,
            hi,
            n,
            ball,
            slice,
        } => {
            let mut s = common.settings("grade-map")?;
            let keys = apply(
                &mut s,
                vec![
                    ("lo", lo),
                    ("hi", hi),
                    ("n", n),
                    ("ball", ball),
                    ("slice", slice),
                ],
            )?;
            (s, keys, commands::grade_map_cmd)
        }
        Command::Leaf {
            common,
            point,
            dir,
            steps,
            h,
        } => {
            let mut s = common.settings("leaf")?;
            let keys = apply(
                &mut s,
                vec![("point", point), ("dir", dir), ("steps", steps), ("h", h)],
            )?;
            (s, keys, commands::leaf)
        }
        Command::Homog {
            common,
            chart,
            axes,
            affine_matrix,
            affine_offset,
            region,
            leafwise,
            pairs,
            samples,
            oracle,
            trace_steps,
            trace_h,
        } => {
            let mut s = common.settings("homog")?;
            let keys = apply(
                &mut s,
                vec![
                    ("chart", chart),
                    ("axes", axes),
                    ("affine_matrix", affine_matrix),
                    ("affine_offset", affine_offset),
                    ("region", region),
                    ("leafwise", leafwise),
                    ("pairs", pairs),
                    ("samples", samples),
                    ("oracle", oracle),
                    ("trace_steps", trace_steps),
                    ("trace_h", trace_h),
                ],
            )?;
            (s, keys, commands::homog)
        }
        Command::CheckIso {
            common,
            from,
            to,
            p,
        } => {
            let mut s = common.settings("check-iso")?;
            let keys = apply(&mut s, vec![("from", from), ("to", to), ("P", p)])?;
            (s, keys, commands::check_iso)
        }
        Command::Parse {
            file,
            config,
            format,
            out,
        } => {
            let mut s = match &config {
                Some(p) => Settings::from_file(p, "parse")?,
                None => Settings::default(),
            };
            s.flag("format", format)?;
            s.flag("out", out.map(|p| p.display().to_string()))?;
            s.check_keys(&[])?;
            let output = commands::parse(&mut s, file)?;
            return Ok((output, s));
        }
    };
    s.check_keys(&keys)?;
    let threads = s.usize_or("threads", 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let output = pool.install(|| run(&mut s))?;
    Ok((output, s))
}

fn write_file(path: &str, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {path}: {e}")))
}

/// Parse arguments, run one command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli).and_then(|(out, s)| emit(&out, &s).map(|()| out.code)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("matdist: {e}");
            e.code()
        }
    }
}

fn emit(out: &Output, s: &Settings) -> CliResult<()> {
    let mut text = out.main.clone();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match s.unechoed_str("out")? {
        Some(path) => write_file(&path, &text)?,
        None => print!("{text}"),
    }
    if let (Some(svg), Some(path)) = (&out.svg, s.unechoed_str("svg")?) {
        write_file(&path, svg)?;
    }
    Ok(())
}
