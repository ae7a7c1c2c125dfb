//! One function per subcommand. Each reads its settings (recording the echo),
//! runs the analysis and returns the rendered output with an exit code.

use std::path::Path;

use matdist_core::distribution::{
    is_material_isomorphism, material_fibre, FibreMode, SamplerConfig,
};
use matdist_core::foliation::{
    grade_map, leaf_trace, GradeField, GridSpec, NodeStatus, StopReason, TraceConfig,
};
use matdist_core::homogeneity::{
    homogeneity_check, identity_axes_for, region_samples, Chart, HomogConfig, LeafOracle, Region,
};
use matdist_core::output::{envelope, to_json_string};
use matdist_core::response::dsl::{compile_source, pretty, Context};
use matdist_core::response::{builtin, dsl, from_row_major, row_major, ConstitutiveModel};
use matdist_core::Tolerances;
use nalgebra::{Matrix3, Vector3};
use serde_json::{json, Value};

use crate::config::{CliError, CliResult, Settings};

/// Rendered command output.
pub struct Output {
    pub main: String,
    pub svg: Option<String>,
    pub code: i32,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_source(path: &str) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {path}: {e}")))
}

fn stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map_or_else(|| path.to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn load_model(s: &mut Settings) -> CliResult<ConstitutiveModel> {
    let name = s.str_opt("model")?;
    let mdl = s.str_opt("mdl")?;
    let params = s.params()?;
    match (name, mdl) {
        (Some(_), Some(_)) => Err(usage("--model and --mdl are mutually exclusive")),
        (None, None) => Err(usage("one of --model or --mdl is required")),
        (Some(name), None) => Ok(builtin(&name, &params)?),
        (None, Some(path)) => {
            if !params.is_empty() {
                return Err(usage("--param applies to built-in models only"));
            }
            let src = read_source(&path)?;
            dsl::parse_model_named(&src, &stem(&path))
                .map_err(|e| CliError::ModelParse(format!("{path}: {e}")))
        }
    }
}

fn tolerances(s: &mut Settings) -> CliResult<Tolerances> {
    let d = Tolerances::default();
    let tol = Tolerances {
        rank_rel: s.f64_or("tol_rank", d.rank_rel)?,
        fd_step_rel: s.f64_or("fd_step_rel", d.fd_step_rel)?,
        fd_step_abs: s.f64_or("fd_step_abs", d.fd_step_abs)?,
        residual_tol: s.f64_or("tol_residual", d.residual_tol)?,
    };
    tol.validate()?;
    Ok(tol)
}

fn sampler(s: &mut Settings) -> CliResult<SamplerConfig> {
    let d = SamplerConfig::default();
    let cfg = SamplerConfig {
        seed: s.u64_or("seed", d.seed)?,
        k_init: s.usize_or("k_init", d.k_init)?,
        k_max: s.usize_or("k_max", d.k_max)?,
        det_min: s.f64_or("det_min", d.det_min)?,
        cond_max: s.f64_or("cond_max", d.cond_max)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn fibre_mode(s: &mut Settings) -> CliResult<FibreMode> {
    match s.str_or("mode", "pointwise")?.as_str() {
        "pointwise" => Ok(FibreMode::Pointwise),
        "germ1" => {
            let FibreMode::Germ1 { rho, cloud } = FibreMode::germ1() else {
                unreachable!()
            };
            let rho = s.f64_or("rho", rho)?;
            let cloud = s.usize_or("cloud", cloud)?;
            if !(rho > 0.0) || cloud < 6 {
                return Err(usage("germ1 needs rho > 0 and cloud >= 6"));
            }
            Ok(FibreMode::Germ1 { rho, cloud })
        }
        other => Err(usage(format!(
            "mode must be pointwise or germ1, got `{other}`"
        ))),
    }
}

fn format(s: &mut Settings, allowed: &[&str]) -> CliResult<String> {
    let f = s.str_or("format", "json")?;
    if !allowed.contains(&f.as_str()) {
        return Err(usage(format!(
            "format `{f}` is not available here (use {})",
            allowed.join(" or ")
        )));
    }
    Ok(f)
}

/// Config echo for CSV and SVG outputs, which cannot hold a JSON object.
fn header(command: &str, config: &Value) -> String {
    let v = envelope(command, config.clone(), Value::Null);
    serde_json::to_string(&v).expect("plain JSON")
}

fn svg_with_config(svg: String, command: &str, config: &Value) -> String {
    let note = header(command, config).replace("--", "- -");
    svg.replacen("<svg ", &format!("<!-- {note} -->\n<svg "), 1)
}

pub fn fibre(s: &mut Settings) -> CliResult<Output> {
    let model = load_model(s)?;
    let tol = tolerances(s)?;
    let sampler = sampler(s)?;
    let mode = fibre_mode(s)?;
    let x = s.vec3_req("point")?;
    format(s, &["json"])?;
    let r = material_fibre(&model, &x, &sampler, &tol, mode)?;
    let mut result = r.to_json();
    if let Some(pred) = model.leaves() {
        result["leaf"] = json!(pred.describe(&x));
    }
    Ok(Output {
        main: to_json_string(&envelope("fibre", s.echo(), result)),
        svg: None,
        code: if r.validated { 0 } else { 2 },
    })
}

fn axis_index(s: &str) -> CliResult<usize> {
    let t = s.trim().trim_start_matches(['x', 'X']);
    match t.parse::<usize>() {
        Ok(k @ 1..=3) => Ok(k - 1),
        _ => Err(usage(format!(
            "axis must be 1, 2 or 3 (or x1..x3), got `{s}`"
        ))),
    }
}

/// A list setting that falls back to `default`, echoed either way.
fn list_or(s: &mut Settings, key: &str, default: &[f64]) -> CliResult<Vec<f64>> {
    if !s.has(key) {
        let text: Vec<String> = default.iter().map(f64::to_string).collect();
        s.flag(key, Some(text.join(",")))?;
    }
    Ok(s.list_opt(key)?.expect("set above"))
}

fn triple(s: &mut Settings, key: &str, default: f64) -> CliResult<[f64; 3]> {
    match list_or(s, key, &[default])? {
        v if v.len() == 1 => Ok([v[0]; 3]),
        v if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        v => Err(usage(format!(
            "`{key}` needs 1 or 3 numbers, got {}",
            v.len()
        ))),
    }
}

pub fn grade_map_cmd(s: &mut Settings) -> CliResult<Output> {
    let model = load_model(s)?;
    let tol = tolerances(s)?;
    let sampler = sampler(s)?;
    let mode = fibre_mode(s)?;
    let lo = triple(s, "lo", -0.9)?;
    let hi = triple(s, "hi", 0.9)?;
    let n = match list_or(s, "n", &[21.0])? {
        v if v.len() == 1 || v.len() == 3 => {
            let mut out = [0usize; 3];
            for k in 0..3 {
                let x = v[if v.len() == 1 { 0 } else { k }];
                if !(x >= 1.0 && x.fract() == 0.0 && x <= 1e6) {
                    return Err(usage(format!(
                        "`n` entries must be positive integers, got {x}"
                    )));
                }
                out[k] = x as usize;
            }
            out
        }
        v => return Err(usage(format!("`n` needs 1 or 3 numbers, got {}", v.len()))),
    };
    let ball = s.f64_opt("ball")?;
    let spec = GridSpec { lo, hi, n, ball };
    let slice = s.str_or("slice", "x3=0")?;
    let (axis, value) = slice
        .split_once('=')
        .ok_or_else(|| usage(format!("slice must look like x3=0, got `{slice}`")))?;
    let axis = axis_index(axis)?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad slice value in `{slice}`")))?;
    let fmt = format(s, &["json", "csv"])?;
    let want_svg = s.unechoed_str("svg")?.is_some();
    let field: GradeField = grade_map(&model, &spec, mode, &sampler, &tol)?;
    let config = s.echo();
    let main = if fmt == "csv" {
        format!("# {}\n{}", header("grade-map", &config), field.to_csv())
    } else {
        to_json_string(&envelope("grade-map", config.clone(), field.to_json()))
    };
    let svg = if want_svg {
        Some(svg_with_config(
            field.slice_svg(axis, value)?,
            "grade-map",
            &config,
        ))
    } else {
        None
    };
    let flagged = !field.unvalidated.is_empty()
        || field
            .status
            .iter()
            .any(|st| matches!(st, NodeStatus::Failed { .. }));
    Ok(Output {
        main,
        svg,
        code: if flagged { 2 } else { 0 },
    })
}

pub fn leaf(s: &mut Settings) -> CliResult<Output> {
    let model = load_model(s)?;
    let tol = tolerances(s)?;
    let sampler = sampler(s)?;
    let mode = fibre_mode(s)?;
    let seed = s.vec3_req("point")?;
    let dir = s.vec3_or("dir", [0.0, 0.0, 1.0])?;
    let d = TraceConfig::default();
    let cfg = TraceConfig {
        steps: s.usize_or("steps", d.steps)?,
        h: s.f64_or("h", d.h)?,
        mode,
    };
    let fmt = format(s, &["json", "csv"])?;
    let want_svg = s.unechoed_str("svg")?.is_some();
    let trace = leaf_trace(&model, &seed, &dir, &cfg, &sampler, &tol)?;
    let config = s.echo();
    let main = if fmt == "csv" {
        format!("# {}\n{}", header("leaf", &config), trace.to_csv())
    } else {
        let mut result = trace.to_json();
        if let Some(pred) = model.leaves() {
            result["leaf"] = json!(pred.describe(&seed));
        }
        to_json_string(&envelope("leaf", config.clone(), result))
    };
    let svg = if want_svg {
        let axes = view_axes(&trace.points);
        let hw = model
            .domain()
            .bounding_half_width()
            .unwrap_or_else(|| trace.points.iter().map(|p| p.amax()).fold(1.0, f64::max));
        Some(svg_with_config(trace.to_svg(axes, hw), "leaf", &config))
    } else {
        None
    };
    let code = match trace.stop {
        StopReason::Failed { .. } => 2,
        _ => 0,
    };
    Ok(Output { main, svg, code })
}

/// The two axes along which the points spread most, in index order.
fn view_axes(points: &[Vector3<f64>]) -> (usize, usize) {
    let spread = |k: usize| {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p[k]), b.max(p[k]))
            });
        hi - lo
    };
    let mut axes = [0usize, 1, 2];
    axes.sort_by(|&a, &b| {
        spread(b)
            .partial_cmp(&spread(a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let (a, b) = (axes[0].min(axes[1]), axes[0].max(axes[1]));
    (a, b)
}

fn build_chart(
    s: &mut Settings,
    model: &ConstitutiveModel,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> CliResult<Chart> {
    let spec = s.str_req("chart")?;
    let region_flag = s.unechoed_str("region")?;
    let region: Option<Region> = region_flag.as_deref().map(str::parse).transpose()?;
    let mut chart = match spec.as_str() {
        "identity" => Chart::identity([0, 1, 2])?,
        "spherical_cap" => Chart::spherical_cap(),
        "affine" => {
            let a = s.list_opt("affine_matrix")?.ok_or_else(|| {
                usage("affine chart needs --affine-matrix (9 numbers, row-major)")
            })?;
            if a.len() != 9 {
                return Err(usage("affine matrix needs 9 numbers"));
            }
            let b = s.vec3_or("affine_offset", [0.0; 3])?;
            Chart::affine(from_row_major(&a), b)?
        }
        path => {
            let src = read_source(path)?;
            Chart::from_dsl(&src, &stem(path))
                .map_err(|e| CliError::ModelParse(format!("{path}: {e}")))?
        }
    };
    if let Some(r) = region {
        chart = chart.with_region(r);
    }
    s.str_or("region", &chart.region().to_string())?;
    if spec == "identity" {
        let axes = match s.list_opt("axes")? {
            Some(v) => {
                let mut axes = [0usize; 3];
                if v.len() != 3 {
                    return Err(usage("--axes needs three axis numbers"));
                }
                for k in 0..3 {
                    axes[k] = axis_index(&v[k].to_string())?;
                }
                axes
            }
            None => {
                let first = region_samples(model, &chart, 1, sampler.seed)?[0];
                let axes = identity_axes_for(model, &first, sampler, tol)?;
                let shown: Vec<f64> = axes.iter().map(|a| (*a + 1) as f64).collect();
                list_or(s, "axes", &shown)?;
                axes
            }
        };
        chart = Chart::identity(axes)?.with_region(chart.region().clone());
    }
    let p = s.usize_or("leafwise", 0)?;
    Ok(chart.with_leafwise(p)?)
}

pub fn homog(s: &mut Settings) -> CliResult<Output> {
    let model = load_model(s)?;
    let tol = tolerances(s)?;
    let sampler = sampler(s)?;
    let chart = build_chart(s, &model, &sampler, &tol)?;
    let d = HomogConfig::default();
    let oracle: LeafOracle = s.str_or("oracle", "auto")?.parse()?;
    let cfg = HomogConfig {
        n_pairs: s.usize_or("pairs", d.n_pairs)?,
        n_samples: s.usize_or("samples", d.n_samples)?,
        oracle,
        trace_steps: s.usize_or("trace_steps", d.trace_steps)?,
        trace_h: s.f64_or("trace_h", d.trace_h)?,
    };
    format(s, &["json"])?;
    let report = homogeneity_check(&model, &chart, &cfg, &sampler, &tol)?;
    for w in &report.warnings {
        eprintln!("matdist: warning: {w}");
    }
    Ok(Output {
        main: to_json_string(&envelope("homog", s.echo(), report.to_json())),
        svg: None,
        code: if report.homogeneous { 0 } else { 3 },
    })
}

pub fn check_iso(s: &mut Settings) -> CliResult<Output> {
    let model = load_model(s)?;
    let tol = tolerances(s)?;
    let sampler = sampler(s)?;
    let from = s.vec3_req("from")?;
    let to = s.vec3_req("to")?;
    let p: Matrix3<f64> = match s.unechoed_str("P")?.as_deref() {
        Some("identity") | None => {
            s.str_or("P", "identity")?;
            Matrix3::identity()
        }
        Some(_) => {
            let v = s.list_opt("P")?.expect("present");
            if v.len() != 9 {
                return Err(usage("--P needs `identity` or 9 numbers (row-major)"));
            }
            from_row_major(&v)
        }
    };
    format(s, &["json"])?;
    let iso = is_material_isomorphism(&model, &from, &to, &p, &sampler, &tol)?;
    let result = json!({
        "from": [from[0], from[1], from[2]],
        "to": [to[0], to[1], to[2]],
        "P": row_major(&p),
        "verdict": iso.verdict,
        "residual": iso.residual,
        "threshold": tol.residual_tol,
        "witness_F": row_major(&iso.witness),
        "samples": iso.samples,
    });
    Ok(Output {
        main: to_json_string(&envelope("check-iso", s.echo(), result)),
        svg: None,
        code: if iso.verdict { 0 } else { 3 },
    })
}

pub fn parse(s: &mut Settings, file: Option<String>) -> CliResult<Output> {
    let path = match (file, s.str_opt("mdl")?) {
        (Some(p), _) | (None, Some(p)) => p,
        (None, None) => return Err(usage("parse needs a source file")),
    };
    let fmt = s.str_or("format", "text")?;
    if fmt != "text" && fmt != "json" {
        return Err(usage("parse prints text or json"));
    }
    let src = read_source(&path)?;
    let kind = if path.ends_with(".chart") {
        "chart"
    } else {
        "model"
    };
    let ctx = if kind == "chart" {
        Context::Chart
    } else {
        Context::Model
    };
    let parse_err = |e: matdist_core::Error| CliError::ModelParse(format!("{path}: {e}"));
    compile_source(&src, ctx).map_err(parse_err)?;
    let canonical = pretty(&src).map_err(parse_err)?;
    let main = if fmt == "json" {
        to_json_string(&envelope(
            "parse",
            s.echo(),
            json!({"file": path, "kind": kind, "valid": true, "canonical": canonical}),
        ))
    } else {
        canonical
    };
    Ok(Output {
        main,
        svg: None,
        code: 0,
    })
}
