//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Built with `harness = false` so the report is printed even when every
//! criterion passes.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use matdist_core::distribution::{material_fibre, FSampler, FibreMode, FibreResult, SamplerConfig};
use matdist_core::foliation::{grade_map, leaf_trace, GridSpec, StopReason, TraceConfig};
use matdist_core::homogeneity::{
    homogeneity_check, identity_axes_for, region_samples, Chart, HomogConfig, TestStatus,
};
use matdist_core::numkit::max_principal_angle;
use matdist_core::response::dsl::{compile_source, parse_model_named, pretty, Context};
use matdist_core::response::{builtin, BodyPoint, ConstitutiveModel};
use matdist_core::Tolerances;
use nalgebra::Vector3;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn model(name: &str) -> ConstitutiveModel {
    builtin(name, &BTreeMap::new()).unwrap()
}

fn example2() -> ConstitutiveModel {
    builtin("example2", &BTreeMap::from([("r".to_string(), 1.0)])).unwrap()
}

fn fibre(
    m: &ConstitutiveModel,
    x: &BodyPoint,
    seed: u64,
    mode: FibreMode,
) -> Result<FibreResult, String> {
    material_fibre(
        m,
        x,
        &SamplerConfig::with_seed(seed),
        &Tolerances::default(),
        mode,
    )
    .map_err(|e| format!("fibre at {x:?}: {e}"))
}

fn v(x: f64, y: f64, z: f64) -> BodyPoint {
    Vector3::new(x, y, z)
}

fn cube_grid(ball: Option<f64>) -> GridSpec {
    GridSpec {
        ball,
        ..GridSpec::cube(-0.9, 0.9, 21)
    }
}

fn grade_field_example1() -> Outcome {
    let m = model("example1");
    let spec = cube_grid(None);
    let field = grade_map(
        &m,
        &spec,
        FibreMode::Pointwise,
        &SamplerConfig::default(),
        &Tolerances::default(),
    )
    .map_err(|e| e.to_string())?;
    let (mut left, mut right, mut excluded) = (0, 0, 0);
    for idx in 0..spec.len() {
        let x1 = spec.point(idx)[0];
        let g = field.grades[idx];
        if x1 <= 0.0 {
            ensure!(g == 3, "grade {g} at X1 = {x1}");
            left += 1;
        } else if x1 >= 0.1 {
            ensure!(g == 2, "grade {g} at X1 = {x1}");
            right += 1;
        } else {
            excluded += 1;
        }
    }
    Ok(format!(
        "{left} nodes grade 3, {right} nodes grade 2, {excluded} excluded"
    ))
}

fn grade_field_example2() -> Outcome {
    let m = example2();
    let spec = cube_grid(Some(0.9));
    let field = grade_map(
        &m,
        &spec,
        FibreMode::Pointwise,
        &SamplerConfig::default(),
        &Tolerances::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut checked = 0;
    for idx in 0..spec.len() {
        let x = spec.point(idx);
        if x.norm() <= 0.9 && x.norm() >= 0.05 {
            ensure!(
                field.grades[idx] == 2,
                "grade {} at {x:?}",
                field.grades[idx]
            );
            checked += 1;
        }
    }
    let origin = fibre(&m, &v(0.0, 0.0, 0.0), 0, FibreMode::germ1())?;
    ensure!(
        origin.grade == 0,
        "germ1 grade {} at the origin",
        origin.grade
    );
    Ok(format!("{checked} nodes grade 2; germ1 grade 0 at origin"))
}

fn trace(
    m: &ConstitutiveModel,
    seed: BodyPoint,
    hint: BodyPoint,
) -> Result<Vec<BodyPoint>, String> {
    let cfg = TraceConfig {
        steps: 200,
        h: 0.01,
        mode: FibreMode::Pointwise,
    };
    let t = leaf_trace(
        m,
        &seed,
        &hint,
        &cfg,
        &SamplerConfig::default(),
        &Tolerances::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        !matches!(t.stop, StopReason::Failed { .. }),
        "trace failed: {:?}",
        t.stop
    );
    Ok(t.points)
}

fn leaf_conformance() -> Outcome {
    let start = Instant::now();
    let x0 = v(0.3, 0.2, 0.1);
    let pts = trace(&example2(), x0, v(0.0, 0.0, 1.0))?;
    let sphere = pts
        .iter()
        .map(|p| (p.norm() - x0.norm()).abs())
        .fold(0.0, f64::max);
    ensure!(sphere <= 1e-4, "sphere drift {sphere:e}");
    let t2 = start.elapsed();
    ensure!(t2 <= Duration::from_secs(10), "example2 trace took {t2:?}");

    let start = Instant::now();
    let pts = trace(&model("example1"), v(0.5, 0.0, 0.0), v(0.0, 0.0, 1.0))?;
    let plane = pts.iter().map(|p| (p[0] - 0.5).abs()).fold(0.0, f64::max);
    ensure!(plane <= 1e-6, "plane drift {plane:e}");
    let t1 = start.elapsed();
    ensure!(t1 <= Duration::from_secs(10), "example1 trace took {t1:?}");
    Ok(format!(
        "sphere drift {sphere:.2e}, plane drift {plane:.2e}"
    ))
}

fn homogeneity_verdicts() -> Outcome {
    let (sampler, tol) = (SamplerConfig::default(), Tolerances::default());
    let cfg = HomogConfig::default();

    let start = Instant::now();
    let m = model("example1");
    let region = "x1>=0.1".parse().map_err(|e| format!("{e}"))?;
    let probe = Chart::identity([0, 1, 2]).unwrap().with_region(region);
    let first = region_samples(&m, &probe, 1, sampler.seed).map_err(|e| e.to_string())?[0];
    let axes = identity_axes_for(&m, &first, &sampler, &tol).map_err(|e| e.to_string())?;
    let chart = Chart::identity(axes)
        .unwrap()
        .with_region(probe.region().clone())
        .with_leafwise(2)
        .unwrap();
    let r = homogeneity_check(&m, &chart, &cfg, &sampler, &tol).map_err(|e| e.to_string())?;
    ensure!(r.homogeneous, "identity chart rejected");
    let mut worst = 0.0f64;
    for (name, t) in [
        ("foliated", &r.foliated),
        ("translation", &r.translation),
        ("chart_invariance", &r.chart_invariance),
    ] {
        ensure!(
            t.status == TestStatus::Passed,
            "{name} sub-test {:?}",
            t.status
        );
        ensure!(t.worst <= 1e-7, "{name} worst {:e}", t.worst);
        worst = worst.max(t.worst);
    }
    let t1 = start.elapsed();
    ensure!(t1 <= Duration::from_secs(30), "identity check took {t1:?}");

    let start = Instant::now();
    let chart = Chart::spherical_cap().with_leafwise(2).unwrap();
    let r =
        homogeneity_check(&example2(), &chart, &cfg, &sampler, &tol).map_err(|e| e.to_string())?;
    ensure!(!r.homogeneous, "spherical cap accepted");
    ensure!(
        r.translation.status == TestStatus::Failed,
        "translation sub-test {:?}",
        r.translation.status
    );
    ensure!(r.translation.witness.is_some(), "no witness recorded");
    let t2 = start.elapsed();
    ensure!(t2 <= Duration::from_secs(30), "spherical check took {t2:?}");
    Ok(format!(
        "identity worst {worst:.2e}; spherical cap translation residual {:.3e}",
        r.translation.worst
    ))
}

fn calibration_oracles() -> Outcome {
    let m = model("det_cal");
    let x = v(0.0, 0.0, 0.0);
    let r = fibre(&m, &x, 0, FibreMode::Pointwise)?;
    ensure!(r.grade == 3, "det_cal grade {}", r.grade);
    ensure!(r.sym_dim() == 8, "det_cal sym_dim {}", r.sym_dim());
    let fs = FSampler::new(&SamplerConfig::with_seed(1), 17)
        .draw_n(16)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for dp in &r.sym_basis {
        ensure!(dp.trace().abs() <= 1e-9, "trace {:e}", dp.trace());
        for t in [0.1, 1.0] {
            let g = (dp * t).exp();
            for f in &fs {
                let a = m.evaluate(&x, &(f * g)).map_err(|e| e.to_string())?;
                let b = m.evaluate(&x, f).map_err(|e| e.to_string())?;
                worst = worst.max((a - b).amax());
            }
        }
    }
    ensure!(worst <= 1e-12, "exp invariance error {worst:e}");
    let id = fibre(&model("identity_cal"), &x, 0, FibreMode::Pointwise)?;
    ensure!(id.sym_dim() == 0, "identity_cal sym_dim {}", id.sym_dim());
    Ok(format!(
        "sym_dim 8, exp invariance {worst:.1e}; identity_cal sym_dim 0"
    ))
}

/// Deterministic points of each example, clear of the excluded bands.
fn random_points(name: &str, n: usize, seed: u64) -> Vec<BodyPoint> {
    let mut rng = FSampler::new(&SamplerConfig::with_seed(seed), 0xACCE);
    let mut out = Vec::new();
    while out.len() < n {
        let f = rng.draw().unwrap();
        let x = f.column(0).map(|c| c.tanh() * 0.9);
        let keep = match name {
            "example1" => x[0] <= 0.0 || x[0] >= 0.1,
            _ => x.norm() >= 0.05 && x.norm() <= 0.9,
        };
        if keep {
            out.push(x);
        }
    }
    out
}

fn property_suites() -> Outcome {
    let acceptance_points: Vec<(ConstitutiveModel, BodyPoint)> = vec![
        (model("example1"), v(-0.5, 0.0, 0.0)),
        (model("example1"), v(0.1, 0.0, 0.0)),
        (model("example1"), v(0.5, 0.0, 0.0)),
        (example2(), v(0.3, 0.2, 0.1)),
        (example2(), v(0.05, 0.0, 0.0)),
        (model("det_cal"), v(0.0, 0.0, 0.0)),
        (model("identity_cal"), v(0.0, 0.0, 0.0)),
    ];
    let mut max_angle = 0.0f64;
    let mut max_residual = 0.0f64;
    for (m, x) in &acceptance_points {
        let base = fibre(m, x, 0, FibreMode::Pointwise)?;
        for factor in [1e-3, 1e3] {
            let s = fibre(&m.scaled(factor).unwrap(), x, 0, FibreMode::Pointwise)?;
            ensure!(
                s.fibre_dim() == base.fibre_dim(),
                "scaling changed the fibre at {x:?}"
            );
            max_angle = max_angle.max(max_principal_angle(&base.fibre_basis, &s.fibre_basis));
        }
        for seed in 0..5 {
            let r = fibre(m, x, seed, FibreMode::Pointwise)?;
            ensure!(
                (r.grade, r.fibre_dim(), r.sym_dim())
                    == (base.grade, base.fibre_dim(), base.sym_dim()),
                "seed {seed} changed dimensions at {x:?}"
            );
            max_residual = max_residual.max(r.residual);
        }
    }
    ensure!(max_angle <= 1e-8, "scaling angle {max_angle:e}");
    ensure!(max_residual <= 1e-7, "held-out residual {max_residual:e}");

    for name in ["example1", "example2"] {
        let m = if name == "example2" {
            example2()
        } else {
            model(name)
        };
        for x in random_points(name, 50, 9) {
            let p = fibre(&m, &x, 0, FibreMode::Pointwise)?;
            let g = fibre(&m, &x, 0, FibreMode::germ1())?;
            ensure!(
                g.grade <= p.grade,
                "germ1 {} > pointwise {} at {x:?}",
                g.grade,
                p.grade
            );
        }
    }

    let m = example2();
    let chart = Chart::spherical_cap();
    let pts = region_samples(&m, &chart, 300, 21).map_err(|e| e.to_string())?;
    let mut chain = 0.0f64;
    for t in pts.chunks(3) {
        let jet = |a: &BodyPoint, b: &BodyPoint| chart.translation_jet(a, b).unwrap();
        let xz = jet(&t[0], &t[2]);
        let err = (jet(&t[1], &t[2]) * jet(&t[0], &t[1]) - xz).amax() / xz.amax().max(1.0);
        chain = chain.max(err);
    }
    ensure!(chain <= 1e-9, "chain rule error {chain:e}");
    Ok(format!(
        "angle {max_angle:.1e}, residual {max_residual:.1e}, chain rule {chain:.1e}"
    ))
}

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn dsl_equivalence() -> Outcome {
    let src =
        std::fs::read_to_string(models_dir().join("example1.mdl")).map_err(|e| e.to_string())?;
    let dsl = parse_model_named(&src, "example1").map_err(|e| e.to_string())?;
    let native = model("example1");
    let mut rng = FSampler::new(&SamplerConfig::with_seed(2), 0xD51);
    let mut worst = 0.0f64;
    for x in random_points("example1", 100, 5) {
        let f = rng.draw().map_err(|e| e.to_string())?;
        let a = dsl.evaluate(&x, &f).map_err(|e| e.to_string())?;
        let b = native.evaluate(&x, &f).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).amax());
    }
    ensure!(worst <= 1e-12, "mdl vs built-in {worst:e}");

    let mut files = 0;
    for entry in std::fs::read_dir(models_dir()).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let ctx = match path.extension().and_then(|e| e.to_str()) {
            Some("mdl") => Context::Model,
            Some("chart") => Context::Chart,
            _ => continue,
        };
        let src = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let once = pretty(&src).map_err(|e| format!("{}: {e}", path.display()))?;
        compile_source(&once, ctx).map_err(|e| format!("{}: {e}", path.display()))?;
        let twice = pretty(&once).map_err(|e| e.to_string())?;
        ensure!(once == twice, "{} is not a fixed point", path.display());
        files += 1;
    }
    Ok(format!(
        "max difference {worst:.1e}; {files} sources round-trip"
    ))
}

fn run_cli(args: &[&str], out: &Path) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_matdist"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    status.code().ok_or_else(|| "killed by signal".to_string())
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: &[&[&str]] = &[
        &[
            "fibre",
            "--model",
            "example1",
            "--point",
            "0.5,0.1,0",
            "--mode",
            "germ1",
        ],
        &[
            "grade-map",
            "--model",
            "example2",
            "--n",
            "7",
            "--ball",
            "0.9",
        ],
        &[
            "leaf",
            "--model",
            "example2",
            "--point",
            "0.3,0.2,0.1",
            "--steps",
            "50",
        ],
        &[
            "homog",
            "--model",
            "example2",
            "--chart",
            "spherical_cap",
            "--leafwise",
            "2",
        ],
        &[
            "homog",
            "--model",
            "example1",
            "--chart",
            "identity",
            "--region",
            "x1>=0.1",
            "--leafwise",
            "2",
        ],
        &[
            "check-iso",
            "--model",
            "example1",
            "--from",
            "0.5,0,0",
            "--to",
            "0.7,0,0",
            "--P",
            "identity",
        ],
    ];
    for (k, args) in runs.iter().enumerate() {
        let first = dir.path().join(format!("{k}-a.json"));
        let second = dir.path().join(format!("{k}-b.json"));
        let mut full = args.to_vec();
        full.extend(["--threads", "2", "--seed", "5"]);
        let c1 = run_cli(&full, &first)?;
        let c2 = run_cli(&[args[0], "--config", first.to_str().unwrap()], &second)?;
        ensure!(c1 == c2, "{}: exit {c1} then {c2}", args[0]);
        let a = std::fs::read(&first).map_err(|e| e.to_string())?;
        let b = std::fs::read(&second).map_err(|e| e.to_string())?;
        ensure!(a == b, "{}: re-run differs", args.join(" "));
    }
    Ok(format!("{} runs byte-identical", runs.len()))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "example1 grade field",
            limit: Duration::from_secs(60),
            check: grade_field_example1,
        },
        Criterion {
            id: 2,
            name: "example2 grade field",
            limit: Duration::from_secs(120),
            check: grade_field_example2,
        },
        Criterion {
            id: 3,
            name: "leaf conformance",
            limit: Duration::from_secs(20),
            check: leaf_conformance,
        },
        Criterion {
            id: 4,
            name: "homogeneity verdicts",
            limit: Duration::from_secs(60),
            check: homogeneity_verdicts,
        },
        Criterion {
            id: 5,
            name: "calibration oracles",
            limit: Duration::from_secs(5),
            check: calibration_oracles,
        },
        Criterion {
            id: 6,
            name: "property suites",
            limit: Duration::MAX,
            check: property_suites,
        },
        Criterion {
            id: 7,
            name: "dsl equivalence",
            limit: Duration::MAX,
            check: dsl_equivalence,
        },
        Criterion {
            id: 8,
            name: "reproducibility",
            limit: Duration::MAX,
            check: reproducibility,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|_| Err("panicked".to_string()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > c.limit => Err(format!("took {took:.1?}, limit {:?}", c.limit)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("AC{} PASS {} ({took:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("AC{} FAIL {} ({took:.2?}): {why}", c.id, c.name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
