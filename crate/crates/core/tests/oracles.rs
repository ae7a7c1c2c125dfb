//! Closed-form checks: calibration models, leaves of the two examples and the
//! `.mdl` transcriptions of the built-ins.

use std::collections::BTreeMap;
use std::path::PathBuf;

use matdist_core::distribution::{material_fibre, FSampler, FibreMode, SamplerConfig};
use matdist_core::foliation::{leaf_trace, StopReason, TraceConfig};
use matdist_core::response::dsl::{compile_source, parse_model_named, pretty, Context};
use matdist_core::response::{builtin, ConstitutiveModel};
use matdist_core::Tolerances;
use nalgebra::{Matrix3, Vector3};

fn model(name: &str) -> ConstitutiveModel {
    builtin(name, &BTreeMap::new()).unwrap()
}

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn shipped_sources() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(models_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("mdl" | "chart")
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn det_cal_symmetries_are_traceless_and_exact() {
    let m = model("det_cal");
    let x = Vector3::new(0.1, -0.2, 0.3);
    let r = material_fibre(
        &m,
        &x,
        &SamplerConfig::default(),
        &Tolerances::default(),
        FibreMode::Pointwise,
    )
    .unwrap();
    assert_eq!(r.grade, 3);
    assert_eq!(r.sym_dim(), 8);
    let mut rng = FSampler::new(&SamplerConfig::with_seed(11), 5);
    let fs = rng.draw_n(10).unwrap();
    for dp in &r.sym_basis {
        assert!(dp.trace().abs() <= 1e-9, "trace {:e}", dp.trace());
        for t in [0.1, 1.0] {
            let g = (dp * t).exp();
            for f in &fs {
                let a = m.evaluate(&x, &(f * g)).unwrap();
                let b = m.evaluate(&x, f).unwrap();
                assert!((a - b).amax() <= 1e-12);
            }
        }
    }
}

#[test]
fn identity_cal_has_no_symmetries() {
    let r = material_fibre(
        &model("identity_cal"),
        &Vector3::zeros(),
        &SamplerConfig::default(),
        &Tolerances::default(),
        FibreMode::Pointwise,
    )
    .unwrap();
    assert_eq!(r.sym_dim(), 0);
}

#[test]
fn example2_leaf_stays_on_its_sphere() {
    let m = model("example2");
    let seed = Vector3::new(0.3, 0.2, 0.1);
    let t = leaf_trace(
        &m,
        &seed,
        &Vector3::new(0.0, 0.0, 1.0),
        &TraceConfig::default(),
        &SamplerConfig::default(),
        &Tolerances::default(),
    )
    .unwrap();
    assert_eq!(t.stop, StopReason::Completed);
    let drift = t
        .points
        .iter()
        .map(|p| (p.norm() - seed.norm()).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-4, "radial drift {drift:e}");
    for w in t.points.windows(2) {
        assert!((w[1] - w[0]).norm() <= 1.5 * t.step);
    }
}

#[test]
fn example1_leaf_stays_in_its_plane() {
    let m = model("example1");
    let t = leaf_trace(
        &m,
        &Vector3::new(0.5, 0.0, 0.0),
        &Vector3::new(0.0, 0.3, 1.0),
        &TraceConfig::default(),
        &SamplerConfig::default(),
        &Tolerances::default(),
    )
    .unwrap();
    let drift = t
        .points
        .iter()
        .map(|p| (p[0] - 0.5).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-6, "x1 drift {drift:e}");
}

#[test]
fn mdl_transcription_of_example1_matches_builtin() {
    let src = std::fs::read_to_string(models_dir().join("example1.mdl")).unwrap();
    let dsl = parse_model_named(&src, "example1").unwrap();
    let native = model("example1");
    let mut rng = FSampler::new(&SamplerConfig::with_seed(3), 99);
    let mut xs = FSampler::new(&SamplerConfig::with_seed(4), 100);
    for _ in 0..100 {
        let f = rng.draw().unwrap();
        // Reuse the sampler's entries as body coordinates in (-1, 1).
        let x = xs.draw().unwrap().column(0).map(|c| c.tanh() * 0.9);
        let a = dsl.evaluate(&x, &f).unwrap();
        let b = native.evaluate(&x, &f).unwrap();
        assert!((a - b).amax() <= 1e-12, "at {x:?}");
    }
}

#[test]
fn shipped_sources_print_to_a_fixed_point() {
    let files = shipped_sources();
    assert!(files.len() >= 4);
    for path in files {
        let src = std::fs::read_to_string(&path).unwrap();
        let ctx = if path.extension().unwrap() == "chart" {
            Context::Chart
        } else {
            Context::Model
        };
        compile_source(&src, ctx).unwrap();
        let once = pretty(&src).unwrap();
        compile_source(&once, ctx).unwrap();
        assert_eq!(pretty(&once).unwrap(), once, "{}", path.display());
    }
}

#[test]
fn isomorphism_rejects_different_stiffness() {
    let iso = matdist_core::distribution::is_material_isomorphism(
        &model("example1"),
        &Vector3::new(0.5, 0.0, 0.0),
        &Vector3::new(0.7, 0.0, 0.0),
        &Matrix3::identity(),
        &SamplerConfig::default(),
        &Tolerances::default(),
    )
    .unwrap();
    assert!(!iso.verdict);
}
