use std::fs;
use std::path::{Path, PathBuf};

use arcube::dexterity::{
    eta_global, invert_percent, local_dexterity, reachable_bundle, write_profile_csv,
};
use arcube::optimizer::{evolve, write_trace_csv, GaConfig};
use arcube::trajectory::{
    read_bundle_str, synthetic_bundle, to_mechanism_frame, write_csv, write_json, SyntheticRegion,
    TrajectoryBundle,
};
use arcube::units::rad_to_deg_exact;
use arcube::validation::{validate_design, Fault, ValidationError};
use arcube::velocity::JacobianSet;
use arcube::{solve_any, DesignVector, TaskPose};
use serde_json::json;

use crate::args::{IkArgs, OptimizeArgs, PresetArgs, ProfileArgs, SynthArgs, ValidateArgs};
use crate::manifest::RunManifest;

/// Error carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn unreachable(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn read_input(path: &Path, manifest: &mut RunManifest) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    manifest.input(path, &bytes);
    String::from_utf8(bytes).map_err(|_| Failure::usage(format!("{}: not UTF-8", path.display())))
}

fn load_design(path: &Path, manifest: &mut RunManifest) -> Result<DesignVector, Failure> {
    let text = read_input(path, manifest)?;
    DesignVector::from_json_str(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_bundle(path: &Path, manifest: &mut RunManifest) -> Result<TrajectoryBundle, Failure> {
    let text = read_input(path, manifest)?;
    read_bundle_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8], manifest: &mut RunManifest) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    manifest.output(path);
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))
}

/// Manifest to a file when a path is given, otherwise to standard error.
fn emit_manifest(manifest: RunManifest, path: Option<&PathBuf>) -> Outcome {
    let manifest = manifest.finish();
    match path {
        Some(p) => fs::write(p, manifest.to_json())
            .map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => {
            eprint!("{}", manifest.to_json());
            Ok(())
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("value serializes")
    );
}

fn degrees<const N: usize>(xs: &[f64; N]) -> Vec<f64> {
    xs.iter().map(|x| rad_to_deg_exact(*x)).collect()
}

pub fn ik(args: &IkArgs) -> Outcome {
    let mut manifest = RunManifest::start("ik");
    let design = load_design(&args.design, &mut manifest)?;
    let p = args.pose;
    let pose = TaskPose::new(
        p.x,
        p.y,
        p.z,
        p.psi_deg.to_radians(),
        p.theta_deg.to_radians(),
    );
    let result = solve_any(&pose, &design);
    let outcome = match &result {
        Ok(sol) => {
            let local = local_dexterity(&JacobianSet::new(&pose, sol, &design));
            print_json(&json!({
                "reachable": true,
                "rho_deg": degrees(&sol.joints.rho),
                "delta_deg": degrees(&sol.joints.delta),
                "sigma_deg": degrees(&sol.joints.sigma),
                "branches": sol.branches,
                "tms_residual": sol.tms_residual,
                "rts_residual": sol.rts_residual,
                "eta_local": local.eta,
                "dominating_block": local.dominating,
            }));
            Ok(())
        }
        Err(e) => {
            let arcube::IkError::Unreachable { stage, leg } = e;
            print_json(&json!({
                "reachable": false,
                "stage": stage,
                "leg": leg.name(),
            }));
            Err(Failure::unreachable(e.to_string()))
        }
    };
    emit_manifest(manifest, args.manifest.manifest.as_ref())?;
    outcome
}

pub fn profile(args: &ProfileArgs) -> Outcome {
    let mut manifest = RunManifest::start("profile");
    let design = load_design(&args.design, &mut manifest)?;
    let mut bundle = load_bundle(&args.trajectories, &mut manifest)?;
    if let Some(n) = args.points {
        for t in &mut bundle.trajectories {
            t.n_pts = n as usize;
        }
    }
    let points = to_mechanism_frame(&bundle, &design).map_err(|e| Failure::usage(e.to_string()))?;
    let report = eta_global(&points, &design).map_err(|e| Failure::usage(e.to_string()))?;

    create_dir(&args.out)?;
    let mut csv = Vec::new();
    write_profile_csv(&report, &mut csv).map_err(|e| Failure::usage(e.to_string()))?;
    write_output(&args.out.join("profile.csv"), &csv, &mut manifest)?;
    let unreachable = report.points.iter().filter(|p| p.w_local == 0).count();
    print_json(&json!({
        "points": report.points.len(),
        "unreachable": unreachable,
        "w_G": report.w_global,
        "eta_G": report.eta_global,
        "dexterity_percent": invert_percent(report.eta_global),
    }));
    let manifest_path = args.out.join("manifest.json");
    emit_manifest(manifest, Some(&manifest_path))?;
    if report.valid {
        Ok(())
    } else {
        Err(Failure::unreachable(format!(
            "{unreachable} of {} points unreachable",
            report.points.len()
        )))
    }
}

pub fn validate(args: &ValidateArgs) -> Outcome {
    let mut manifest = RunManifest::start("validate");
    manifest.seed = Some(args.seed);
    let design = load_design(&args.design, &mut manifest)?;
    let fault = args.corrupt_jlv.then_some(Fault::FlipJlvSign);
    let report = match validate_design(&design, args.seed, args.points, fault) {
        Ok(r) => r,
        Err(e @ ValidationError::NoSamples) => return Err(Failure::usage(e.to_string())),
        Err(e @ ValidationError::Sampling { .. }) => {
            emit_manifest(manifest, args.manifest.manifest.as_ref())?;
            return Err(Failure::unreachable(e.to_string()));
        }
    };
    for c in &report.checks {
        println!(
            "{} {:<36} worst {:.3e} (tolerance {:.0e}, sample {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tolerance,
            c.worst_sample
        );
    }
    emit_manifest(manifest, args.manifest.manifest.as_ref())?;
    match report.worst_offender() {
        None => {
            println!(
                "all {} checks passed on {} samples",
                report.checks.len(),
                report.samples
            );
            Ok(())
        }
        Some(c) => Err(Failure::validation(format!(
            "validation failed; worst offender: {} (error {:.3e} at sample {})",
            c.name, c.worst, c.worst_sample
        ))),
    }
}

fn load_config(spec: &str, manifest: &mut RunManifest) -> Result<GaConfig, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        let text = read_input(path, manifest)?;
        GaConfig::from_json_str(&text).map_err(|e| Failure::usage(format!("{spec}: {e}")))
    } else {
        GaConfig::preset(spec)
            .ok_or_else(|| Failure::usage(format!("{spec}: no such file or preset (paper, desk)")))
    }
}

pub fn optimize(args: &OptimizeArgs) -> Outcome {
    let mut manifest = RunManifest::start("optimize");
    let mut config = load_config(&args.config, &mut manifest)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config
        .validate()
        .map_err(|e| Failure::usage(e.to_string()))?;
    manifest.seed = Some(config.seed);
    let bundle = load_bundle(&args.trajectories, &mut manifest)?;
    let trace = evolve(&config, &bundle).map_err(|e| Failure::usage(e.to_string()))?;

    create_dir(&args.out)?;
    let mut csv = Vec::new();
    write_trace_csv(&trace, &mut csv).map_err(|e| Failure::usage(e.to_string()))?;
    write_output(&args.out.join("trace.csv"), &csv, &mut manifest)?;
    let best = &trace.best;
    write_output(
        &args.out.join("best_design.json"),
        best.design.to_json_string().as_bytes(),
        &mut manifest,
    )?;
    print_json(&json!({
        "generations": trace.generations.len(),
        "evaluations": trace.evaluations,
        "converged": trace.converged,
        "best_fitness": best.fitness.value,
        "feasible": best.fitness.feasible,
        "unusable_points": best.fitness.histogram,
    }));
    let manifest_path = args.out.join("manifest.json");
    emit_manifest(manifest, Some(&manifest_path))?;
    if best.fitness.feasible {
        Ok(())
    } else {
        Err(Failure::unreachable("no feasible design found"))
    }
}

pub fn synth(args: &SynthArgs) -> Outcome {
    let mut manifest = RunManifest::start("synth");
    manifest.seed = Some(args.seed);
    if args.count == 0 {
        return Err(Failure::usage("count must be at least 1"));
    }
    let bundle = match &args.design {
        Some(path) => {
            let design = load_design(path, &mut manifest)?;
            reachable_bundle(&design, args.seed, args.count, args.points as usize)
                .map_err(|e| Failure::unreachable(e.to_string()))?
        }
        None => {
            let region = SyntheticRegion {
                n_pts: args.points as usize,
                ..SyntheticRegion::default()
            };
            synthetic_bundle(args.seed, args.count, &region)
                .map_err(|e| Failure::usage(e.to_string()))?
        }
    };
    let is_json = args
        .out
        .as_ref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    let bytes = if is_json {
        write_json(&bundle, None).into_bytes()
    } else {
        let mut buf = Vec::new();
        write_csv(&bundle, &mut buf).map_err(|e| Failure::usage(e.to_string()))?;
        buf
    };
    match &args.out {
        Some(path) => {
            write_output(path, &bytes, &mut manifest)?;
            emit_manifest(manifest, None)
        }
        None => {
            print!("{}", String::from_utf8(bytes).expect("writer emits UTF-8"));
            emit_manifest(manifest, None)
        }
    }
}

pub fn preset(args: &PresetArgs) -> Outcome {
    let config = GaConfig::preset(&args.name)
        .ok_or_else(|| Failure::usage(format!("unknown preset {:?} (paper, desk)", args.name)))?;
    print!("{}", config.to_json_string(Some(&args.name)));
    Ok(())
}
