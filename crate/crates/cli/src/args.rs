use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "arcube",
    version,
    about = "AR-CUBE 3T2R mechanism: kinematics, dexterity and dimensional synthesis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the inverse kinematics of one pose (mechanism frame).
    Ik(IkArgs),
    /// Write the per-point dexterity profile of a trajectory bundle.
    Profile(ProfileArgs),
    /// Check the Jacobians and closures of a design on sampled configurations.
    Validate(ValidateArgs),
    /// Run the genetic algorithm over a trajectory bundle.
    Optimize(OptimizeArgs),
    /// Write a synthetic trajectory bundle.
    Synth(SynthArgs),
    /// Print a shipped GA configuration preset.
    Preset(PresetArgs),
}

/// Drill-tip position (mm) and drill-axis angles (degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseArg {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi_deg: f64,
    pub theta_deg: f64,
}

pub fn parse_pose(s: &str) -> Result<PoseArg, String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [x, y, z, psi_deg, theta_deg] = values[..] else {
        return Err(format!(
            "expected 5 comma-separated values, got {}",
            values.len()
        ));
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err("pose values must be finite".into());
    }
    Ok(PoseArg {
        x,
        y,
        z,
        psi_deg,
        theta_deg,
    })
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    /// Write the run manifest here instead of standard error.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IkArgs {
    #[arg(long)]
    pub design: PathBuf,
    /// x,y,z,psi_deg,theta_deg
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pub pose: PoseArg,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Output directory for profile.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the number of points of every trajectory.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub points: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    /// Negate J_LV before checking (fault injection).
    #[arg(long, hide = true)]
    pub corrupt_jlv: bool,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// GA configuration file, or a preset name ("paper", "desk").
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Output directory for trace.csv, best_design.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of trajectories.
    #[arg(long, default_value_t = 6)]
    pub count: usize,
    /// Points per trajectory.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(2..))]
    pub points: u64,
    /// Draw fully reachable trajectories for this design instead of the
    /// default region.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Output file (.json for the JSON form, CSV otherwise); standard output
    /// when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    pub name: String,
}
