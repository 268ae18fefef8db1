//! Command-line front ends of the toolkit. Every tool reads and writes
//! files relative to a working directory, so the same entry point serves a
//! real process and an in-process sandbox run.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad arguments or input.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::analysis::{
    compute_rdf, coordination_csv, coordination_histogram, debye_intensity, linear_grid,
};
use crate::error::ToolError;
use crate::formats::{read_trajectory, write_dump, write_trajectory, Format};
use crate::frame::{Frame, Trajectory};
use crate::md::{ljmd_run, MdConfig};
use crate::raster::{project_snapshot, Axis, ProjectOptions};
use crate::stress::{extract_stress_strain, read_records, write_records};

pub const TOOLS: [&str; 8] = ["ljmd", "convert", "rdf", "debye", "stress", "coord", "project", "paramgen"];

/// Runs MD on an FCC crystal.
#[derive(Parser, Debug)]
#[command(name = "ljmd")]
struct LjmdArgs {
    /// TOML file with MD settings; flags override it.
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strain_rate: Option<f64>,
    /// File whose content is the strain rate.
    #[arg(long, conflicts_with = "strain_rate")]
    strain_rate_file: Option<PathBuf>,
    #[arg(long)]
    sample_every: Option<u64>,
    #[arg(long, default_value = "trajectory")]
    trajectory: PathBuf,
    #[arg(long, default_value = "stress")]
    stress: PathBuf,
}

/// Converts a trajectory between dump and xyz.
#[derive(Parser, Debug)]
#[command(name = "convert")]
struct ConvertArgs {
    input: PathBuf,
    #[arg(long)]
    to: Format,
    /// Defaults to the target format name.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Radial distribution function of a trajectory.
#[derive(Parser, Debug)]
#[command(name = "rdf")]
struct RdfArgs {
    input: PathBuf,
    /// Defaults to half the smallest box length.
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(long, default_value = "rdf")]
    output: PathBuf,
}

/// Debye scattering intensity of one frame.
#[derive(Parser, Debug)]
#[command(name = "debye")]
struct DebyeArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    q_min: f64,
    #[arg(long, default_value_t = 12.0)]
    q_max: f64,
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Frame index; negative counts from the end.
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    frame: i64,
    /// `species=f`, repeatable.
    #[arg(long = "form-factor")]
    form_factors: Vec<String>,
    #[arg(long, default_value = "debye")]
    output: PathBuf,
}

/// Stress–strain table and yield summary from MD stress records.
#[derive(Parser, Debug)]
#[command(name = "stress")]
struct StressArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    drop_fraction: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    min_peak: f64,
    #[arg(long, default_value = "curve")]
    output: PathBuf,
}

/// Coordination-number histogram of every frame.
#[derive(Parser, Debug)]
#[command(name = "coord")]
struct CoordArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 1.3)]
    cutoff: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    periodic: bool,
    #[arg(long, default_value = "coordination")]
    output: PathBuf,
}

/// Projects a frame to a PGM raster.
#[derive(Parser, Debug)]
#[command(name = "project")]
struct ProjectArgs {
    input: PathBuf,
    #[arg(long, default_value = "z")]
    axis: Axis,
    #[arg(long, default_value_t = 8.0)]
    scale: f64,
    #[arg(long, default_value_t = 1.3)]
    cutoff: f64,
    #[arg(long, default_value_t = 12)]
    bulk: u32,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    frame: i64,
    #[arg(long, default_value = "snapshot")]
    output: PathBuf,
    /// Render every frame as `<series>_NNNN.pgm` plus `<series>.index`.
    #[arg(long, conflicts_with = "output")]
    series: Option<String>,
}

/// Writes one file per value for a generator port.
#[derive(Parser, Debug)]
#[command(name = "paramgen")]
struct ParamgenArgs {
    #[arg(long)]
    port: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    values: Vec<String>,
}

struct Ctx<'a> {
    cwd: &'a Path,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.cwd.join(p)
    }

    fn read(&self, p: &Path) -> Result<String, ToolError> {
        std::fs::read_to_string(self.path(p)).map_err(|e| ToolError::Io(format!("{}: {e}", p.display())))
    }

    fn write(&self, p: &Path, content: &str) -> Result<(), ToolError> {
        std::fs::write(self.path(p), content).map_err(|e| ToolError::Io(format!("{}: {e}", p.display())))
    }

    fn trajectory(&self, p: &Path) -> Result<Trajectory, ToolError> {
        let traj = read_trajectory(&self.read(p)?)?;
        if traj.is_empty() {
            return Err(ToolError::EmptyTrajectory);
        }
        Ok(traj)
    }

    fn say(&mut self, msg: &str) {
        let _ = writeln!(self.out, "{msg}");
    }
}

fn pick_frame(traj: &[Frame], index: i64) -> Result<&Frame, ToolError> {
    let n = traj.len() as i64;
    let i = if index < 0 { n + index } else { index };
    if i < 0 || i >= n {
        return Err(ToolError::InvalidConfig(format!("frame {index} out of range for {n} frames")));
    }
    Ok(&traj[i as usize])
}

fn ljmd(a: LjmdArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    let mut config: MdConfig = match &a.config {
        Some(p) => toml::from_str(&ctx.read(p)?).map_err(|e| ToolError::InvalidConfig(e.to_string()))?,
        None => MdConfig::default(),
    };
    if let Some(v) = a.steps {
        config.steps = v;
    }
    if let Some(v) = a.dt {
        config.dt = v;
    }
    if let Some(v) = a.temperature {
        config.temperature = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.sample_every {
        config.sample_every = v;
    }
    if let Some(v) = a.strain_rate {
        config.strain_rate = v;
    }
    if let Some(p) = &a.strain_rate_file {
        let text = ctx.read(p)?;
        config.strain_rate = text
            .trim()
            .parse()
            .map_err(|_| ToolError::InvalidConfig(format!("strain rate file holds {:?}", text.trim())))?;
    }
    let out = ljmd_run(&config)?;
    ctx.write(&a.trajectory, &write_dump(&out.frames))?;
    ctx.write(&a.stress, &write_records(&out.records))?;
    let last = out.records.last().expect("step 0 is always sampled");
    ctx.say(&format!(
        "ljmd: {} atoms, {} steps, final strain {:.6}, final pxx {:.6}",
        out.frames[0].len(),
        config.steps,
        last.strain,
        last.pxx
    ));
    Ok(())
}

fn convert(a: ConvertArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    let traj = read_trajectory(&ctx.read(&a.input)?)?;
    let output = a.output.unwrap_or_else(|| PathBuf::from(match a.to {
        Format::Dump => "dump",
        Format::Xyz => "xyz",
    }));
    ctx.write(&output, &write_trajectory(&traj, a.to))?;
    ctx.say(&format!("convert: {} frames", traj.len()));
    Ok(())
}

fn rdf(a: RdfArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    let traj = ctx.trajectory(&a.input)?;
    let r_max = a
        .r_max
        .unwrap_or_else(|| traj.iter().map(Frame::min_box).fold(f64::INFINITY, f64::min) / 2.0);
    let spectrum = compute_rdf(&traj, r_max, a.bins)?;
    ctx.write(&a.output, &spectrum.csv())?;
    ctx.say(&format!("rdf: {} frames, r_max {r_max}", traj.len()));
    Ok(())
}

fn parse_form_factors(specs: &[String]) -> Result<BTreeMap<u32, f64>, ToolError> {
    specs
        .iter()
        .map(|s| {
            let bad = || ToolError::InvalidConfig(format!("form factor {s:?} is not species=value"));
            let (k, v) = s.split_once('=').ok_or_else(bad)?;
            Ok((k.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn debye(a: DebyeArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    let traj = ctx.trajectory(&a.input)?;
    let frame = pick_frame(&traj, a.frame)?;
    let ff = parse_form_factors(&a.form_factors)?;
    let spectrum = debye_intensity(frame, &linear_grid(a.q_min, a.q_max, a.points), &ff)?;
    ctx.write(&a.output, &spectrum.csv())?;
    ctx.say(&format!("debye: step {}, {} q points", frame.step, a.points));
    Ok(())
}

fn stress(a: StressArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    let records = read_records(&ctx.read(&a.input)?)?;
    let curve = extract_stress_strain(&records, a.drop_fraction, a.min_peak)?;
    ctx.write(&a.output, &curve.csv())?;
    ctx.say(&serde_json::to_string(&curve.summary).expect("summary serializes"));
    Ok(())
}

fn coord(a: CoordArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    let traj = ctx.trajectory(&a.input)?;
    let series = traj
        .iter()
        .map(|f| Ok((f.step, coordination_histogram(f, a.cutoff, a.periodic)?)))
        .collect::<Result<Vec<_>, ToolError>>()?;
    ctx.write(&a.output, &coordination_csv(&series))?;
    ctx.say(&format!("coord: {} frames, cutoff {}", traj.len(), a.cutoff));
    Ok(())
}

fn project(a: ProjectArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    let traj = ctx.trajectory(&a.input)?;
    let opts = ProjectOptions {
        scale: a.scale,
        cutoff: a.cutoff,
        bulk: a.bulk,
    };
    match &a.series {
        Some(prefix) => {
            let mut index = String::from("frame,step,file\n");
            for (i, frame) in traj.iter().enumerate() {
                let name = format!("{prefix}_{i:04}.pgm");
                ctx.write(Path::new(&name), &project_snapshot(frame, a.axis, &opts)?.to_pgm())?;
                index.push_str(&format!("{i},{},{name}\n", frame.step));
            }
            ctx.write(Path::new(&format!("{prefix}.index")), &index)?;
            ctx.say(&format!("project: {} frames", traj.len()));
        }
        None => {
            let frame = pick_frame(&traj, a.frame)?;
            ctx.write(&a.output, &project_snapshot(frame, a.axis, &opts)?.to_pgm())?;
            ctx.say(&format!("project: step {}", frame.step));
        }
    }
    Ok(())
}

fn paramgen(a: ParamgenArgs, ctx: &mut Ctx<'_>) -> Result<(), ToolError> {
    use sciflow_core::sweep::{item_name, manifest_file_name, ManifestFile};
    if !sciflow_core::ident::is_valid_ident(&a.port) {
        return Err(ToolError::InvalidConfig(format!("invalid port name {:?}", a.port)));
    }
    let mut items = Vec::new();
    for (i, v) in a.values.iter().enumerate() {
        let name = item_name(&a.port, i as u32);
        ctx.write(Path::new(&name), &format!("{}\n", v.trim()))?;
        items.push(name);
    }
    let manifest = ManifestFile {
        count: items.len() as u32,
        items,
    };
    ctx.write(
        Path::new(&manifest_file_name(&a.port)),
        &serde_json::to_string(&manifest).expect("manifest serializes"),
    )?;
    ctx.say(&format!("paramgen: {} values", manifest.count));
    Ok(())
}

fn parse<P: Parser>(tool: &str, args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> Result<P, i32> {
    P::try_parse_from(std::iter::once(tool.to_string()).chain(args.iter().cloned())).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = write!(out, "{e}");
                0
            }
            _ => {
                let _ = write!(err, "{e}");
                2
            }
        }
    })
}

/// Runs `tool` with `args` inside `cwd`. Returns the process exit code.
pub fn run(tool: &str, args: &[String], cwd: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    macro_rules! dispatch {
        ($ty:ty, $f:ident) => {{
            let parsed = match parse::<$ty>(tool, args, out, err) {
                Ok(p) => p,
                Err(code) => return code,
            };
            $f(parsed, &mut Ctx { cwd, out })
        }};
    }
    let result = match tool {
        "ljmd" => dispatch!(LjmdArgs, ljmd),
        "convert" => dispatch!(ConvertArgs, convert),
        "rdf" => dispatch!(RdfArgs, rdf),
        "debye" => dispatch!(DebyeArgs, debye),
        "stress" => dispatch!(StressArgs, stress),
        "coord" => dispatch!(CoordArgs, coord),
        "project" => dispatch!(ProjectArgs, project),
        "paramgen" => dispatch!(ParamgenArgs, paramgen),
        other => {
            let _ = writeln!(err, "unknown tool {other:?}; available: {}", TOOLS.join(", "));
            return 2;
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{tool}: {e}");
            e.exit_code()
        }
    }
}
