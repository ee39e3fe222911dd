//! `lvseg` command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lvseg::bundle::{read_bundle, read_contour_stack, write_bundle, write_json};
use lvseg::metrics::{compare_stacks, ContourStack, MetricsReport};
use lvseg::phantom::{generate, PhantomSpec};
use lvseg::pipeline::{run_into, write_outputs, RunState, Stage};
use lvseg::{Error, PipelineConfig, Result, Vec2};

#[derive(Parser)]
#[command(name = "lvseg", version, about = "3D left-ventricle segmentation of LGE cardiac MR")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom study bundle with ground truth.
    Phantom {
        /// Output bundle directory.
        out: PathBuf,
        /// Phantom specification (TOML); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full pipeline on a bundle.
    Run(StageArgs),
    /// Run up to slice realignment.
    Align(StageArgs),
    /// Run up to contour propagation.
    Register(StageArgs),
    /// Run up to edge detection.
    Detect(StageArgs),
    /// Run up to mesh deformation.
    Deform(StageArgs),
    /// Compare two contour directories.
    Eval {
        a: PathBuf,
        b: PathBuf,
        /// Pixel spacing used to report distances in mm.
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StageArgs {
    bundle: PathBuf,
    out: PathBuf,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    skip_align: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    band_sa: Option<usize>,
    #[arg(long)]
    band_la: Option<usize>,
    #[arg(long)]
    n_theta: Option<usize>,
    #[arg(long)]
    n_interp: Option<usize>,
    #[arg(long)]
    pi_r: Option<usize>,
    #[arg(long)]
    pi_delta: Option<f64>,
    #[arg(long)]
    search_radius: Option<u32>,
    #[arg(long)]
    align_radius: Option<u32>,
    #[arg(long)]
    align_passes: Option<usize>,
}

impl StageArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        c.skip_align |= self.skip_align;
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        apply!(lambda, band_sa, band_la, n_theta, n_interp, pi_r, pi_delta, search_radius, align_radius, align_passes);
        c.validate()?;
        Ok(c)
    }
}

fn phantom(out: &Path, spec: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut s = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            toml::from_str::<PhantomSpec>(&text)
                .map_err(|e| Error::Validation(format!("phantom spec {}: {e}", path.display())))?
        }
        None => PhantomSpec::default(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let ph = generate(&s)?;
    write_bundle(&ph, out)?;
    eprintln!("wrote {} SA slices to {}", ph.lge_sa.len(), out.display());
    Ok(())
}

fn run_stage(args: &StageArgs, until: Stage) -> Result<()> {
    let config = args.config()?;
    let bundle = read_bundle(&args.bundle).map_err(|e| e.in_stage(Stage::Load.name()))?;
    let mut state = RunState::new(&bundle, &config);
    let result = run_into(&bundle, &config, until, &mut state);
    if let Err(e) = &result {
        state.log.error = Some(e.to_string());
    }
    write_outputs(&args.out, &state)?;
    result?;
    if let Some(m) = &state.metrics {
        eprintln!(
            "myocardium Dice {:.4}, mean distance {:.3} mm",
            m.volumetric_dice_myo, m.mean_distance_mm
        );
    }
    Ok(())
}

/// Canvas size and offset that hold every point of both stacks.
fn canvas(stacks: &[&[Vec<Vec2>]]) -> (usize, usize, Vec2) {
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for p in stacks.iter().flat_map(|s| s.iter().flatten()) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let offset = Vec2::new(1.0 - lo.x.floor(), 1.0 - lo.y.floor());
    let size = |a: f64, b: f64| (b.ceil() - a.floor()) as usize + 3;
    (size(lo.x, hi.x), size(lo.y, hi.y), offset)
}

fn eval(a: &Path, b: &Path, spacing: f64, out: Option<&Path>) -> Result<MetricsReport> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Validation("spacing must be positive".into()));
    }
    let (ea, pa) = read_contour_stack(a)?;
    let (eb, pb) = read_contour_stack(b)?;
    let (w, h, offset) = canvas(&[&ea, &pa, &eb, &pb]);
    let shift = |s: &[Vec<Vec2>]| -> Vec<Vec<Vec2>> {
        s.iter().map(|c| c.iter().map(|p| p + offset).collect()).collect()
    };
    let (ea, pa, eb, pb) = (shift(&ea), shift(&pa), shift(&eb), shift(&pb));
    let report = compare_stacks(
        &ContourStack { endo: &ea, epi: &pa },
        &ContourStack { endo: &eb, epi: &pb },
        w,
        h,
        spacing,
    )?;
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(report)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { out, spec, seed } => phantom(&out, spec.as_deref(), seed),
        Command::Run(a) => run_stage(&a, Stage::Evaluate),
        Command::Align(a) => run_stage(&a, Stage::Align),
        Command::Register(a) => run_stage(&a, Stage::Register),
        Command::Detect(a) => run_stage(&a, Stage::Detect),
        Command::Deform(a) => run_stage(&a, Stage::Deform),
        Command::Eval { a, b, spacing, out } => {
            let report = eval(&a, &b, spacing, out.as_deref())?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
