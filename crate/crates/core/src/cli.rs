//! Command-line front end: `c2c process_3d INPUT_PATH <dir>` and `c2c process_2d INPUT_PATH <dir>`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::pipeline::{run, Mode, RunConfig};
use crate::segmentation::{tissue_class_map, ProviderConfig, ABCT_MODEL_ID, SPINE_MODEL_ID, STANFORD_MODEL_ID};
use crate::spine::{RoiShape, RoiSpec, Statistic};

/// Exit code for invalid command lines.
pub const EXIT_USAGE: i32 = 2;
/// Environment variable read when `--mask-root` is absent.
pub const MASK_ROOT_ENV: &str = "C2C_MASK_ROOT";

#[derive(Debug, Parser)]
#[command(name = "c2c", version, about = "CT body composition: spine ROI HU, muscle and adipose metrics")]
#[command(subcommand_required = true, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spine ROIs, per-level slices and tissue metrics for every DICOM series under the input.
    #[command(name = "process_3d")]
    Process3d(RunArgs),
    /// Tissue metrics for every axial DICOM file under the input.
    #[command(name = "process_2d")]
    Process2d(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Sphere,
    Cube,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StatArg {
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum ProviderArg {
    #[value(name = "mask_files")]
    MaskFiles,
    Onnx,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Input folder, optionally preceded by the literal word INPUT_PATH.
    #[arg(value_name = "INPUT_PATH", num_args = 0..=2)]
    positional: Vec<String>,
    #[arg(long, value_name = "DIR")]
    input_path: Option<PathBuf>,
    /// Defaults to $C2C_OUTPUT_ROOT, then ./outputs.
    #[arg(long, value_name = "DIR")]
    output_root: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sphere")]
    roi_shape: ShapeArg,
    #[arg(long, default_value_t = 10.0)]
    roi_diameter_mm: f64,
    #[arg(long, value_enum, default_value = "median")]
    stat: StatArg,
    #[arg(long, value_enum, default_value = "mask_files")]
    provider: ProviderArg,
    /// Precomputed masks; defaults to $C2C_MASK_ROOT, then <input>/masks.
    #[arg(long, value_name = "DIR")]
    mask_root: Option<PathBuf>,
    /// Muscle and adipose model id.
    #[arg(long, default_value = STANFORD_MODEL_ID)]
    model: String,
    /// Folder holding `<model id>.onnx` files and their manifests.
    #[arg(long, value_name = "DIR", default_value = "models")]
    model_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "on")]
    save_images: OnOff,
}

fn usage(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

impl RunArgs {
    fn input(&self) -> Result<PathBuf, String> {
        let positional = match self.positional.as_slice() {
            [] => None,
            [p] => Some(p.clone()),
            [k, p] if k == "INPUT_PATH" => Some(p.clone()),
            _ => return Err("expected `INPUT_PATH <dir>` or a single input path".into()),
        };
        match (positional, &self.input_path) {
            (Some(_), Some(_)) => Err("input path given both positionally and with --input-path".into()),
            (Some(p), None) => Ok(PathBuf::from(p)),
            (None, Some(p)) => Ok(p.clone()),
            (None, None) => Err("missing input path".into()),
        }
    }

    fn config(&self, mode: Mode) -> Result<RunConfig, String> {
        let input = self.input()?;
        let model = self.model.to_ascii_lowercase();
        let model_id = match model.as_str() {
            STANFORD_MODEL_ID | ABCT_MODEL_ID => model,
            _ if self.provider == ProviderArg::Onnx => self.model.clone(),
            _ => return Err(format!("unknown model {:?}; expected {STANFORD_MODEL_ID} or {ABCT_MODEL_ID}", self.model)),
        };
        let (spine_provider, tissue_provider) = match self.provider {
            ProviderArg::MaskFiles => {
                let root = self
                    .mask_root
                    .clone()
                    .or_else(|| std::env::var_os(MASK_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
                    .unwrap_or_else(|| input.join("masks"));
                let tissue_map = tissue_class_map(&model_id).ok_or("no class map for model")?;
                (
                    ProviderConfig::mask_files(&root, crate::segmentation::spine_class_map()),
                    ProviderConfig::mask_files(&root, tissue_map),
                )
            }
            ProviderArg::Onnx => (
                ProviderConfig::onnx(self.model_dir.join(format!("{SPINE_MODEL_ID}.onnx"))),
                ProviderConfig::onnx(self.model_dir.join(format!("{model_id}.onnx"))),
            ),
        };
        let mut cfg = RunConfig::with_mask_files(mode, input, ".");
        cfg.output_root = self.output_root.clone();
        cfg.roi_spec = RoiSpec {
            shape: match self.roi_shape {
                ShapeArg::Sphere => RoiShape::Sphere,
                ShapeArg::Cube => RoiShape::Cube,
            },
            diameter_mm: self.roi_diameter_mm,
            statistic: match self.stat {
                StatArg::Median => Statistic::Median,
                StatArg::Mean => Statistic::Mean,
            },
        };
        cfg.spine_provider = spine_provider;
        cfg.tissue_provider = tissue_provider;
        cfg.tissue_model_id = model_id;
        cfg.workers = self.workers;
        cfg.save_images = self.save_images == OnOff::On;
        Ok(cfg)
    }
}

/// Parses `argv` (including the program name), runs the selected pipeline and
/// returns the process exit code: 0 when every record succeeded, 1 when any
/// failed or nothing was processed, 2 for usage errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    let (mode, args) = match &cli.command {
        Command::Process3d(a) => (Mode::Process3d, a),
        Command::Process2d(a) => (Mode::Process2d, a),
    };
    let cfg = match args.config(mode) {
        Ok(c) => c,
        Err(msg) => return usage(msg),
    };
    if let Err(e) = cfg.validate() {
        return usage(e);
    }
    match run(&cfg) {
        Ok(manifest) => {
            println!("{}", manifest.run_dir.display());
            for r in &manifest.records {
                match &r.reason {
                    Some(reason) => println!("{:?} {}: {reason}", r.status, r.input.display()),
                    None => println!("{:?} {}", r.status, r.input.display()),
                }
            }
            if manifest.records.is_empty() {
                eprintln!("nothing to process under {}", cfg.input_path.display());
            }
            manifest.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
