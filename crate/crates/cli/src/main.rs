use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use prism_core::io::{
    self, encode_ppm, read_image_ppm, read_manifest, read_model, write_image_ppm, write_npy,
};
use prism_core::selftest::{run_all, SelftestOptions};
use prism_core::{
    prism_maps, stack_scores, ActivationStack, PrismError, PrismOptions, RecordingSession, Shape4,
    SharpenMode, Tensor4, RGB_COMPONENTS,
};

/// Render PRISM feature maps: one RGB mask per image, where the same color
/// marks the same feature across the whole batch.
#[derive(Parser, Debug)]
#[command(name = "prism", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute maps from an activation manifest written by an exporter.
    Map {
        /// Path to the activation manifest (manifest.json).
        #[arg(long)]
        activations: PathBuf,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Run a model.json over PPM images and compute maps.
    Run {
        /// Path to the model description (model.json).
        #[arg(long)]
        model: PathBuf,
        /// Input images (binary PPM, all the same size).
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[command(flatten)]
        render: RenderArgs,
    },
    /// Run the built-in synthetic acceptance checks.
    Selftest {
        /// Sharpening rule exercised by the checks.
        #[arg(long, default_value_t = SharpenMode::Progressive)]
        sharpen: SharpenMode,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Number of principal components; images need exactly 3.
    #[arg(long, default_value_t = RGB_COMPONENTS)]
    components: usize,
    /// Sharpening rule: progressive or last-only.
    #[arg(long, default_value_t = SharpenMode::Progressive)]
    sharpen: SharpenMode,
    /// Output size as HxW, or auto (input size, else 8x the shallowest layer).
    #[arg(long, default_value_t = OutputSize::Auto)]
    output_size: OutputSize,
    /// Also write the deepest layer's principal scores to scores.npy.
    #[arg(long)]
    raw_scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutputSize {
    Auto,
    Fixed(usize, usize),
}

impl fmt::Display for OutputSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputSize::Auto => f.write_str("auto"),
            OutputSize::Fixed(h, w) => write!(f, "{h}x{w}"),
        }
    }
}

impl FromStr for OutputSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(OutputSize::Auto);
        }
        let bad = || format!("expected HxW or auto, got '{s}'");
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let h: usize = h.trim().parse().map_err(|_| bad())?;
        let w: usize = w.trim().parse().map_err(|_| bad())?;
        if h == 0 || w == 0 {
            return Err(format!("output size must be positive, got '{s}'"));
        }
        Ok(OutputSize::Fixed(h, w))
    }
}

enum Failure {
    Usage(String),
    Prism(PrismError),
}

impl From<PrismError> for Failure {
    fn from(e: PrismError) -> Self {
        Failure::Prism(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Prism(e) if e.is_pipeline_failure() => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Prism(e) => e.fmt(f),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Map {
            activations,
            render,
        } => cmd_map(&activations, &render),
        Command::Run {
            model,
            images,
            render,
        } => cmd_run(&model, &images, &render),
        Command::Selftest {
            sharpen,
            inject_fault,
        } => {
            return cmd_selftest(SelftestOptions {
                sharpen,
                inject_fault,
            });
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prism: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_map(manifest: &Path, render: &RenderArgs) -> Result<(), Failure> {
    check_components(render)?;
    let loaded = read_manifest(manifest)?;
    emit(&loaded.stack, loaded.input.as_ref(), render)
}

fn cmd_run(model: &Path, images: &[PathBuf], render: &RenderArgs) -> Result<(), Failure> {
    check_components(render)?;
    let model = read_model(model)?;
    let batch = load_images(images)?;
    let mut session = RecordingSession::new(model);
    session.register();
    session.forward(&batch)?;
    emit(session.stack(), Some(&batch), render)
}

fn cmd_selftest(options: SelftestOptions) -> ExitCode {
    let reports = run_all(&options);
    for report in &reports {
        println!("{report}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} checks passed",
        reports.len() - failed,
        reports.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn check_components(render: &RenderArgs) -> Result<(), Failure> {
    if render.components == 0 {
        return Err(Failure::Usage("--components must be at least 1".into()));
    }
    if render.components != RGB_COMPONENTS && !render.raw_scores {
        return Err(Failure::Usage(format!(
            "--components {} cannot be rendered as RGB; pass --raw-scores to write scores only",
            render.components
        )));
    }
    Ok(())
}

fn load_images(paths: &[PathBuf]) -> Result<Tensor4, Failure> {
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        let image = read_image_ppm(&io::read_file(path)?).map_err(|e| with_path(path, e))?;
        if let Some(first) = images.first() {
            let (a, b) = (Tensor4::shape(first), image.shape());
            if (a.h, a.w) != (b.h, b.w) {
                return Err(Failure::Usage(format!(
                    "{}: image is {}x{} but {} is {}x{}",
                    path.display(),
                    b.h,
                    b.w,
                    paths[0].display(),
                    a.h,
                    a.w
                )));
            }
        }
        images.push(image);
    }
    Ok(Tensor4::concat_batch(&images)?)
}

fn with_path(path: &Path, e: PrismError) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn output_size(
    render: &RenderArgs,
    stack: &ActivationStack,
    input: Option<&Tensor4>,
) -> Result<(usize, usize), Failure> {
    match render.output_size {
        OutputSize::Fixed(h, w) => Ok((h, w)),
        OutputSize::Auto => match (input, stack.first()) {
            (Some(t), _) => Ok((t.shape().h, t.shape().w)),
            (None, Some(t)) => Ok((t.shape().h * 8, t.shape().w * 8)),
            (None, None) => Err(PrismError::EmptyStack.into()),
        },
    }
}

fn emit(
    stack: &ActivationStack,
    input: Option<&Tensor4>,
    render: &RenderArgs,
) -> Result<(), Failure> {
    if stack.is_empty() {
        return Err(PrismError::EmptyStack.into());
    }
    let (height, width) = output_size(render, stack, input)?;
    std::fs::create_dir_all(&render.out)
        .map_err(|e| Failure::Usage(format!("{}: {e}", render.out.display())))?;

    let mut written = Vec::new();
    if render.raw_scores {
        let scores = stack_scores(stack, render.components)?;
        let path = render.out.join("scores.npy");
        io::write_file(&path, &write_npy(&scores.scores))?;
        written.push(path);
    }
    if render.components == RGB_COMPONENTS {
        let options = PrismOptions {
            sharpen: render.sharpen,
            ..PrismOptions::default()
        };
        let maps = prism_maps(stack, height, width, &options)?;
        let input = match input {
            Some(t) => displayable(t),
            None => None,
        };
        for i in 0..maps.len() {
            if let Some(t) = &input {
                let path = render.out.join(format!("input_{i}.ppm"));
                io::write_file(&path, &encode_ppm(t, i)?)?;
                written.push(path);
            }
            let path = render.out.join(format!("prism_{i}.ppm"));
            io::write_file(&path, &write_image_ppm(&maps, i)?)?;
            written.push(path);
        }
    }
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

/// The input batch as a 3-channel image in `[0, 1]`. Values outside that
/// range are min-max rescaled over the whole batch; single-channel inputs
/// are shown as gray. Other channel counts are not drawn.
fn displayable(t: &Tensor4) -> Option<Tensor4> {
    let s = t.shape();
    let rgb = match s.c {
        3 => t.clone(),
        1 => Tensor4::from_fn(Shape4::new(s.n, 3, s.h, s.w), |b, _, y, x| {
            t.get(b, 0, y, x)
        })
        .ok()?,
        c => {
            eprintln!("prism: input has {c} channels, not writing input images");
            return None;
        }
    };
    let (lo, hi) = rgb
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo >= 0.0 && hi <= 1.0 {
        return Some(rgb);
    }
    let span = hi - lo;
    let data = rgb
        .data()
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.5 })
        .collect();
    Tensor4::new(rgb.shape(), data).ok()
}
