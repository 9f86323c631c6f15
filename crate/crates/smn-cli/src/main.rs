//! `smn`: generate streams, seed weights, run the engines, verify their
//! bitwise equivalence and report metering formulas.
//!
//! Exit codes: 0 success (or verified equivalent), 1 usage error, 2 I/O or
//! format error, 3 verification divergence.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use smn_cli::scene::{gen_synthetic, SceneConfig, SceneObject};
use smn_cli::stream::{Dtype, LabelWriter, StreamReader};
use smn_core::engine::{
    verify_equivalence, DivergenceSite, Engine, FaultInjection, PatchEngine, ShiftEngine,
    SmnEngine, Status,
};
use smn_core::meter::{
    expected_front_cells, expected_recompute_cells, expected_smn_memory_cells,
    textbook_front_cells, textbook_memory_nodes, textbook_recompute_cells,
};
use smn_core::weights::{init_weights, load_weights, save_weights};
use smn_core::{FeatureMap, Mode, PyramidSpec, Weights};

#[derive(Parser)]
#[command(
    name = "smn",
    version,
    about = "Streaming temporal-pyramid segmentation: patch, shift and shift-memory engines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic SMNS stream of moving bars/blocks
    Gen(GenArgs),
    /// Write a seeded SMNW weight file
    InitWeights(InitWeightsArgs),
    /// Stream a file through one engine, writing SMNL labels
    Run(RunArgs),
    /// Check naive shift and shift-memory for bitwise equivalence
    Verify(VerifyArgs),
    /// Measure cells/frame and wall time per engine
    Bench(BenchArgs),
    /// Print exact metering expectations next to the textbook closed forms
    Formulas(FormulasArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Line,
    Video,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Line => Mode::Line,
            ModeArg::Video => Mode::Video,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DtypeArg {
    U8,
    F32,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Patch,
    Shift,
    Smn,
}

#[derive(clap::Args)]
struct GenArgs {
    /// Output SMNS file ("-" for stdout)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    width: usize,
    /// Required in video mode
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    frames: u64,
    /// Objects as "width,velocity,intensity,class[;...]"
    #[arg(long, default_value = "")]
    objects: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    background: f32,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, value_enum, default_value_t = DtypeArg::U8)]
    dtype: DtypeArg,
}

#[derive(clap::Args)]
struct InitWeightsArgs {
    /// Output SMNW file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    levels: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value_t = 1)]
    in_channels: usize,
    /// Encoder widths per level, comma separated; default derives from
    /// `[16,32,32,64,64]`
    #[arg(long)]
    channels: Option<String>,
    /// Decoder widths, comma separated; defaults to the encoder widths
    #[arg(long)]
    decoder_channels: Option<String>,
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    engine: EngineArg,
    #[arg(long)]
    weights: PathBuf,
    /// Input SMNS stream ("-" for stdin)
    #[arg(long)]
    input: PathBuf,
    /// Output SMNL label file
    #[arg(long)]
    out: PathBuf,
    /// Optional per-frame meter CSV (rows "frame,level,cells,mults")
    #[arg(long)]
    meter: Option<PathBuf>,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Frames to compare (must exceed the receptive field 2T-1)
    #[arg(long)]
    frames: usize,
    /// Corrupt one shift-memory ring slot before the given frame:
    /// "FRAME:LEVEL" (test hook; a clean run must then report divergence)
    #[arg(long)]
    inject_corruption: Option<String>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

#[derive(clap::Args)]
struct FormulasArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    levels: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: Option<usize>,
}

enum AppError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Divergence(m) => write!(f, "{m}"),
        }
    }
}

impl From<smn_core::Error> for AppError {
    fn from(e: smn_core::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

type AppResult<T> = Result<T, AppError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::InitWeights(args) => cmd_init_weights(args),
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Formulas(args) => cmd_formulas(args),
    }
}

fn open_input(path: &Path) -> AppResult<Box<dyn Read>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(std::io::stdin().lock()));
    }
    let f = File::open(path)
        .map_err(|e| AppError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

fn create_output(path: &Path) -> AppResult<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(std::io::stdout().lock()));
    }
    let f = File::create(path)
        .map_err(|e| AppError::Data(format!("cannot create {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn parse_objects(spec: &str) -> AppResult<Vec<SceneObject>> {
    let mut objects = Vec::new();
    for (i, part) in spec
        .split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .enumerate()
    {
        let fields: Vec<&str> = part.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(AppError::Usage(format!(
                "object {i}: expected \"width,velocity,intensity,class\", got {part:?}"
            )));
        }
        let parse = |what: &str, s: &str| -> AppResult<f64> {
            s.parse::<f64>()
                .map_err(|_| AppError::Usage(format!("object {i}: bad {what} {s:?}")))
        };
        objects.push(SceneObject {
            width: parse("width", fields[0])? as usize,
            velocity: parse("velocity", fields[1])?,
            intensity: parse("intensity", fields[2])? as f32,
            class_id: parse("class", fields[3])? as u32,
        });
    }
    Ok(objects)
}

fn parse_channel_list(s: &str) -> AppResult<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| AppError::Usage(format!("bad channel width {p:?}")))
        })
        .collect()
}

/// Default encoder widths: the first `levels` of `[16,32,32,64,64]`, padded
/// with 64 for deeper pyramids.
fn default_channels(levels: usize) -> Vec<usize> {
    const BASE: [usize; 5] = [16, 32, 32, 64, 64];
    (0..levels)
        .map(|i| if i < BASE.len() { BASE[i] } else { 64 })
        .collect()
}

fn cmd_gen(args: GenArgs) -> AppResult<()> {
    let mode: Mode = args.mode.into();
    let height = match mode {
        Mode::Line => {
            if args.height.is_some() {
                return Err(AppError::Usage("--height is video-only".into()));
            }
            1
        }
        Mode::Video => args
            .height
            .ok_or_else(|| AppError::Usage("--height required in video mode".into()))?,
    };
    let cfg = SceneConfig {
        mode,
        width: args.width,
        height,
        channels: args.channels,
        frames: args.frames,
        seed: args.seed,
        background: args.background,
        objects: parse_objects(&args.objects)?,
    };
    cfg.validate(None)
        .map_err(|e| AppError::Usage(e.to_string()))?;
    let dtype = match args.dtype {
        DtypeArg::U8 => Dtype::U8,
        DtypeArg::F32 => Dtype::F32,
    };
    let mut out = create_output(&args.out)?;
    let frames = gen_synthetic(&cfg, dtype, &mut out)?;
    out.flush().map_err(smn_core::Error::from)?;
    eprintln!("wrote {frames} frames to {}", args.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_spec(
    mode: Mode,
    levels: usize,
    width: usize,
    height: Option<usize>,
    in_channels: usize,
    channels: Option<&str>,
    decoder_channels: Option<&str>,
    classes: usize,
) -> AppResult<PyramidSpec> {
    let height = match mode {
        Mode::Line => {
            if height.is_some() {
                return Err(AppError::Usage("--height is video-only".into()));
            }
            1
        }
        Mode::Video => {
            height.ok_or_else(|| AppError::Usage("--height required in video mode".into()))?
        }
    };
    let channels = match channels {
        Some(s) => parse_channel_list(s)?,
        None => default_channels(levels),
    };
    let decoder = match decoder_channels {
        Some(s) => parse_channel_list(s)?,
        None => channels.clone(),
    };
    PyramidSpec::new(
        mode,
        levels,
        width,
        height,
        in_channels,
        channels,
        decoder,
        classes,
    )
    .map_err(|e| AppError::Usage(e.to_string()))
}

fn cmd_init_weights(args: InitWeightsArgs) -> AppResult<()> {
    let spec = build_spec(
        args.mode.into(),
        args.levels,
        args.width,
        args.height,
        args.in_channels,
        args.channels.as_deref(),
        args.decoder_channels.as_deref(),
        args.classes,
    )?;
    let weights = init_weights(&spec, args.seed);
    let mut out = create_output(&args.out)?;
    save_weights(&weights, &spec, &mut out)?;
    out.flush().map_err(smn_core::Error::from)?;
    eprintln!(
        "wrote weights for {} L={} W={} to {}",
        spec.mode(),
        spec.levels(),
        spec.width(),
        args.out.display()
    );
    Ok(())
}

fn load_weight_file(path: &Path) -> AppResult<(PyramidSpec, Weights)> {
    let mut src = open_input(path)?;
    Ok(load_weights(&mut src)?)
}

fn check_stream_matches_spec(
    header: &smn_cli::stream::StreamHeader,
    spec: &PyramidSpec,
) -> AppResult<()> {
    let ok = header.mode == spec.mode()
        && header.width as usize == spec.width()
        && header.frame_height() == spec.level_height(0)
        && header.channels as usize == spec.in_channels();
    if ok {
        Ok(())
    } else {
        Err(AppError::Data(format!(
            "stream geometry ({} {}x{} ch{}) does not match weights ({} {}x{} ch{})",
            header.mode,
            header.frame_height(),
            header.width,
            header.channels,
            spec.mode(),
            spec.level_height(0),
            spec.width(),
            spec.in_channels()
        )))
    }
}

fn build_engine(kind: EngineArg, spec: PyramidSpec, weights: Weights) -> Box<dyn Engine> {
    match kind {
        EngineArg::Patch => Box::new(PatchEngine::new(spec, weights)),
        EngineArg::Shift => Box::new(ShiftEngine::new(spec, weights)),
        EngineArg::Smn => Box::new(SmnEngine::new(spec, weights)),
    }
}

fn cmd_run(args: RunArgs) -> AppResult<()> {
    let (spec, weights) = load_weight_file(&args.weights)?;
    let mut reader = StreamReader::new(open_input(&args.input)?)?;
    check_stream_matches_spec(&reader.header, &spec)?;

    let mut labels_out = LabelWriter::new(
        create_output(&args.out)?,
        spec.mode(),
        spec.width(),
        spec.height(),
    )?;
    let mut meter_out = match &args.meter {
        Some(p) => Some(create_output(p)?),
        None => None,
    };

    let mut engine = build_engine(args.engine, spec, weights);
    let mut frames = 0u64;
    let mut ready = 0u64;
    while let Some(frame) = reader.next_frame()? {
        let out = engine.step(frame)?;
        if let Some(m) = meter_out.as_mut() {
            for (level, tally) in out.meter.levels().iter().enumerate() {
                writeln!(
                    m,
                    "{},{},{},{}",
                    out.frame_index, level, tally.cells, tally.mults
                )
                .map_err(smn_core::Error::from)?;
            }
        }
        if out.status == Status::Ready {
            let labels = out.labels.as_ref().expect("ready output has labels");
            labels_out.write(out.frame_index, labels)?;
            ready += 1;
        }
        frames += 1;
    }
    labels_out.finish()?;
    if let Some(mut m) = meter_out {
        m.flush().map_err(smn_core::Error::from)?;
    }
    eprintln!(
        "{}: processed {frames} frames, wrote {ready} label records to {}",
        engine.name(),
        args.out.display()
    );
    Ok(())
}

fn parse_fault(s: &str) -> AppResult<FaultInjection> {
    let (frame, level) = s
        .split_once(':')
        .ok_or_else(|| AppError::Usage(format!("expected FRAME:LEVEL, got {s:?}")))?;
    let frame = frame
        .trim()
        .parse::<u64>()
        .map_err(|_| AppError::Usage(format!("bad fault frame {frame:?}")))?;
    let level = level
        .trim()
        .parse::<usize>()
        .map_err(|_| AppError::Usage(format!("bad fault level {level:?}")))?;
    Ok(FaultInjection { frame, level })
}

fn read_n_frames(reader: &mut StreamReader<Box<dyn Read>>, n: usize) -> AppResult<Vec<FeatureMap>> {
    let mut frames = Vec::with_capacity(n);
    while frames.len() < n {
        match reader.next_frame()? {
            Some(f) => frames.push(f),
            None => {
                return Err(AppError::Data(format!(
                    "stream holds only {} frames, need {n}",
                    frames.len()
                )))
            }
        }
    }
    Ok(frames)
}

fn cmd_verify(args: VerifyArgs) -> AppResult<()> {
    let (spec, weights) = load_weight_file(&args.weights)?;
    let mut reader = StreamReader::new(open_input(&args.input)?)?;
    check_stream_matches_spec(&reader.header, &spec)?;
    if args.frames <= spec.receptive_field() {
        return Err(AppError::Usage(format!(
            "--frames must exceed the receptive field {} (got {})",
            spec.receptive_field(),
            args.frames
        )));
    }
    let fault = args
        .inject_corruption
        .as_deref()
        .map(parse_fault)
        .transpose()?;
    let frames = read_n_frames(&mut reader, args.frames)?;
    let report = verify_equivalence(&spec, &weights, frames, args.frames, fault)?;

    if let Some(d) = &report.divergence {
        let site = match d.site {
            DivergenceSite::FrontLevel(l) => format!("front level {l}"),
            DivergenceSite::Labels => "labels".into(),
        };
        return Err(AppError::Divergence(format!(
            "divergence at frame {}, {site}, cell {}: shift bits 0x{:08x}, smn bits 0x{:08x}",
            d.frame, d.index, d.shift_bits, d.smn_bits
        )));
    }
    let failed_periods: Vec<_> = report.period_checks.iter().filter(|c| !c.ok).collect();
    if !failed_periods.is_empty() {
        let c = failed_periods[0];
        return Err(AppError::Divergence(format!(
            "period property violated at level {}, k={}, frame {}",
            c.level, c.k, c.time
        )));
    }
    println!(
        "equivalent: {} frames run, {} ready frames compared bitwise, {} period checks passed",
        report.frames_run,
        report.ready_frames,
        report.period_checks.len()
    );
    Ok(())
}

fn median_ns(mut samples: Vec<u128>) -> u128 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

fn cmd_bench(args: BenchArgs) -> AppResult<()> {
    if args.repeat == 0 {
        return Err(AppError::Usage("--repeat must be positive".into()));
    }
    let (spec, weights) = load_weight_file(&args.weights)?;
    let mut reader = StreamReader::new(open_input(&args.input)?)?;
    check_stream_matches_spec(&reader.header, &spec)?;
    if args.frames <= spec.receptive_field() {
        return Err(AppError::Usage(format!(
            "--frames must exceed the receptive field {} (got {})",
            spec.receptive_field(),
            args.frames
        )));
    }
    let frames = read_n_frames(&mut reader, args.frames)?;

    println!(
        "{:<6} {:>14} {:>14} {:>12} {:>16}",
        "engine", "cells/frame", "expected", "mem nodes", "ns/frame(med)"
    );
    for kind in [EngineArg::Patch, EngineArg::Shift, EngineArg::Smn] {
        let mut engine = build_engine(kind, spec.clone(), weights.clone());
        let expected = match kind {
            EngineArg::Smn => expected_front_cells(&spec),
            // patch pays the same window pyramid, once per stride-T output
            EngineArg::Patch | EngineArg::Shift => expected_recompute_cells(&spec),
        };
        let mut measured = 0u64;
        let mut times = Vec::with_capacity(args.repeat);
        for _ in 0..args.repeat {
            engine.reset();
            let start = Instant::now();
            for f in &frames {
                let out = engine.step(f.clone())?;
                if out.status == Status::Ready {
                    measured = out.meter.total_cells();
                }
            }
            let elapsed = start.elapsed().as_nanos();
            times.push(elapsed / frames.len() as u128);
        }
        let audit = engine.audit();
        println!(
            "{:<6} {:>14} {:>14} {:>12} {:>16}",
            engine.name(),
            measured,
            expected,
            audit.total_node_cells(),
            median_ns(times)
        );
    }
    println!(
        "(cells are channel-free node evaluations; patch rows count one window pyramid per stride-T output)"
    );
    Ok(())
}

fn cmd_formulas(args: FormulasArgs) -> AppResult<()> {
    let mode: Mode = args.mode.into();
    // channel widths do not enter the node-cell figures; a unit-width spec
    // carries the geometry
    let levels = args.levels;
    let spec = build_spec(
        mode,
        levels,
        args.width,
        args.height,
        1,
        Some(&vec!["1"; levels].join(",")),
        None,
        1,
    )?;
    let t = spec.frames() as u64;
    let front = expected_front_cells(&spec);
    let recompute = expected_recompute_cells(&spec);
    let mem = expected_smn_memory_cells(&spec);
    let window_nodes = spec.receptive_field() as u64 * spec.level_cells(0) as u64;

    println!(
        "mode={} levels={} T={} width={}{}",
        spec.mode(),
        spec.levels(),
        t,
        spec.width(),
        match mode {
            Mode::Line => String::new(),
            Mode::Video => format!(" height={}", spec.height()),
        }
    );
    let (front_name, recompute_name, mem_name) = match mode {
        Mode::Line => ("2T-1", "4(4^L-1)/3 ~ 4T^2/3", "T log T"),
        Mode::Video => ("4(T^2-1)/3 ~ T^2", "8(2^3L-1)/7 ~ T^3", "T^2"),
    };
    println!("{:<34} {:>10} {:>10}", "metric", "exact", "textbook");
    println!(
        "{:<34} {:>10} {:>10}  [{}]",
        "smn cells/frame (front column)",
        front,
        textbook_front_cells(mode, levels),
        front_name
    );
    println!(
        "{:<34} {:>10} {:>10}  [{}]",
        "shift cells/frame (window pyramid)",
        recompute,
        textbook_recompute_cells(mode, levels),
        recompute_name
    );
    println!(
        "{:<34} {:>10} {:>10}  [{}]",
        "smn memory node cells",
        mem.node_cells,
        textbook_memory_nodes(mode, levels),
        mem_name
    );
    println!(
        "{:<34} {:>10} {:>10}",
        "shift raw window node cells (R*W*H)", window_nodes, "-"
    );
    Ok(())
}
