use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ridgefield::coarse::{estimate_coarse, CoarseOptions, OrientationField};
use ridgefield::imgio::{block_grid, load_image, load_mask, save_pgm, encode_pgm, encode_png, BlockMask, GrayImage};
use ridgefield::indexing::{extract_feature, FilterMode, IndexStore, DEFAULT_TAU};
use ridgefield::model::{
    fit_batch, load_model, reconstruct, save_model, FitConfig, OrientationModel, Provenance, Variant,
    DEFAULT_BLOCK_SIZE, DEFAULT_ORDER, DEFAULT_SPARSITY, DEFAULT_TOL,
};
use ridgefield::par::Execution;
use ridgefield::render::{render_svg, RenderStyle};
use ridgefield::sensing::{LogBase, DEFAULT_C};
use ridgefield::synth::{field_image, generate, SynthOutput, SynthSpec};
use ridgefield::BasisSpec;

/// Fingerprint orientation fields: coarse estimation, Fourier-basis models,
/// sparse indexing and SVG rendering.
#[derive(Parser)]
#[command(name = "ridgefield", version, about)]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Block-wise gradient orientation estimate of a PGM/PNG image.
    Estimate(EstimateArgs),
    /// Fit an orientation model to one or more field files.
    Fit(FitArgs),
    /// Draw a field or model as an SVG line field.
    Render(RenderArgs),
    /// Build, modify or query a sparse-coefficient index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Write synthetic images, fields and masks.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args)]
struct EstimateArgs {
    image: PathBuf,
    /// Block mask (one pixel per block, or a full-size pixel mask).
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    /// Blocks below this coherence are marked invalid.
    #[arg(long, default_value_t = 0.0)]
    min_coherence: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Classical,
    Sparse,
    Cs,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Classical => Variant::Classical,
            VariantArg::Sparse => Variant::Sparse,
            VariantArg::Cs => Variant::CompressedSparse,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LogBaseArg {
    E,
    #[value(name = "10")]
    Ten,
}

#[derive(Args)]
struct FitArgs {
    /// Field JSON files. With more than one, `--out` is a directory.
    #[arg(required = true)]
    fields: Vec<PathBuf>,
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    k: usize,
    #[arg(long = "S", default_value_t = DEFAULT_SPARSITY)]
    sparsity: usize,
    #[arg(long = "C", default_value_t = DEFAULT_C)]
    c: f64,
    #[arg(long, value_enum, default_value_t = LogBaseArg::E)]
    log_base: LogBaseArg,
    /// Sensing-matrix seed.
    #[arg(long, env = "RIDGEFIELD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Model or field JSON.
    input: PathBuf,
    /// Evaluation grid for models, as COLSxROWS (default: the fit grid).
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Underlay image.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = RenderStyle::default().stroke_length)]
    stroke_length: f64,
    #[arg(long, default_value_t = RenderStyle::default().stroke_width)]
    stroke_width: f64,
    /// Draw on white even when an image is given.
    #[arg(long)]
    no_overlay: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Exact,
    Overlap,
    None,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Create an index from sparse models; ids are file stems.
    Build {
        index: PathBuf,
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Add sparse models to an existing index.
    Add {
        index: PathBuf,
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Remove records by id.
    Remove {
        index: PathBuf,
        #[arg(required = true)]
        ids: Vec<String>,
    },
    /// Rank records by similarity to a probe model.
    Query {
        index: PathBuf,
        probe: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long, value_enum, default_value_t = FilterArg::Overlap)]
        filter: FilterArg,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    k: usize,
    #[arg(long, env = "RIDGEFIELD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    cols: usize,
    #[arg(long, default_value_t = 32)]
    rows: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    /// Field JSON; generator metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Parallel sinusoidal ridges at one angle.
    UniformRidges {
        /// Ridge angle in degrees, counter-clockwise from the x-axis.
        #[arg(long)]
        angle: f64,
        #[arg(long, default_value_t = 10.0)]
        period: f64,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        /// Output image; `.png` writes PNG, anything else PGM.
        #[arg(long)]
        out: PathBuf,
    },
    /// Field from dense random coefficients.
    FomfeField(GridArgs),
    /// Field from random coefficients with exactly S nonzeros per half.
    SparseFomfeField {
        #[arg(long = "S", default_value_t = DEFAULT_SPARSITY)]
        sparsity: usize,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Field from a random phase ramp, exactly representable at order k.
    RampField(GridArgs),
    /// Ridge image whose blocks follow a field.
    FieldImage {
        field: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        period: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-block mask that is valid inside a rectangle of blocks.
    Mask {
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        rows: usize,
        /// Valid block rectangle C0,R0,C1,R1 (end-exclusive).
        #[arg(long, value_parser = parse_rect)]
        rect: [usize; 4],
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (c, r) = s
        .split_once(['x', 'X', '×'])
        .ok_or_else(|| format!("expected COLSxROWS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(c)?, parse(r)?))
}

fn parse_rect(s: &str) -> std::result::Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected C0,R0,C1,R1, got {s:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command, exec: Execution) -> Result<()> {
    match command {
        Command::Estimate(args) => estimate(args, exec),
        Command::Fit(args) => fit(args, exec),
        Command::Render(args) => render(args),
        Command::Index(cmd) => index(cmd, exec),
        Command::Synth(cmd) => synth(cmd),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn file_name(path: &Path) -> Option<String> {
    path.file_name().map(|n| n.to_string_lossy().into_owned())
}

fn estimate(args: EstimateArgs, exec: Execution) -> Result<()> {
    let image = load_image(&args.image)?;
    let (cols, rows) = block_grid(&image, args.block_size)?;
    let mask = args
        .mask
        .as_ref()
        .map(|p| load_mask(p, cols, rows, args.block_size))
        .transpose()?;
    let opts = CoarseOptions {
        min_coherence: args.min_coherence,
        execution: exec,
    };
    let field = estimate_coarse(&image, args.block_size, mask.as_ref(), &opts)?;
    field.save(&args.out)?;
    print_json(&json!({
        "cols": cols,
        "rows": rows,
        "valid_blocks": field.count_valid(),
        "mean_coherence": field.mean_coherence(),
    }))
}

fn fit(args: FitArgs, exec: Execution) -> Result<()> {
    let config = FitConfig {
        spec: BasisSpec::with_order(args.k),
        sparsity: args.sparsity,
        tol: args.tol,
        c: args.c,
        log_base: match args.log_base {
            LogBaseArg::E => LogBase::Natural,
            LogBaseArg::Ten => LogBase::Ten,
        },
        seed: args.seed,
        execution: exec,
    };
    let fields = args
        .fields
        .iter()
        .map(|p| OrientationField::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<PathBuf> = if args.fields.len() == 1 {
        vec![args.out.clone()]
    } else {
        fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        args.fields
            .iter()
            .map(|p| {
                let stem = p.file_stem().unwrap_or_default().to_string_lossy();
                args.out.join(format!("{stem}.model.json"))
            })
            .collect()
    };
    let results = fit_batch(&fields, args.variant.into(), &config);
    for (((src, dst), field), result) in args.fields.iter().zip(&outputs).zip(&fields).zip(results) {
        let (mut model, report) = result.with_context(|| format!("fitting {}", src.display()))?;
        model.provenance = Provenance {
            source: file_name(src),
            masked: Some(field.count_valid() < field.len()),
            ..Default::default()
        };
        save_model(&model, dst)?;
        print_json(&report)?;
    }
    Ok(())
}

/// Model files carry a `variant` key; field files do not.
fn load_render_input(path: &Path, grid: Option<(usize, usize)>) -> Result<OrientationField> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("variant").is_some() {
        let model = OrientationModel::from_json(&text)?;
        Ok(reconstruct(&model, grid.unwrap_or(model.grid), None)?)
    } else {
        if grid.is_some() {
            bail!("--grid applies to models only; {} is a field", path.display());
        }
        Ok(OrientationField::from_json(&text)?)
    }
}

fn render(args: RenderArgs) -> Result<()> {
    let field = load_render_input(&args.input, args.grid)?;
    let underlay: Option<GrayImage> = args.image.as_ref().map(load_image).transpose()?;
    let style = RenderStyle {
        stroke_length: args.stroke_length,
        stroke_width: args.stroke_width,
        overlay: !args.no_overlay,
    };
    let svg = render_svg(&field, underlay.as_ref(), &style)?;
    write_file(&args.out, svg.as_bytes())
}

fn model_id(path: &Path) -> Result<String> {
    let stem = path
        .file_name()
        .ok_or_else(|| anyhow!("no file name in {}", path.display()))?
        .to_string_lossy();
    let stem = stem.strip_suffix(".json").unwrap_or(&stem);
    Ok(stem.strip_suffix(".model").unwrap_or(stem).to_string())
}

fn add_models(store: &mut Option<IndexStore>, models: &[PathBuf]) -> Result<()> {
    for path in models {
        let model = load_model(path)?;
        let feature = extract_feature(&model, model_id(path)?)
            .with_context(|| format!("indexing {}", path.display()))?;
        let s = store.get_or_insert_with(|| IndexStore::new(feature.k, feature.sparsity));
        s.insert(feature)
            .with_context(|| format!("indexing {}", path.display()))?;
    }
    Ok(())
}

fn index(cmd: IndexCommand, exec: Execution) -> Result<()> {
    match cmd {
        IndexCommand::Build { index, models } => {
            let mut store = None;
            add_models(&mut store, &models)?;
            let store = store.expect("at least one model");
            store.persist(&index)?;
            eprintln!("{} records", store.len());
        }
        IndexCommand::Add { index, models } => {
            let mut store = Some(IndexStore::open(&index)?);
            add_models(&mut store, &models)?;
            let store = store.expect("opened");
            store.persist(&index)?;
            eprintln!("{} records", store.len());
        }
        IndexCommand::Remove { index, ids } => {
            let mut store = IndexStore::open(&index)?;
            for id in &ids {
                store.remove(id)?;
            }
            store.persist(&index)?;
            eprintln!("{} records", store.len());
        }
        IndexCommand::Query {
            index,
            probe,
            top_k,
            filter,
            tau,
        } => {
            let store = IndexStore::open(&index)?;
            let model = load_model(&probe)?;
            let feature = extract_feature(&model, model_id(&probe)?)
                .with_context(|| format!("probe {}", probe.display()))?;
            let mode = match filter {
                FilterArg::Exact => FilterMode::ExactSupport,
                FilterArg::Overlap => FilterMode::Overlap(tau),
                FilterArg::None => FilterMode::None,
            };
            let result = store.query_with(&feature, top_k, mode, exec)?;
            eprintln!("{} candidates", result.candidates);
            let mut out = std::io::stdout().lock();
            for hit in &result.hits {
                writeln!(out, "{}\t{:.6}", hit.id, hit.similarity)?;
            }
        }
    }
    Ok(())
}

fn save_image(path: &Path, image: &GrayImage) -> Result<()> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let bytes = encode_png(image.width(), image.height(), &image.to_u8())?;
        write_file(path, &bytes)
    } else {
        Ok(save_pgm(path, image)?)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn write_synth(spec: SynthSpec, out: &Path) -> Result<()> {
    match generate(&spec)? {
        SynthOutput::Image(img) => save_image(out, &img),
        SynthOutput::Field { field, meta } => {
            field.save(out)?;
            write_file(&sidecar(out), serde_json::to_string(&meta)?.as_bytes())
        }
    }
}

fn synth(cmd: SynthCommand) -> Result<()> {
    let grid_spec = |g: &GridArgs| (g.k, g.seed, g.cols, g.rows, g.block_size);
    match cmd {
        SynthCommand::UniformRidges {
            angle,
            period,
            width,
            height,
            out,
        } => write_synth(
            SynthSpec::UniformRidges {
                angle: angle.to_radians(),
                period,
                width,
                height,
            },
            &out,
        ),
        SynthCommand::FomfeField(g) => {
            let (k, seed, cols, rows, w) = grid_spec(&g);
            write_synth(SynthSpec::FomfeField { k, seed, cols, rows, w }, &g.out)
        }
        SynthCommand::SparseFomfeField { sparsity, grid: g } => {
            let (k, seed, cols, rows, w) = grid_spec(&g);
            write_synth(
                SynthSpec::SparseFomfeField {
                    k,
                    sparsity,
                    seed,
                    cols,
                    rows,
                    w,
                },
                &g.out,
            )
        }
        SynthCommand::RampField(g) => {
            let (k, seed, cols, rows, w) = grid_spec(&g);
            write_synth(SynthSpec::RampField { k, seed, cols, rows, w }, &g.out)
        }
        SynthCommand::FieldImage { field, period, out } => {
            let field = OrientationField::load(&field)?;
            save_image(&out, &field_image(&field, period)?)
        }
        SynthCommand::Mask {
            cols,
            rows,
            rect: [c0, r0, c1, r1],
            out,
        } => {
            if c0 >= c1 || r0 >= r1 || c1 > cols || r1 > rows {
                bail!("rectangle {c0},{r0},{c1},{r1} is empty or outside {cols}x{rows}");
            }
            let mask = BlockMask::rect(cols, rows, c0, r0, c1, r1);
            write_file(&out, &encode_pgm(cols, rows, &mask.to_u8()))
        }
    }
}
