use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use weavecount::canvasmap::{
    pair_compare, render, render_pair, sweep, Axis, DensityMap, Method, OracleMask, Palette, RenderOptions, Segmenter,
    SweepParams, Transform,
};
use weavecount::crossings::{binarize, extract_centroids, CentroidSet, ThresholdRule, DEFAULT_MIN_AREA};
use weavecount::dataset::{
    augment_dataset, load_dataset, random_weave, save_sample, synth_examples, synth_fabric_rect, synth_step_canvas,
    write_manifest, LabeledSample, ManifestRow, Split, WeaveParams,
};
use weavecount::freqcount::{fa_on_mask, ft_density, FtParams, Taper};
use weavecount::imgproc::{crop, load_image, save_image, write_sidecar, BinaryMask, BitDepth, GrayImage};
use weavecount::nn::io::{inspect_weights, load_weights, save_weights};
use weavecount::nn::model::{NetConfig, Network, Variant};
use weavecount::nn::train::{train, TrainConfig};
use weavecount::preprocess::{preprocess, PreprocessParams};
use weavecount::spatialcount::{estimate, DensityEstimate, ScParams};
use weavecount::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "weavecount",
    version,
    about = "Thread counting for plain-weave canvas X-ray images"
)]
struct Cli {
    /// Worker threads; 1 runs everything serially [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// key=value file preloading any flag of the subcommand; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Local mean removal, local std normalization, histogram clip and rescale
    Preprocess(PreprocessCmd),
    /// Synthetic weave sample, sample dataset or density-step canvas
    Synth(SynthCmd),
    /// Export the augmented 200x200 examples of a sample dataset
    Augment(AugmentCmd),
    /// Train a crossing segmentation network
    Train(TrainCmd),
    /// Mean normalized density error per axis against ground truth
    Eval(EvalCmd),
    /// Crossing probability map, mask and centroids of an image
    Segment(SegmentCmd),
    /// Spatial thread count from centroids or a probability map
    Count(CountCmd),
    /// Fourier thread count of an image or a crossing mask; non-square input is cut to its central square
    Ft(FtCmd),
    /// Whole-canvas density maps as CSV and PNG
    Map(MapCmd),
    /// Align two canvas maps and report the best lag
    Compare(CompareCmd),
    /// Print the header of a weight file
    #[command(name = "weights-inspect")]
    WeightsInspect(InspectCmd),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Input image (PGM or PNG, single channel)
    #[arg(long = "in", value_name = "IMAGE")]
    input: PathBuf,
    /// Pixels per cm; overrides the <image>.meta sidecar
    #[arg(long)]
    ppc: Option<f64>,
}

#[derive(Args, Debug)]
struct PreArgs {
    /// Local window side in pixels, odd
    #[arg(long, default_value_t = 13)]
    window: usize,
    /// Floor added to the local standard deviation
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Per-bin probability below which extreme histogram bins are clipped
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    /// Histogram bins for clipping
    #[arg(long, default_value_t = 256)]
    bins: usize,
}

impl PreArgs {
    fn params(&self) -> PreprocessParams {
        PreprocessParams {
            w: self.window,
            epsilon: self.epsilon,
            gamma: self.gamma,
            bins: self.bins,
        }
    }
}

#[derive(Args, Debug)]
struct ScArgs {
    /// Nearest neighbors per centroid
    #[arg(long, default_value_t = 9)]
    m: usize,
    /// Half-width of the direction cones, degrees
    #[arg(long, default_value_t = 25.0)]
    alpha: f64,
    /// Percentile trimmed from each tail of the spacings
    #[arg(long, default_value_t = 10.0)]
    q: f64,
}

impl ScArgs {
    fn params(&self, ppc: f64) -> ScParams {
        ScParams {
            m: self.m,
            alpha_deg: self.alpha,
            q: self.q,
            ppc,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaperArg {
    Hann,
    None,
}

#[derive(Args, Debug)]
struct FtArgs {
    /// Zero-padded transform side
    #[arg(long = "n-fft", default_value_t = 2048)]
    n_fft: usize,
    /// Search band in thr/cm, LO:HI
    #[arg(long, default_value = "4:30", value_parser = parse_range)]
    band: (f64, f64),
    /// Half-width of the axis wedges, degrees
    #[arg(long, default_value_t = 15.0)]
    wedge: f64,
    #[arg(long, value_enum, default_value_t = TaperArg::Hann)]
    taper: TaperArg,
}

impl FtArgs {
    fn params(&self) -> FtParams {
        FtParams {
            n_fft: self.n_fft,
            band: self.band,
            wedge_deg: self.wedge,
            taper: match self.taper {
                TaperArg::Hann => Taper::Hann,
                TaperArg::None => Taper::None,
            },
        }
    }
}

#[derive(Args, Debug)]
struct WeaveArgs {
    /// Crossings per cm walking along x (pitch of the vertically running threads)
    #[arg(long = "h", default_value_t = 12.0)]
    h: f64,
    /// Crossings per cm walking along y (pitch of the horizontally running threads)
    #[arg(long = "v", default_value_t = 12.0)]
    v: f64,
    /// Counter-clockwise weave rotation, degrees
    #[arg(long, default_value_t = 0.0)]
    tilt: f64,
    /// Thread position jitter as a fraction of the spacing
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Thread width as a fraction of the spacing
    #[arg(long = "thread-width", default_value_t = 0.7)]
    thread_width: f64,
    /// Gaussian noise sigma
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Illumination ramp amplitude
    #[arg(long, default_value_t = 0.0)]
    gradient: f64,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    /// Pixels per cm
    #[arg(long, default_value_t = 200.0)]
    ppc: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl WeaveArgs {
    fn params(&self) -> WeaveParams {
        WeaveParams {
            h_density: self.h,
            v_density: self.v,
            tilt_deg: self.tilt,
            spacing_jitter: self.jitter,
            thread_width_ratio: self.thread_width,
            noise_sigma: self.noise,
            illumination_gradient: self.gradient,
            contrast: self.contrast,
            ppc: self.ppc,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct PreprocessCmd {
    #[command(flatten)]
    input: InputArgs,
    /// Output image; 16-bit, format from the extension
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pre: PreArgs,
}

#[derive(Args, Debug)]
struct SynthCmd {
    #[command(flatten)]
    weave: WeaveArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Side of a square sample in pixels
    #[arg(long, default_value_t = 300)]
    size: usize,
    /// Width in pixels; overrides --size
    #[arg(long)]
    width: Option<usize>,
    /// Height in pixels; overrides --size
    #[arg(long)]
    height: Option<usize>,
    /// Horizontal density right of the seam; makes a step canvas split at width/2
    #[arg(long = "right-h")]
    right_h: Option<f64>,
    /// Vertical density right of the seam; makes a step canvas split at width/2
    #[arg(long = "right-v")]
    right_v: Option<f64>,
    /// Write a dataset of N random weaves (with manifest.csv) instead of one sample
    #[arg(long, conflicts_with_all = ["right_h", "right_v"])]
    count: Option<usize>,
    /// Density range of the random weaves, LO:HI thr/cm
    #[arg(long, default_value = "4:30", value_parser = parse_range)]
    range: (f64, f64),
    /// Every K-th dataset sample is assigned to validation
    #[arg(long = "val-every", default_value_t = 5)]
    val_every: usize,
}

#[derive(Args, Debug)]
struct AugmentCmd {
    /// Sample dataset directory with manifest.csv
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the examples
    #[arg(long)]
    out: PathBuf,
    /// Only augment samples of this split
    #[arg(long)]
    split: Option<Split>,
    /// Repeat counts per source, SOURCE=K[,SOURCE=K...]
    #[arg(long, value_delimiter = ',', value_parser = parse_multiplicity)]
    multiplicity: Vec<(String, usize)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Sample dataset directory with manifest.csv (train and val splits)
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Train on N generated examples instead of a dataset
    #[arg(long)]
    synthetic: Option<usize>,
    /// Example side for --synthetic
    #[arg(long, default_value_t = 200)]
    size: usize,
    /// Density range for --synthetic, LO:HI thr/cm
    #[arg(long, default_value = "4:30", value_parser = parse_range)]
    range: (f64, f64),
    /// Repeat counts per source, SOURCE=K[,SOURCE=K...]
    #[arg(long, value_delimiter = ',', value_parser = parse_multiplicity)]
    multiplicity: Vec<(String, usize)>,
    /// inc-dice, unet-th, unet-dice or orig-inc-dice
    #[arg(long, default_value = "inc-dice")]
    variant: Variant,
    /// Reduced network, DEPTH:N0 (levels and first-level filters)
    #[arg(long, value_parser = parse_toy)]
    toy: Option<(usize, usize)>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Learning rate [default: the variant's rate]
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output weight file
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV
    #[arg(long)]
    history: Option<PathBuf>,
    /// Dataset images are already preprocessed
    #[arg(long = "no-preprocess")]
    no_preprocess: bool,
    #[command(flatten)]
    pre: PreArgs,
}

#[derive(Args, Debug)]
struct EvalCmd {
    /// Estimates CSV with id, h and v columns
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth CSV with id, h and v columns
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct SegmentCmd {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    weights: PathBuf,
    /// Output probability map, 16-bit
    #[arg(long)]
    out: PathBuf,
    /// Binary mask output
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Centroid CSV output
    #[arg(long)]
    centroids: Option<PathBuf>,
    /// fixed-0.5 or otsu [default: the network's rule]
    #[arg(long)]
    rule: Option<ThresholdRule>,
    /// Smallest component kept, pixels
    #[arg(long = "min-area", default_value_t = DEFAULT_MIN_AREA)]
    min_area: usize,
    /// Input is already preprocessed
    #[arg(long = "no-preprocess")]
    no_preprocess: bool,
    #[command(flatten)]
    pre: PreArgs,
}

#[derive(Args, Debug)]
struct CountCmd {
    /// Centroid CSV
    #[arg(long, required_unless_present = "prob", conflicts_with = "prob")]
    centroids: Option<PathBuf>,
    /// Probability map or binary mask image
    #[arg(long)]
    prob: Option<PathBuf>,
    /// Pixels per cm; overrides the sidecar or centroid header
    #[arg(long)]
    ppc: Option<f64>,
    /// fixed-0.5 or otsu, for --prob
    #[arg(long, default_value = "fixed-0.5")]
    rule: ThresholdRule,
    /// Smallest component kept, pixels
    #[arg(long = "min-area", default_value_t = DEFAULT_MIN_AREA)]
    min_area: usize,
    #[command(flatten)]
    sc: ScArgs,
}

#[derive(Args, Debug)]
struct FtCmd {
    #[command(flatten)]
    input: InputArgs,
    /// Treat the input as a crossing mask
    #[arg(long)]
    mask: bool,
    #[command(flatten)]
    ft: FtArgs,
}

#[derive(Args, Debug)]
struct MapCmd {
    #[command(flatten)]
    input: InputArgs,
    /// dlsc, dlfa or ft
    #[arg(long, default_value = "dlsc")]
    method: Method,
    /// Network weights for dlsc and dlfa
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Known crossing mask of the canvas, used instead of a network
    #[arg(long = "oracle-mask", conflicts_with = "weights")]
    oracle_mask: Option<PathBuf>,
    /// Patch step in pixels
    #[arg(long, default_value_t = 100)]
    shift: usize,
    /// Color scale, LO:HI thr/cm
    #[arg(long, default_value = "5:25", value_parser = parse_range)]
    range: (f64, f64),
    /// viridis, jet or gray
    #[arg(long, default_value = "viridis")]
    palette: Palette,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// File name stem of the outputs
    #[arg(long, default_value = "canvas")]
    stem: String,
    /// Smallest component kept, pixels
    #[arg(long = "min-area", default_value_t = DEFAULT_MIN_AREA)]
    min_area: usize,
    /// Input is already preprocessed
    #[arg(long = "no-preprocess")]
    no_preprocess: bool,
    #[command(flatten)]
    pre: PreArgs,
    #[command(flatten)]
    sc: ScArgs,
    #[command(flatten)]
    ft: FtArgs,
}

#[derive(Args, Debug)]
struct CompareCmd {
    /// First map CSV
    #[arg(long)]
    a: PathBuf,
    /// Second map CSV
    #[arg(long)]
    b: PathBuf,
    /// Patch step both maps were swept with, pixels
    #[arg(long, default_value_t = 100)]
    shift: usize,
    /// Applied to the second map: identity, flip_h or rot180
    #[arg(long, default_value = "identity")]
    transform: Transform,
    /// Profile axis: rows or cols
    #[arg(long, default_value = "rows")]
    axis: Axis,
    /// Side-by-side PNG output
    #[arg(long)]
    png: Option<PathBuf>,
    /// Color scale, LO:HI thr/cm
    #[arg(long, default_value = "5:25", value_parser = parse_range)]
    range: (f64, f64),
    /// viridis, jet or gray
    #[arg(long, default_value = "viridis")]
    palette: Palette,
    /// Correlation per lag CSV output
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectCmd {
    /// Weight file
    path: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(format!("need LO < HI, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn parse_toy(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected DEPTH:N0")?;
    let depth = a.trim().parse().map_err(|_| format!("bad depth {a:?}"))?;
    let n0 = b.trim().parse().map_err(|_| format!("bad filter count {b:?}"))?;
    Ok((depth, n0))
}

fn parse_multiplicity(s: &str) -> std::result::Result<(String, usize), String> {
    let (k, v) = s.split_once('=').ok_or("expected SOURCE=K")?;
    let n = v.trim().parse().map_err(|_| format!("bad count {v:?}"))?;
    Ok((k.trim().to_string(), n))
}

/// Splices the pairs of a `--config` file in right after the subcommand
/// name so that later command-line flags override them.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
        let flag = format!("--{}", k.trim().trim_start_matches("--"));
        match v.trim() {
            "true" => extra.push(OsString::from(flag)),
            "false" => {}
            v => {
                extra.push(OsString::from(flag));
                extra.push(OsString::from(v));
            }
        }
    }
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let Some(at) = args.iter().skip(1).position(|a| names.iter().any(|n| a == n.as_str())) else {
        return Ok(args);
    };
    let mut out = args;
    let at = at + 2;
    out.splice(at..at, extra);
    Ok(out)
}

fn parse_cli() -> Cli {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error kind=usage msg=\"{}\"", escape(&msg));
            std::process::exit(2);
        }
    };
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from(args).unwrap_or_else(|e| e.exit());
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = parse_cli();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} msg=\"{}\"", e.kind(), escape(&e.to_string()));
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Preprocess(c) => cmd_preprocess(c),
        Command::Synth(c) => cmd_synth(c),
        Command::Augment(c) => cmd_augment(c),
        Command::Train(c) => cmd_train(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Segment(c) => cmd_segment(c),
        Command::Count(c) => cmd_count(c),
        Command::Ft(c) => cmd_ft(c),
        Command::Map(c) => cmd_map(c),
        Command::Compare(c) => cmd_compare(c),
        Command::WeightsInspect(c) => cmd_inspect(c),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stdout_csv() -> csv::Writer<io::Stdout> {
    csv::Writer::from_writer(io::stdout())
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

fn save_with_sidecar(img: &GrayImage, path: &Path) -> Result<()> {
    save_image(img, path, BitDepth::Sixteen)?;
    write_sidecar(path, img.ppc())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn load_network(path: &Path) -> Result<Network> {
    Network::from_weights(&load_weights(path)?)
}

fn load_canvas(input: &InputArgs, pre: &PreArgs, no_preprocess: bool) -> Result<GrayImage> {
    let img = load_image(&input.input, input.ppc)?;
    if no_preprocess {
        Ok(img)
    } else {
        preprocess(&img, &pre.params())
    }
}

fn cmd_preprocess(c: PreprocessCmd) -> Result<()> {
    let out = load_canvas(&c.input, &c.pre, false)?;
    save_with_sidecar(&out, &c.out)
}

fn write_crossings(path: &Path, points: &[(f64, f64)], img: &GrayImage) -> Result<()> {
    CentroidSet::new(points.to_vec(), img.width(), img.height(), img.ppc()).write_csv(create_file(path)?)
}

fn save_synth(dir: &Path, sample: &LabeledSample, points: &[(f64, f64)], meta: &[(&str, String)]) -> Result<()> {
    save_sample(dir, sample, meta)?;
    write_sidecar(&dir.join("image.pgm"), sample.image.ppc())?;
    write_sidecar(&dir.join("mask.pgm"), sample.image.ppc())?;
    write_crossings(&dir.join("crossings.csv"), points, &sample.image)
}

fn cmd_synth(c: SynthCmd) -> Result<()> {
    let base = c.weave.params();
    let width = c.width.unwrap_or(c.size);
    let height = c.height.unwrap_or(c.size);
    if let Some(n) = c.count {
        if c.val_every == 0 {
            return Err(Error::InvalidParam("val-every must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let p = WeaveParams {
                ppc: base.ppc,
                ..random_weave(&mut rng, c.range)
            };
            let f = synth_fabric_rect(&p, width, height)?;
            let mut sample = f.sample;
            sample.source_id = format!("synth-{i:04}");
            sample.split = if i % c.val_every == c.val_every - 1 {
                Split::Val
            } else {
                Split::Train
            };
            let id = format!("s{i:04}");
            let meta = [("h", p.h_density.to_string()), ("v", p.v_density.to_string())];
            save_synth(&c.out.join(&id), &sample, &f.crossings, &meta)?;
            rows.push(ManifestRow {
                sample_id: id,
                source_id: sample.source_id.clone(),
                split: sample.split,
            });
        }
        write_manifest(&c.out, &rows)?;
        println!("samples={n}");
        return Ok(());
    }
    let mut meta = vec![
        ("h", base.h_density.to_string()),
        ("v", base.v_density.to_string()),
        ("seed", base.seed.to_string()),
    ];
    let f = if c.right_h.is_some() || c.right_v.is_some() {
        let right = WeaveParams {
            h_density: c.right_h.unwrap_or(base.h_density),
            v_density: c.right_v.unwrap_or(base.v_density),
            seed: base.seed.wrapping_add(1),
            ..base.clone()
        };
        meta.push(("right_h", right.h_density.to_string()));
        meta.push(("right_v", right.v_density.to_string()));
        meta.push(("seam_x", (width / 2).to_string()));
        synth_step_canvas(&base, &right, width, height)?
    } else {
        synth_fabric_rect(&base, width, height)?
    };
    create_dir(&c.out)?;
    save_synth(&c.out, &f.sample, &f.crossings, &meta)?;
    println!("crossings={}", f.crossings.len());
    Ok(())
}

fn cmd_augment(c: AugmentCmd) -> Result<()> {
    let mut samples = load_dataset(&c.data)?;
    if let Some(split) = c.split {
        samples.retain(|s| s.split == split);
    }
    let mult: HashMap<String, usize> = c.multiplicity.into_iter().collect();
    let examples = augment_dataset(&samples, &mult, &mut ChaCha8Rng::seed_from_u64(c.seed))?;
    create_dir(&c.out)?;
    let mut index = csv::Writer::from_writer(create_file(&c.out.join("examples.csv"))?);
    index.write_record(["example_id", "image", "mask"])?;
    for (i, ex) in examples.iter().enumerate() {
        let id = format!("e{i:06}");
        let (img, mask) = (format!("{id}.image.pgm"), format!("{id}.mask.pgm"));
        save_image(&ex.image, &c.out.join(&img), BitDepth::Sixteen)?;
        save_image(&ex.mask.to_image(ex.image.ppc()), &c.out.join(&mask), BitDepth::Eight)?;
        index.write_record([id, img, mask])?;
    }
    finish(index)?;
    println!("examples={}", examples.len());
    Ok(())
}

fn cmd_train(c: TrainCmd) -> Result<()> {
    let (train_set, val_set, input_size) = if let Some(n) = c.synthetic {
        let val_n = (n / 5).max(1);
        (
            synth_examples(n, c.size, c.range, c.seed)?,
            synth_examples(val_n, c.size, c.range, c.seed.wrapping_add(1))?,
            c.size,
        )
    } else {
        let data = c.data.as_deref().expect("clap enforces --data or --synthetic");
        let mut samples = load_dataset(data)?;
        if !c.no_preprocess {
            let p = c.pre.params();
            for s in &mut samples {
                s.image = preprocess(&s.image, &p)?;
            }
        }
        let mult: HashMap<String, usize> = c.multiplicity.iter().cloned().collect();
        let pick = |split| samples.iter().filter(|s| s.split == split).cloned().collect::<Vec<_>>();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let train_set = augment_dataset(&pick(Split::Train), &mult, &mut rng)?;
        let val_set = augment_dataset(&pick(Split::Val), &HashMap::new(), &mut rng)?;
        (train_set, val_set, weavecount::dataset::VIEW_SIZE)
    };
    let config = match c.toy {
        Some((depth, n0)) => NetConfig::toy(c.variant, depth, n0, input_size),
        None => NetConfig {
            input_size,
            ..NetConfig::paper(c.variant)
        },
    };
    let cfg = TrainConfig {
        batch: c.batch,
        lr: c.lr.unwrap_or(config.lr),
        patience: c.patience,
        max_epochs: c.epochs,
        seed: c.seed,
    };
    let mut net = Network::build(config, c.seed)?;
    let report = train(&mut net, &train_set, &val_set, &cfg, |_, _| {})?;
    save_weights(&net.weights(), &c.out)?;
    if let Some(path) = &c.history {
        report.write_history_csv(create_file(path)?)?;
    }
    let best = report
        .history
        .get(report.best_epoch.wrapping_sub(1))
        .map(|r| r.val_accuracy);
    let mut w = stdout_csv();
    w.write_record(["epochs", "best_epoch", "stopped_early", "best_val_accuracy"])?;
    w.write_record([
        report.history.len().to_string(),
        report.best_epoch.to_string(),
        report.stopped_early.to_string(),
        fmt_opt(best),
    ])?;
    finish(w)
}

type Densities = BTreeMap<String, (Option<f64>, Option<f64>)>;

/// `id -> (h, v)` from a CSV with named id, h and v columns.
fn read_densities(path: &Path) -> Result<Densities> {
    let mut r = csv::Reader::from_reader(open_file(path)?);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("{} has no {name:?} column", path.display())))
    };
    let (id, h, v) = (col("id")?, col("h")?, col("v")?);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<Option<f64>> {
            match rec.get(i).map(str::trim) {
                None | Some("") => Ok(None),
                Some(s) => s
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("bad number {s:?} in {}", path.display()))),
            }
        };
        let key = rec.get(id).unwrap_or_default().trim().to_string();
        if out.insert(key.clone(), (num(h)?, num(v)?)).is_some() {
            return Err(Error::Format(format!("duplicate id {key:?} in {}", path.display())));
        }
    }
    Ok(out)
}

/// Mean of |estimate - truth| / truth over rows where both are present.
fn mean_normalized_error(pairs: impl Iterator<Item = (Option<f64>, Option<f64>)>) -> (Option<f64>, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in pairs {
        if let (Some(p), Some(t)) = (p, t) {
            sum += (p - t).abs() / t;
            n += 1;
        }
    }
    ((n > 0).then(|| sum / n as f64), n)
}

fn cmd_eval(c: EvalCmd) -> Result<()> {
    let pred = read_densities(&c.pred)?;
    let truth = read_densities(&c.truth)?;
    if let Some(id) = pred.keys().find(|k| !truth.contains_key(*k)) {
        return Err(Error::Format(format!("id {id:?} has no ground truth")));
    }
    if let Some((id, _)) = truth
        .iter()
        .find(|(_, t)| t.0.is_some_and(|x| x <= 0.0) || t.1.is_some_and(|x| x <= 0.0))
    {
        return Err(Error::InvalidParam(format!("ground truth of {id:?} must be positive")));
    }
    let rows: Vec<_> = pred.iter().map(|(k, p)| (*p, truth[k])).collect();
    let (h, nh) = mean_normalized_error(rows.iter().map(|(p, t)| (p.0, t.0)));
    let (v, nv) = mean_normalized_error(rows.iter().map(|(p, t)| (p.1, t.1)));
    let mut w = stdout_csv();
    w.write_record(["axis", "mean_normalized_error", "n"])?;
    w.write_record(["h".to_string(), fmt_opt(h), nh.to_string()])?;
    w.write_record(["v".to_string(), fmt_opt(v), nv.to_string()])?;
    finish(w)
}

fn cmd_segment(c: SegmentCmd) -> Result<()> {
    let net = load_network(&c.weights)?;
    let canvas = load_canvas(&c.input, &c.pre, c.no_preprocess)?;
    let prob = net.predict(&canvas)?;
    save_with_sidecar(&prob, &c.out)?;
    let mask = binarize(&prob, c.rule.unwrap_or(net.config().threshold_rule));
    if let Some(path) = &c.mask {
        save_image(&mask.to_image(prob.ppc()), path, BitDepth::Eight)?;
        write_sidecar(path, prob.ppc())?;
    }
    let cents = extract_centroids(&mask, c.min_area, prob.ppc());
    if let Some(path) = &c.centroids {
        cents.write_csv(create_file(path)?)?;
    }
    println!("centroids={}", cents.len());
    Ok(())
}

fn cmd_count(c: CountCmd) -> Result<()> {
    let mut cents = match (&c.centroids, &c.prob) {
        (Some(path), _) => CentroidSet::read_csv(open_file(path)?)?,
        (None, Some(path)) => {
            let prob = load_image(path, c.ppc)?;
            extract_centroids(&binarize(&prob, c.rule), c.min_area, prob.ppc())
        }
        (None, None) => unreachable!("clap enforces --centroids or --prob"),
    };
    if let Some(ppc) = c.ppc {
        cents.ppc = ppc;
    }
    let e = estimate(&cents, &c.sc.params(cents.ppc))?;
    let mut w = stdout_csv();
    w.write_record(DensityEstimate::CSV_HEADER)?;
    w.write_record(e.csv_fields())?;
    finish(w)
}

fn cmd_ft(c: FtCmd) -> Result<()> {
    let img = load_image(&c.input.input, c.input.ppc)?;
    let side = img.width().min(img.height());
    let img = crop(&img, (img.width() - side) / 2, (img.height() - side) / 2, side, side)?;
    let p = c.ft.params();
    let e = if c.mask {
        fa_on_mask(&img, &p)?
    } else {
        ft_density(&img, &p)?
    };
    let mut w = stdout_csv();
    w.write_record(["h", "v"])?;
    w.write_record([fmt_opt(e.h), fmt_opt(e.v)])?;
    finish(w)
}

fn cmd_map(c: MapCmd) -> Result<()> {
    let canvas = load_canvas(&c.input, &c.pre, c.no_preprocess)?;
    let params = SweepParams {
        method: c.method,
        shift: c.shift,
        sc: c.sc.params(canvas.ppc()),
        ft: c.ft.params(),
        min_area: c.min_area,
    };
    let net;
    let oracle;
    let seg: Option<&dyn Segmenter> = match (&c.weights, &c.oracle_mask) {
        (Some(path), _) => {
            net = load_network(path)?;
            Some(&net)
        }
        (None, Some(path)) => {
            let m = load_image(path, Some(canvas.ppc()))?;
            oracle = OracleMask {
                mask: BinaryMask::from_image(&m, 0.5),
            };
            Some(&oracle)
        }
        (None, None) => None,
    };
    let maps = sweep(&canvas, &params, seg)?;
    create_dir(&c.out_dir)?;
    maps.write_csvs(&c.out_dir, &c.stem)?;
    let opts = RenderOptions::new(c.palette, c.range);
    for (axis, map) in [("h", &maps.h), ("v", &maps.v)] {
        render(map, &opts)?.save_png(&c.out_dir.join(format!("{}.{axis}.png", c.stem)))?;
    }
    let missing = |m: &DensityMap| m.cells.iter().filter(|v| v.is_none()).count();
    let mut w = stdout_csv();
    w.write_record(["rows", "cols", "missing_h", "missing_v"])?;
    w.write_record([
        maps.h.rows.to_string(),
        maps.h.cols.to_string(),
        missing(&maps.h).to_string(),
        missing(&maps.v).to_string(),
    ])?;
    finish(w)
}

fn cmd_compare(c: CompareCmd) -> Result<()> {
    let a = DensityMap::read_csv(open_file(&c.a)?, c.shift)?;
    let b = DensityMap::read_csv(open_file(&c.b)?, c.shift)?;
    let report = pair_compare(&a, &b, c.transform, c.axis)?;
    if let Some(path) = &c.png {
        render_pair(&a, &b, c.transform, &RenderOptions::new(c.palette, c.range))?.save_png(path)?;
    }
    if let Some(path) = &c.scores {
        let mut w = csv::Writer::from_writer(create_file(path)?);
        w.write_record(["lag", "correlation"])?;
        for (lag, r) in &report.scores {
            w.write_record([lag.to_string(), r.to_string()])?;
        }
        finish(w)?;
    }
    let mut w = stdout_csv();
    w.write_record(["lag", "correlation"])?;
    w.write_record([report.lag.to_string(), report.correlation.to_string()])?;
    finish(w)
}

fn cmd_inspect(c: InspectCmd) -> Result<()> {
    let header = inspect_weights(&c.path)?;
    let params = Network::build(header.config.clone(), 0)?.param_count();
    print!("{}", header.render());
    println!("parameters={params}");
    Ok(())
}
