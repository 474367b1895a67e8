//! Implementations of the `pcdistill` subcommands.

use crate::config::{self, FileConfig};
use crate::manifest::{sibling, RunManifest};
use clap::Args;
use ndarray::Array2;
use pcdistill::coreset::{pooled_embeddings, select_herding, select_kcenter, select_random, SelectionResult};
use pcdistill::diffgraph::{finite_diff_check, Tape};
use pcdistill::distill::{run_distillation, DistillConfig, InitStrategy};
use pcdistill::evalh::{repeated_eval, Augmentation, EvalConfig, EvalReport};
use pcdistill::featnet::{
    extract_pooled, extract_pooled_array, init_weights, load_weights, ClassifierConfig,
    ExtractorConfig, NetworkWeights,
};
use pcdistill::pcdata::off::parse_off;
use pcdistill::pcdata::pcds::{read_dataset, write_dataset};
use pcdistill::pcdata::ply::{export_ply, ColorAxis};
use pcdistill::pcdata::surface::sample_mesh_surface;
use pcdistill::pcdata::toy::{gen_toy, RotationRegime, ToyShape, ToySpec};
use pcdistill::pcdata::LabeledDataset;
use pcdistill::rotator::{d_rotation_d_theta, rotation_matrix, RotationParams};
use pcdistill::sadmloss::{l_sadm, AlignmentStrategy, KernelConfig, LossWeights};
use pcdistill::seeds::{rng_for, PURPOSE_POINTS, PURPOSE_ROTATION, PURPOSE_WEIGHTS};
use pcdistill::{Error, Result};
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

// ----- shared helpers --------------------------------------------------------

fn load_optional_config(path: Option<&PathBuf>) -> Result<Option<FileConfig>> {
    path.map(|p| config::load(p)).transpose()
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "-".into())
}

// ----- gen-toy ---------------------------------------------------------------

/// Generate a synthetic-shape classification dataset.
#[derive(Args, Debug)]
pub struct GenToyArgs {
    /// Configuration file with the generator settings.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated class shapes (sphere|cube|cone|cylinder|torus|plane).
    #[arg(long)]
    pub shapes: Option<String>,
    /// Training clouds per class.
    #[arg(long)]
    pub train_per_class: Option<usize>,
    /// Test clouds per class.
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Pose regime: aligned | mixed | rotated.
    #[arg(long)]
    pub regime: Option<String>,
    /// Standard deviation of the Gaussian surface jitter.
    #[arg(long)]
    pub jitter_std: Option<f64>,
    /// Points sampled per cloud.
    #[arg(long)]
    pub points: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving train.pcds, test.pcds, and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

const GEN_TOY_KEYS: &[&str] = &[
    "shapes", "train_per_class", "test_per_class", "regime", "jitter_std", "points_per_cloud", "seed",
];

pub fn cmd_gen_toy(args: &GenToyArgs) -> Result<()> {
    let start = Instant::now();
    let file = load_optional_config(args.spec.as_ref())?;
    if let Some(cfg) = &file {
        cfg.reject_unknown_keys(GEN_TOY_KEYS)?;
    }
    let file = file.as_ref();

    let shapes_raw = config::resolve(
        file,
        "shapes",
        args.shapes.clone(),
        "sphere,cube,cone,torus".to_string(),
    )?;
    let shapes: Vec<ToyShape> = shapes_raw
        .split(',')
        .map(|s| s.trim().parse::<ToyShape>())
        .collect::<Result<_>>()?;
    let spec = ToySpec {
        shapes,
        train_per_class: config::resolve(file, "train_per_class", args.train_per_class, 200)?,
        test_per_class: config::resolve(file, "test_per_class", args.test_per_class, 50)?,
        regime: config::resolve(file, "regime", args.regime.clone(), "aligned".to_string())?
            .parse::<RotationRegime>()?,
        jitter_std: config::resolve(file, "jitter_std", args.jitter_std, 0.02)?,
        points_per_cloud: config::resolve(file, "points_per_cloud", args.points, 256)?,
        seed: config::resolve(file, "seed", args.seed, 0)?,
    };
    let (train, test) = gen_toy(&spec)?;

    ensure_dir(&args.out_dir)?;
    let train_path = args.out_dir.join("train.pcds");
    let test_path = args.out_dir.join("test.pcds");
    write_dataset(&train, &train_path)?;
    write_dataset(&test, &test_path)?;

    let mut manifest = RunManifest::new("gen-toy");
    manifest.set("shapes", shapes_raw);
    manifest.set("train_per_class", spec.train_per_class);
    manifest.set("test_per_class", spec.test_per_class);
    manifest.set("regime", spec.regime.name());
    manifest.set("jitter_std", spec.jitter_std);
    manifest.set("points_per_cloud", spec.points_per_cloud);
    manifest.set("seed", spec.seed);
    if let Some(spec_path) = &args.spec {
        manifest.add_input(spec_path)?;
    }
    manifest.add_output(&train_path);
    manifest.add_output(&test_path);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out_dir.join("manifest.json"))?;

    println!(
        "wrote {} train and {} test clouds ({} classes, {} points each) to {}",
        train.len(),
        test.len(),
        train.num_classes(),
        train.points_per_cloud(),
        args.out_dir.display()
    );
    Ok(())
}

// ----- import-off ------------------------------------------------------------

/// Convert a directory of OFF meshes into a dataset file. Each immediate
/// subdirectory is one class; its name becomes the class name.
#[derive(Args, Debug)]
pub struct ImportOffArgs {
    /// Root directory with one subdirectory of .off files per class.
    #[arg(long)]
    pub dir: PathBuf,
    /// Points to sample on each mesh surface.
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Master seed for surface sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_import_off(args: &ImportOffArgs) -> Result<()> {
    let start = Instant::now();
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(&args.dir)
        .map_err(|e| Error::io(&args.dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Invalid(format!(
            "{} contains no class subdirectories",
            args.dir.display()
        )));
    }

    let mut manifest = RunManifest::new("import-off");
    let mut items = Vec::new();
    let mut class_names = Vec::new();
    for (c, class_dir) in class_dirs.iter().enumerate() {
        let name = file_stem(class_dir);
        let mut meshes: Vec<PathBuf> = std::fs::read_dir(class_dir)
            .map_err(|e| Error::io(class_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|e| e.to_string_lossy().eq_ignore_ascii_case("off"))
                        .unwrap_or(false)
            })
            .collect();
        meshes.sort();
        if meshes.is_empty() {
            return Err(Error::Invalid(format!(
                "class directory {} contains no .off files",
                class_dir.display()
            )));
        }
        for (f, mesh_path) in meshes.iter().enumerate() {
            let text = std::fs::read_to_string(mesh_path).map_err(|e| Error::io(mesh_path, e))?;
            let mesh = parse_off(&text, mesh_path)?;
            let mut rng = rng_for(args.seed, &[PURPOSE_POINTS, c as u64, f as u64]);
            let cloud = sample_mesh_surface(&mesh, args.points, &mut rng)?;
            items.push((cloud, c));
            manifest.add_input(mesh_path)?;
        }
        class_names.push(name);
    }
    let ds = LabeledDataset::new(items, class_names)?;
    write_dataset(&ds, &args.out)?;

    manifest.set("dir", args.dir.display());
    manifest.set("points", args.points);
    manifest.set("seed", args.seed);
    manifest.add_output(&args.out);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&sibling(&args.out, "manifest.json"))?;

    println!(
        "imported {} meshes across {} classes into {}",
        ds.len(),
        ds.num_classes(),
        args.out.display()
    );
    Ok(())
}

// ----- coreset ---------------------------------------------------------------

/// Select a representative subset of a dataset, one budget per class.
#[derive(Args, Debug)]
pub struct CoresetArgs {
    /// Input dataset file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Selection method: random | herding | kcenter.
    #[arg(long)]
    pub method: String,
    /// Objects to keep per class.
    #[arg(long)]
    pub ppc: usize,
    /// Master seed (selection randomness and the embedding network).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature channels of the embedding network (herding and kcenter).
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Output dataset file for the subset.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct IndexRecord<'a> {
    method: &'a str,
    ppc: usize,
    seed: u64,
    per_class: &'a [Vec<usize>],
}

pub fn cmd_coreset(args: &CoresetArgs) -> Result<()> {
    let start = Instant::now();
    let ds = read_dataset(&args.dataset)?;
    let selection: SelectionResult = match args.method.as_str() {
        "random" => select_random(&ds, args.ppc, args.seed)?,
        "herding" | "kcenter" => {
            let net = init_weights(
                &ExtractorConfig::desk_scale(args.channels),
                &mut rng_for(args.seed, &[PURPOSE_WEIGHTS]),
            );
            let embeddings = pooled_embeddings(&ds, &net);
            if args.method == "herding" {
                select_herding(&ds, args.ppc, &embeddings)?
            } else {
                select_kcenter(&ds, args.ppc, &embeddings)?
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown method {other:?} (expected random, herding, or kcenter)"
            )))
        }
    };

    let items: Vec<_> = selection
        .per_class()
        .iter()
        .enumerate()
        .flat_map(|(c, picks)| picks.iter().map(move |&i| (c, i)))
        .map(|(c, i)| (ds.items()[i].0.clone(), c))
        .collect();
    let subset = LabeledDataset::new(items, ds.class_names().to_vec())?;
    write_dataset(&subset, &args.out)?;

    let record = IndexRecord {
        method: &args.method,
        ppc: args.ppc,
        seed: args.seed,
        per_class: selection.per_class(),
    };
    let indices_path = sibling(&args.out, "indices.json");
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Invalid(format!("cannot serialize indices: {e}")))?;
    write_text(&indices_path, &(json + "\n"))?;

    let mut manifest = RunManifest::new("coreset");
    manifest.set("method", &args.method);
    manifest.set("ppc", args.ppc);
    manifest.set("seed", args.seed);
    manifest.set("channels", args.channels);
    manifest.add_input(&args.dataset)?;
    manifest.add_output(&args.out);
    manifest.add_output(&indices_path);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&sibling(&args.out, "manifest.json"))?;

    println!(
        "selected {} of {} clouds ({}) into {}",
        subset.len(),
        ds.len(),
        args.method,
        args.out.display()
    );
    Ok(())
}

// ----- distill ---------------------------------------------------------------

/// Distill a dataset into a small learned synthetic set.
#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Input training dataset file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Synthetic objects per class.
    #[arg(long)]
    pub ppc: Option<usize>,
    /// Optimization iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Real clouds sampled per class per iteration.
    #[arg(long)]
    pub t_batch: Option<usize>,
    /// Weight of the aligned-feature loss term (default follows --ppc).
    #[arg(long)]
    pub lambda_alpha: Option<f64>,
    /// Weight of the pooled-feature loss term (default follows --ppc).
    #[arg(long)]
    pub lambda_beta: Option<f64>,
    /// Learning rate on synthetic coordinates.
    #[arg(long)]
    pub lr_coords: Option<f64>,
    /// Momentum on synthetic coordinates.
    #[arg(long)]
    pub momentum_coords: Option<f64>,
    /// Weight decay on synthetic coordinates.
    #[arg(long)]
    pub weight_decay_coords: Option<f64>,
    /// Learning rate on the x rotation angle.
    #[arg(long)]
    pub lr_theta_x: Option<f64>,
    /// Learning rate on the y rotation angle.
    #[arg(long)]
    pub lr_theta_y: Option<f64>,
    /// Learning rate on the z rotation angle.
    #[arg(long)]
    pub lr_theta_z: Option<f64>,
    /// Momentum on the rotation angles.
    #[arg(long)]
    pub momentum_theta: Option<f64>,
    /// Iterations between angle learning-rate halvings.
    #[arg(long)]
    pub theta_decay_step: Option<usize>,
    /// Multiplier applied to angle rates at each schedule step.
    #[arg(long)]
    pub theta_decay_factor: Option<f64>,
    /// Coordinate initialization: noise | random | herding | kcenter.
    #[arg(long)]
    pub init: Option<String>,
    /// Feature alignment: unsorted | axis_z | morton | channel_sorted.
    #[arg(long)]
    pub alignment: Option<String>,
    /// Fixed kernel bandwidth; omit to use the median heuristic.
    #[arg(long)]
    pub kernel_sigma: Option<f64>,
    /// Feature channels of the per-iteration extractor.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Include the learned input-transform block in the extractor.
    #[arg(long)]
    pub input_transform: bool,
    /// Disable rotation optimization (synthetic clouds stay unrotated).
    #[arg(long)]
    pub no_rotation: bool,
    /// Disable coordinate optimization (angles only).
    #[arg(long)]
    pub no_coords: bool,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset file for the baked synthetic set.
    #[arg(long)]
    pub out: PathBuf,
}

const DISTILL_KEYS: &[&str] = &[
    "ppc",
    "iterations",
    "t_batch_per_class",
    "lambda_alpha",
    "lambda_beta",
    "lr_coords",
    "momentum_coords",
    "weight_decay_coords",
    "lr_theta_x",
    "lr_theta_y",
    "lr_theta_z",
    "momentum_theta",
    "theta_decay_step",
    "theta_decay_factor",
    "init",
    "alignment",
    "kernel_sigma",
    "channels",
    "input_transform",
    "optimize_rotation",
    "optimize_coords",
    "seed",
];

/// Resolves the full distillation configuration from defaults, an optional
/// config file, and flags, in ascending precedence.
fn resolve_distill_config(args: &DistillArgs) -> Result<DistillConfig> {
    let file = load_optional_config(args.config.as_ref())?;
    if let Some(cfg) = &file {
        cfg.reject_unknown_keys(DISTILL_KEYS)?;
    }
    let file = file.as_ref();

    let ppc = config::resolve(file, "ppc", args.ppc, 3)?;
    let mut cfg = DistillConfig::new(ppc);
    cfg.iterations = config::resolve(file, "iterations", args.iterations, cfg.iterations)?;
    cfg.t_batch_per_class =
        config::resolve(file, "t_batch_per_class", args.t_batch, cfg.t_batch_per_class)?;
    let alpha = config::resolve(file, "lambda_alpha", args.lambda_alpha, cfg.loss_weights.lambda_alpha)?;
    let beta = config::resolve(file, "lambda_beta", args.lambda_beta, cfg.loss_weights.lambda_beta)?;
    cfg.loss_weights = LossWeights::new(alpha, beta)?;
    cfg.lr_coords = config::resolve(file, "lr_coords", args.lr_coords, cfg.lr_coords)?;
    cfg.momentum_coords =
        config::resolve(file, "momentum_coords", args.momentum_coords, cfg.momentum_coords)?;
    cfg.weight_decay_coords = config::resolve(
        file,
        "weight_decay_coords",
        args.weight_decay_coords,
        cfg.weight_decay_coords,
    )?;
    cfg.lr_theta_x = config::resolve(file, "lr_theta_x", args.lr_theta_x, cfg.lr_theta_x)?;
    cfg.lr_theta_y = config::resolve(file, "lr_theta_y", args.lr_theta_y, cfg.lr_theta_y)?;
    cfg.lr_theta_z = config::resolve(file, "lr_theta_z", args.lr_theta_z, cfg.lr_theta_z)?;
    cfg.momentum_theta =
        config::resolve(file, "momentum_theta", args.momentum_theta, cfg.momentum_theta)?;
    cfg.theta_decay_step =
        config::resolve(file, "theta_decay_step", args.theta_decay_step, cfg.theta_decay_step)?;
    cfg.theta_decay_factor =
        config::resolve(file, "theta_decay_factor", args.theta_decay_factor, cfg.theta_decay_factor)?;
    cfg.init = config::resolve(file, "init", args.init.clone(), cfg.init.name().to_string())?
        .parse::<InitStrategy>()?;
    cfg.alignment =
        config::resolve(file, "alignment", args.alignment.clone(), cfg.alignment.name().to_string())?
            .parse::<AlignmentStrategy>()?;
    cfg.kernel = match config::resolve_optional(file, "kernel_sigma", args.kernel_sigma)? {
        Some(sigma) => KernelConfig::Fixed(sigma),
        None => KernelConfig::MedianHeuristic,
    };
    let channels = config::resolve(file, "channels", args.channels, cfg.extractor.channels())?;
    let transform_flag = if args.input_transform { Some(true) } else { None };
    let input_transform = config::resolve(file, "input_transform", transform_flag, false)?;
    cfg.extractor = ExtractorConfig {
        widths: vec![3, 64, 128, channels],
        include_input_transform: input_transform,
    };
    let rotation_flag = if args.no_rotation { Some(false) } else { None };
    cfg.optimize_rotation = config::resolve(file, "optimize_rotation", rotation_flag, true)?;
    let coords_flag = if args.no_coords { Some(false) } else { None };
    cfg.optimize_coords = config::resolve(file, "optimize_coords", coords_flag, true)?;
    cfg.seed = config::resolve(file, "seed", args.seed, 0)?;
    // The command-line path never evaluates mid-run; checkpoints are a
    // library feature.
    cfg.eval_every = None;
    cfg.validate()?;
    Ok(cfg)
}

fn echo_distill_config(cfg: &DistillConfig) -> BTreeMap<String, String> {
    let mut echo = BTreeMap::new();
    let mut set = |k: &str, v: String| {
        echo.insert(k.to_string(), v);
    };
    set("ppc", cfg.ppc.to_string());
    set("iterations", cfg.iterations.to_string());
    set("t_batch_per_class", cfg.t_batch_per_class.to_string());
    set("lambda_alpha", cfg.loss_weights.lambda_alpha.to_string());
    set("lambda_beta", cfg.loss_weights.lambda_beta.to_string());
    set("lr_coords", cfg.lr_coords.to_string());
    set("momentum_coords", cfg.momentum_coords.to_string());
    set("weight_decay_coords", cfg.weight_decay_coords.to_string());
    set("lr_theta_x", cfg.lr_theta_x.to_string());
    set("lr_theta_y", cfg.lr_theta_y.to_string());
    set("lr_theta_z", cfg.lr_theta_z.to_string());
    set("momentum_theta", cfg.momentum_theta.to_string());
    set("theta_decay_step", cfg.theta_decay_step.to_string());
    set("theta_decay_factor", cfg.theta_decay_factor.to_string());
    set("init", cfg.init.name().to_string());
    set("alignment", cfg.alignment.name().to_string());
    if let KernelConfig::Fixed(sigma) = cfg.kernel {
        set("kernel_sigma", sigma.to_string());
    }
    set("channels", cfg.extractor.channels().to_string());
    set("input_transform", cfg.extractor.include_input_transform.to_string());
    set("optimize_rotation", cfg.optimize_rotation.to_string());
    set("optimize_coords", cfg.optimize_coords.to_string());
    set("seed", cfg.seed.to_string());
    echo
}

pub fn cmd_distill(args: &DistillArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = resolve_distill_config(args)?;
    let ds = read_dataset(&args.dataset)?;

    let (synthetic, trace) = run_distillation(&ds, &cfg, None)?;
    let baked = synthetic.bake();
    write_dataset(&baked, &args.out)?;

    let trace_path = sibling(&args.out, "trace.csv");
    let mut csv = String::from("iteration,loss\n");
    for (i, loss) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{loss}\n"));
    }
    write_text(&trace_path, &csv)?;

    let mut manifest = RunManifest::new("distill");
    manifest.config = echo_distill_config(&cfg);
    manifest.add_input(&args.dataset)?;
    manifest.add_output(&args.out);
    manifest.add_output(&trace_path);
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&sibling(&args.out, "manifest.json"))?;

    let final_loss = trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "distilled {} classes × {} objects in {} iterations (final loss {final_loss:.6e}) into {}",
        baked.num_classes(),
        cfg.ppc,
        cfg.iterations,
        args.out.display()
    );
    Ok(())
}

// ----- eval ------------------------------------------------------------------

/// Train a classifier on one dataset repeatedly and score another.
#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Training dataset file.
    #[arg(long)]
    pub train: PathBuf,
    /// Test dataset file.
    #[arg(long)]
    pub test: PathBuf,
    /// Training epochs per repeat.
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Objects per training batch.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Weight decay on non-bias parameters.
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    #[arg(long, default_value_t = 250)]
    pub lr_decay_step: usize,
    /// Multiplier applied at each schedule step.
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay_factor: f64,
    /// Independent training runs to aggregate.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Comma-separated classifier trunk widths (first must be 3).
    #[arg(long, default_value = "3,64,128")]
    pub widths: String,
    /// Hidden width of the classification head.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Training augmentation: none | random_rotation.
    #[arg(long, default_value = "none")]
    pub augmentation: String,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Method label recorded in the outputs (e.g. distilled, random).
    #[arg(long, default_value = "unknown")]
    pub method: String,
    /// Objects-per-class label recorded in the outputs; defaults to the
    /// training set's per-class count when it is balanced.
    #[arg(long)]
    pub ppc: Option<usize>,
    /// Output JSON report path.
    #[arg(long)]
    pub out_json: PathBuf,
    /// Optional CSV file to append a summary row to.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    train: String,
    test: String,
    method: &'a str,
    ppc: usize,
    seed: u64,
    config: BTreeMap<String, String>,
    report: &'a EvalReport,
}

fn parse_widths(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| config::parse_value::<usize>("widths", s.trim()))
        .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let train = read_dataset(&args.train)?;
    let test = read_dataset(&args.test)?;
    if train.class_names() != test.class_names() {
        return Err(Error::Invalid(format!(
            "train and test class tables differ: {:?} vs {:?}",
            train.class_names(),
            test.class_names()
        )));
    }

    let trunk = ExtractorConfig::new(parse_widths(&args.widths)?)?;
    let classifier = ClassifierConfig::new(trunk, args.hidden, train.num_classes())?;
    let mut cfg = EvalConfig::new(train.num_classes());
    cfg.epochs = args.epochs;
    cfg.batch = args.batch;
    cfg.lr = args.lr;
    cfg.momentum = args.momentum;
    cfg.weight_decay = args.weight_decay;
    cfg.lr_decay_step = args.lr_decay_step;
    cfg.lr_decay_factor = args.lr_decay_factor;
    cfg.repeats = args.repeats;
    cfg.classifier = classifier;
    cfg.augmentation = args.augmentation.parse::<Augmentation>()?;
    cfg.seed = args.seed;

    let report = repeated_eval(&train, &test, &cfg)?;

    let ppc = args.ppc.unwrap_or_else(|| {
        if train.len() % train.num_classes() == 0 {
            train.len() / train.num_classes()
        } else {
            0
        }
    });
    let mut config_echo = BTreeMap::new();
    config_echo.insert("epochs".into(), cfg.epochs.to_string());
    config_echo.insert("batch".into(), cfg.batch.to_string());
    config_echo.insert("lr".into(), cfg.lr.to_string());
    config_echo.insert("momentum".into(), cfg.momentum.to_string());
    config_echo.insert("weight_decay".into(), cfg.weight_decay.to_string());
    config_echo.insert("lr_decay_step".into(), cfg.lr_decay_step.to_string());
    config_echo.insert("lr_decay_factor".into(), cfg.lr_decay_factor.to_string());
    config_echo.insert("repeats".into(), cfg.repeats.to_string());
    config_echo.insert("widths".into(), args.widths.clone());
    config_echo.insert("hidden".into(), args.hidden.to_string());
    config_echo.insert("augmentation".into(), cfg.augmentation.name().to_string());
    config_echo.insert("seed".into(), cfg.seed.to_string());

    let record = EvalRecord {
        train: args.train.display().to_string(),
        test: args.test.display().to_string(),
        method: &args.method,
        ppc,
        seed: args.seed,
        config: config_echo.clone(),
        report: &report,
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Invalid(format!("cannot serialize report: {e}")))?;
    write_text(&args.out_json, &(json + "\n"))?;

    if let Some(csv_path) = &args.out_csv {
        append_csv_row(csv_path, &file_stem(&args.train), &args.method, ppc, args.seed, &report)?;
    }

    let mut manifest = RunManifest::new("eval");
    manifest.config = config_echo;
    manifest.set("method", &args.method);
    manifest.set("ppc", ppc);
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.test)?;
    manifest.add_output(&args.out_json);
    if let Some(csv_path) = &args.out_csv {
        manifest.add_output(csv_path);
    }
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&sibling(&args.out_json, "manifest.json"))?;

    println!(
        "accuracy {:.4} ± {:.4} over {} repeats ({} -> {})",
        report.mean,
        report.std,
        cfg.repeats,
        file_stem(&args.train),
        file_stem(&args.test)
    );
    Ok(())
}

/// Appends one summary row, writing the header first when the file is new.
fn append_csv_row(
    path: &Path,
    dataset: &str,
    method: &str,
    ppc: usize,
    seed: u64,
    report: &EvalReport,
) -> Result<()> {
    let needs_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if needs_header {
        out.push_str("dataset,method,ppc,seed,mean_acc,std_acc,wall_s\n");
    }
    out.push_str(&format!(
        "{dataset},{method},{ppc},{seed},{},{},{:.3}\n",
        report.mean, report.std, report.wall_seconds
    ));
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

// ----- export-ply ------------------------------------------------------------

/// Write each cloud of a dataset as a colored PLY file.
#[derive(Args, Debug)]
pub struct ExportPlyArgs {
    /// Input dataset file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory receiving one .ply per cloud.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Axis mapped to vertex color: x | y | z.
    #[arg(long, default_value = "y")]
    pub color_axis: String,
}

pub fn cmd_export_ply(args: &ExportPlyArgs) -> Result<()> {
    let start = Instant::now();
    let ds = read_dataset(&args.dataset)?;
    let axis = args.color_axis.parse::<ColorAxis>()?;
    ensure_dir(&args.out_dir)?;

    let mut manifest = RunManifest::new("export-ply");
    let mut per_class_counter = vec![0usize; ds.num_classes()];
    for (cloud, label) in ds.items() {
        let k = per_class_counter[*label];
        per_class_counter[*label] += 1;
        let name = format!("{}_{k:03}.ply", ds.class_names()[*label]);
        let path = args.out_dir.join(name);
        export_ply(cloud, &path, axis)?;
        manifest.add_output(&path);
    }

    manifest.set("color_axis", &args.color_axis);
    manifest.add_input(&args.dataset)?;
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out_dir.join("manifest.json"))?;

    println!("exported {} clouds to {}", ds.len(), args.out_dir.display());
    Ok(())
}

// ----- gradcheck -------------------------------------------------------------

/// Verify analytic gradients against finite differences.
#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Suite size: small (quick smoke) or full (acceptance scale).
    #[arg(long, default_value = "small")]
    pub profile: String,
    /// Optional JSON file for the result table.
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SuiteResult {
    suite: &'static str,
    instances: usize,
    max_error: f64,
    tolerance: f64,
    pass: bool,
}

/// Minimum distance to a non-smooth point of the extractor applied to one
/// cloud: relu pre-activation magnitudes plus adjacent gaps of each
/// channel's descending-sorted values (the top gap doubles as the max-pool
/// margin). Only valid for transform-free networks.
fn extractor_margin(net: &NetworkWeights, cloud: &Array2<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    let mut x = cloud.clone();
    let layers = net.layers();
    for (i, (w, b)) in layers.iter().enumerate() {
        let z = x.dot(w) + b;
        if i + 1 < layers.len() {
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            x = z.mapv(|v| v.max(0.0));
        } else {
            x = z;
        }
    }
    for col in x.columns() {
        let mut values: Vec<f64> = col.to_vec();
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite features"));
        for pair in values.windows(2) {
            margin = margin.min(pair[0] - pair[1]);
        }
    }
    margin
}

fn random_cloud(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>() * 2.0 - 1.0)
}

/// Analytic rotation Jacobian vs central differences of the matrix entries.
fn rotation_jacobian_suite(instances: usize) -> SuiteResult {
    let mut rng = rng_for(20_000, &[PURPOSE_ROTATION]);
    let h = 1e-6;
    let mut max_error = 0.0f64;
    for _ in 0..instances {
        let theta = RotationParams {
            x: (rng.gen::<f64>() - 0.5) * 2.0 * std::f64::consts::PI,
            y: (rng.gen::<f64>() - 0.5) * 2.0 * std::f64::consts::PI,
            z: (rng.gen::<f64>() - 0.5) * 2.0 * std::f64::consts::PI,
        };
        let analytic = d_rotation_d_theta(&theta);
        for axis in 0..3 {
            let mut plus = theta;
            let mut minus = theta;
            match axis {
                0 => {
                    plus.x += h;
                    minus.x -= h;
                }
                1 => {
                    plus.y += h;
                    minus.y -= h;
                }
                _ => {
                    plus.z += h;
                    minus.z -= h;
                }
            }
            let fd = (rotation_matrix(&plus) - rotation_matrix(&minus)) / (2.0 * h);
            let err = (&fd - &analytic[axis]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            max_error = max_error.max(err);
        }
    }
    SuiteResult { suite: "rotation-jacobian", instances, max_error, tolerance: 1e-8, pass: max_error <= 1e-8 }
}

/// Coordinate gradients of the summed pooled features of a random extractor.
fn extractor_gradient_suite(instances: usize) -> SuiteResult {
    let cfg = ExtractorConfig { widths: vec![3, 16, 8], include_input_transform: false };
    let mut max_error = 0.0f64;
    for i in 0..instances {
        let net = init_weights(&cfg, &mut rng_for(20_001, &[PURPOSE_WEIGHTS, i as u64]));
        let mut rng = rng_for(20_002, &[PURPOSE_POINTS, i as u64]);
        // Resample until the instance is safely inside one smooth piece.
        let mut attempts = 0;
        let cloud = loop {
            let candidate = random_cloud(&mut rng, 12);
            if extractor_margin(&net, &candidate) > 1e-3 {
                break candidate;
            }
            attempts += 1;
            assert!(attempts < 1000, "could not sample a tie-free cloud");
        };
        let mut tape = Tape::new();
        let tw = load_weights(&mut tape, &net);
        let x = tape.leaf(cloud.clone());
        let pooled = extract_pooled(&mut tape, &tw, x);
        let loss = tape.sum(pooled);
        tape.backward(loss);
        let analytic = tape.grad(x).clone();
        let err = finite_diff_check(
            |probe| extract_pooled_array(&net, probe).sum(),
            &cloud,
            &analytic,
            1e-5,
        );
        max_error = max_error.max(err);
    }
    SuiteResult { suite: "extractor-gradient", instances, max_error, tolerance: 1e-5, pass: max_error <= 1e-5 }
}

/// One random distillation-loss instance: per-class real batches plus
/// synthetic clouds with rotation angles.
#[derive(Clone)]
struct LossInstance {
    net: NetworkWeights,
    real: Vec<Vec<Array2<f64>>>,
    synth: Vec<Vec<Array2<f64>>>,
    theta: Vec<Vec<Array2<f64>>>,
}

const LOSS_SUITE_WEIGHTS: LossWeights = LossWeights { lambda_alpha: 1.0, lambda_beta: 0.5 };

fn instance_forward(inst: &LossInstance, grads: bool) -> (f64, Vec<Vec<Array2<f64>>>, Vec<Vec<Array2<f64>>>) {
    let mut total = 0.0;
    let mut coord_grads = Vec::new();
    let mut theta_grads = Vec::new();
    for c in 0..inst.real.len() {
        let mut tape = Tape::new();
        let mut coord_ids = Vec::new();
        let mut theta_ids = Vec::new();
        let mut s_ids = Vec::new();
        for k in 0..inst.synth[c].len() {
            let x = tape.leaf(inst.synth[c][k].clone());
            let th = tape.leaf(inst.theta[c][k].clone());
            coord_ids.push(x);
            theta_ids.push(th);
            s_ids.push(tape.rotate(th, x));
        }
        let loss = l_sadm(
            &mut tape,
            &inst.net,
            &inst.real[c],
            &s_ids,
            AlignmentStrategy::ChannelSorted,
            &KernelConfig::Fixed(1.0),
            &LOSS_SUITE_WEIGHTS,
        )
        .expect("fixed bandwidth cannot fail");
        total += tape.data(loss)[[0, 0]];
        if grads {
            tape.backward(loss);
            coord_grads.push(coord_ids.iter().map(|&id| tape.grad(id).clone()).collect());
            theta_grads.push(theta_ids.iter().map(|&id| tape.grad(id).clone()).collect());
        }
    }
    (total, coord_grads, theta_grads)
}

/// Draws one synthetic slot (coordinates plus rotation angles) whose rotated
/// cloud clears the tie margin. A finite-difference probe of a synthetic
/// parameter only perturbs that cloud's own forward pass — the other clouds'
/// features stay bitwise fixed — so this per-slot margin is the only
/// non-smoothness guard the probe needs.
fn tie_free_slot(
    net: &NetworkWeights,
    rng: &mut impl Rng,
    n: usize,
) -> (Array2<f64>, Array2<f64>) {
    let mut attempts = 0;
    loop {
        let coords = random_cloud(rng, n);
        let theta = Array2::from_shape_fn((1, 3), |_| (rng.gen::<f64>() - 0.5) * 2.0);
        let params = RotationParams { x: theta[[0, 0]], y: theta[[0, 1]], z: theta[[0, 2]] };
        let rotated = coords.dot(&rotation_matrix(&params).t());
        if extractor_margin(net, &rotated) > 5e-4 {
            return (coords, theta);
        }
        attempts += 1;
        assert!(attempts < 1000, "could not sample a tie-free synthetic slot");
    }
}

/// Full-loss gradients (coordinates and angles) vs central differences,
/// on tie-free random instances.
fn loss_gradient_suite(instances: usize) -> SuiteResult {
    let cfg = ExtractorConfig { widths: vec![3, 16, 8], include_input_transform: false };
    let (classes, t_batch, ppc, n) = (2, 4, 2, 16);
    let mut max_error = 0.0f64;
    for i in 0..instances {
        let net = init_weights(&cfg, &mut rng_for(20_003, &[PURPOSE_WEIGHTS, i as u64]));
        let mut rng = rng_for(20_004, &[PURPOSE_POINTS, i as u64]);
        let real: Vec<Vec<Array2<f64>>> = (0..classes)
            .map(|_| (0..t_batch).map(|_| random_cloud(&mut rng, n)).collect())
            .collect();
        let mut synth = vec![Vec::new(); classes];
        let mut theta = vec![Vec::new(); classes];
        for c in 0..classes {
            for _ in 0..ppc {
                let (coords, angles) = tie_free_slot(&net, &mut rng, n);
                synth[c].push(coords);
                theta[c].push(angles);
            }
        }
        let inst = LossInstance { net, real, synth, theta };
        let (_, coord_grads, theta_grads) = instance_forward(&inst, true);
        for c in 0..classes {
            for k in 0..ppc {
                let coord_err = finite_diff_check(
                    |probe| {
                        let mut m = inst.clone();
                        m.synth[c][k] = probe.clone();
                        instance_forward(&m, false).0
                    },
                    &inst.synth[c][k],
                    &coord_grads[c][k],
                    1e-5,
                );
                let theta_err = finite_diff_check(
                    |probe| {
                        let mut m = inst.clone();
                        m.theta[c][k] = probe.clone();
                        instance_forward(&m, false).0
                    },
                    &inst.theta[c][k],
                    &theta_grads[c][k],
                    1e-5,
                );
                max_error = max_error.max(coord_err).max(theta_err);
            }
        }
    }
    SuiteResult {
        suite: "distillation-loss-gradient",
        instances,
        max_error,
        tolerance: 1e-4,
        pass: max_error <= 1e-4,
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let (rotation_n, extractor_n, loss_n) = match args.profile.as_str() {
        "small" => (100, 3, 5),
        "full" => (1000, 10, 20),
        other => {
            return Err(Error::Config(format!("unknown profile {other:?} (expected small or full)")))
        }
    };
    let results = vec![
        rotation_jacobian_suite(rotation_n),
        extractor_gradient_suite(extractor_n),
        loss_gradient_suite(loss_n),
    ];

    println!("{:<28} {:>9} {:>12} {:>11} {:>7}", "suite", "instances", "max error", "tolerance", "result");
    for r in &results {
        println!(
            "{:<28} {:>9} {:>12.3e} {:>11.0e} {:>7}",
            r.suite,
            r.instances,
            r.max_error,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }

    if let Some(path) = &args.out_json {
        let json = serde_json::to_string_pretty(&results)
            .map_err(|e| Error::Invalid(format!("cannot serialize results: {e}")))?;
        write_text(path, &(json + "\n"))?;
    }

    let failures = results.iter().filter(|r| !r.pass).count();
    if failures > 0 {
        return Err(Error::Invalid(format!("{failures} of {} gradient suites failed", results.len())));
    }
    Ok(())
}
