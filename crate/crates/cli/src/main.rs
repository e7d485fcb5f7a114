//! `dualsplat` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 when data is missing,
//! malformed or violates an invariant.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dualsplat::io::{
    load_camera, load_checkpoint, load_label_dir, save_checkpoint, save_raw, write_label_png, write_mask_png,
    write_occupancy_png, write_rgb_png, Dataset, LoadedView,
};
use dualsplat::oracle::{generate_scene, initial_cloud, SceneSpec};
use dualsplat::raster::{render, InstanceMapMode, RenderRequest};
use dualsplat::scene::{BinaryMask, GaussianCloud};
use dualsplat::segquery::{
    boundary_iou, build_pool, default_band, extract_mask, overlap_counts, query, serve, EmbeddingProvider,
    ProcessProvider, StubProvider, DEFAULT_VIEWS,
};
use dualsplat::train::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "dualsplat", version, about = "Dual-opacity Gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a scene and write a checkpoint plus metrics log.
    Train(TrainArgs),
    /// Render color, occupancy maps and the instance label map from one camera.
    Render(RenderArgs),
    /// Threshold occupancy maps into masks and score them against ground truth.
    Segment(SegmentArgs),
    /// Find the object best matching a text prompt.
    Query(QueryArgs),
    /// Write a synthetic labeled dataset.
    Generate(GenerateArgs),
    /// Serve the built-in embedding stub over stdin/stdout.
    EmbedServer,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    scene: PathBuf,
    /// Directory of ID-map PNGs replacing the manifest's training maps.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// `key = value` config file; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial cloud [default: init.ply next to the manifest].
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output directory for checkpoint.ply and metrics.log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Objects whose occupancy maps are written.
    #[arg(long = "object", num_args = 1..)]
    objects: Vec<u32>,
    /// Also write the colorized instance label map.
    #[arg(long)]
    instance_map: bool,
    /// Per-splat weight deciding the label map.
    #[arg(long, value_enum, default_value_t = LabelMode::InstanceOpacity)]
    label_mode: LabelMode,
    /// Also dump unclamped occupancy values as raw f32 files.
    #[arg(long)]
    raw: bool,
    #[arg(long, num_args = 3, value_names = ["R", "G", "B"])]
    background: Option<Vec<f64>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelMode {
    InstanceOpacity,
    RenderingWeight,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
    All,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest supplying cameras and ground-truth ID maps.
    #[arg(long)]
    views: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
    split: SplitArg,
    /// Where masks and report.txt go; nothing is written without it.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompt: String,
    /// `stub`, or the path of an encoder executable speaking the EMB1 protocol.
    #[arg(long, default_value = "stub")]
    provider: String,
    /// Arguments passed to the encoder executable.
    #[arg(long = "provider-arg", allow_hyphen_values = true)]
    provider_args: Vec<String>,
    /// Dataset manifest whose training views are cropped for embeddings.
    #[arg(long)]
    views: PathBuf,
    /// Views averaged per object.
    #[arg(long, default_value_t = DEFAULT_VIEWS)]
    n_views: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Writes the winner's mask in the first training view here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scene settings such as `objects=3` or `resolution=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Segment(a) => cmd_segment(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::EmbedServer => serve(&mut StubProvider, std::io::stdin().lock(), std::io::stdout().lock())
            .context("embedding server"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let dataset = Dataset::load(&a.scene)?;
    let mut data = dataset.training_data()?;
    if let Some(dir) = &a.labels {
        data.labels = Some(load_label_dir(dir, dataset.object_count)?);
    }
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_text(&text, p)?
        }
        None => TrainConfig::default(),
    };
    config.background = dataset.background;
    config.validate()?;
    let init_path = a
        .init
        .unwrap_or_else(|| a.scene.parent().unwrap_or(Path::new(".")).join("init.ply"));
    let init = load_checkpoint(&init_path)?;
    let result = train(init, &data, config)?;
    create_dir(&a.out)?;
    save_checkpoint(&result.cloud, &a.out.join("checkpoint.ply"))?;
    let log = a.out.join("metrics.log");
    std::fs::write(&log, result.log.to_text()).with_context(|| format!("writing {}", log.display()))?;
    println!("trained {} gaussians -> {}", result.cloud.len(), a.out.display());
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let cloud = load_checkpoint(&a.checkpoint)?;
    let camera = load_camera(&a.camera)?;
    let mut req = RenderRequest::new(camera).with_objects(a.objects.iter().copied());
    if let Some(b) = &a.background {
        req = req.with_background([b[0], b[1], b[2]]);
    }
    if a.instance_map {
        let mode = match a.label_mode {
            LabelMode::InstanceOpacity => InstanceMapMode::InstanceOpacity,
            LabelMode::RenderingWeight => InstanceMapMode::RenderingWeight,
        };
        req = req.with_instance_map(mode);
    }
    let out = render(&cloud, &req)?;
    create_dir(&a.out_dir)?;
    write_rgb_png(&out.color, &a.out_dir.join("color.png"))?;
    for (j, s) in &out.occupancy {
        write_occupancy_png(s, &a.out_dir.join(format!("occupancy_{j}.png")))?;
        if a.raw {
            save_raw(s, &a.out_dir.join(format!("occupancy_{j}.f32")))?;
        }
    }
    if let Some(labels) = &out.instance_labels {
        write_label_png(labels, &a.out_dir.join("instance_map.png"))?;
    }
    Ok(())
}

fn selected_views(dataset: &Dataset, split: SplitArg) -> Vec<&LoadedView> {
    match split {
        SplitArg::Train => dataset.train.iter().collect(),
        SplitArg::Eval => dataset.eval.iter().collect(),
        SplitArg::All => dataset.train.iter().chain(&dataset.eval).collect(),
    }
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let cloud = load_checkpoint(&a.checkpoint)?;
    if cloud.instance.is_none() {
        bail!("{} has no instance opacities; train through stage 2 first", a.checkpoint.display());
    }
    let dataset = Dataset::load(&a.views)?;
    let views = selected_views(&dataset, a.split);
    let objects: Vec<u32> = (1..=cloud.object_count()).collect();
    if let Some(dir) = &a.out_dir {
        create_dir(&dir.join("masks"))?;
    }
    // per object: (intersection, union) summed over views, for the full masks and the boundary band
    let mut region = BTreeMap::<u32, (usize, usize)>::new();
    let mut band = BTreeMap::<u32, Vec<(BinaryMask, BinaryMask)>>::new();
    let mut scored = 0;
    for (v, view) in views.iter().enumerate() {
        let out = render(&cloud, &RenderRequest::new(view.camera.clone()).with_objects(objects.iter().copied()))?;
        for &j in &objects {
            let mask = extract_mask(&out.occupancy[&j], a.tau)?;
            if let Some(dir) = &a.out_dir {
                write_mask_png(&mask, &dir.join(format!("masks/view{v:03}_object{j}.png")))?;
            }
            if let Some(ids) = &view.ids {
                let gt = BinaryMask::from_ids(ids, j);
                let (i, u) = overlap_counts(&mask, &gt)?;
                let e = region.entry(j).or_default();
                e.0 += i;
                e.1 += u;
                band.entry(j).or_default().push((mask, gt));
            }
        }
        scored += view.ids.is_some() as usize;
    }
    let mut report = String::new();
    writeln!(report, "tau = {}", a.tau)?;
    writeln!(report, "views = {}", views.len())?;
    writeln!(report, "scored_views = {scored}")?;
    if scored > 0 {
        let (mut ious, mut bious) = (Vec::new(), Vec::new());
        for &j in &objects {
            let (i, u) = region[&j];
            let iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
            let mut bi = 0.0;
            for (m, g) in &band[&j] {
                bi += boundary_iou(m, g, default_band(m.width, m.height))?;
            }
            let biou = bi / band[&j].len() as f64;
            writeln!(report, "object {j} iou = {iou:.6} biou = {biou:.6}")?;
            ious.push(iou);
            bious.push(biou);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        writeln!(report, "miou = {:.6}", mean(&ious))?;
        writeln!(report, "mbiou = {:.6}", mean(&bious))?;
    }
    print!("{report}");
    if let Some(dir) = &a.out_dir {
        std::fs::write(dir.join("report.txt"), &report)?;
    }
    Ok(())
}

fn provider(a: &QueryArgs) -> Result<Box<dyn EmbeddingProvider>> {
    if a.provider == "stub" {
        return Ok(Box::new(StubProvider));
    }
    let mut cmd = Command::new(&a.provider);
    cmd.args(&a.provider_args);
    Ok(Box::new(ProcessProvider::spawn(cmd, StubProvider.input_size())?))
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let cloud: GaussianCloud = load_checkpoint(&a.checkpoint)?;
    let dataset = Dataset::load(&a.views)?;
    let cameras: Vec<_> = dataset.train.iter().map(|v| v.camera.clone()).collect();
    let images: Vec<_> = dataset.train.iter().map(|v| v.image.clone()).collect();
    let mut p = provider(&a)?;
    let pool = build_pool(&cloud, &cameras, &images, p.as_mut(), a.n_views)?;
    let id = query(&a.prompt, &pool, p.as_mut())?;
    println!("{id}");
    if let Some(dir) = &a.out_dir {
        let cam = cameras.first().context("manifest has no training views")?;
        let out = render(&cloud, &RenderRequest::new(cam.clone()).with_objects([id]))?;
        create_dir(dir)?;
        write_mask_png(&extract_mask(&out.occupancy[&id], a.tau)?, &dir.join(format!("query_object{id}.png")))?;
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut spec = SceneSpec::default();
    for s in &a.settings {
        let (k, v) = s.split_once('=').with_context(|| format!("expected KEY=VALUE, got {s:?}"))?;
        spec.set(k.trim(), v.trim())?;
    }
    let scene = generate_scene(&spec)?;
    let view = |v: &dualsplat::oracle::SyntheticView, ids| LoadedView {
        camera: v.camera.clone(),
        image: v.image.clone(),
        ids: Some(ids),
    };
    let dataset = Dataset {
        object_count: scene.object_count,
        background: scene.background,
        train: scene.train.iter().map(|v| view(v, v.id_map.clone())).collect(),
        eval: scene.eval.iter().map(|v| view(v, v.clean_id_map.clone())).collect(),
    };
    create_dir(&a.out)?;
    let manifest = dataset.save(&a.out)?;
    save_checkpoint(&initial_cloud(&scene, spec.seed), &a.out.join("init.ply"))?;
    save_checkpoint(&scene.cloud, &a.out.join("ground_truth.ply"))?;
    println!("{}", manifest.display());
    Ok(())
}
