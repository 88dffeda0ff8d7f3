use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use irrmap::compositing::{build_stack, load_scene_dir, season_start, CompositeStack};
use irrmap::evaluation::{
    change_analysis, compare_products, confusion, iqr_histograms, join_areas, regress_areas, write_change_csv,
    write_confusion_csv, write_histogram_csv, write_product_csv, write_regression_csv, CLASS_NAMES,
};
use irrmap::geodata::{
    county_area, grid_split, rasterize, read_census, road_mask, split_labels, write_census, write_sidecar, Extent,
    Raster, SplitRule, VectorLayer, ROAD_BUFFER_M, TILE_SIZE_M,
};
use irrmap::inference::EnsembleRaster;
use irrmap::manifest::RunManifest;
use irrmap::synthgen::{gen_scenes, gen_world};
use irrmap::training::{extract_patches, train_ensemble, write_loss_csv};
use irrmap::unet::{save_params, UNet};
use irrmap::workflow::{predict_member, RunConfig};
use irrmap::{Error, Result};

#[derive(Parser)]
#[command(name = "irrmap", version, about = "Irrigation mapping with a U-Net ensemble")]
struct Cli {
    /// Master seed; overrides the config's `seed`, which seeds every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// More logging (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world, scenes and a truth census.
    Synth(SynthArgs),
    /// Temporal-mean composite of a scene directory.
    Composite(CompositeArgs),
    /// Split label polygons into train and test sets on a tile grid.
    Split(SplitArgs),
    /// Train an ensemble on a stack and training labels.
    Train(TrainArgs),
    /// Predict with every model, then reduce to median, IQR and classes.
    Predict(PredictArgs),
    /// Reassign irrigated pixels near roads.
    Mask(MaskArgs),
    /// Accuracy, county areas, IQR histograms and change.
    Evaluate(EvaluateArgs),
    /// Every stage on synthetic data.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Seasons to render (default: the config year).
    #[arg(long, value_delimiter = ',')]
    years: Vec<i32>,
}

#[derive(Args)]
struct CompositeArgs {
    #[arg(long)]
    scenes: PathBuf,
    /// Season year (windows start May 1).
    #[arg(long)]
    year: Option<i32>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    labels: PathBuf,
    /// min_x,min_y,max_x,max_y
    #[arg(long, value_delimiter = ',', num_args = 4, conflicts_with = "like")]
    extent: Option<Vec<f64>>,
    /// Take the extent from this raster.
    #[arg(long)]
    like: Option<PathBuf>,
    /// Tile side in map units.
    #[arg(long)]
    tile_size: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    stack: PathBuf,
    /// Training label polygons (GeoJSON).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Train members on separate threads.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    roads: PathBuf,
    #[arg(long, default_value_t = ROAD_BUFFER_M)]
    buffer: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Class raster, `PATH` or `YEAR=PATH`; repeatable.
    #[arg(long, required = true)]
    classes: Vec<String>,
    /// Labels (GeoJSON or raster), `PATH` or `YEAR=PATH`; repeatable.
    #[arg(long)]
    labels: Vec<String>,
    /// Other product, `NAME:YEAR=PATH`; repeatable.
    #[arg(long)]
    product: Vec<String>,
    /// Directory holding median.ras, iqr.ras and classes.ras.
    #[arg(long)]
    ensemble: Option<PathBuf>,
    #[arg(long)]
    counties: Option<PathBuf>,
    #[arg(long)]
    census: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    period: usize,
    /// Years left out of the change analysis.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<i32>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    ensemble: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                detail: e.to_string(),
            })?
        }
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok(cfg.seeded(seed))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn save_raster<T: irrmap::geodata::RasterValue>(
    r: &Raster<T>,
    path: &Path,
    what: &str,
    m: &mut RunManifest,
) -> Result<()> {
    r.save(path)?;
    write_sidecar(path, &json!({ "content": what, "manifest_hash": m.hash() }))?;
    m.add_output(path);
    Ok(())
}

fn split_key(s: &str, default_year: i32) -> Result<(i32, PathBuf)> {
    match s.split_once('=') {
        Some((y, p)) => Ok((
            y.parse().map_err(|_| Error::Invalid(format!("bad year in `{s}`")))?,
            p.into(),
        )),
        None => Ok((default_year, s.into())),
    }
}

fn synth(cfg: &RunConfig, out: &Path, years: &[i32], m: &mut RunManifest) -> Result<()> {
    mkdir(out)?;
    let world = m.time("generate world", |_| gen_world(&cfg.synth))?;
    for (layer, name) in [
        (&world.labels, "labels"),
        (&world.roads, "roads"),
        (&world.counties, "counties"),
    ] {
        let p = out.join(format!("{name}.geojson"));
        layer.save(&p)?;
        m.add_output(&p);
    }
    save_raster(&world.label_raster()?, &out.join("labels.ras"), "labels", m)?;
    let mut census = Vec::new();
    for &year in years {
        let dir = out.join("scenes").join(year.to_string());
        mkdir(&dir)?;
        let scenes = m.time(&format!("render {year}"), |_| gen_scenes(&world, &cfg.synth, year))?;
        for s in &scenes {
            let p = s.save(&dir)?;
            write_sidecar(&p, &json!({ "content": "scene", "manifest_hash": m.hash() }))?;
        }
        m.add_output(&dir);
        census.extend(world.truth_census(year)?);
    }
    let p = out.join("truth_census.csv");
    write_census(&p, &census)?;
    m.add_output(&p);
    Ok(())
}

fn composite(scenes: &Path, year: i32, out: &Path, m: &mut RunManifest) -> Result<PathBuf> {
    mkdir(out)?;
    let obs = load_scene_dir(scenes)?;
    let stack = m.time("composite", |_| build_stack(&obs, season_start(year)?))?;
    let p = out.join("stack.ras");
    stack.save(&p, Some(m.hash()))?;
    m.add_output(&p);
    Ok(p)
}

fn split(
    labels: &Path,
    extent: Extent,
    tile: f64,
    fraction: f64,
    seed: u64,
    out: &Path,
    m: &mut RunManifest,
) -> Result<(PathBuf, PathBuf)> {
    mkdir(out)?;
    let layer = VectorLayer::load(labels)?;
    let (train_tiles, test_tiles) = grid_split(extent, tile, SplitRule::Fraction(fraction), seed)?;
    let (train, test) = split_labels(&layer, &train_tiles, &test_tiles);
    log::info!(
        "{} train / {} test tiles, {} / {} polygons",
        train_tiles.len(),
        test_tiles.len(),
        train.len(),
        test.len()
    );
    let (tp, vp, tiles) = (
        out.join("train.geojson"),
        out.join("test.geojson"),
        out.join("tiles.json"),
    );
    train.save(&tp)?;
    test.save(&vp)?;
    let text = serde_json::to_string_pretty(&json!({ "train": train_tiles, "test": test_tiles }))?;
    std::fs::write(&tiles, text + "\n").map_err(|e| Error::io(&tiles, e))?;
    for p in [&tp, &vp, &tiles] {
        m.add_output(p);
    }
    Ok((tp, vp))
}

fn train(
    cfg: &RunConfig,
    stack: &Path,
    labels: &Path,
    parallel: bool,
    out: &Path,
    m: &mut RunManifest,
) -> Result<PathBuf> {
    let dir = out.join("models");
    mkdir(&dir)?;
    let stack = CompositeStack::load(stack)?;
    let raster = rasterize(&VectorLayer::load(labels)?, stack.grid())?;
    let set = extract_patches(&stack.features, &raster, cfg.split.patch, cfg.split.patch_stride, 1)?;
    log::info!("{} training patches", set.len());
    let mc = cfg.model.config(cfg.train.weight_decay, cfg.seed);
    let members = m.time("train", |_| train_ensemble(&set, &mc, &cfg.train, parallel))?;
    for (k, (model, losses)) in members.iter().enumerate() {
        let p = dir.join(format!("model_{:02}.unp", k + 1));
        save_params(model, &p)?;
        m.add_output(&p);
        let lp = dir.join(format!("loss_{:02}.csv", k + 1));
        let f = File::create(&lp).map_err(|e| Error::io(&lp, e))?;
        write_loss_csv(f, losses)?;
        m.add_output(&lp);
    }
    Ok(dir)
}

fn model_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "unp"))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::Invalid(format!("no .unp model files in {}", dir.display())));
    }
    Ok(v)
}

fn predict(cfg: &RunConfig, models: &Path, stack: &Path, out: &Path, m: &mut RunManifest) -> Result<PathBuf> {
    mkdir(out)?;
    let stack = CompositeStack::load(stack)?;
    let mut members = Vec::new();
    for (k, p) in model_files(models)?.iter().enumerate() {
        let model: UNet = UNet::load_any(p)?;
        let q = m.time(&format!("predict {}", k + 1), |_| {
            predict_member(&model, &stack, &cfg.predict)
        })?;
        save_raster(
            &q,
            &out.join(format!("member_{:02}.ras", k + 1)),
            "quantized probabilities",
            m,
        )?;
        members.push(q);
    }
    let e = m.time("reduce", |_| EnsembleRaster::reduce(&members))?;
    save_raster(&e.median, &out.join("median.ras"), "ensemble median", m)?;
    save_raster(&e.iqr, &out.join("iqr.ras"), "ensemble iqr", m)?;
    let classes = out.join("classes.ras");
    save_raster(&e.classes, &classes, "classes", m)?;
    Ok(classes)
}

fn mask(classes: &Path, roads: &Path, buffer: f64, out: &Path, m: &mut RunManifest) -> Result<PathBuf> {
    mkdir(out)?;
    let masked = road_mask(&Raster::<u8>::load(classes)?, &VectorLayer::load(roads)?, buffer)?;
    let p = out.join("masked.ras");
    save_raster(&masked, &p, "road-masked classes", m)?;
    Ok(p)
}

fn load_labels(path: &Path, like: &Raster<u8>) -> Result<Raster<u8>> {
    if path.extension().is_some_and(|x| x == "ras") {
        Raster::load(path)
    } else {
        rasterize(&VectorLayer::load(path)?, like.grid())
    }
}

fn csv_file(path: &Path, m: &mut RunManifest) -> Result<File> {
    m.add_output(path);
    File::create(path).map_err(|e| Error::io(path, e))
}

#[derive(serde::Serialize)]
struct YearArea {
    year: i32,
    county: String,
    predicted: Option<f64>,
    reference: Option<f64>,
    flagged: bool,
}

fn evaluate(cfg: &RunConfig, a: &EvaluateArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    mkdir(out)?;
    let mut classes = BTreeMap::new();
    for s in &a.classes {
        let (y, p) = split_key(s, cfg.year)?;
        classes.insert(y, Raster::<u8>::load(&p)?);
    }
    let mut labels = BTreeMap::new();
    for s in &a.labels {
        let (y, p) = split_key(s, cfg.year)?;
        let like = classes
            .get(&y)
            .ok_or_else(|| Error::Invalid(format!("labels for {y} but no class raster")))?;
        labels.insert(y, load_labels(&p, like)?);
    }

    if !labels.is_empty() {
        let mut total = None;
        for (y, lab) in &labels {
            let c = confusion(&classes[y], lab, &CLASS_NAMES)?;
            match &mut total {
                None => total = Some(c),
                Some(t) => t.merge(&c)?,
            }
        }
        write_confusion_csv(
            csv_file(&out.join("confusion.csv"), m)?,
            &total.expect("labels present"),
        )?;

        let mut products = BTreeMap::from([("unet".to_string(), classes.clone())]);
        for s in &a.product {
            let (name, rest) = s
                .split_once(':')
                .ok_or_else(|| Error::Invalid(format!("product `{s}` is not NAME:YEAR=PATH")))?;
            let (y, p) = split_key(rest, cfg.year)?;
            products
                .entry(name.to_string())
                .or_default()
                .insert(y, Raster::load(&p)?);
        }
        write_product_csv(
            csv_file(&out.join("products.csv"), m)?,
            &compare_products(&products, &labels)?,
        )?;
    }

    if let Some(dir) = &a.ensemble {
        let e = EnsembleRaster {
            median: Raster::load(&dir.join("median.ras"))?,
            iqr: Raster::load(&dir.join("iqr.ras"))?,
            classes: Raster::load(&dir.join("classes.ras"))?,
        };
        let lab = match labels.values().next() {
            Some(l) => l.clone(),
            None => return Err(Error::Invalid("--ensemble needs --labels".into())),
        };
        let h = iqr_histograms(&e, &lab)?;
        write_histogram_csv(csv_file(&out.join("iqr_histogram.csv"), m)?, &h, &CLASS_NAMES)?;
    }

    if let Some(cp) = &a.counties {
        let counties = VectorLayer::load(cp)?;
        let mut yearly = BTreeMap::new();
        for (y, c) in &classes {
            yearly.insert(*y, county_area(c, &counties)?);
        }
        let census = a.census.as_deref().map(read_census).transpose()?;
        let mut rows = Vec::new();
        let mut regressions = Vec::new();
        for (y, predicted) in &yearly {
            let reference: BTreeMap<String, f64> = census
                .iter()
                .flatten()
                .filter(|r| r.year == *y)
                .map(|r| (r.county.clone(), r.acres))
                .collect();
            for row in join_areas(predicted, &reference) {
                if census.is_some() && row.flagged {
                    log::warn!("{y}: county {} is missing from one source", row.county);
                }
                rows.push(YearArea {
                    year: *y,
                    county: row.county,
                    predicted: row.predicted,
                    reference: row.reference,
                    flagged: census.is_some() && row.flagged,
                });
            }
            if census.is_some() {
                match regress_areas(predicted, &reference) {
                    Ok(r) => regressions.push((y.to_string(), r)),
                    Err(e) => log::warn!("{y}: no regression ({e})"),
                }
            }
        }
        let mut w = csv::Writer::from_writer(csv_file(&out.join("areas.csv"), m)?);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(out.join("areas.csv"), e))?;
        if census.is_some() {
            write_regression_csv(csv_file(&out.join("regression.csv"), m)?, &regressions)?;
        }
        let exclude: BTreeSet<i32> = a.exclude.iter().copied().collect();
        match change_analysis(&yearly, a.period, &exclude) {
            Ok(d) => write_change_csv(csv_file(&out.join("change.csv"), m)?, &d)?,
            Err(e) => log::info!("no change analysis: {e}"),
        }
    }
    Ok(())
}

fn run_all(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<()> {
    let year = cfg.year;
    let world_dir = out.join("world");
    synth(cfg, &world_dir, &[year], m)?;
    let stack = composite(
        &world_dir.join("scenes").join(year.to_string()),
        year,
        &out.join("stack"),
        m,
    )?;
    let grid = *CompositeStack::load(&stack)?.grid();
    let cell = cfg.split.cell_px as f64 * grid.pixel_size;
    let (train_labels, test_labels) = split(
        &world_dir.join("labels.geojson"),
        grid.bounds(),
        cell,
        cfg.split.train_fraction,
        cfg.split.seed,
        &out.join("split"),
        m,
    )?;
    let models = train(cfg, &stack, &train_labels, false, out, m)?;
    let pred = out.join("predict");
    let classes = predict(cfg, &models, &stack, &pred, m)?;
    mask(
        &classes,
        &world_dir.join("roads.geojson"),
        ROAD_BUFFER_M,
        &out.join("mask"),
        m,
    )?;
    let args = EvaluateArgs {
        classes: vec![classes.display().to_string()],
        labels: vec![test_labels.display().to_string()],
        product: Vec::new(),
        ensemble: Some(pred),
        counties: Some(world_dir.join("counties.geojson")),
        census: Some(world_dir.join("truth_census.csv")),
        period: 5,
        exclude: Vec::new(),
    };
    evaluate(cfg, &args, &out.join("evaluate"), m)
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    let out = cli.out.clone();
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Composite(_) => "composite",
        Command::Split(_) => "split",
        Command::Train(_) => "train",
        Command::Predict(_) => "predict",
        Command::Mask(_) => "mask",
        Command::Evaluate(_) => "evaluate",
        Command::Run(_) => "run",
    };
    match &cli.command {
        Command::Train(a) => {
            cfg.train.total_steps = a.steps.unwrap_or(cfg.train.total_steps);
            cfg.train.ensemble_size = a.ensemble.unwrap_or(cfg.train.ensemble_size);
            cfg.train.batch_size = a.batch.unwrap_or(cfg.train.batch_size);
        }
        Command::Predict(a) => {
            cfg.predict.tile = a.tile.unwrap_or(cfg.predict.tile);
            cfg.predict.overlap = a.overlap.unwrap_or(cfg.predict.overlap);
        }
        Command::Run(a) => {
            cfg.train.total_steps = a.steps.unwrap_or(cfg.train.total_steps);
            cfg.train.ensemble_size = a.ensemble.unwrap_or(cfg.train.ensemble_size);
        }
        _ => {}
    }
    let mut manifest = RunManifest::new(name, cfg.seed, &cfg)?;
    let m = &mut manifest;
    match &cli.command {
        Command::Synth(a) => {
            let years = if a.years.is_empty() {
                vec![cfg.year]
            } else {
                a.years.clone()
            };
            synth(&cfg, &out, &years, m)?;
        }
        Command::Composite(a) => {
            m.add_input(&a.scenes)?;
            composite(&a.scenes, a.year.unwrap_or(cfg.year), &out, m)?;
        }
        Command::Split(a) => {
            m.add_input(&a.labels)?;
            let extent: Extent = match (&a.extent, &a.like) {
                (Some(e), _) => [e[0], e[1], e[2], e[3]],
                (None, Some(p)) => Raster::<u8>::load(p)
                    .map(|r| r.grid().bounds())
                    .or_else(|_| Raster::<f32>::load(p).map(|r| r.grid().bounds()))?,
                (None, None) => return Err(Error::Invalid("split needs --extent or --like".into())),
            };
            split(
                &a.labels,
                extent,
                a.tile_size.unwrap_or(TILE_SIZE_M),
                a.fraction.unwrap_or(cfg.split.train_fraction),
                cfg.split.seed,
                &out,
                m,
            )?;
        }
        Command::Train(a) => {
            m.add_input(&a.stack)?;
            m.add_input(&a.labels)?;
            train(&cfg, &a.stack, &a.labels, a.parallel, &out, m)?;
        }
        Command::Predict(a) => {
            m.add_input(&a.models)?;
            m.add_input(&a.stack)?;
            predict(&cfg, &a.models, &a.stack, &out, m)?;
        }
        Command::Mask(a) => {
            m.add_input(&a.classes)?;
            m.add_input(&a.roads)?;
            mask(&a.classes, &a.roads, a.buffer, &out, m)?;
        }
        Command::Evaluate(a) => {
            for s in a.classes.iter().chain(&a.labels) {
                m.add_input(&split_key(s, cfg.year)?.1)?;
            }
            for p in a.counties.iter().chain(&a.census) {
                m.add_input(p)?;
            }
            evaluate(&cfg, a, &out, m)?;
        }
        Command::Run(_) => run_all(&cfg, &out, m)?,
    }
    m.save(&out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
