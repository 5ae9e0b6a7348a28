use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use clap::CommandFactory;
use gae_core::data::{
    center_crop, contrast_normalize, load_idx, make_rotation_pairs, read_pairs, resample_area,
    synthetic_shapes, write_pairs, ImageSet, PairDataset, PairOptions, Split, TransformationSet,
};
use gae_core::eval::{self, EvalOptions, MetricsReport};
use gae_core::model::LossBreakdown;
use gae_core::train::{load_checkpoint, save_checkpoint, Checkpoint, Trainer};
use ndarray::{s, Array2};

use crate::config::{load_config, ConfigFile, Overrides, RunConfig};
use crate::{AnalogyArgs, Cli, CliError, EvalArgs, GenDataArgs, InspectArgs, TrainArgs};

const MNIST_SIDE: usize = 28;
const MNIST_CROP: usize = 24;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn read_dataset(path: &Path) -> Result<PairDataset, CliError> {
    read_pairs(path).map_err(|e| match e {
        gae_core::GaeError::Io(io) => io_err(path, io),
        other => CliError::io(format!("{}: {other}", path.display())),
    })
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| match e {
        gae_core::GaeError::Io(io) => io_err(path, io),
        other => CliError::io(format!("{}: {other}", path.display())),
    })
}

fn subcommand_usage(name: &str) -> String {
    let mut cmd = Cli::command();
    cmd.find_subcommand_mut(name)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default()
}

fn base_images(args: &GenDataArgs, count: usize) -> Result<ImageSet, CliError> {
    match args.source.as_str() {
        "synthetic" => Ok(synthetic_shapes(count, args.size, args.image_seed.unwrap_or(args.seed))?),
        "mnist" => {
            let Some(path) = &args.idx else {
                return Err(CliError::usage(format!(
                    "--idx is required with --source mnist\n\n{}",
                    subcommand_usage("gen-data")
                )));
            };
            let all = load_idx(path, Split::Train).map_err(|e| match e {
                gae_core::GaeError::Io(io) => io_err(path, io),
                other => CliError::io(format!("{}: {other}", path.display())),
            })?;
            if all.len() < count {
                return Err(CliError::usage(format!(
                    "{} holds {} images, {count} needed",
                    path.display(),
                    all.len()
                )));
            }
            let size = args.size;
            let side = all.side();
            let images = all.images[..count]
                .iter()
                .map(|img| {
                    if size == side {
                        img.clone()
                    } else if side == MNIST_SIDE && size < MNIST_CROP {
                        resample_area(center_crop(img.view(), MNIST_CROP).view(), size)
                    } else {
                        resample_area(img.view(), size)
                    }
                })
                .collect();
            Ok(ImageSet::new(images, Split::Train)?)
        }
        other => Err(CliError::usage(format!(
            "unknown --source '{other}' (expected synthetic or mnist)\n\n{}",
            subcommand_usage("gen-data")
        ))),
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    if args.n == 0 || args.pairs_per_image == 0 {
        return Err(CliError::usage("--n and --pairs-per-image must be positive"));
    }
    let tset = TransformationSet::by_name(&args.tset)?;
    let count = args.n.div_ceil(args.pairs_per_image);
    let images = base_images(&args, count)?;
    let options = PairOptions {
        circular_mask: !args.no_mask,
    };
    let mut pairs = make_rotation_pairs(&images, &tset, args.pairs_per_image, args.seed, options)?;
    if pairs.len() > args.n {
        pairs = PairDataset::new(
            pairs.x.slice(s![..args.n, ..]).to_owned(),
            pairs.y.slice(s![..args.n, ..]).to_owned(),
            pairs.angle_label[..args.n].to_vec(),
        )?;
    }
    if !args.raw {
        pairs = contrast_normalize(&pairs)?;
    }
    write_pairs(&pairs, &args.out).map_err(|e| io_err(&args.out, e))?;
    let hist = pairs.label_histogram();
    println!("pairs {}", pairs.len());
    println!("classes {}", hist.len());
    for (angle, count) in hist {
        println!("angle {angle} {count}");
    }
    Ok(())
}

fn write_loss_header(path: &Path) -> Result<BufWriter<File>, CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,lambda,k,sre,scre,penalties,total").map_err(|e| io_err(path, e))?;
    Ok(w)
}

fn write_loss_row(
    w: &mut impl Write,
    epoch: usize,
    lambda_k: (f64, usize),
    loss: &LossBreakdown,
) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        epoch, lambda_k.0, lambda_k.1, loss.sre, loss.scre, loss.penalties, loss.total
    )
}

fn save(trainer: &Trainer, path: &Path) -> Result<(), CliError> {
    save_checkpoint(&trainer.checkpoint(), path).map_err(|e| io_err(path, e))
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => load_config(path)?,
        None => ConfigFile::default(),
    };
    let over = Overrides {
        seed: args.seed,
        epochs: args.epochs,
        data: args.data.clone(),
        output_dir: args.out.clone(),
        checkpoint_every: args.checkpoint_every,
        no_cir: args.no_cir,
    };
    let mut run = RunConfig::merge(file, &over)?;
    let data_path = run
        .data
        .clone()
        .ok_or_else(|| CliError::usage("no training data: pass --data or set data.train"))?;
    let dataset = read_dataset(&data_path)?;
    if dataset.is_empty() {
        return Err(CliError::usage(format!("{} holds no pairs", data_path.display())));
    }

    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = open_checkpoint(path)?;
            let mut trainer = Trainer::from_checkpoint(ckpt)?;
            if let Some(epochs) = args.epochs {
                trainer.config.epochs = epochs;
            }
            run.train = trainer.config.clone();
            run.num_factors = trainer.gae.num_factors;
            run.num_mappings = trainer.gae.num_mappings;
            run.nonlinearity = trainer.gae.mapping_nonlinearity;
            run.input_dim = Some(trainer.gae.input_dim);
            trainer
        }
        None => Trainer::new(run.gae_config(dataset.input_dim())?, run.train.clone())?,
    };
    if trainer.gae.input_dim != dataset.input_dim() {
        return Err(CliError::incompatible(format!(
            "model expects {} pixels per image but {} has {}",
            trainer.gae.input_dim,
            data_path.display(),
            dataset.input_dim()
        )));
    }
    if !dataset.normalized {
        return Err(CliError::usage(format!(
            "{} is not contrast-normalized (generate it without --raw)",
            data_path.display()
        )));
    }

    let out = run.output_dir.clone();
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
    let effective = out.join("effective.cfg");
    fs::write(&effective, run.to_toml(dataset.input_dim())).map_err(|e| io_err(&effective, e))?;

    let loss_path = out.join("loss.csv");
    let mut log = write_loss_header(&loss_path)?;
    for (e, loss) in trainer.history.iter().enumerate() {
        write_loss_row(&mut log, e + 1, trainer.config.cir_at(e), loss)
            .map_err(|err| io_err(&loss_path, err))?;
    }
    log.flush().map_err(|e| io_err(&loss_path, e))?;

    let total = trainer.config.epochs;
    let stop = args.stop_after.unwrap_or(total).min(total);
    let started = Instant::now();
    while trainer.epoch < stop {
        let epoch = trainer.epoch;
        let loss = trainer.train_epoch(&dataset)?;
        write_loss_row(&mut log, epoch + 1, trainer.config.cir_at(epoch), &loss)
            .and_then(|()| log.flush())
            .map_err(|e| io_err(&loss_path, e))?;
        if trainer.epoch % run.checkpoint_every == 0 {
            save(&trainer, &ckpt_dir.join(format!("epoch_{:05}.ckpt", trainer.epoch)))?;
        }
        if trainer.epoch % 10 == 0 || trainer.epoch == stop {
            eprintln!(
                "epoch {}/{} sre {:.6} scre {:.6} total {:.6} ({:.1}s)",
                trainer.epoch,
                total,
                loss.sre,
                loss.scre,
                loss.total,
                started.elapsed().as_secs_f64()
            );
        }
    }
    let name = if trainer.epoch == total { "final.ckpt" } else { "last.ckpt" };
    let final_path = out.join(name);
    save(&trainer, &final_path)?;
    println!("checkpoint {}", final_path.display());
    if let Some(loss) = trainer.history.last() {
        println!(
            "epoch {} sre {} scre {} penalties {} total {}",
            trainer.epoch, loss.sre, loss.scre, loss.penalties, loss.total
        );
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

fn run_name(checkpoint: &Path) -> String {
    checkpoint
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| stem(checkpoint))
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let test = read_dataset(&args.data)?;
    let knn = read_dataset(&args.knn_data)?;
    for (path, d) in [(&args.data, &test), (&args.knn_data, &knn)] {
        if d.input_dim() != ckpt.gae.input_dim {
            return Err(CliError::incompatible(format!(
                "checkpoint expects {} pixels per image but {} has {}",
                ckpt.gae.input_dim,
                path.display(),
                d.input_dim()
            )));
        }
    }
    let options = EvalOptions {
        mscre_k: args.mscre_k,
        knn_k: args.knn_k,
        seed: args.seed,
    };
    let gae_data = args.gae_data.clone().unwrap_or_else(|| run_name(&args.checkpoint));
    let eval_data = args.eval_data.clone().unwrap_or_else(|| stem(&args.data));
    let report = eval::evaluate(&ckpt.params, &knn, &test, &gae_data, &eval_data, options)?;
    println!("{}", report.to_csv_row());
    if let Some(path) = &args.results {
        let fresh = !path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        if fresh {
            writeln!(f, "{}", MetricsReport::CSV_HEADER).map_err(|e| io_err(path, e))?;
        }
        writeln!(f, "{}", report.to_csv_row()).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn as_image(row: ndarray::ArrayView1<f64>, side: usize) -> Array2<f64> {
    row.to_owned()
        .into_shape_with_order((side, side))
        .expect("square image")
}

pub fn analogy(args: AnalogyArgs) -> Result<(), CliError> {
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let data = read_dataset(&args.data)?;
    if data.input_dim() != ckpt.gae.input_dim {
        return Err(CliError::incompatible(format!(
            "checkpoint expects {} pixels per image but {} has {}",
            ckpt.gae.input_dim,
            args.data.display(),
            data.input_dim()
        )));
    }
    let side = data
        .side()
        .ok_or_else(|| CliError::incompatible("images are not square"))?;
    if args.sources.is_empty() || args.queries.is_empty() {
        return Err(CliError::usage("need at least one source and one query"));
    }
    if let Some(&bad) = args.sources.iter().chain(&args.queries).find(|&&i| i >= data.len()) {
        return Err(CliError::usage(format!(
            "pair index {bad} out of range ({} pairs)",
            data.len()
        )));
    }
    let x = data.x_f64();
    let y = data.y_f64();
    let params = &ckpt.params;
    let mut header = Vec::new();
    let mut rows: Vec<Vec<Array2<f64>>> = vec![Vec::new(); args.queries.len()];
    for &s in &args.sources {
        let a = x.row(s);
        let b = if args.identity { x.row(s) } else { y.row(s) };
        header.push(as_image(a, side));
        header.push(as_image(b, side));
        let mut mse_sum = 0.0;
        for (qi, &q) in args.queries.iter().enumerate() {
            let c = x.row(q);
            let out = eval::make_analogy(params, a, b, c)?;
            mse_sum += eval::mean_squared_error(out.view(), c)?;
            rows[qi].push(as_image(c, side));
            rows[qi].push(as_image(out.view(), side));
        }
        if args.identity {
            println!(
                "source {s} identity_mse {:.6}",
                mse_sum / args.queries.len() as f64
            );
        }
    }
    let mut grid = vec![header];
    grid.extend(rows);
    eval::render_grid(&grid, &args.out).map_err(|e| match e {
        gae_core::GaeError::Io(io) => io_err(&args.out, io),
        other => other.into(),
    })?;
    let (h, w) = eval::grid_dimensions(grid.len(), grid[0].len(), side, side);
    println!("grid {} {}x{} px", args.out.display(), w, h);
    Ok(())
}

pub fn inspect(args: InspectArgs) -> Result<(), CliError> {
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let summary = serde_json::json!({
        "path": args.checkpoint.display().to_string(),
        "model": ckpt.gae,
        "epoch": ckpt.epoch,
        "train": ckpt.train,
        "last_loss": ckpt.loss_history.last(),
        "weight_norms": {
            "u": frobenius(&ckpt.params.u),
            "v": frobenius(&ckpt.params.v),
            "w": frobenius(&ckpt.params.w),
        },
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    Ok(())
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
