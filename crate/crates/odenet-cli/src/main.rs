//! Command-line driver: training runs, prediction, gradient checking,
//! baseline evaluation, and shallow-net compilation.
//!
//! Exit codes: 0 success, 1 user/config error, 2 numerical divergence.

mod config;

use clap::{Parser, Subcommand};
use config::{Config, DatasetSpec, InitKind, ReadoutSpec};
use odenet::baselines::knn_evaluate;
use odenet::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use odenet::data::{
    argmax, gen_circle, gen_sinusoid, load_csv, load_mnist_idx, split, Dataset, Task,
};
use odenet::error::Error;
use odenet::forward::predict;
use odenet::gradcheck::{
    adjoint_gradients_full_grid, compare_gradients_masked, fd_gradient, full_grid_loss,
    kink_mask, random_instance, FD_STEP,
};
use odenet::linalg::{random_orthonormal_rows, Mat};
use odenet::model::{OdeNetSpec, ParamPath};
use odenet::optimizer::{train, EpochRecord, OptimizerConfig};
use odenet::resnet::resnet_predict;
use odenet::rng::Rng;
use odenet::uap::{compile_resnet, ShallowNet};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "odenet",
    about = "Continuous-depth and residual network training toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; writes a checkpoint and a metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint path.
        #[arg(long, default_value = "model.ckpt")]
        checkpoint: PathBuf,
        /// Output metrics CSV path (one row per epoch, flushed per epoch).
        #[arg(long, default_value = "metrics.csv")]
        metrics: PathBuf,
    },
    /// Predict outputs for a CSV of inputs using a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Append a class-label column (binary: threshold 0.5; multiclass:
        /// argmax).
        #[arg(long)]
        task: Option<String>,
    },
    /// Verify adjoint gradients against central finite differences on a
    /// seeded random instance with the configured dimensions.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Number of samples in the verification batch.
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        rel_tol: f64,
        #[arg(long, default_value_t = 1e-7)]
        abs_tol: f64,
        /// Test hook: flip the sign of the assembled gamma gradients, which
        /// must make the check fail.
        #[arg(long, hide = true)]
        sabotage_gamma: bool,
    },
    /// Compile a shallow ridge network into an exact residual checkpoint.
    Construct {
        /// Shallow net text file (`shallow n m L activation` header).
        #[arg(long)]
        net: PathBuf,
        /// Readout matrix text file: m lines of n whitespace-separated floats.
        #[arg(long)]
        a_matrix: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Random probes used to report the reproduction error.
        #[arg(long, default_value_t = 100)]
        probes: usize,
    },
    /// Evaluate a baseline on the configured dataset.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Baseline name; `knn` is the only one provided.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Divergence { .. } => 2,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train {
            config,
            checkpoint,
            metrics,
        } => cmd_train(&config, &checkpoint, &metrics),
        Command::Predict {
            checkpoint,
            input,
            output,
            task,
        } => cmd_predict(&checkpoint, &input, &output, task.as_deref()),
        Command::Gradcheck {
            config,
            samples,
            rel_tol,
            abs_tol,
            sabotage_gamma,
        } => cmd_gradcheck(&config, samples, rel_tol, abs_tol, sabotage_gamma),
        Command::Construct {
            net,
            a_matrix,
            output,
            probes,
        } => cmd_construct(&net, &a_matrix, &output, probes),
        Command::Evaluate { config, method, k } => cmd_evaluate(&config, &method, k),
    }
}

fn load_config(path: &Path) -> Result<Config, Error> {
    let text = std::fs::read_to_string(path)?;
    config::parse_config(&text, &path.display().to_string())
}

fn build_spec(cfg: &Config) -> Result<OdeNetSpec, Error> {
    let m = &cfg.model;
    let a = match &m.readout {
        ReadoutSpec::Inline(entries) => Mat::from_vec(m.m, m.n, entries.clone()),
        ReadoutSpec::RandomOrthogonal(seed) => {
            let mut rng = Rng::seed_from(*seed);
            random_orthonormal_rows(&mut rng, m.m, m.n)
        }
    };
    OdeNetSpec::new(m.n, m.m, a, m.t_horizon, m.steps, m.activation)
}

/// Assemble (train, validation) per the config. Generator seeds derive from
/// the training seed so a config pins the data.
fn build_datasets(cfg: &Config) -> Result<(Dataset, Option<Dataset>), Error> {
    let data_seed = cfg.train.seed.wrapping_add(0x0DA7A);
    match &cfg.data.dataset {
        DatasetSpec::Sin => {
            let train = gen_sinusoid(cfg.data.limit.unwrap_or(1000));
            let val = gen_sinusoid(3333);
            Ok((train, Some(val)))
        }
        DatasetSpec::Circle => {
            let train = gen_circle(cfg.data.limit.unwrap_or(10_000), data_seed);
            let val = gen_circle(2_500, data_seed.wrapping_add(1));
            Ok((train, Some(val)))
        }
        DatasetSpec::Mnist(dir) => {
            let dir = match dir {
                Some(d) => d.clone(),
                None => PathBuf::from(std::env::var("MNIST_DIR").map_err(|_| {
                    Error::InvalidArgument(
                        "dataset = mnist needs `mnist:<dir>` or the MNIST_DIR variable".into(),
                    )
                })?),
            };
            let pool = load_mnist_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                cfg.data.limit,
            )?;
            let fraction = cfg.data.split_fraction.unwrap_or(0.8);
            let (train, val) = split(&pool, fraction, data_seed)?;
            Ok((train, Some(val)))
        }
        DatasetSpec::Csv(path) => {
            let mut pool = load_csv(path)?;
            pool.task = cfg.data.task;
            if let Some(limit) = cfg.data.limit {
                pool.inputs.truncate(limit);
                pool.targets.truncate(limit);
            }
            match cfg.data.split_fraction {
                Some(f) => {
                    let (train, val) = split(&pool, f, data_seed)?;
                    Ok((train, Some(val)))
                }
                None => Ok((pool, None)),
            }
        }
    }
}

fn init_params(spec: &OdeNetSpec, init: InitKind) -> ParamPath {
    match init {
        InitKind::Zeros => ParamPath::zeros(spec),
        InitKind::Eps => ParamPath::constant(spec, 1e-8),
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_train(config_path: &Path, checkpoint_path: &Path, metrics_path: &Path) -> Result<(), Error> {
    let cfg = load_config(config_path)?;
    let spec = build_spec(&cfg)?;
    let (mut train_ds, mut val_ds) = build_datasets(&cfg)?;
    train_ds.task = cfg.data.task;
    if let Some(val) = val_ds.as_mut() {
        val.task = cfg.data.task;
    }
    let init = init_params(&spec, cfg.train.init);
    let opt = OptimizerConfig {
        tau: cfg.train.tau,
        tau1: cfg.train.tau1,
        eta_stop: cfg.train.eta_stop,
        max_epochs: cfg.train.max_epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.train.seed,
        method: cfg.train.method,
    };

    let mut metrics = std::fs::File::create(metrics_path)?;
    writeln!(metrics, "epoch,train_loss,val_loss,train_acc,val_acc")?;
    let sink = |rec: &EpochRecord| -> Result<(), Error> {
        writeln!(
            metrics,
            "{},{},{},{},{}",
            rec.epoch,
            rec.train_loss,
            format_opt(rec.val_loss),
            format_opt(rec.train_acc),
            format_opt(rec.val_acc)
        )?;
        metrics.flush()?;
        Ok(())
    };

    let state = train(&spec, &init, &train_ds, val_ds.as_ref(), &opt, sink)?;
    write_checkpoint(
        checkpoint_path,
        &Checkpoint::OdeNet {
            spec,
            params: state.params,
        },
    )?;
    let last = state.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs; train_loss {}{}",
        state.epoch,
        last.train_loss,
        match last.val_acc {
            Some(acc) => format!(", val_acc {acc}"),
            None => String::new(),
        }
    );
    println!("checkpoint: {}", checkpoint_path.display());
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

/// Inputs from a prediction CSV: `x0..x{n-1}` columns, any `y*` columns
/// ignored.
fn read_inputs(path: &Path, n: usize) -> Result<Vec<Vec<f64>>, Error> {
    let ds = load_csv(path).or_else(|_| {
        // x-only files have no y columns; re-parse manually
        let raw = std::fs::read_to_string(path)?;
        let mut lines = raw.lines();
        let header = lines.next().unwrap_or_default();
        let cols = header.split(',').count();
        let mut inputs = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, Error> = line
                .split(',')
                .map(|t| {
                    t.trim().parse().map_err(|_| Error::Parse {
                        path: path.display().to_string(),
                        line: idx + 2,
                        message: format!("bad float `{t}`"),
                    })
                })
                .collect();
            let row = row?;
            if row.len() != cols {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 2,
                    message: "ragged row".into(),
                });
            }
            inputs.push(row);
        }
        Ok(Dataset {
            inputs,
            targets: Vec::new(),
            task: Task::Regression,
        })
    })?;
    if ds.input_dim() != n {
        return Err(Error::Shape(format!(
            "input CSV has {} feature columns, checkpoint expects {n}",
            ds.input_dim()
        )));
    }
    Ok(ds.inputs)
}

fn cmd_predict(
    checkpoint_path: &Path,
    input_path: &Path,
    output_path: &Path,
    task: Option<&str>,
) -> Result<(), Error> {
    let checkpoint = read_checkpoint(checkpoint_path)?;
    let task: Option<Task> = task.map(|t| t.parse()).transpose()?;
    let (n, m) = match &checkpoint {
        Checkpoint::OdeNet { spec, .. } => (spec.input_dim(), spec.output_dim()),
        Checkpoint::ResNet(params) => (params.input_dim(), params.output_dim()),
    };
    let inputs = read_inputs(input_path, n)?;
    let mut out = std::fs::File::create(output_path)?;
    let mut header: Vec<String> = (0..m).map(|i| format!("y{i}")).collect();
    if task.is_some() {
        header.push("label".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for xi in &inputs {
        let y = match &checkpoint {
            Checkpoint::OdeNet { spec, params } => predict(spec, params, xi)?,
            Checkpoint::ResNet(params) => resnet_predict(params, xi)?,
        };
        let mut fields: Vec<String> = y.iter().map(|v| v.to_string()).collect();
        match task {
            Some(Task::Binary) => {
                fields.push(if y[0] >= 0.5 { "1" } else { "0" }.into());
            }
            Some(Task::Multiclass) => fields.push(argmax(&y).to_string()),
            Some(Task::Regression) | None => {}
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    println!(
        "wrote {} predictions to {}",
        inputs.len(),
        output_path.display()
    );
    Ok(())
}

fn cmd_gradcheck(
    config_path: &Path,
    samples: usize,
    rel_tol: f64,
    abs_tol: f64,
    sabotage_gamma: bool,
) -> Result<(), Error> {
    let cfg = load_config(config_path)?;
    let m = &cfg.model;
    let (spec, params, inputs, targets) = random_instance(
        m.n,
        m.m,
        m.steps,
        samples.max(1),
        m.t_horizon,
        m.activation,
        cfg.train.seed,
    );
    let mut analytic = adjoint_gradients_full_grid(&spec, &params, &inputs, &targets)?;
    if sabotage_gamma {
        for g in analytic.g_gamma.iter_mut() {
            for v in g.iter_mut() {
                *v = -*v;
            }
        }
    }
    let mut numeric = fd_gradient(
        |p| full_grid_loss(&spec, p, &inputs, &targets),
        &params,
        FD_STEP,
    )?;
    let h_inv = 1.0 / spec.step_size();
    for g in numeric.g_alpha.iter_mut() {
        for v in g.iter_mut() {
            *v *= h_inv;
        }
    }
    for g in numeric.g_beta.iter_mut() {
        for v in g.data_mut().iter_mut() {
            *v *= h_inv;
        }
    }
    for g in numeric.g_gamma.iter_mut() {
        for v in g.iter_mut() {
            *v *= h_inv;
        }
    }
    let mask = kink_mask(&spec, &params, &inputs)?;
    let report = compare_gradients_masked(&analytic, &numeric, rel_tol, abs_tol, mask.as_ref())?;
    print!("{}", report.render());
    if report.pass {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{} of {} gradient entries outside tolerance",
            report.failed, report.checked
        )))
    }
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Mat, Error> {
    let raw = std::fs::read_to_string(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    for (idx, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            data.push(tok.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("bad float `{tok}`"),
            })?);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("matrix has {} entries, expected {rows}x{cols}", data.len()),
        });
    }
    Ok(Mat::from_vec(rows, cols, data))
}

fn cmd_construct(
    net_path: &Path,
    a_path: &Path,
    output_path: &Path,
    probes: usize,
) -> Result<(), Error> {
    let text = std::fs::read_to_string(net_path)?;
    let net = ShallowNet::parse(&text, &net_path.display().to_string())?;
    let a = read_matrix(a_path, net.m, net.n)?;
    let params = compile_resnet(&net, &a)?;

    let mut rng = Rng::seed_from(0xC0117EC7);
    let mut max_err: f64 = 0.0;
    for _ in 0..probes {
        let xi: Vec<f64> = (0..net.n).map(|_| 2.0 * rng.normal()).collect();
        let want = net.eval(&xi);
        let got = resnet_predict(&params, &xi)?;
        for (g, w) in got.iter().zip(&want) {
            max_err = max_err.max((g - w).abs() / (1.0 + w.abs()));
        }
    }
    write_checkpoint(output_path, &Checkpoint::ResNet(params))?;
    println!("max reproduction error over {probes} probes: {max_err:.3e}");
    println!("checkpoint: {}", output_path.display());
    Ok(())
}

fn cmd_evaluate(config_path: &Path, method: &str, k: usize) -> Result<(), Error> {
    let cfg = load_config(config_path)?;
    let (mut train_ds, val_ds) = build_datasets(&cfg)?;
    train_ds.task = cfg.data.task;
    let mut val_ds = val_ds.ok_or_else(|| {
        Error::InvalidArgument("evaluate needs a dataset with a validation side".into())
    })?;
    val_ds.task = cfg.data.task;
    match method {
        "knn" => {
            let (loss, acc) = knn_evaluate(&train_ds, &val_ds, k)?;
            println!("knn k={k}: loss {loss}, accuracy {acc}");
            Ok(())
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown evaluation method `{other}`; available: knn"
        ))),
    }
}
