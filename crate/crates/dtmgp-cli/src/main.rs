//! Command-line front end: grid construction, factorization, feature
//! evaluation, prior sampling, variance-gap tables, variational training,
//! and KS-based evaluation against the built-in random-field system.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical error,
//! 4 I/O or file-format error.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use dtmgp::chol::inverse_cholesky_sg;
use dtmgp::config::{load_dataset, load_model, load_samples, parse_config, save_model};
use dtmgp::error::{Error, Result};
use dtmgp::eval::{field_ks_experiment, ks_two_sample, macro_replicate};
use dtmgp::expansion::{sample_prior_coefficients, HierarchicalBasis};
use dtmgp::features::FeatureBasis;
use dtmgp::grid::sparse_grid;
use dtmgp::kernel::{MarkovKernel1D, TensorMarkovKernel};
use dtmgp::model::Normalization;
use dtmgp::rng::{stream, Purpose};
use dtmgp::train::{train, DataSet};

#[derive(Parser)]
#[command(name = "dtmgp", version, about = "Sparse deep tensor-Markov GP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemKind {
    /// Logistic Brownian-sheet random field on the unit square.
    Field2d,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the ordered sparse-grid points with their dyadic labels.
    Grid {
        #[arg(long)]
        level: u32,
        #[arg(long)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = GridFormat::Csv)]
        format: GridFormat,
    },
    /// Build the sparse inverse Cholesky factor and write it as triples.
    Chol {
        #[arg(long)]
        level: u32,
        #[arg(long)]
        dim: usize,
        /// Per-factor kernel, e.g. `laplace:theta=1`.
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the hierarchical feature vector at one input point.
    Features {
        #[arg(long)]
        level: u32,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        kernel: String,
        /// Comma-separated coordinates.
        #[arg(long)]
        at: String,
        /// Print the dense reference vector instead of the sparse entries.
        #[arg(long)]
        dense: bool,
    },
    /// Sample one prior expansion path on a uniform lattice.
    SamplePrior {
        #[arg(long)]
        level: u32,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        seed: u64,
        /// Lattice cells per dimension.
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the sup variance gap per level, for convergence tables.
    VarianceGap {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        min_level: u32,
        #[arg(long)]
        max_level: u32,
        /// Lattice cells per dimension (default 1000 / 64 / 16 for d = 1, 2, 3).
        #[arg(long)]
        lattice: Option<usize>,
    },
    /// Train a model from a config and a data file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Rows of `x1 ... xd y`, whitespace- or comma-separated.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss-trace CSV path (defaults to `<out>.trace.csv`).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Averaged-KS evaluation of a trained model against a system.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        system: SystemKind,
        #[arg(long, default_value_t = 100)]
        ntest: usize,
        #[arg(long, default_value_t = 100)]
        nsamples: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Two-sample Kolmogorov-Smirnov statistic of two sample files.
    Ks {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli.command, &mut out) {
        Ok(()) => {}
        // downstream consumers may close the pipe early (e.g. `| head`)
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn tensor_kernel(spec: &str, dim: usize) -> Result<TensorMarkovKernel> {
    TensorMarkovKernel::isotropic(MarkovKernel1D::parse(spec)?, dim)
}

fn parse_point(text: &str, dim: usize) -> Result<Vec<f64>> {
    let coords: Vec<f64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid coordinate `{t}`")))
        })
        .collect::<Result<_>>()?;
    if coords.len() != dim {
        return Err(Error::Config(format!(
            "{} coordinates supplied for dimension {dim}",
            coords.len()
        )));
    }
    Ok(coords)
}

/// Midpoint lattice over the unit cube, `cells` per dimension.
fn lattice_points(dim: usize, cells: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(cells.pow(dim as u32));
    let mut idx = vec![0usize; dim];
    loop {
        out.push(
            idx.iter()
                .map(|&i| (i as f64 + 0.5) / cells as f64)
                .collect(),
        );
        let mut d = dim;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < cells {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn run(command: Command, out: &mut impl Write) -> Result<()> {
    match command {
        Command::Grid { level, dim, format } => {
            let sg = sparse_grid(level, dim)?;
            let mut text = String::new();
            match format {
                GridFormat::Csv => {
                    let headers: Vec<String> = (1..=dim)
                        .map(|j| format!("level_{j}"))
                        .chain((1..=dim).map(|j| format!("offset_{j}")))
                        .chain((1..=dim).map(|j| format!("x_{j}")))
                        .collect();
                    text.push_str(&format!("ordinal,{}\n", headers.join(",")));
                    for (i, label) in sg.labels().iter().enumerate() {
                        let fields: Vec<String> = label
                            .levels()
                            .iter()
                            .map(u32::to_string)
                            .chain(label.offsets().iter().map(u64::to_string))
                            .chain(label.point().iter().map(|x| format!("{x:.16e}")))
                            .collect();
                        text.push_str(&format!("{i},{}\n", fields.join(",")));
                    }
                }
                GridFormat::Json => {
                    text.push_str("[\n");
                    for (i, label) in sg.labels().iter().enumerate() {
                        let levels: Vec<String> =
                            label.levels().iter().map(u32::to_string).collect();
                        let offsets: Vec<String> =
                            label.offsets().iter().map(u64::to_string).collect();
                        let point: Vec<String> =
                            label.point().iter().map(|x| format!("{x:.16e}")).collect();
                        text.push_str(&format!(
                            "  {{\"ordinal\": {i}, \"levels\": [{}], \"offsets\": [{}], \"point\": [{}]}}{}\n",
                            levels.join(", "),
                            offsets.join(", "),
                            point.join(", "),
                            if i + 1 < sg.len() { "," } else { "" }
                        ));
                    }
                    text.push_str("]\n");
                }
            }
            write!(out, "{text}")?;
        }
        Command::Chol {
            level,
            dim,
            kernel,
            out,
        } => {
            let tk = tensor_kernel(&kernel, dim)?;
            let factor = inverse_cholesky_sg(&tk, level)?;
            let mut text = String::new();
            text.push_str(&format!(
                "{} {} {dim} {level} {kernel}\n",
                factor.order(),
                factor.nnz()
            ));
            for col in 0..factor.order() {
                let (rows, values) = factor.col(col);
                for (&row, &value) in rows.iter().zip(values) {
                    text.push_str(&format!("{row} {col} {value:.16e}\n"));
                }
            }
            fs::write(&out, text)?;
        }
        Command::Features {
            level,
            dim,
            kernel,
            at,
            dense,
        } => {
            let basis = FeatureBasis::new(tensor_kernel(&kernel, dim)?, level)?;
            let x = parse_point(&at, dim)?;
            if dense {
                for (i, v) in basis.dense_features(&x)?.iter().enumerate() {
                    writeln!(out, "{i} {v:.16e}")?;
                }
            } else {
                for &(i, v) in basis.features(&x)?.entries() {
                    writeln!(out, "{i} {v:.16e}")?;
                }
            }
        }
        Command::SamplePrior {
            level,
            dim,
            kernel,
            seed,
            grid,
            out,
        } => {
            if grid == 0 || grid.pow(dim as u32) > 1_000_000 {
                return Err(Error::Config(
                    "lattice must be positive and hold at most 1e6 points".into(),
                ));
            }
            let basis = HierarchicalBasis::new(tensor_kernel(&kernel, dim)?, level, 0.0)?;
            let mut rng = stream(seed, Purpose::Predictive, 0);
            let coeffs = sample_prior_coefficients(basis.len(), &mut rng);
            let mut text = String::new();
            for x in lattice_points(dim, grid) {
                let value = basis.evaluate(&coeffs, &x)?;
                let coords: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
                text.push_str(&format!("{},{value:.16e}\n", coords.join(",")));
            }
            fs::write(&out, text)?;
        }
        Command::VarianceGap {
            dim,
            kernel,
            min_level,
            max_level,
            lattice,
        } => {
            let cells = match (lattice, dim) {
                (Some(n), _) => n,
                (None, 1) => 1000,
                (None, 2) => 64,
                (None, 3) => 16,
                (None, d) => {
                    return Err(Error::Config(format!(
                        "no default lattice for dimension {d}; pass --lattice"
                    )))
                }
            };
            writeln!(out, "level sup_gap")?;
            for level in min_level..=max_level {
                let basis = HierarchicalBasis::new(tensor_kernel(&kernel, dim)?, level, 0.0)?;
                writeln!(out, "{level} {:.16e}", basis.sup_variance_gap(cells)?)?;
            }
        }
        Command::Train {
            config,
            data,
            out,
            trace,
        } => {
            let cfg = parse_config(&fs::read_to_string(&config)?)?;
            let (inputs_raw, targets_raw) = load_dataset(&data, cfg.input_dim)?;
            let mut model = cfg.build_model()?;
            if cfg.normalize {
                model.normalization = Normalization::fit(&inputs_raw, &targets_raw);
            }
            let inputs: Vec<Vec<f64>> = inputs_raw
                .iter()
                .map(|x| model.normalization.apply_input(x))
                .collect();
            let targets: Vec<f64> = targets_raw
                .iter()
                .map(|&y| model.normalization.output.apply(y))
                .collect();
            let dataset = DataSet::new(inputs, targets)?;
            let (state, rows) = train(&mut model, &dataset, &cfg.train, &cfg.prior, None)?;
            save_model(&out, &model, &cfg, Some(&state))?;
            let trace_path = trace.unwrap_or_else(|| {
                let mut p = out.as_os_str().to_owned();
                p.push(".trace.csv");
                PathBuf::from(p)
            });
            let mut file = fs::File::create(&trace_path)?;
            writeln!(file, "step,elbo,energy,kl,sigma_n")?;
            for row in rows {
                writeln!(
                    file,
                    "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                    row.step, row.elbo, row.energy, row.kl, row.sigma_n
                )?;
            }
        }
        Command::Evaluate {
            model,
            system,
            ntest,
            nsamples,
            reps,
            seed,
        } => {
            let SystemKind::Field2d = system;
            let (model, _, _) = load_model(&model)?;
            if model.input_dim() != 2 || model.output_dim() != 1 {
                return Err(Error::Config(
                    "the field2d system needs a 2-input, 1-output model".into(),
                ));
            }
            let report = macro_replicate(reps, |r| {
                field_ks_experiment(&model, ntest, nsamples, seed, r as u64, true)
            })?;
            writeln!(out, "{{")?;
            let d_r: Vec<String> = report.replications.iter().map(|d| format!("{d:.16e}")).collect();
            writeln!(out, "  \"replications\": [{}],", d_r.join(", "))?;
            writeln!(out, "  \"d_bar\": {:.16e},", report.mean)?;
            writeln!(out, "  \"sigma_hat\": {:.16e},", report.std)?;
            writeln!(out, "  \"n_test\": {ntest},")?;
            writeln!(out, "  \"n_samples\": {nsamples},")?;
            writeln!(out, "  \"per_point\": [")?;
            for (r, points) in report.per_point.iter().enumerate() {
                let row: Vec<String> = points.iter().map(|d| format!("{d:.16e}")).collect();
                writeln!(
                    out,
                    "    [{}]{}",
                    row.join(", "),
                    if r + 1 < report.per_point.len() { "," } else { "" }
                )?;
            }
            writeln!(out, "  ]")?;
            writeln!(out, "}}")?;
        }
        Command::Ks { a, b } => {
            let sa = load_samples(&a)?;
            let sb = load_samples(&b)?;
            writeln!(out, "{:.16e}", ks_two_sample(&sa, &sb)?)?;
        }
    }
    Ok(())
}
