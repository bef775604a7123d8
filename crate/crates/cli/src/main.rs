use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use orthsc::data::synth::DeadLeaves;
use orthsc::data::{self, PatchSet};
use orthsc::hier::{self, BiasMode, ClassifierConfig, ReconTerm};
use orthsc::inference::{infer_batch, InferenceMode, Solver};
use orthsc::learning::{init_dictionary, train_dictionary, TrainConfig};
use orthsc::{RegCoeffs, Sample, SignPolicy};
use orthsc_oracle::acceptance::{self, Options, CRITERIA};

#[derive(Parser)]
#[command(name = "orthsc", version, about = "Orthogonal sparse coding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lasso,
    Nonneg,
    Perunit,
    Ridge,
    L0,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Closed,
    Iterative,
}

#[derive(Subcommand)]
enum Command {
    /// Extract patches from PGM images, fit ZCA whitening and whiten them.
    Whiten {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 12)]
        patch_side: usize,
        #[arg(long, default_value_t = 50_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        wt: Option<PathBuf>,
    },
    /// Learn a dictionary on a patch file.
    TrainDict {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Re-orthogonalize after every step (otherwise normalize columns).
        #[arg(long)]
        orthogonalize: bool,
        /// Use the non-negative transform max(0, Φᵀx - λ).
        #[arg(long)]
        nonneg: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Render a dictionary as a PNG grid of basis functions.
    Viz {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        patch_side: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Infer coefficients for samples (OSP1 patch file or text floats).
    Infer {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        lambda: Option<f64>,
        /// Comma-separated per-unit λ.
        #[arg(long, allow_hyphen_values = true)]
        lambdas: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "closed")]
        solver: SolverArg,
    },
    /// Train a stacked classifier on `<data>/samples.csv`.
    TrainClassifier {
        /// Hidden layer widths, e.g. "8,4".
        #[arg(long)]
        layers: String,
        /// free | negative | fixed:λ
        #[arg(long, default_value = "free")]
        bias_mode: String,
        #[arg(long, default_value_t = BiasMode::DEFAULT_LAMBDA_MIN)]
        lambda_min: f64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        orthogonalize: bool,
        /// Weight γ of the auxiliary reconstruction term (0 = off).
        #[arg(long, default_value_t = 0.0)]
        recon_gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        recon_a: f64,
        #[arg(long, default_value_t = 0.0)]
        recon_b: f64,
        #[arg(long)]
        accuracy_csv: Option<PathBuf>,
    },
    /// Accuracy of a model on `<data>/samples.csv`.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the acceptance and equivalence suite.
    Check {
        /// Smaller dictionary-learning run, no sweep.
        #[arg(long)]
        quick: bool,
        /// Comma-separated criterion numbers to run.
        #[arg(long)]
        only: Option<String>,
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Write seeded dead-leaves PGM images.
    SynthImages {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a two-class Gaussian blob data directory.
    GenBlobs {
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 0.6)]
        std_dev: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn samples_csv(dir: &Path) -> PathBuf {
    dir.join("samples.csv")
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(|t| t.trim().parse::<T>().with_context(|| format!("bad {what} entry {t:?}")))
        .collect()
}

fn parse_bias_mode(s: &str, lambda_min: f64, layers: usize) -> Result<BiasMode> {
    match s {
        "free" => Ok(BiasMode::FreeCnn),
        "negative" => Ok(BiasMode::NegativeOnly { lambda_min }),
        _ => match s.strip_prefix("fixed:") {
            Some(v) => {
                let l: f64 = v.parse().with_context(|| format!("bad fixed λ {v:?}"))?;
                Ok(BiasMode::SharedScalarFixed(vec![l; layers]))
            }
            None => bail!("bias mode must be free, negative or fixed:λ, got {s:?}"),
        },
    }
}

/// An OSP1 patch file or whitespace/comma separated floats, one sample per
/// non-empty line.
fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(&data::format::PATCHES_MAGIC) {
        return Ok(data::decode_patches(&bytes)?.to_samples());
    }
    let text = String::from_utf8(bytes).context("sample file is neither OSP1 nor text")?;
    let mut out = Vec::new();
    for line in text.lines() {
        let values = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().with_context(|| format!("bad number {t:?}")))
            .collect::<Result<Vec<_>>>()?;
        if !values.is_empty() {
            out.push(Sample::from_slice(&values)?);
        }
    }
    if out.is_empty() {
        bail!("no samples in {}", path.display());
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Whiten {
            inputs,
            patch_side,
            count,
            seed,
            eps,
            out,
            wt,
        } => {
            let images = inputs
                .iter()
                .map(|p| data::load_image_pgm(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let raw = data::extract_patches_from(&images, patch_side, count, seed)?;
            let transform = data::fit_whitening(&raw, eps)?;
            data::save_patches(&out, &data::apply_whitening(&transform, &raw)?)?;
            if let Some(wt) = wt {
                data::save_whitening(wt, &transform)?;
            }
            println!("wrote {count} whitened {patch_side}x{patch_side} patches to {}", out.display());
        }
        Command::TrainDict {
            patches,
            n,
            lambda,
            lr,
            epochs,
            batch_size,
            seed,
            orthogonalize,
            nonneg,
            out,
            loss_csv,
        } => {
            let set: PatchSet = data::load_patches(&patches)?;
            let policy = if nonneg { SignPolicy::NonNegativeOnly } else { SignPolicy::Free };
            let mut cfg = TrainConfig::new(RegCoeffs::shared(lambda, policy)?, seed.wrapping_add(1));
            cfg.learning_rate = lr;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.orthogonalize_each_step = orthogonalize;
            let run = train_dictionary(&init_dictionary(set.dim(), n, seed)?, &set, &cfg)?;
            data::save_dictionary(&out, &run.dictionary)?;
            if let Some(path) = loss_csv {
                let mut f = fs::File::create(&path)?;
                writeln!(f, "epoch,loss")?;
                for (e, l) in run.loss_curve.iter().enumerate() {
                    writeln!(f, "{e},{l:?}")?;
                }
            }
            println!(
                "loss {:.6} -> {:.6} over {} steps; max orthogonality error {:.3e}",
                run.initial_loss(),
                run.final_loss(),
                run.steps,
                run.max_orthogonality_error
            );
        }
        Command::Viz { dict, patch_side, out } => {
            let phi = data::load_dictionary(&dict)?;
            orthsc::viz::render_basis_grid(&orthsc::learning::canonicalize_signs(&phi), patch_side, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Infer {
            dict,
            sample,
            mode,
            lambda,
            lambdas,
            k,
            solver,
        } => {
            let phi = data::load_dictionary(&dict)?;
            let need_lambda = || lambda.context("--lambda is required for this mode");
            let mode = match mode {
                Mode::Lasso => InferenceMode::Lasso(need_lambda()?),
                Mode::Nonneg => InferenceMode::NonNeg(need_lambda()?),
                Mode::Ridge => InferenceMode::Ridge(need_lambda()?),
                Mode::L0 => InferenceMode::L0(k.context("--k is required for l0")?),
                Mode::Perunit => {
                    let reg = match (&lambdas, lambda) {
                        (Some(list), _) => {
                            let v = DVector::from_vec(parse_list::<f64>(list, "lambda")?);
                            let policy = if v.iter().all(|l| *l >= 0.0) { SignPolicy::NonNegativeOnly } else { SignPolicy::Free };
                            RegCoeffs::per_unit(v, policy)?
                        }
                        (None, Some(l)) => RegCoeffs::shared(l, SignPolicy::NonNegativeOnly)?,
                        (None, None) => bail!("--lambdas or --lambda is required for perunit"),
                    };
                    InferenceMode::PerUnit(reg)
                }
            };
            let solver = match solver {
                SolverArg::Closed => Solver::Closed,
                SolverArg::Iterative => Solver::Iterative,
            };
            let samples = read_samples(&sample)?;
            let coeffs = infer_batch(orthsc::Exec::default(), &phi, &samples, &mode, solver)?;
            let mut stdout = std::io::stdout().lock();
            for c in coeffs {
                let line: Vec<String> = c.values().iter().map(|v| format!("{v}")).collect();
                writeln!(stdout, "{}", line.join(" "))?;
            }
        }
        Command::TrainClassifier {
            layers,
            bias_mode,
            lambda_min,
            data: dir,
            out,
            epochs,
            lr,
            batch_size,
            seed,
            orthogonalize,
            recon_gamma,
            recon_a,
            recon_b,
            accuracy_csv,
        } => {
            let widths = parse_list::<usize>(&layers, "layer width")?;
            let mode = parse_bias_mode(&bias_mode, lambda_min, widths.len())?;
            let samples = hier::load_labeled_csv(samples_csv(&dir), None)?;
            let input_dim = samples[0].input().len();
            let classes = samples[0].classes();
            let model = hier::init_stack(input_dim, &widths, classes, &mode, orthogonalize, seed)?;
            let cfg = ClassifierConfig {
                learning_rate: lr,
                batch_size,
                epochs,
                orthogonalize_each_step: orthogonalize,
                rng_seed: seed.wrapping_add(1),
                recon: (recon_gamma != 0.0).then_some(ReconTerm {
                    gamma: recon_gamma,
                    a: recon_a,
                    b: recon_b,
                }),
            };
            let outcome = hier::train_classifier(&samples, &model, &mode, &cfg)?;
            hier::save_model(&out, &outcome.model)?;
            if let Some(path) = accuracy_csv {
                let mut f = fs::File::create(&path)?;
                writeln!(f, "epoch,accuracy,loss")?;
                for (e, (a, l)) in outcome.accuracy_curve.iter().zip(&outcome.loss_curve).enumerate() {
                    writeln!(f, "{},{a:?},{l:?}", e + 1)?;
                }
            }
            println!(
                "train accuracy {:.4} after {} epochs",
                outcome.accuracy_curve.last().copied().unwrap_or(0.0),
                outcome.accuracy_curve.len()
            );
        }
        Command::Eval { model, data: dir } => {
            let model = hier::load_model(&model)?;
            let samples = hier::load_labeled_csv(samples_csv(&dir), Some(model.n_classes()))?;
            println!("accuracy {:.4}", hier::evaluate_accuracy(&samples, &model)?);
        }
        Command::Check { quick, only, artifacts } => {
            let mut opts = if quick { Options::quick() } else { Options::default() };
            opts.artifact_dir = artifacts;
            let ids = match only {
                Some(list) => parse_list::<u8>(&list, "criterion")?,
                None => CRITERIA.iter().map(|c| c.0).collect(),
            };
            let mut all = true;
            for id in ids {
                let outcome = acceptance::run(id, &opts);
                println!("{outcome}");
                all &= outcome.passed;
            }
            return Ok(all);
        }
        Command::SynthImages {
            count,
            size,
            seed,
            out_dir,
        } => {
            fs::create_dir_all(&out_dir)?;
            let model = DeadLeaves::new(size, size);
            for k in 0..count {
                let img = model.render(seed.wrapping_add(k as u64))?;
                data::save_pgm(out_dir.join(format!("leaves_{k:03}.pgm")), &img)?;
            }
            println!("wrote {count} images to {}", out_dir.display());
        }
        Command::GenBlobs {
            per_class,
            std_dev,
            seed,
            out,
        } => {
            fs::create_dir_all(&out)?;
            let samples = hier::gaussian_blobs(&[vec![1.5, 1.5], vec![-1.5, -1.5]], std_dev, per_class, seed)?;
            hier::save_labeled_csv(samples_csv(&out), &samples)?;
            println!("wrote {} samples to {}", samples.len(), samples_csv(&out).display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
