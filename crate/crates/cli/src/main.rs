use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use phase_core::ablation::run_ablation_suite;
use phase_core::fsutil::{write_atomic, write_dir_atomic, write_json};
use phase_core::metrics::{export_maps, EvalReport, EvalRun};
use phase_core::ood::checks_csv;
use phase_core::pipeline::DEFAULT_BATCH_SIZE;
use phase_core::restart::RestartFile;
use phase_core::sim::{generate_world, load_world, save_world, DEFAULT_N_PFT};
use phase_core::train::{fine_tune, history_csv, train};
use phase_core::workflow::{build_dataset, restart_check, RestartCheckOptions, RESTART_YEARS};
use phase_core::{Config, Dataset, Error, GridKind, GridSpec, Result, SampleRecord, SurrogateModel, Task, Variant};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "phase", version, about = "Heterogeneous surrogate for biogeochemical spin-up")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Desk,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON config file; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Config::from_json(&text).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                    other => other,
                })
            }
            None => Ok(match self.preset {
                Preset::Default => Config::default(),
                Preset::Desk => Config::desk(),
            }),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world (grid, parameters, forcing).
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "coarse")]
        grid: Grid,
        #[arg(long, default_value_t = 20)]
        years: usize,
        #[arg(long, default_value_t = DEFAULT_N_PFT)]
        pfts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export, clean, split and normalize samples of a world.
    BuildDataset {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        window_years: usize,
        #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model variant.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "full")]
        variant: Variant,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Loss log CSV; defaults to `<out>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score models (one per seed) on the held-out split.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// World for the restart run behind the restart flag.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every variant for each seed and tabulate held-out R².
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training on a fraction of another dataset.
    FineTune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data_fine: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict equilibria, write a restart file and measure drift and speedup.
    RestartCheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restart file path; defaults to `<out>.restart`.
        #[arg(long)]
        restart: Option<PathBuf>,
        #[arg(long, default_value_t = RESTART_YEARS)]
        years: usize,
        /// Refuse to export when any cell is flagged out of distribution.
        #[arg(long)]
        ood_strict: bool,
    },
    /// Print first-layer attention weights for one sample.
    InspectAttention {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample id; defaults to the first held-out sample.
        #[arg(long, alias = "sample")]
        id: Option<u64>,
        /// Write `head,query,key,weight` rows here instead of JSON to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the configuration as JSON.
    Config {
        #[arg(long)]
        defaults: bool,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
    },
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Contract(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn load_model(path: &Path) -> Result<SurrogateModel> {
    SurrogateModel::load(path)
}

fn gen_data(seed: u64, grid: Grid, years: usize, pfts: usize, out: &Path) -> Result<()> {
    let kind = match grid {
        Grid::Coarse => GridKind::Coarse,
        Grid::Fine => GridKind::Fine,
    };
    let world = generate_world(seed, &GridSpec::preset(kind, seed), years, pfts)?;
    log::info!("{} land cells, {} forcing years", world.cells.len(), world.years);
    write_dir_atomic(out, |dir| save_world(&world, dir))
}

fn build(world: &Path, seed: u64, window_years: usize, batch_size: usize, out: &Path) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let world = load_world(world)?;
    let ds = build_dataset(&world, seed, window_years, batch_size)?;
    log::info!(
        "{} samples: {} train, {} test",
        ds.records.len(),
        ds.manifest.train_ids.len(),
        ds.manifest.test_ids.len()
    );
    write_dir_atomic(out, |dir| ds.write(dir))
}

fn train_cmd(data: &Path, cfg: Config, variant: Variant, out: &Path, history: Option<PathBuf>) -> Result<()> {
    let ds = Dataset::load(data)?;
    let model = train(&cfg, variant, &ds)?;
    let log_path = history.unwrap_or_else(|| with_suffix(out, ".history.csv"));
    model.save(out)?;
    write_atomic(&log_path, &history_csv(&model.history)?)
}

fn eval(models: &[PathBuf], data: &Path, world: Option<&Path>, out: &Path) -> Result<()> {
    let ds = Dataset::load(data)?;
    let models: Vec<SurrogateModel> = models.iter().map(|p| load_model(p)).collect::<Result<_>>()?;
    let world = world.map(load_world).transpose()?;
    let test: Vec<&SampleRecord> = ds.test();
    let preds = models.iter().map(|m| m.predict(&test)).collect::<Result<Vec<_>>>()?;
    let positive = preds
        .iter()
        .all(|p| Task::STATE.iter().all(|&t| p.task(t).iter().flatten().all(|&v| v > 0.0)));
    let mut capable = positive;
    if let (Some(world), true) = (&world, positive) {
        for m in &models {
            let check = restart_check(m, world, None, &RestartCheckOptions::default())?;
            capable &= check.restart_capable;
        }
    }
    let runs: Vec<EvalRun> = preds.iter().map(|pred| EvalRun { recs: &test, pred }).collect();
    let report = EvalReport::build(&runs, capable)?;
    let maps = Task::STATE
        .iter()
        .map(|&t| Ok((t, export_maps(&test, &preds[0], t, 0)?)))
        .collect::<Result<Vec<_>>>()?;
    let ood = match &models[0].ood {
        Some(_) => Some(checks_csv(&models[0].check_ood(&test)?)?),
        None => None,
    };
    write_dir_atomic(out, |dir| {
        report.write(dir)?;
        for (task, bytes) in &maps {
            write_atomic(&dir.join(format!("map_{}.csv", task.name())), bytes)?;
        }
        if let Some(bytes) = &ood {
            write_atomic(&dir.join("ood.csv"), bytes)?;
        }
        Ok(())
    })
}

fn ablate(data: &Path, seeds: u64, cfg: Config, variants: Option<Vec<Variant>>, out: &Path) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let ds = Dataset::load(data)?;
    let seeds: Vec<u64> = (0..seeds).map(|i| cfg.train.seed + i).collect();
    let variants = variants.unwrap_or_else(|| Variant::ALL.to_vec());
    let suite = run_ablation_suite(&cfg, &ds, &seeds, &variants)?;
    let table = suite.table_csv()?;
    let deltas = if variants.contains(&Variant::Full) { Some(suite.deltas_csv()?) } else { None };
    write_atomic(out, &table)?;
    if let Some(d) = deltas {
        write_atomic(&with_suffix(out, ".deltas.csv"), &d)?;
    }
    Ok(())
}

fn fine_tune_cmd(model: &Path, data: &Path, fraction: f64, cfg: Config, out: &Path) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("--fraction {fraction} is outside (0, 1]")));
    }
    let model = load_model(model)?;
    let fine = Dataset::load(data)?;
    let tuned = fine_tune(&model, &fine, fraction, &cfg.train)?;
    tuned.save(out)?;
    write_atomic(&with_suffix(out, ".history.csv"), &history_csv(&tuned.history)?)
}

fn restart_cmd(model: &Path, world: &Path, out: &Path, restart: Option<PathBuf>, years: usize, strict: bool) -> Result<()> {
    let model = load_model(model)?;
    let world = load_world(world)?;
    let restart = restart.unwrap_or_else(|| with_suffix(out, ".restart"));
    let opts = RestartCheckOptions {
        ood_strict: strict,
        restart_years: years,
    };
    let check = restart_check(&model, &world, Some(&restart), &opts)?;
    // Re-read what was written: the simulator must accept it as is.
    RestartFile::read(&restart)?.to_states(&world)?;
    emit(&format!(
        "speedup {:.1}x, max slow-pool median error {:.4}, slow drift {:.2e}, {} of {} cells flagged",
        check.speedup,
        check.max_slow_error(),
        check.drift.max_slow_drift(),
        check.n_flagged,
        check.n_cells
    ))?;
    write_atomic(out, check.to_csv().as_bytes())?;
    write_json(&with_suffix(out, ".json"), &check)
}

#[derive(Serialize)]
struct AttentionDump {
    id: u64,
    variant: Variant,
    groups: Vec<&'static str>,
    /// `[head][query][key]`.
    heads: Vec<Vec<Vec<f64>>>,
}

fn inspect(model: &Path, data: &Path, id: Option<u64>, out: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    let ds = Dataset::load(data)?;
    let rec = match id {
        Some(id) => ds.get(id).ok_or_else(|| Error::Config(format!("no sample with id {id}")))?,
        None => *ds.test().first().ok_or_else(|| Error::Config("dataset has no test samples".into()))?,
    };
    let dump = AttentionDump {
        id: rec.id,
        variant: model.variant,
        groups: model.architecture().modalities().iter().map(|m| m.name()).collect(),
        heads: model.attention(rec)?,
    };
    let Some(out) = out else {
        return emit(&serde_json::to_string_pretty(&dump)?);
    };
    let mut csv = String::from("head,query,key,weight\n");
    for (h, rows) in dump.heads.iter().enumerate() {
        for (q, row) in rows.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                csv.push_str(&format!("{h},{},{},{w}\n", dump.groups[q], dump.groups[k]));
            }
        }
    }
    write_atomic(out, csv.as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            seed,
            grid,
            years,
            pfts,
            out,
        } => gen_data(seed, grid, years, pfts, &out),
        Cmd::BuildDataset {
            world,
            seed,
            window_years,
            batch_size,
            out,
        } => build(&world, seed, window_years, batch_size, &out),
        Cmd::Train {
            data,
            cfg,
            variant,
            seed,
            out,
            history,
        } => {
            let mut c = cfg.load()?;
            if let Some(s) = seed {
                c.train.seed = s;
            }
            train_cmd(&data, c, variant, &out, history)
        }
        Cmd::Eval { model, data, world, out } => eval(&model, &data, world.as_deref(), &out),
        Cmd::Ablate {
            data,
            seeds,
            cfg,
            variants,
            out,
        } => ablate(&data, seeds, cfg.load()?, variants, &out),
        Cmd::FineTune {
            model,
            data_fine,
            fraction,
            cfg,
            out,
        } => fine_tune_cmd(&model, &data_fine, fraction, cfg.load()?, &out),
        Cmd::RestartCheck {
            model,
            world,
            out,
            restart,
            years,
            ood_strict,
        } => restart_cmd(&model, &world, &out, restart, years, ood_strict),
        Cmd::InspectAttention { model, data, id, out } => inspect(&model, &data, id, out.as_deref()),
        Cmd::Config { defaults, preset } => {
            if !defaults {
                return Err(Error::Config("nothing to print; pass --defaults".into()));
            }
            let cfg = match preset {
                Preset::Default => Config::default(),
                Preset::Desk => Config::desk(),
            };
            emit(&serde_json::to_string_pretty(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
