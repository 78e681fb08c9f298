//! Command-line entry point: `fetch`, `preprocess`, `train`, `embed`, `eval`, `report`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::complex::{load_cache, preprocess_dataset};
use crate::config::{RunConfig, CACHE_ENV, KEYS};
use crate::error::{Error, Result};
use crate::evaluation::{linear_probe_cv, semi_supervised_eval, EmbeddingTable};
use crate::graph_io::{fetch_dataset, parse_tu_dataset_with, ParseOptions};
use crate::report::{write_report, CONFIG_FILE, EVAL_FILE};
use crate::training::{embed_all, train_with, Checkpoint, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EMBEDDINGS_FILE: &str = "embeddings.json";

fn config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(Arg::new("name").required(true).help("Dataset name, e.g. MUTAG"))
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value configuration file"),
        );
    KEYS.iter().filter(|&&k| k != "dataset").fold(cmd, |cmd, &k| {
        let kebab = k.replace('_', "-");
        let mut arg = Arg::new(k).long(k).value_name("VALUE").hide_short_help(true);
        if kebab != k {
            arg = arg.alias(kebab);
        }
        cmd.arg(arg)
    })
}

fn command() -> Command {
    Command::new("ringforge")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Multi-granularity cellular contrastive learning on graph datasets")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(Command::new("fetch").about("Download a TU dataset")))
        .subcommand(config_args(Command::new("preprocess").about("Lift graphs to cellular complexes and cache them")))
        .subcommand(
            config_args(Command::new("train").about("Train encoders on a preprocessed dataset"))
                .arg(
                    Arg::new("run-dir")
                        .long("run-dir")
                        .value_name("DIR")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("Output directory (default: <out_dir>/<timestamp>-<config hash>)"),
                )
                .arg(
                    Arg::new("resume")
                        .long("resume")
                        .value_name("CHECKPOINT")
                        .value_parser(clap::value_parser!(PathBuf)),
                ),
        )
        .subcommand(
            config_args(Command::new("embed").about("Write graph embeddings from a checkpoint"))
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(Arg::new("out").long("out").value_parser(clap::value_parser!(PathBuf))),
        )
        .subcommand(
            config_args(Command::new("eval").about("Linear-probe evaluation of an embeddings file"))
                .arg(
                    Arg::new("embeddings")
                        .long("embeddings")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(Arg::new("semi").long("semi").action(ArgAction::SetTrue))
                .arg(Arg::new("fraction").long("fraction").value_name("F"))
                .arg(Arg::new("out").long("out").value_parser(clap::value_parser!(PathBuf))),
        )
        .subcommand(
            Command::new("report").about("Summarise runs into report.csv and SVG plots").arg(
                Arg::new("run-dir")
                    .required(true)
                    .value_parser(clap::value_parser!(PathBuf)),
            ),
        )
}

/// Defaults, then the config file, then `RINGFORGE_CACHE`, then flags.
fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(path)?;
    }
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        cfg.cache_dir = PathBuf::from(dir);
    }
    for &k in KEYS.iter().filter(|&&k| k != "dataset") {
        if let Some(v) = m.get_one::<String>(k) {
            cfg.set(k, v)?;
        }
    }
    if let Some(f) = m.try_get_one::<String>("fraction").ok().flatten() {
        cfg.set("label_fraction", f)?;
    }
    cfg.set("dataset", m.get_one::<String>("name").expect("required"))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_options(cfg: &RunConfig) -> ParseOptions {
    ParseOptions {
        feature_mode: cfg.feature_mode,
        max_degree: cfg.max_degree,
    }
}

fn write(path: &Path, body: &[u8]) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn cmd_fetch(cfg: &RunConfig) -> Result<()> {
    let dir = fetch_dataset(&cfg.dataset, &cfg.base_url, &cfg.data_dir)?;
    log::info!("{} available at {}", cfg.dataset, dir.display());
    Ok(())
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.data_dir.join(&cfg.dataset);
    let dataset = parse_tu_dataset_with(&dir, &cfg.dataset, &parse_options(cfg))?;
    log::info!(
        "{}: {} graphs, {} classes, {} features ({})",
        dataset.name,
        dataset.len(),
        dataset.n_classes,
        dataset.feature_dim(),
        dataset.feature_mode.as_str()
    );
    let start = std::time::Instant::now();
    let cache = preprocess_dataset(&dataset, &cfg.train.granularities, &cfg.cache_dir)?;
    if cache.rebuilt == 0 {
        log::info!("cache hit: nothing rebuilt under {}", cfg.cache_dir.display());
    } else {
        log::info!("built {} complexes in {:.2?}", cache.rebuilt, start.elapsed());
    }
    Ok(())
}

fn default_run_dir(cfg: &RunConfig) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    cfg.out_dir.join(format!("{secs}-{}", cfg.hash()))
}

fn cmd_train(cfg: &RunConfig, m: &ArgMatches) -> Result<()> {
    let (dataset, cache) = load_cache(&cfg.cache_dir, &cfg.dataset, &cfg.train.granularities)?;
    let run_dir = m
        .get_one::<PathBuf>("run-dir")
        .cloned()
        .unwrap_or_else(|| default_run_dir(cfg));
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write(&run_dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let resume = m.get_one::<PathBuf>("resume").map(|p| Checkpoint::load(p)).transpose()?;
    log::info!("training {} into {}", cfg.dataset, run_dir.display());
    let ck = train_with(
        &dataset,
        &cache,
        &cfg.train,
        &TrainOptions {
            out_dir: Some(run_dir.clone()),
            resume,
        },
    )?;
    if let Some(last) = ck.history.last() {
        log::info!("finished epoch {} with mean loss {:.6}", last.epoch, last.mean_loss);
    }
    Ok(())
}

fn cmd_embed(cfg: &RunConfig, m: &ArgMatches) -> Result<()> {
    let path = m.get_one::<PathBuf>("checkpoint").expect("required");
    let ck = Checkpoint::load(path)?;
    if ck.dataset != cfg.dataset {
        return Err(Error::Config(format!(
            "checkpoint was trained on {}, not {}",
            ck.dataset, cfg.dataset
        )));
    }
    let (dataset, cache) = load_cache(&cfg.cache_dir, &cfg.dataset, &ck.config.granularities)?;
    let table = embed_all(&ck, &dataset, &cache)?;
    let out = m
        .get_one::<PathBuf>("out")
        .cloned()
        .unwrap_or_else(|| path.with_file_name(EMBEDDINGS_FILE));
    table.save(&out)?;
    log::info!(
        "wrote {} x {} embeddings to {}",
        table.embeddings.rows(),
        table.embeddings.cols(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, m: &ArgMatches) -> Result<()> {
    let path = m.get_one::<PathBuf>("embeddings").expect("required");
    let table = EmbeddingTable::load(path)?;
    if table.dataset != cfg.dataset {
        return Err(Error::Config(format!(
            "embeddings belong to {}, not {}",
            table.dataset, cfg.dataset
        )));
    }
    let result = if m.get_flag("semi") {
        semi_supervised_eval(&table, cfg.label_fraction, cfg.folds, &cfg.eval_seeds)?
    } else {
        linear_probe_cv(&table, cfg.folds, &cfg.eval_seeds)?
    };
    log::info!(
        "{} {}: accuracy {:.4} ± {:.4} over {} folds x {} seeds",
        cfg.dataset,
        result.protocol,
        result.mean,
        result.std,
        result.folds,
        result.seeds.len()
    );
    let config: serde_json::Map<String, serde_json::Value> = cfg
        .pairs()
        .into_iter()
        .map(|(k, v)| (k.to_owned(), serde_json::Value::String(v)))
        .collect();
    let doc = serde_json::json!({
        "dataset": cfg.dataset,
        "embeddings": path.display().to_string(),
        "training_seed": table.seed,
        "config": config,
        "result": result,
    });
    let out = m
        .get_one::<PathBuf>("out")
        .cloned()
        .unwrap_or_else(|| path.with_file_name(EVAL_FILE));
    let body = serde_json::to_vec_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    write(&out, &body)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    if name == "report" {
        let dir = sub.get_one::<PathBuf>("run-dir").expect("required");
        let report = write_report(dir)?;
        log::info!("report for {} runs written to {}", report.runs.len(), dir.display());
        return Ok(());
    }
    let cfg = resolve_config(sub)?;
    match name {
        "fetch" => cmd_fetch(&cfg),
        "preprocess" => cmd_preprocess(&cfg),
        "train" => cmd_train(&cfg, sub),
        "embed" => cmd_embed(&cfg, sub),
        "eval" => cmd_eval(&cfg, sub),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .try_init();
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on a
/// usage error, 2 on a runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging();
    match dispatch(&matches) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["ringforge", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["ringforge", "train"]), EXIT_USAGE);
        assert_eq!(run(["ringforge", "train", "MUTAG", "--no-such-flag", "1"]), EXIT_USAGE);
    }

    #[test]
    fn bad_config_value_is_runtime_error() {
        assert_eq!(run(["ringforge", "train", "MUTAG", "--epochs", "many"]), EXIT_RUNTIME);
    }
}
