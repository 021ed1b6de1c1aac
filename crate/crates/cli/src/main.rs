//! `skewselect`: variable selection for model-based clustering of skewed data.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser};
use skewselect_core::{
    ari, load_csv, run_selection, run_study, standardize, EmConfig, SelectionMethod, SimulationSpec, StudySummary,
};

use crate::report::{emit_pairs_data, write_selected, RunReport};

#[derive(Debug, Parser)]
#[command(name = "skewselect", version, about = "Variable selection for clustering skewed data")]
#[command(group(ArgGroup::new("mode").required(true).args(["input", "simulate"])))]
struct Cli {
    /// CSV file with a header row.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,

    /// Run the replicated simulation study instead of reading data.
    #[arg(long)]
    simulate: bool,

    /// Selection method; simulation mode accepts a comma-separated list.
    /// Defaults to vscc-manly-full, or vscc,vscc-manly-full when simulating.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    method: Vec<SelectionMethod>,

    /// Numbers of components to try.
    #[arg(long, value_name = "MIN:MAX", default_value = "1:9", value_parser = parse_g_range)]
    g_range: GRange,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Column holding known class labels; excluded from the data.
    #[arg(long, value_name = "NAME")]
    label_col: Option<String>,

    #[arg(long, default_value_t = 25)]
    replicates: usize,

    /// Sample size of each simulated data set.
    #[arg(long, default_value_t = 500)]
    n: usize,

    #[arg(long, value_name = "DIR", default_value = "skewselect-out")]
    out_dir: PathBuf,

    /// Worker threads (defaults to all cores).
    #[arg(long, env = "SKEWSELECT_THREADS")]
    threads: Option<usize>,

    /// Fit the data on their original scale.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GRange {
    min: usize,
    max: usize,
}

impl GRange {
    fn values(self) -> Vec<usize> {
        (self.min..=self.max).collect()
    }
}

fn parse_g_range(s: &str) -> Result<GRange, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("{v:?} is not a whole number"));
    let range = GRange { min: parse(a)?, max: parse(b)? };
    if range.min < 1 {
        return Err("the smallest G must be at least 1".into());
    }
    if range.min > range.max {
        return Err(format!("MIN {} is larger than MAX {}", range.min, range.max));
    }
    Ok(range)
}

fn parse_method(s: &str) -> Result<SelectionMethod, String> {
    s.parse().map_err(|_| {
        let known: Vec<&str> = SelectionMethod::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown method {s:?} (expected one of {})", known.join(", "))
    })
}

fn config(cli: &Cli) -> EmConfig {
    EmConfig::default().with_seed(cli.seed)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn run_select(cli: &Cli, input: &Path) -> Result<RunReport> {
    let method = match cli.method.as_slice() {
        [] => SelectionMethod::ManlyFull,
        [m] => *m,
        _ => bail!("selection on a data file takes exactly one method"),
    };
    let started = Instant::now();
    let data = load_csv(input, cli.label_col.as_deref())?;
    let standardized = !cli.no_standardize;
    let x = if standardized { standardize(&data.data)?.0 } else { data.data.clone() };
    let sel = run_selection(&x, &cli.g_range.values(), method, &config(cli))?;

    let clusters = sel.final_fit.hard_labels();
    let score = data.labels.as_deref().map(|truth| ari(truth, &clusters)).transpose()?;
    let report = RunReport::new(
        &data.data,
        &sel,
        cli.seed,
        standardized,
        [cli.g_range.min, cli.g_range.max],
        score,
        started.elapsed().as_secs_f64(),
    );

    create_out_dir(&cli.out_dir)?;
    write_file(&cli.out_dir.join("report.json"), &report.to_json())?;
    write_selected(&data.data, &sel.chosen_columns, &clusters, &cli.out_dir.join("selected.csv"))?;
    let chosen = data.data.select_columns(&sel.chosen_columns)?;
    emit_pairs_data(&chosen, &clusters, &cli.out_dir.join("pairs.csv"))?;
    Ok(report)
}

fn run_simulation(cli: &Cli) -> Result<StudySummary> {
    if cli.replicates < 1 {
        bail!("--replicates must be at least 1");
    }
    if cli.label_col.is_some() {
        bail!("--label-col applies to --input only");
    }
    let methods = if cli.method.is_empty() {
        vec![SelectionMethod::Gaussian, SelectionMethod::ManlyFull]
    } else {
        cli.method.clone()
    };
    let spec = SimulationSpec::skewed_benchmark(cli.n, cli.seed);
    let summary = run_study(&spec, cli.replicates, &methods, &cli.g_range.values(), &config(cli))?;

    create_out_dir(&cli.out_dir)?;
    let csv_path = cli.out_dir.join("summary.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?;
    summary.write_csv(file)?;
    write_file(&cli.out_dir.join("summary.json"), &summary.to_json())?;
    Ok(summary)
}

fn print_summary(summary: &StudySummary) {
    println!("{:<20} {:>4} {:>6} {:>7} {:>15}  {}", "method", "n", "G", "modal", "ARI (sd)", summary.variables.join(" "));
    for r in &summary.rows {
        let counts: Vec<String> = r.selection_counts.iter().map(|c| c.to_string()).collect();
        println!(
            "{:<20} {:>4} {:>6.2} {:>7} {:>7.3} ({:.3})  {}{}",
            r.method.as_str(),
            r.n,
            r.mean_g,
            r.modal_g.map_or_else(|| "-".into(), |g| g.to_string()),
            r.mean_ari,
            r.sd_ari,
            counts.join(" "),
            if r.failures > 0 { format!("  [{} failed]", r.failures) } else { String::new() }
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads < 1 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("cannot start worker threads")?;
    }
    match &cli.input {
        Some(input) => print!("{}", run_select(cli, input)?.render()),
        None => print_summary(&run_simulation(cli)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
