use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gnt_core::experiments::{run_experiment, Experiment, DEFAULT_SAMPLES};
use gnt_core::matching::DeltaPolicy;
use gnt_core::model::{IdentifiabilityViolation, Topology, TopologyFile};
use gnt_core::pipeline::{
    estimate_gh, estimate_means, EstimateReport, MgfSource, PipelineConfig, TauPolicy,
};
use gnt_core::simulate::{read_samples_csv, sample_paths, sample_paths_exponential, write_samples_csv};
use gnt_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

#[derive(Parser)]
#[command(name = "gnt", version, about = "Link delay distributions from end-to-end path delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check 1-identifiability of a topology.
    Check {
        #[arg(long)]
        topology: PathBuf,
    },
    /// Draw path delay samples from a topology with ground truth.
    Simulate(SimulateArgs),
    /// Estimate link distributions from samples (or exact MGFs).
    Estimate(EstimateArgs),
    /// Rerun one of the published simulation setups.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Model {
    Gh,
    Exp,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, value_enum, default_value = "gh")]
    model: Model,
    /// Samples per path.
    #[arg(long = "L")]
    l: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `path_<i>.csv` and `manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Samples CSV, or a directory written by `simulate`.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gh")]
    model: Model,
    /// `auto`, a comma list used for every path, or per-path lists
    /// separated by `;`.
    #[arg(long, default_value = "auto")]
    tau: String,
    /// `auto` or a fixed clustering radius.
    #[arg(long, default_value = "auto")]
    delta: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the ground truth of the topology to compute exact MGFs.
    #[arg(long)]
    exact_mgf: bool,
    /// Report file (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_parser = parse_experiment)]
    name: Experiment,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "L", default_value_t = DEFAULT_SAMPLES)]
    l: usize,
    #[arg(long, default_value = "auto")]
    tau: String,
    #[arg(long, default_value = "auto")]
    delta: String,
    #[arg(long)]
    exact_mgf: bool,
    /// Full report (JSON); the comparison table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_validation() || matches!(e, Error::Io(_)) {
            EXIT_VALIDATION
        } else {
            EXIT_PIPELINE
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    invalid(format!("{}: {e}", path.display()))
}

fn load_topology(path: &Path) -> Result<Topology, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    Topology::from_json(&text).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn set_label(ids: impl IntoIterator<Item = usize>) -> String {
    let ids: Vec<String> = ids.into_iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", ids.join(","))
}

fn cmd_check(topology: &Path) -> Result<(), Failure> {
    let topo = load_topology(topology)?;
    let matrix = &topo.matrix;
    let sets = matrix.incidence_sets();
    match matrix.identifiability_violation() {
        None => println!("1-identifiable: yes; S={}", set_label(sets.shared.iter().copied())),
        Some(v) => {
            let why = match v {
                IdentifiabilityViolation::ZeroColumn(j) => {
                    format!("link {} is not covered by any path", j + 1)
                }
                IdentifiabilityViolation::DuplicateColumns(j, k) => {
                    format!("links {} and {} have identical columns", j + 1, k + 1)
                }
            };
            println!("1-identifiable: no; {why}");
            return Err(Failure {
                code: EXIT_VALIDATION,
                message: why,
            });
        }
    }
    let single = (0..matrix.num_links()).filter(|j| !sets.shared.contains(j));
    println!("S^c={}", set_label(single));
    for j in 0..matrix.num_links() {
        println!("link {}: G={}", j + 1, set_label(sets.covering[j].iter().copied()));
    }
    for w in topo.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    topology: TopologyFile,
    model: Model,
    samples_per_path: usize,
    seed: u64,
    files: Vec<String>,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let topo = load_topology(&args.topology)?;
    if args.l == 0 {
        return Err(invalid("--L must be at least 1"));
    }
    for w in topo.warnings() {
        eprintln!("warning: {w}");
    }
    let set = match args.model {
        Model::Gh => {
            let mixes = topo
                .links
                .as_ref()
                .ok_or_else(|| invalid("topology has no `links` ground truth to simulate"))?;
            sample_paths(&topo.matrix, mixes, args.l, args.seed)?
        }
        Model::Exp => {
            let means = topo
                .means
                .as_ref()
                .ok_or_else(|| invalid("topology has no `means` ground truth to simulate"))?;
            sample_paths_exponential(&topo.matrix, means, args.l, args.seed)?
        }
    };
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let mut files = Vec::new();
    for p in &set.paths {
        let name = format!("path_{}.csv", p.path + 1);
        let path = args.out.join(&name);
        let f = File::create(&path).map_err(|e| io_failure(&path, e))?;
        write_samples_csv(BufWriter::new(f), &[p])?;
        files.push(name);
    }
    let manifest = Manifest {
        topology: topo.to_file(),
        model: args.model,
        samples_per_path: args.l,
        seed: args.seed,
        files,
    };
    write_json(Some(&args.out.join("manifest.json")), &manifest)?;
    eprintln!(
        "wrote {} paths x {} samples to {}",
        set.paths.len(),
        args.l,
        args.out.display()
    );
    Ok(())
}

fn read_samples(path: &Path) -> Result<BTreeMap<usize, Vec<f64>>, Failure> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_failure(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(invalid(format!("no CSV files in {}", path.display())));
    }
    let mut all = BTreeMap::new();
    for f in files {
        let file = File::open(&f).map_err(|e| io_failure(&f, e))?;
        let map = read_samples_csv(BufReader::new(file)).map_err(|e| {
            let mut fail = Failure::from(e);
            fail.message = format!("{}: {}", f.display(), fail.message);
            fail
        })?;
        for (path_id, values) in map {
            if all.insert(path_id, values).is_some() {
                return Err(invalid(format!(
                    "samples for path {} appear in more than one file",
                    path_id + 1
                )));
            }
        }
    }
    Ok(all)
}

fn parse_tau(s: &str, paths: usize) -> Result<TauPolicy, Failure> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("auto") {
        return Ok(TauPolicy::Auto);
    }
    let lists = s
        .split(';')
        .map(|part| {
            part.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| invalid(format!("--tau: cannot parse {v:?}")))
                })
                .collect::<Result<Vec<f64>, Failure>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    match lists.len() {
        1 => Ok(TauPolicy::Explicit(vec![lists[0].clone(); paths])),
        n if n == paths => Ok(TauPolicy::Explicit(lists)),
        n => Err(invalid(format!("--tau gives {n} lists for {paths} paths"))),
    }
}

fn parse_delta(s: &str) -> Result<DeltaPolicy, Failure> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("auto") {
        return Ok(DeltaPolicy::Auto);
    }
    match s.parse::<f64>() {
        Ok(d) if d > 0.0 && d.is_finite() => Ok(DeltaPolicy::Fixed(d)),
        _ => Err(invalid(format!("--delta must be `auto` or a positive number, got {s:?}"))),
    }
}

/// Settings echoed in every report so a run can be repeated.
#[derive(Debug, Serialize, Deserialize)]
struct RunConfig {
    topology: String,
    model: Model,
    samples: Option<String>,
    samples_per_path: Vec<usize>,
    tau: String,
    delta: String,
    seed: u64,
    exact_mgf: bool,
}

#[derive(Debug, Serialize)]
struct EstimateOutput<'a> {
    config: RunConfig,
    warnings: Vec<String>,
    report: &'a EstimateReport,
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let topo = load_topology(&args.topology)?;
    let matrix = &topo.matrix;
    let warnings = topo.warnings();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut cfg = PipelineConfig {
        tau: parse_tau(&args.tau, matrix.num_paths())?,
        seed: args.seed,
        ..PipelineConfig::default()
    };
    cfg.matching.delta = parse_delta(&args.delta)?;
    cfg.solver.seed = args.seed;

    let samples = match (&args.samples, args.exact_mgf) {
        (Some(_), true) => return Err(invalid("--samples and --exact-mgf are exclusive")),
        (None, false) => return Err(invalid("give --samples or --exact-mgf")),
        (Some(p), false) => Some(read_samples(p)?),
        (None, true) => None,
    };
    if let Some(s) = &samples {
        if let Some(i) = (0..matrix.num_paths()).find(|i| !s.contains_key(i)) {
            return Err(invalid(format!("no samples for path {}", i + 1)));
        }
        if let Some(extra) = s.keys().find(|&&i| i >= matrix.num_paths()) {
            return Err(invalid(format!(
                "samples for path {} but the topology has {} paths",
                extra + 1,
                matrix.num_paths()
            )));
        }
    }
    let report = match args.model {
        Model::Gh => {
            let truth: Option<Vec<Vec<f64>>> = topo
                .links
                .as_ref()
                .map(|ls| ls.iter().map(|m| m.weights().to_vec()).collect());
            let source = match &samples {
                Some(s) => MgfSource::Samples(s),
                None => MgfSource::ExactGh(
                    topo.links
                        .as_deref()
                        .ok_or_else(|| invalid("--exact-mgf needs `links` in the topology"))?,
                ),
            };
            estimate_gh(matrix, &topo.rates, source, &cfg, truth.as_deref())?
        }
        Model::Exp => {
            let source = match &samples {
                Some(s) => MgfSource::Samples(s),
                None => MgfSource::ExactMeans(
                    topo.means
                        .as_deref()
                        .ok_or_else(|| invalid("--exact-mgf needs `means` in the topology"))?,
                ),
            };
            estimate_means(matrix, source, &cfg, topo.means.as_deref())?
        }
    };
    let config = RunConfig {
        topology: args.topology.display().to_string(),
        model: args.model,
        samples: args.samples.as_ref().map(|p| p.display().to_string()),
        samples_per_path: samples
            .as_ref()
            .map(|s| s.values().map(Vec::len).collect())
            .unwrap_or_default(),
        tau: args.tau.clone(),
        delta: args.delta.clone(),
        seed: args.seed,
        exact_mgf: args.exact_mgf,
    };
    let mut all_warnings = warnings;
    for p in &report.paths {
        all_warnings.extend(p.warnings.iter().map(|w| format!("path {}: {w}", p.path_id)));
    }
    write_json(
        args.out.as_deref(),
        &EstimateOutput {
            config,
            warnings: all_warnings,
            report: &report,
        },
    )?;
    for l in &report.result.links {
        let w: Vec<String> = if l.weights.is_empty() {
            vec![format!("mean {:.4}", l.mean.unwrap_or(f64::NAN))]
        } else {
            l.weights.iter().map(|v| format!("{v:.4}")).collect()
        };
        eprintln!("link {}: {}", l.link_id, w.join(" "));
    }
    if let Some(e) = report.result.error_norm {
        eprintln!("error norm: {e:.4}");
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<(), Failure> {
    if args.l == 0 {
        return Err(invalid("--L must be at least 1"));
    }
    let setup = gnt_core::experiments::setup(args.name);
    let mut cfg = PipelineConfig {
        tau: parse_tau(&args.tau, setup.matrix.num_paths())?,
        seed: args.seed,
        ..PipelineConfig::default()
    };
    cfg.matching.delta = parse_delta(&args.delta)?;
    cfg.solver.seed = args.seed;
    let samples = (!args.exact_mgf).then_some(args.l);
    let report = run_experiment(args.name, samples, &cfg)?;
    println!(
        "{} ({}, seed {})",
        args.name.name(),
        match samples {
            Some(l) => format!("L = {l}"),
            None => "exact MGFs".into(),
        },
        args.seed
    );
    if !setup.dropped.is_empty() {
        let stages: Vec<String> = setup.dropped.iter().map(|i| (i + 1).to_string()).collect();
        println!("negligible stage(s) {} ignored during estimation", stages.join(","));
    }
    print!("{}", report.table());
    if args.out.is_some() {
        write_json(args.out.as_deref(), &report)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(Error::from(e)))?;
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            }
            fs::write(p, text + "\n").map_err(|e| io_failure(p, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { topology } => cmd_check(topology),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
