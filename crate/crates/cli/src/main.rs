mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmrf::bench::{self, Family, GenSpec, WeightLaw};
use pmrf::bp::BpConfig;
use pmrf::fdc::DEFAULT_VE_WIDTH_THRESHOLD;
use pmrf::fis::{self, Method, SamplerConfig, DEFAULT_MIN_PROB};
use pmrf::model::{parse_model_str, parse_query_str};
use pmrf::ve::{ve_log_z, DEFAULT_MAX_WIDTH};
use pmrf::{BranchMode, Clause, FdcConfig, FdcCounter, Lit, PropMrf, SearchStats};
use serde_json::json;

use report::{finite, sha256_hex, CliError, ModelInfo, RunReport, Stats};

#[derive(Parser, Debug)]
#[command(name = "pmrf", version, about = "Partition functions and marginals of propositional MRFs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute ln Z exactly.
    Count(CountArgs),
    /// Probability of a CNF query.
    Prob(ProbArgs),
    /// Per-variable marginals P(X = true).
    Marginals(MarginalArgs),
    /// Importance-sampling estimate of Z.
    Sample(SampleArgs),
    /// Generate a benchmark model.
    Gen(GenArgs),
    /// Sum-KLD between two marginal files.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ExactMethod {
    Fdc,
    Vdc,
    Ve,
    Brute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SampleMethod {
    Fis,
    Vis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AnyMethod {
    Fdc,
    Vdc,
    Ve,
    Brute,
    Fis,
    Vis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Random,
    Qmr,
    Fs,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Model file.
    #[arg(long, visible_alias = "model")]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct ExactArgs {
    #[arg(long, value_enum, default_value = "on")]
    cache: Switch,
    /// Components with min-fill width below this go to elimination; 0 disables.
    #[arg(long, default_value_t = DEFAULT_VE_WIDTH_THRESHOLD)]
    ve_width: usize,
}

#[derive(Args, Debug)]
struct SamplerArgs {
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, env = "PMRF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PMRF_JOBS", default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = BpConfig::default().max_iters)]
    bp_iters: usize,
    #[arg(long, default_value_t = BpConfig::default().damping)]
    bp_damping: f64,
    /// Proposal probabilities are clamped to [min_prob, 1 - min_prob].
    #[arg(long, default_value_t = DEFAULT_MIN_PROB)]
    min_prob: f64,
    /// Clause sequence for formula sampling, one clause per line.
    #[arg(long)]
    order: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "fdc")]
    method: ExactMethod,
    #[command(flatten)]
    exact: ExactArgs,
}

#[derive(Args, Debug)]
struct ProbArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Query file, one clause per line; an empty file is the vacuous query.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, value_enum, default_value = "fdc")]
    method: ExactMethod,
    #[command(flatten)]
    exact: ExactArgs,
}

#[derive(Args, Debug)]
struct MarginalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "fdc")]
    method: AnyMethod,
    #[command(flatten)]
    exact: ExactArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Also write `var prob` lines to this file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "fis")]
    method: SampleMethod,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Clause size (random) or causes per symptom (qmr).
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    people: Option<usize>,
    #[arg(long, default_value_t = WeightLaw::default().low, allow_negative_numbers = true)]
    weight_low: f64,
    #[arg(long, default_value_t = WeightLaw::default().high, allow_negative_numbers = true)]
    weight_high: f64,
    /// Fraction of variables clamped by random unit hard clauses.
    #[arg(long, default_value_t = 0.0)]
    evidence_frac: f64,
    #[arg(long, env = "PMRF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Reference marginals, `var prob` per line.
    #[arg(long)]
    exact: PathBuf,
    #[arg(long)]
    approx: PathBuf,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_model(path: &Path) -> Result<(PropMrf, ModelInfo), CliError> {
    let text = read_text(path)?;
    let m = parse_model_str(&text).map_err(|e| CliError::parse(path, e))?;
    let info = ModelInfo {
        path: path.display().to_string(),
        sha256: sha256_hex(text.as_bytes()),
        num_vars: m.num_vars,
        hard_clauses: m.hard.len(),
        soft_clauses: m.soft.len(),
    };
    Ok((m, info))
}

fn load_clauses(path: &Path, num_vars: u32) -> Result<Vec<Clause>, CliError> {
    let text = read_text(path)?;
    parse_query_str(&text, num_vars).map_err(|e| CliError::parse(path, e))
}

/// One exact engine, reused across several related models.
struct Exact {
    method: ExactMethod,
    counter: FdcCounter,
}

impl Exact {
    fn new(method: ExactMethod, args: &ExactArgs) -> Self {
        let mode = match method {
            ExactMethod::Vdc => BranchMode::Variable,
            _ => BranchMode::Formula,
        };
        let counter = FdcCounter::new(FdcConfig {
            mode,
            cache: args.cache == Switch::On,
            ve_width_threshold: args.ve_width,
        });
        Exact { method, counter }
    }

    fn log_z(&mut self, m: &PropMrf) -> Result<f64, CliError> {
        match self.method {
            ExactMethod::Fdc | ExactMethod::Vdc => Ok(self.counter.log_z(m)),
            ExactMethod::Ve => Ok(ve_log_z(m, DEFAULT_MAX_WIDTH)?),
            ExactMethod::Brute => Ok(bench::brute_force_z(m)?),
        }
    }

    fn stats(&self) -> SearchStats {
        self.counter.stats()
    }

    fn name(&self) -> &'static str {
        method_name(self.method)
    }
}

fn method_name(m: ExactMethod) -> &'static str {
    match m {
        ExactMethod::Fdc => "fdc",
        ExactMethod::Vdc => "vdc",
        ExactMethod::Ve => "ve",
        ExactMethod::Brute => "brute",
    }
}

fn search_stats(s: SearchStats) -> Stats {
    Stats {
        nodes: s.nodes,
        leaves: s.leaves,
        cache_hits: s.cache_hits,
        ..Stats::default()
    }
}

fn sampler_config(m: &PropMrf, method: Method, args: &SamplerArgs, marginals: bool) -> Result<SamplerConfig, CliError> {
    if !(0.0..0.5).contains(&args.min_prob) {
        return Err(CliError::Usage(format!("--min-prob {} outside [0, 0.5)", args.min_prob)));
    }
    if !(0.0..1.0).contains(&args.bp_damping) {
        return Err(CliError::Usage(format!("--bp-damping {} outside [0, 1)", args.bp_damping)));
    }
    let h = match &args.order {
        Some(path) => Some(load_clauses(path, m.num_vars)?),
        None => None,
    };
    Ok(SamplerConfig {
        method,
        samples: args.samples,
        seed: args.seed,
        bp: BpConfig {
            max_iters: args.bp_iters,
            damping: args.bp_damping,
            ..BpConfig::default()
        },
        min_prob: args.min_prob,
        jobs: args.jobs,
        h,
        marginals,
    })
}

fn log_and_decimal(log: f64) -> serde_json::Value {
    json!({ "log": finite(log), "value": finite(log.exp()) })
}

fn marginal_entries(probs: &[f64]) -> serde_json::Value {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| json!({ "var": i + 1, "prob": finite(p), "log_prob": finite(p.ln()) }))
        .collect()
}

fn write_marginals(path: &Path, probs: &[f64]) -> Result<(), CliError> {
    let mut out = String::new();
    for (i, p) in probs.iter().enumerate() {
        out.push_str(&format!("{} {}\n", i + 1, p));
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Reads `var prob` lines; variables must be exactly `1..=n`.
fn read_marginals(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = read_text(path)?;
    let malformed = |line: usize, msg: String| CliError::parse(path, pmrf::model::ParseError::Malformed { line, msg });
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with('c') {
            continue;
        }
        let mut it = t.split_whitespace();
        let (Some(v), Some(p), None) = (it.next(), it.next(), it.next()) else {
            return Err(malformed(idx + 1, "expected `var prob`".into()));
        };
        let v: usize = v.parse().map_err(|_| malformed(idx + 1, format!("invalid variable `{v}`")))?;
        let p: f64 = p.parse().map_err(|_| malformed(idx + 1, format!("invalid probability `{p}`")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(malformed(idx + 1, format!("probability {p} outside [0, 1]")));
        }
        entries.push((v, p));
    }
    entries.sort_by_key(|e| e.0);
    for (i, &(v, _)) in entries.iter().enumerate() {
        if v != i + 1 {
            return Err(malformed(0, format!("variables must be 1..{} without gaps or repeats", entries.len())));
        }
    }
    Ok(entries.into_iter().map(|e| e.1).collect())
}

fn run(cli: Cli, argv: Vec<String>) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mut report = match cli.command {
        Command::Count(a) => {
            let (m, info) = load_model(&a.input.input)?;
            let mut engine = Exact::new(a.method, &a.exact);
            let log_z = engine.log_z(&m)?;
            RunReport {
                command: "count",
                argv,
                model: Some(info),
                seed: None,
                result: json!({ "method": engine.name(), "log_z": finite(log_z), "z": finite(log_z.exp()) }),
                stats: search_stats(engine.stats()),
            }
        }
        Command::Prob(a) => {
            let (m, info) = load_model(&a.input.input)?;
            let query = load_clauses(&a.query, m.num_vars)?;
            let conj = m.conjoin_query(&query).map_err(|e| CliError::Other(e.to_string()))?;
            let mut engine = Exact::new(a.method, &a.exact);
            let log_z = engine.log_z(&m)?;
            if log_z == f64::NEG_INFINITY {
                return Err(CliError::Other("model has no consistent world; P(query) is undefined".into()));
            }
            let log_zq = engine.log_z(&conj)?;
            let log_p = if log_zq == f64::NEG_INFINITY { log_zq } else { (log_zq - log_z).min(0.0) };
            RunReport {
                command: "prob",
                argv,
                model: Some(info),
                seed: None,
                result: json!({
                    "method": engine.name(),
                    "query_clauses": query.len(),
                    "log_prob": finite(log_p),
                    "prob": log_p.exp(),
                    "log_z": finite(log_z),
                    "log_z_query": finite(log_zq),
                }),
                stats: search_stats(engine.stats()),
            }
        }
        Command::Marginals(a) => {
            let (m, info) = load_model(&a.input.input)?;
            let exact = match a.method {
                AnyMethod::Fdc => Some(ExactMethod::Fdc),
                AnyMethod::Vdc => Some(ExactMethod::Vdc),
                AnyMethod::Ve => Some(ExactMethod::Ve),
                AnyMethod::Brute => Some(ExactMethod::Brute),
                AnyMethod::Fis | AnyMethod::Vis => None,
            };
            let (probs, result, stats, seed) = match exact {
                Some(method) => {
                    let mut engine = Exact::new(method, &a.exact);
                    let log_z = engine.log_z(&m)?;
                    if log_z == f64::NEG_INFINITY {
                        return Err(CliError::Other("model has no consistent world; marginals are undefined".into()));
                    }
                    let mut probs = Vec::with_capacity(m.num_vars as usize);
                    for v in 1..=m.num_vars {
                        let conj = m
                            .conjoin_query(&[Clause::unit(Lit::pos(v))])
                            .map_err(|e| CliError::Other(e.to_string()))?;
                        let lz = engine.log_z(&conj)?;
                        probs.push(if lz == f64::NEG_INFINITY { 0.0 } else { (lz - log_z).exp().min(1.0) });
                    }
                    let result = json!({
                        "method": engine.name(),
                        "log_z": finite(log_z),
                        "marginals": marginal_entries(&probs),
                    });
                    (probs, result, search_stats(engine.stats()), None)
                }
                None => {
                    let method = if a.method == AnyMethod::Fis { Method::Fis } else { Method::Vis };
                    let cfg = sampler_config(&m, method, &a.sampler, true)?;
                    let rep = fis::sample(&m, &cfg)?;
                    let probs = rep.run.marginals.clone().unwrap_or_default();
                    let result = json!({
                        "method": if method == Method::Fis { "fis" } else { "vis" },
                        "estimate": estimate_json(&rep.run.estimate),
                        "marginals": marginal_entries(&probs),
                        "bp_iterations": rep.bp_iterations,
                        "bp_converged": rep.bp_converged,
                    });
                    let stats = Stats {
                        samples: rep.run.estimate.n_samples,
                        ..Stats::default()
                    };
                    (probs, result, stats, Some(a.sampler.seed))
                }
            };
            if let Some(path) = &a.output {
                write_marginals(path, &probs)?;
            }
            RunReport {
                command: "marginals",
                argv,
                model: Some(info),
                seed,
                result,
                stats,
            }
        }
        Command::Sample(a) => {
            let (m, info) = load_model(&a.input.input)?;
            let method = match a.method {
                SampleMethod::Fis => Method::Fis,
                SampleMethod::Vis => Method::Vis,
            };
            let cfg = sampler_config(&m, method, &a.sampler, false)?;
            let rep = fis::sample(&m, &cfg)?;
            RunReport {
                command: "sample",
                argv,
                model: Some(info),
                seed: Some(a.sampler.seed),
                result: json!({
                    "method": if method == Method::Fis { "fis" } else { "vis" },
                    "estimate": estimate_json(&rep.run.estimate),
                    "distinct_assignments": rep.run.distinct_assignments,
                    "bp_iterations": rep.bp_iterations,
                    "bp_converged": rep.bp_converged,
                }),
                stats: Stats {
                    samples: rep.run.estimate.n_samples,
                    ..Stats::default()
                },
            }
        }
        Command::Gen(a) => {
            let need = |v: Option<usize>, flag: &str| {
                v.ok_or_else(|| CliError::Usage(format!("--family {:?} requires --{flag}", a.family).to_lowercase()))
            };
            let family = match a.family {
                FamilyArg::Random => Family::Random {
                    n: need(a.n, "n")?,
                    m: need(a.m, "m")?,
                    s: need(a.s, "s")?,
                },
                FamilyArg::Qmr => Family::Qmr {
                    diseases: need(a.d, "d")?,
                    symptoms: need(a.f, "f")?,
                    causes: need(a.s, "s")?,
                },
                FamilyArg::Fs => Family::FriendsSmokers {
                    people: need(a.people, "people")?,
                },
            };
            let spec = GenSpec {
                family,
                seed: a.seed,
                weight_law: WeightLaw {
                    low: a.weight_low,
                    high: a.weight_high,
                },
            };
            let mut m = bench::generate(&spec)?;
            if a.evidence_frac > 0.0 {
                m = bench::pick_evidence(&m, a.evidence_frac, a.seed)?;
            } else if a.evidence_frac < 0.0 {
                return Err(CliError::Usage(format!("--evidence-frac {} is negative", a.evidence_frac)));
            }
            let text = m.to_text();
            let mut f = fs::File::create(&a.output).map_err(|e| CliError::io(&a.output, e))?;
            f.write_all(text.as_bytes()).map_err(|e| CliError::io(&a.output, e))?;
            RunReport {
                command: "gen",
                argv,
                model: Some(ModelInfo {
                    path: a.output.display().to_string(),
                    sha256: sha256_hex(text.as_bytes()),
                    num_vars: m.num_vars,
                    hard_clauses: m.hard.len(),
                    soft_clauses: m.soft.len(),
                }),
                seed: Some(a.seed),
                result: json!({
                    "family": format!("{:?}", a.family).to_lowercase(),
                    "evidence": bench::evidence_count(m.num_vars as usize, a.evidence_frac),
                }),
                stats: Stats::default(),
            }
        }
        Command::Eval(a) => {
            let exact = read_marginals(&a.exact)?;
            let approx = read_marginals(&a.approx)?;
            let kld = bench::sum_kld(&exact, &approx)?;
            RunReport {
                command: "eval",
                argv,
                model: None,
                seed: None,
                result: json!({
                    "num_vars": exact.len(),
                    "sum_kld": finite(kld),
                    "exact_sha256": sha256_hex(read_text(&a.exact)?.as_bytes()),
                    "approx_sha256": sha256_hex(read_text(&a.approx)?.as_bytes()),
                }),
                stats: Stats::default(),
            }
        }
    };
    report.stats.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn estimate_json(e: &fis::Estimate) -> serde_json::Value {
    json!({
        "z": log_and_decimal(e.log_z_hat),
        "std_error": json!({ "log": finite(e.log_std_error), "value": finite(e.std_error) }),
        "sample_variance": json!({ "log": finite(e.log_sample_variance), "value": finite(e.sample_variance) }),
        "n_samples": e.n_samples,
    })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { report::EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli, argv) {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("pmrf: error: writing report: {e}");
                    ExitCode::from(report::EXIT_IO as u8)
                }
            }
        }
        Err(e) => {
            eprintln!("pmrf: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp(name: &str, text: &str) -> PathBuf {
        let p = std::env::temp_dir().join(format!("pmrf-cli-unit-{}-{name}", std::process::id()));
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn marginal_files_sort_by_variable() {
        let p = temp("sorted", "# c\n2 0.25\n1 0.5\n\n3 1\n");
        assert_eq!(read_marginals(&p).unwrap(), vec![0.5, 0.25, 1.0]);
    }

    #[test]
    fn marginal_files_reject_gaps_and_bad_values() {
        for text in ["1 0.5\n3 0.5\n", "1 0.5\n1 0.4\n", "1 1.5\n", "1\n", "x 0.5\n"] {
            let p = temp("bad", text);
            assert_eq!(read_marginals(&p).unwrap_err().exit_code(), report::EXIT_PARSE, "{text:?}");
        }
    }

    #[test]
    fn marginal_file_round_trip() {
        let probs = [0.1, 0.123456789012345, 1.0 / 3.0];
        let p = std::env::temp_dir().join(format!("pmrf-cli-unit-{}-rt", std::process::id()));
        write_marginals(&p, &probs).unwrap();
        assert_eq!(read_marginals(&p).unwrap(), probs);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
