use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use um_core::evaluation::{run_benchmark_with, BenchmarkConfig};
use um_core::inference::{cond_marginals, importance_estimate, GuideConfig, Proposal};
use um_core::masking::{compute_prior_stats, EncodingLayout};
use um_core::neural::{build_um, Activation, ArchSpec, Architecture, TrainMode, UmModel};
use um_core::program::{enumerate_posterior, GraphFamily};
use um_core::training::{train, TrainConfig};
use um_core::{rng, Evidence, ProgramSpec};

use crate::{
    BenchmarkArgs, Cli, Command, EvidenceArgs, Format, GenGraphArgs, InferArgs, Method, OracleArgs,
    TrainArgs,
};

const DEFAULT_PRESET: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(um_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<um_core::Error> for CliError {
    fn from(e: um_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(
                um_core::Error::InvalidConfig(_) | um_core::Error::SizeTooSmall { .. },
            ) => 2,
            CliError::Core(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn init_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("UM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("UM_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::GenGraph(a) => gen_graph(a),
        Command::Train(a) => train_cmd(a, quiet),
        Command::Infer(a) => infer(a),
        Command::Oracle(a) => oracle(a),
        Command::Benchmark(a) => benchmark(a, quiet),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Core(um_core::Error::Io(io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })
}

fn write_out(path: Option<&Path>, body: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body)?,
        None => io::stdout().write_all(body)?,
    }
    Ok(())
}

fn load_evidence(program: &ProgramSpec, args: &EvidenceArgs) -> Result<Evidence> {
    let text = match (&args.evidence, &args.evidence_file) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => read(p)?,
        (None, None) => "{}".to_string(),
    };
    let json: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| um_core::Error::InvalidEvidence(format!("evidence is not valid JSON: {e}")))?;
    Ok(Evidence::from_json(program, &json)?)
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("unknown mode `{s}` (expected standard or flex)")))
}

fn gen_graph(a: GenGraphArgs) -> Result<()> {
    let name = match a.n {
        Some(n) => format!("{}{n}", a.family),
        None => a.family.clone(),
    };
    let family: GraphFamily = name
        .parse()
        .map_err(|e: um_core::Error| CliError::Usage(e.to_string()))?;
    let program = family.build(a.seed)?;
    let mut body = program.to_json_string();
    body.push('\n');
    write_out(a.out.as_deref(), body.as_bytes())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_cmd(a: TrainArgs, quiet: bool) -> Result<()> {
    let program = ProgramSpec::from_json_str(&read(&a.program)?)?;
    let mode = parse_mode(&a.mode)?;
    let activation: Activation = a
        .activation
        .parse()
        .map_err(|_| CliError::Usage(format!("unknown activation `{}`", a.activation)))?;
    let preset = match (a.hidden, a.width) {
        (Some(_), Some(_)) => None,
        _ => Some(a.preset.unwrap_or(DEFAULT_PRESET)),
    };
    let base = match (preset, a.hidden, a.width) {
        (Some(p), _, _) => Architecture::preset(p)?,
        (None, Some(h), Some(s)) => Architecture::new(h, s),
        _ => unreachable!("clap requires --hidden and --width together"),
    };
    let arch = Architecture {
        activation,
        dropout: a.dropout,
        ..base
    };
    let spec = match preset {
        Some(p) if arch == base => ArchSpec::Preset(p),
        _ => ArchSpec::Explicit(arch),
    };
    let mut model = build_model(&program, spec, mode, &a)?;
    // an overridden preset still records which size it started from
    model.preset = preset;
    finish_train(model, &a, quiet)
}

fn build_model(
    program: &ProgramSpec,
    spec: ArchSpec,
    mode: TrainMode,
    a: &TrainArgs,
) -> Result<UmModel> {
    let stats = compute_prior_stats(
        program,
        a.prior_samples,
        &mut rng::stream(a.seed, "prior-stats"),
    )?;
    Ok(build_um(
        program,
        spec,
        mode,
        EncodingLayout::new(program),
        stats,
        a.seed,
    )?)
}

fn finish_train(mut model: UmModel, a: &TrainArgs, quiet: bool) -> Result<()> {
    let config = TrainConfig {
        batch_size: a.batch,
        iterations: a.iters,
        seed: a.seed,
        loss_log_every: a.log_every,
    };
    if !quiet {
        eprintln!(
            "training {} ({} sites, {} parameters, {} mode) for {} iterations",
            model.program.name(),
            model.n_sites(),
            model.param_count(),
            model.mode,
            a.iters
        );
    }
    let report = train(&mut model, &config)?;
    fs::write(&a.out, model.to_checkpoint_json())?;
    let loss_path = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".loss.csv"));
    report.write_head_csv(fs::File::create(&loss_path)?)?;
    let summed = loss_path.with_extension("summed.csv");
    report.write_summed_csv(fs::File::create(&summed)?)?;
    match report.final_summed_loss() {
        Some(l) => println!("final summed loss {l:.6}"),
        None => println!("final summed loss n/a"),
    }
    if !quiet {
        eprintln!(
            "wrote {}, {} and {}",
            a.out.display(),
            loss_path.display(),
            summed.display()
        );
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = UmModel::from_checkpoint_json(&read(&a.checkpoint)?)?;
    let program = model.program.clone();
    let evidence = load_evidence(&program, &a.evidence)?;
    let cfg = GuideConfig {
        sigma_factor: a.sigma_factor,
        floor: a.floor,
    };
    let out = match a.method {
        Method::Direct => {
            let m = cond_marginals(&model, &evidence)?;
            match a.format {
                Format::Json => format!(
                    "{}\n",
                    serde_json::json!({ "method": "direct", "marginals": m.to_json(&program) })
                ),
                Format::Table => m.to_table(&program),
            }
        }
        Method::GuideIs | Method::PriorIs => {
            let proposal = match a.method {
                Method::GuideIs => Proposal::Guide(&model, cfg),
                _ => Proposal::Prior,
            };
            let tag = proposal.tag();
            let est = importance_estimate(&program, &evidence, proposal, a.samples, a.seed)?;
            match a.format {
                Format::Json => format!("{}\n", est.to_json(&program, tag)),
                Format::Table => format!(
                    "{}proposal {tag}  samples {}  ESS {:.1}\n",
                    est.marginals.to_table(&program),
                    est.n,
                    est.ess
                ),
            }
        }
    };
    write_out(None, out.as_bytes())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let program = ProgramSpec::from_json_str(&read(&a.program)?)?;
    let evidence = load_evidence(&program, &a.evidence)?;
    let m = enumerate_posterior(&program, &evidence)?;
    let out = match a.format {
        Format::Json => format!(
            "{}\n",
            serde_json::json!({ "method": "enumeration", "marginals": m.to_json(&program) })
        ),
        Format::Table => m.to_table(&program),
    };
    write_out(None, out.as_bytes())
}

fn benchmark(a: BenchmarkArgs, quiet: bool) -> Result<()> {
    let families = if a.graphs.is_empty() {
        GraphFamily::BENCHMARK.to_vec()
    } else {
        a.graphs
            .iter()
            .map(|g| {
                g.parse()
                    .map_err(|e: um_core::Error| CliError::Usage(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let modes = a
        .modes
        .iter()
        .map(|m| parse_mode(m))
        .collect::<Result<Vec<_>>>()?;
    let cfg = BenchmarkConfig {
        families,
        modes,
        presets: a.presets,
        budget: TrainConfig {
            batch_size: a.batch,
            iterations: a.iters,
            ..TrainConfig::default()
        },
        seeds: a.seeds,
        n_queries: a.queries,
        is_samples: a.is_samples,
        prior_samples: a.prior_samples,
        record_timing: a.timing,
    };
    if !quiet {
        eprintln!("running {} cells", cfg.cell_count());
    }
    let report = run_benchmark_with(&cfg, |row| {
        if quiet {
            return;
        }
        match (&row.error, row.correlation_cat) {
            (Some(e), _) => eprintln!(
                "{} {} preset {} seed {}: error: {e}",
                row.graph, row.mode, row.preset, row.seed
            ),
            (None, c) => eprintln!(
                "{} {} preset {} seed {}: correlation {}",
                row.graph,
                row.mode,
                row.preset,
                row.seed,
                c.map(|c| format!("{c:.4}")).unwrap_or_else(|| "n/a".into())
            ),
        }
    })?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_out(a.out.as_deref(), &buf)?;
    let failed = report.errors().count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", report.rows.len());
    }
    Ok(())
}
