use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dyadic_testing::bellman::BellmanGrid;
use dyadic_testing::experiments::{
    bellman_experiment, compare, constants_report, corollaries, gap_search, maximal_testing, BellmanConfig,
    CorollaryConfig, GapConfig,
};
use dyadic_testing::generate::{random_instance, rng_for, InstanceConfig, KernelMode, WeightMode};
use dyadic_testing::optimize::AscentOptions;
use dyadic_testing::report::{Report, Tabular};
use dyadic_testing::{DyadicSystem, Exponent, LatticeSpace, ProblemInstance};

#[derive(Parser, Debug)]
#[command(name = "dyadic-testing", version, about = "Testing constants for positive dyadic operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every testing constant of the given or generated instances.
    Constants {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        common: Common,
    },
    /// Operator norm against the testing constants and the assembled bounds.
    Compare {
        #[command(flatten)]
        source: Source,
        /// Exponents at which the unweighted copy is bounded from one pairing constant.
        #[arg(long, value_delimiter = ',')]
        exponents: Vec<Exponent>,
        #[command(flatten)]
        common: Common,
    },
    /// Carleson embedding, John–Nirenberg and depolarisation instances.
    Corollaries {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value = "2")]
        s: Exponent,
        #[arg(long, default_value = "3")]
        p: Exponent,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "lognormal")]
        weights: WeightMode,
        #[arg(long, default_value_t = 0.8)]
        density: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Ratios between norms and testing constants over random local kernels.
    GapSearch {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        dim: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        depth: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Testing constants of the lattice maximal operator.
    MaximalTesting {
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Lattice exponent of the coordinate norm.
        #[arg(long, default_value = "2")]
        s: Exponent,
        #[arg(long, value_delimiter = ',', default_value = "1.5,2,3")]
        p: Vec<Exponent>,
        #[command(flatten)]
        common: Common,
    },
    /// Bellman function of the maximal inequality on a grid.
    Bellman {
        #[arg(long, default_value = "2")]
        p: Exponent,
        /// Grid as NODES or NODESxSPLIT.
        #[arg(long, value_parser = parse_grid)]
        bellman_grid: Option<(usize, usize)>,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        /// Random weights for the maximal bound.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 4)]
        sequence_depth: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Also write the value table as JSON.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Writes random instances as a JSON array.
    Gen {
        #[command(flatten)]
        generator: Generator,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    out: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Random starts of each maximisation.
    #[arg(long, default_value_t = 32)]
    starts: usize,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
}

impl Common {
    fn ascent(&self) -> AscentOptions {
        AscentOptions {
            starts: self.starts,
            max_iterations: self.max_iter,
            ..AscentOptions::with_seed(self.seed)
        }
    }
}

#[derive(Args, Debug)]
struct Source {
    /// Instance file: one instance or an array.
    #[arg(long, conflicts_with = "instances")]
    input: Option<PathBuf>,
    #[command(flatten)]
    generator: Generator,
}

#[derive(Args, Debug)]
struct Generator {
    #[arg(long, default_value_t = 5)]
    instances: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value = "2")]
    p: Exponent,
    #[arg(long, default_value = "2")]
    q: Exponent,
    #[arg(long, default_value = "inf")]
    t: Exponent,
    #[arg(long, default_value = "2")]
    s: Exponent,
    #[arg(long, default_value = "lognormal")]
    weights: WeightMode,
    #[arg(long, default_value = "scalar")]
    kernel: KernelMode,
    #[arg(long)]
    equal_weights: bool,
    #[arg(long, default_value_t = 1.0)]
    active_fraction: f64,
    #[arg(long, default_value_t = 0.8)]
    density: f64,
}

impl Generator {
    fn generate(&self, seed: u64) -> Result<Vec<ProblemInstance>, String> {
        let cfg = InstanceConfig {
            depth: self.depth,
            branching: self.branching,
            dim: self.dim,
            p: self.p,
            q: self.q,
            t: self.t,
            s: self.s,
            weights: self.weights,
            kernel: self.kernel,
            equal_weights: self.equal_weights,
            active_fraction: self.active_fraction,
            kernel_density: self.density,
        };
        (0..self.instances)
            .map(|i| random_instance(&cfg, &mut rng_for(seed, i as u64)).map_err(|e| e.to_string()))
            .collect()
    }
}

impl Source {
    fn load(&self, seed: u64) -> Result<Vec<ProblemInstance>, String> {
        match &self.input {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                ProblemInstance::list_from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
            }
            None => self.generator.generate(seed),
        }
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected NODES or NODESxSPLIT, got `{s}`");
    match s.split_once('x') {
        Some((n, k)) => Ok((n.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?)),
        None => {
            let n: usize = s.parse().map_err(|_| bad())?;
            Ok((n, n / 2 + 1))
        }
    }
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn emit<T: serde::Serialize + Tabular>(report: &Report<T>, common: &Common) -> Result<bool, String> {
    let text = match common.out {
        Format::Json => report.to_json() + "\n",
        Format::Csv => {
            let table = report.body.table();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&table.header).map_err(|e| e.to_string())?;
            for row in &table.rows {
                w.write_record(row).map_err(|e| e.to_string())?;
            }
            String::from_utf8(w.into_inner().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?
        }
    };
    write_out(common.output.as_ref(), &text)?;
    if !report.passed {
        let failures = json!({
            "command": report.command,
            "failed": report.checks.failed,
            "failures": report.checks.failures,
        });
        eprintln!("{}", serde_json::to_string_pretty(&failures).expect("serializable"));
    }
    Ok(report.passed)
}

fn run(cli: Cli) -> Result<bool, String> {
    let err = |e: dyadic_testing::experiments::ExperimentError| e.to_string();
    match cli.command {
        Command::Constants { source, common } => {
            let instances = source.load(common.seed)?;
            emit(&constants_report(&instances, &common.ascent()), &common)
        }
        Command::Compare { source, exponents, common } => {
            let instances = source.load(common.seed)?;
            let (report, _) = compare(&instances, &common.ascent(), &exponents).map_err(err)?;
            emit(&report, &common)
        }
        Command::Corollaries {
            instances,
            depth,
            branching,
            s,
            p,
            dim,
            weights,
            density,
            common,
        } => {
            let cfg = CorollaryConfig {
                seed: common.seed,
                instances,
                depth,
                branching,
                s,
                p,
                dim,
                weights,
                density,
            };
            emit(&corollaries(&cfg, &common.ascent()).map_err(err)?, &common)
        }
        Command::GapSearch {
            dim,
            depth,
            branching,
            iterations,
            common,
        } => {
            let cfg = GapConfig {
                seed: common.seed,
                dims: dim,
                depths: depth,
                branching,
                iterations,
            };
            emit(&gap_search(&cfg).map_err(err)?, &common)
        }
        Command::MaximalTesting {
            depth,
            branching,
            dim,
            s,
            p,
            common,
        } => {
            let sys = DyadicSystem::new(depth, branching).map_err(|e| e.to_string())?;
            let space = if dim == 1 {
                LatticeSpace::scalar()
            } else {
                LatticeSpace::ell(dim, s).map_err(|e| e.to_string())?
            };
            emit(&maximal_testing(&sys, &space, &p, &common.ascent()), &common)
        }
        Command::Bellman {
            p,
            bellman_grid,
            depth,
            instances,
            sequence_depth,
            samples,
            table,
            common,
        } => {
            let grid = match bellman_grid {
                Some((nodes, split)) => BellmanGrid::with_nodes(p, nodes, split),
                None => BellmanGrid::for_exponent(p),
            };
            let cfg = BellmanConfig {
                p,
                grid,
                depth,
                weights: instances,
                sequence_depth,
                samples,
                seed: common.seed,
            };
            let (report, values) = bellman_experiment(&cfg).map_err(err)?;
            if let Some(path) = &table {
                let text = serde_json::to_string(&values.to_json()).expect("serializable");
                write_out(Some(path), &text)?;
            }
            emit(&report, &common)
        }
        Command::Gen { generator, seed, output } => {
            let instances = generator.generate(seed)?;
            write_out(output.as_ref(), &(ProblemInstance::list_to_json(&instances) + "\n"))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
