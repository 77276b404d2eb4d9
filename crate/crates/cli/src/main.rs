use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use wmgraph::inference::{
    edge_grid, field_covariance, field_variances, fit_mle, krig_predict, loglik_alpha1_extended,
    loglik_alpha1_integrated, loglik_alpha2, random_sites, Dataset, FixedParams,
};
use wmgraph::kl::{kl_truncation_error, loglog_slope, Domain, KLBasis, SpectralParams};
use wmgraph::laplacian::{scaled_comparison, write_comparison_csv};
use wmgraph::precision::{assemble_alpha1, assemble_alpha1_adjusted, assemble_alpha2_system};
use wmgraph::simulation::{fmt17, simulate_field};
use wmgraph::{Error, MetricGraph, ModelParams, PointOnEdge};

/// Exact Whittle–Matérn Gaussian fields on metric graphs.
#[derive(Parser, Debug)]
#[command(name = "wmgraph", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Graph JSON file
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// Observations CSV (`edge_id,offset,value`)
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Smoothness (1 or 2 for exact commands; any value > 1/2 for `kl-rate`)
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = 1.0)]
    tau: f64,
    /// Measurement noise standard deviation
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw the field at sites (CSV `site_edge,site_offset,value[,derivative]`)
    Simulate {
        #[command(flatten)]
        sites: SiteArgs,
        /// Number of uniformly random sites (drawn from the seed)
        #[arg(long)]
        n_random: Option<usize>,
    },
    /// Log-likelihood of the data (JSON)
    Loglik {
        #[arg(long, value_enum, default_value_t = Method::Extended)]
        method: Method,
    },
    /// Maximum-likelihood estimates (JSON)
    Fit {
        /// Parameters held at their given values
        #[arg(long, value_delimiter = ',')]
        fix: Vec<Param>,
    },
    /// Kriging means and variances (CSV `edge_id,offset,mean,variance`)
    Predict {
        #[command(flatten)]
        sites: SiteArgs,
    },
    /// Covariance with a source point along all edges (CSV `edge_id,offset,covariance`)
    Covariance {
        /// Source point `edge_id:offset`
        #[arg(long)]
        source: String,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Marginal variances along all edges (CSV `edge_id,offset,variance`)
    Variances {
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Boundary-adjusted model (alpha = 1)
        #[arg(long)]
        adjusted: bool,
    },
    /// Graph-Laplacian comparison (CSV `h,max_abs_diff,sherman_morrison_pred`)
    CompareLaplacian {
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.25, 0.125, 0.0625])]
        h: Vec<f64>,
    },
    /// Karhunen–Loève truncation errors and their log-log slope (JSON)
    KlRate {
        #[arg(long, value_enum, default_value_t = DomainKind::Circle)]
        domain: DomainKind,
        /// Interval length or circle perimeter
        #[arg(long, default_value_t = 1.0)]
        length: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128, 256, 512, 1024, 2048, 4096])]
        n: Vec<usize>,
    },
    /// Vertex precision matrix in Matrix Market format
    ExportPrecision {
        #[arg(long)]
        adjusted: bool,
    },
}

#[derive(Args, Debug)]
struct SiteArgs {
    /// Comma-separated `edge_id:offset` points
    #[arg(long, value_delimiter = ',')]
    sites: Vec<String>,
    /// Regular grid with this spacing along every edge
    #[arg(long)]
    step: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Method {
    Extended,
    Integrated,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Param {
    Kappa,
    Tau,
    Sigma,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DomainKind {
    Interval,
    Circle,
}

type Out = Box<dyn Write>;

fn output(path: &Option<PathBuf>) -> wmgraph::Result<Out> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> wmgraph::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidParameter(format!("--{flag} is required for this command")))
}

fn load_graph(c: &Common) -> wmgraph::Result<MetricGraph> {
    MetricGraph::from_json_path(need(&c.graph, "graph")?)
}

fn exact_params(c: &Common) -> wmgraph::Result<ModelParams> {
    if c.alpha.fract() != 0.0 || !(1.0..=2.0).contains(&c.alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {} must be 1 or 2 for this command",
            c.alpha
        )));
    }
    ModelParams::new(c.alpha as u32, c.kappa, c.tau, c.sigma)
}

fn parse_point(g: &MetricGraph, s: &str) -> wmgraph::Result<PointOnEdge> {
    let bad = || Error::InvalidParameter(format!("cannot parse point '{s}' (expected edge_id:offset)"));
    let (e, o) = s.trim().split_once(':').ok_or_else(bad)?;
    let label: i64 = e.parse().map_err(|_| bad())?;
    let offset: f64 = o.parse().map_err(|_| bad())?;
    let edge = g
        .edge_by_label(label)
        .ok_or_else(|| Error::InvalidGraph(format!("unknown edge {label}")))?;
    let p = PointOnEdge::new(edge, offset);
    g.validate_point(&p)?;
    Ok(p)
}

fn collect_sites(g: &MetricGraph, a: &SiteArgs) -> wmgraph::Result<Vec<PointOnEdge>> {
    let mut sites = a.sites.iter().map(|s| parse_point(g, s)).collect::<wmgraph::Result<Vec<_>>>()?;
    if let Some(step) = a.step {
        sites.extend(edge_grid(g, step)?);
    }
    Ok(sites)
}

fn write_point_table(g: &MetricGraph, mut out: Out, header: &str, pts: &[PointOnEdge], cols: &[&[f64]]) -> wmgraph::Result<()> {
    writeln!(out, "edge_id,offset,{header}")?;
    for (i, p) in pts.iter().enumerate() {
        write!(out, "{},{}", g.edge(p.edge).label, fmt17(p.offset))?;
        for c in cols {
            write!(out, ",{}", fmt17(c[i]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn write_json(mut out: Out, v: &serde_json::Value) -> wmgraph::Result<()> {
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> wmgraph::Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate { sites, n_random } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let mut pts = collect_sites(&g, sites)?;
            if let Some(n) = n_random {
                pts.extend(random_sites(&g, *n, c.seed));
            }
            let sample = simulate_field(&g, &p, &pts, c.seed)?;
            sample.write_csv(&g, output(&c.out)?)?;
        }
        Command::Loglik { method } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let data = Dataset::from_csv_path(&g, need(&c.data, "data")?)?;
            let ll = match (p.alpha, method) {
                (1, Method::Extended) => loglik_alpha1_extended(&g, &p, &data)?,
                (1, Method::Integrated) => loglik_alpha1_integrated(&g, &p, &data)?,
                _ => loglik_alpha2(&g, &p, &data)?,
            };
            write_json(output(&c.out)?, &json!({ "loglik": ll, "n": data.len() }))?;
        }
        Command::Fit { fix } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let data = Dataset::from_csv_path(&g, need(&c.data, "data")?)?;
            let fixed = FixedParams {
                kappa: fix.contains(&Param::Kappa),
                tau: fix.contains(&Param::Tau),
                sigma: fix.contains(&Param::Sigma),
            };
            let fit = fit_mle(&g, &data, p, fixed)?;
            write_json(output(&c.out)?, &serde_json::to_value(&fit)?)?;
        }
        Command::Predict { sites } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let data = Dataset::from_csv_path(&g, need(&c.data, "data")?)?;
            let pts = collect_sites(&g, sites)?;
            let (m, v) = krig_predict(&g, &p, &data, &pts)?;
            write_point_table(&g, output(&c.out)?, "mean,variance", &pts, &[&m, &v])?;
        }
        Command::Covariance { source, step } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let s0 = parse_point(&g, source)?;
            let pts = edge_grid(&g, *step)?;
            let cov = field_covariance(&g, &p, &s0, &pts)?;
            write_point_table(&g, output(&c.out)?, "covariance", &pts, &[&cov])?;
        }
        Command::Variances { step, adjusted } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let pts = edge_grid(&g, *step)?;
            let var = field_variances(&g, &p, &pts, *adjusted)?;
            write_point_table(&g, output(&c.out)?, "variance", &pts, &[&var])?;
        }
        Command::CompareLaplacian { h } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let rows = h
                .iter()
                .map(|&h| scaled_comparison(&g, &p, h))
                .collect::<wmgraph::Result<Vec<_>>>()?;
            write_comparison_csv(&rows, output(&c.out)?)?;
        }
        Command::KlRate { domain, length, n } => {
            let dom = match domain {
                DomainKind::Interval => Domain::Interval(*length),
                DomainKind::Circle => Domain::Circle(*length),
            };
            let sp = SpectralParams::new(c.alpha, c.kappa, c.tau)?;
            let errors = n
                .iter()
                .map(|&k| Ok(kl_truncation_error(&KLBasis::new(dom, k)?, &sp, k)))
                .collect::<wmgraph::Result<Vec<f64>>>()?;
            let slope = loglog_slope(n, &errors);
            write_json(
                output(&c.out)?,
                &json!({
                    "alpha": c.alpha,
                    "n": n,
                    "truncation_error": errors,
                    "slope": slope,
                    "expected_slope": -(c.alpha - 0.5),
                }),
            )?;
        }
        Command::ExportPrecision { adjusted } => {
            let g = load_graph(c)?;
            let p = exact_params(c)?;
            let q = match (p.alpha, adjusted) {
                (1, false) => assemble_alpha1(&g, &p)?,
                (1, true) => assemble_alpha1_adjusted(&g, &p)?,
                (_, false) => assemble_alpha2_system(&wmgraph::graph::split_loops_and_subdivide(&g, &[])?.0, &p)?.0,
                (_, true) => return Err(Error::Unsupported("boundary adjustment is only available for alpha = 1".into())),
            };
            let mut out = output(&c.out)?;
            out.write_all(q.to_matrix_market().as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn report(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
