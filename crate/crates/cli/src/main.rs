//! `nsark`: tree dumps, convergence studies, and order-condition reports
//! from the command line.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use nsark::orderlab::{
    empirical_order, geco_conditions, geometric_grid, mprk_conditions, probe_states,
    scheme_u_report, ConditionReport, OrderFit,
};
use nsark::pds::Pds;
use nsark::solvers::{Method, Scheme};
use nsark::trees::enumerate;

#[derive(Parser)]
#[command(name = "nsark", version, about = "Order-condition toolkit for positivity-preserving Runge-Kutta variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List colored rooted trees of order <= q with symmetry and density.
    Trees {
        /// Largest tree order to include.
        q: u32,
        /// Number of colors.
        n: u32,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Global-error convergence study against the reference solution.
    Converge(RunArgs),
    /// Order-condition report; exits nonzero when a condition fails.
    Check(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; individual flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin problem name or path to a problem JSON file.
    #[arg(long)]
    problem: Option<String>,
    /// Gallery scheme name or path to a scheme JSON file.
    #[arg(long)]
    scheme: Option<String>,
    /// Largest step of the geometric h-grid.
    #[arg(long)]
    h0: Option<f64>,
    /// Grid ratio in (0, 1).
    #[arg(long)]
    ratio: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    points: Option<usize>,
    /// Integration horizon for convergence runs.
    #[arg(long)]
    t_end: Option<f64>,
    /// Order to check conditions at (default: the scheme's claimed order).
    #[arg(long)]
    order: Option<u32>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Seed for the random probe states.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid evaluation (0 = library default).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
    Table,
}

/// File-backed experiment description; every field optional, flags win.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    problem: Option<String>,
    scheme: Option<String>,
    h0: Option<f64>,
    ratio: Option<f64>,
    points: Option<usize>,
    t_end: Option<f64>,
    order: Option<u32>,
    format: Option<Format>,
    seed: Option<u64>,
    jobs: Option<usize>,
}

struct Experiment {
    pds: Pds,
    scheme: Scheme,
    grid: Vec<f64>,
    t_end: f64,
    order: u32,
    format: Format,
    seed: u64,
}

impl RunArgs {
    fn resolve(self) -> Result<Experiment> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str::<ExperimentConfig>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };

        let jobs = self.jobs.or(file.jobs).unwrap_or(0);
        if jobs > 0 {
            // Later calls with a different size are ignored; the first pool wins.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
        }

        let problem = self.problem.or(file.problem).unwrap_or_else(|| "linear2".into());
        let pds = if Pds::builtin_names().contains(&problem.as_str()) {
            Pds::builtin(&problem)?
        } else {
            let text = fs::read_to_string(&problem)
                .with_context(|| format!("problem `{problem}` is not builtin; reading it as a file failed"))?;
            Pds::from_json(&text)?
        };

        let scheme_ref = self
            .scheme
            .or(file.scheme)
            .ok_or_else(|| anyhow!("no scheme given (use --scheme or a config file)"))?;
        let scheme = match Scheme::named(&scheme_ref) {
            Ok(s) => s,
            Err(_) => {
                let text = fs::read_to_string(&scheme_ref).with_context(|| {
                    format!("scheme `{scheme_ref}` is not in the gallery; reading it as a file failed")
                })?;
                Scheme::from_json(&text)?
            }
        };

        let h0 = self.h0.or(file.h0).unwrap_or(0.1);
        let ratio = self.ratio.or(file.ratio).unwrap_or(0.5);
        let points = self.points.or(file.points).unwrap_or(8);
        let order = self.order.or(file.order).unwrap_or(scheme.order);
        Ok(Experiment {
            pds,
            scheme,
            grid: geometric_grid(h0, ratio, points)?,
            t_end: self.t_end.or(file.t_end).unwrap_or(1.0),
            order,
            format: self.format.or(file.format).unwrap_or(Format::Table),
            seed: self.seed.or(file.seed).unwrap_or(7),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Trees { q, n, format } => {
            print!("{}", render_trees(q, n, format)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Converge(args) => {
            let exp = args.resolve()?;
            let fit = empirical_order(&exp.scheme, &exp.pds, exp.t_end, &exp.grid)?;
            print!("{}", render_converge(&fit, exp.format));
            Ok(ExitCode::SUCCESS)
        }
        Command::Check(args) => {
            let exp = args.resolve()?;
            let report = run_check(&exp)?;
            print!("{}", render_report(&report, exp.format));
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

/// Per scheme kind: classical tableaus get the tree-by-tree elementary
/// weight check, GeCo and Patankar schemes their explicit condition sets.
fn run_check(exp: &Experiment) -> Result<ConditionReport> {
    let report = match &exp.scheme.method {
        Method::Rk => scheme_u_report(&exp.scheme, &exp.pds, exp.order, &exp.grid, exp.seed)?,
        Method::Geco { phi } => geco_conditions(
            phi,
            &exp.scheme.tableau,
            exp.order,
            exp.pds.initial_state(),
            &exp.grid,
        )?,
        Method::Mprk { .. } => {
            let states = probe_states(&exp.pds, exp.seed);
            mprk_conditions(&exp.scheme, &exp.pds, exp.order, &states, &exp.grid)?
        }
    };
    Ok(report)
}

fn render_trees(q: u32, n: u32, format: Format) -> Result<String> {
    let set = enumerate(q, n)?;
    let rows: Vec<(String, u32, u64, u64, u64)> = set
        .iter()
        .map(|t| (t.to_string(), t.order(), t.symmetry(), t.density(), t.ordered_count()))
        .collect();
    let canonical = rows.len();
    let ordered: u64 = rows.iter().map(|r| r.4).sum();

    let mut out = String::new();
    match format {
        Format::Json => {
            let trees: Vec<serde_json::Value> = rows
                .iter()
                .map(|(tree, order, sigma, gamma, ord)| {
                    serde_json::json!({
                        "tree": tree, "order": order, "sigma": sigma,
                        "gamma": gamma, "ordered": ord,
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "q": q, "colors": n,
                "canonical_count": canonical, "ordered_count": ordered,
                "trees": trees,
            });
            out = serde_json::to_string_pretty(&doc)? + "\n";
        }
        Format::Csv => {
            out.push_str("tree,order,sigma,gamma,ordered\n");
            for (tree, order, sigma, gamma, ord) in &rows {
                out.push_str(&format!("\"{tree}\",{order},{sigma},{gamma},{ord}\n"));
            }
        }
        Format::Table => {
            let width = rows
                .iter()
                .map(|r| r.0.chars().count())
                .chain(["tree".len()])
                .max()
                .unwrap_or(4);
            out.push_str(&format!(
                "{:<width$}  {:>5}  {:>6}  {:>6}  {:>7}\n",
                "tree", "order", "sigma", "gamma", "ordered"
            ));
            for (tree, order, sigma, gamma, ord) in &rows {
                out.push_str(&format!(
                    "{tree:<width$}  {order:>5}  {sigma:>6}  {gamma:>6}  {ord:>7}\n"
                ));
            }
            out.push_str(&format!(
                "{canonical} canonical trees ({ordered} ordered representations)\n"
            ));
        }
    }
    Ok(out)
}

fn render_converge(fit: &OrderFit, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(fit).expect("fit serializes") + "\n",
        Format::Csv => {
            let mut out = String::from("h,error\n");
            for (h, e) in fit.grid.iter().zip(&fit.errors) {
                out.push_str(&format!("{h},{e}\n"));
            }
            out.push_str(&format!(
                "# fitted order {:.4} (rms of log-fit {:.3})\n",
                fit.order, fit.fit_residual
            ));
            out
        }
        Format::Table => {
            let mut out = format!("{} on {}\n{:>12}  {:>13}\n", fit.scheme, fit.problem, "h", "error");
            for (h, e) in fit.grid.iter().zip(&fit.errors) {
                out.push_str(&format!("{h:>12.6}  {e:>13.6e}\n"));
            }
            out.push_str(&format!(
                "fitted order {:.4} (rms of log-fit {:.3})\n",
                fit.order, fit.fit_residual
            ));
            out
        }
    }
}

fn render_report(report: &ConditionReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json() + "\n",
        Format::Table => report.text_table(),
        Format::Csv => {
            let mut out = String::from("condition,target,slope,required,status\n");
            for s in &report.series {
                let slope = match (s.exact, s.slope) {
                    (true, _) => "exact".to_string(),
                    (false, Some(v)) => format!("{v:.4}"),
                    (false, None) => "floor".to_string(),
                };
                out.push_str(&format!(
                    "\"{}\",{},{},{},{}\n",
                    s.id,
                    s.target,
                    slope,
                    s.required,
                    if s.pass { "pass" } else { "fail" }
                ));
            }
            out
        }
    }
}
