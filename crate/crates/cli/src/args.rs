use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "confdim",
    version,
    about = "Critical exponents of multicurves and combinatorial moduli of curve families"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical exponent Q(Γ) of one multicurve.
    QGamma(QGammaArgs),
    /// Q(f) as the largest Q(Γ) over a catalog of multicurves.
    QMap(QMapArgs),
    /// Q-modulus of a curve family on a finite cover.
    Modulus(ModulusArgs),
    /// Run a verification suite and emit a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Output {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct Exponents {
    #[arg(long, value_parser = parse_exponent)]
    pub q: Option<f64>,
    /// Inclusive grid `start:stop:step`.
    #[arg(long, value_parser = parse_grid)]
    pub q_grid: Option<QGrid>,
}

impl Exponents {
    pub fn values(&self) -> Option<Vec<f64>> {
        match (self.q, &self.q_grid) {
            (Some(q), _) => Some(vec![q]),
            (None, Some(grid)) => Some(grid.0.clone()),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct QGammaArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Also tabulate λ(f_{Γ,Q}) at these exponents.
    #[command(flatten)]
    pub exponents: Exponents,
    #[arg(long, value_parser = parse_tol, default_value_t = 1e-10)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct QMapArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_tol, default_value_t = 1e-10)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ModulusArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub exponents: Exponents,
    #[arg(long, value_parser = parse_tol, default_value_t = 1e-8)]
    pub tol: f64,
    /// Random starting point for the solver.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(subcommand)]
    pub suite: Suite,
}

#[derive(Debug, Subcommand)]
pub enum Suite {
    /// Annulus modulus of a cyclic cover against d^{1-Q} times the base.
    ScalingCheck(ScalingArgs),
    /// Growth bound on the Lattès pillowcase model.
    GrowthCheck(GrowthArgs),
    /// Quasipacking constant of refined grid annuli.
    PackCheck(PackArgs),
    /// Randomized monotonicity, subadditivity and optimality checks.
    Props(PropsArgs),
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub circumference: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub height: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub degree: Vec<usize>,
    /// Defaults to Q = 2.
    #[command(flatten)]
    pub exponents: Exponents,
    #[arg(long, value_parser = parse_tol, default_value_t = 1e-6)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct GrowthArgs {
    /// Largest n in the growth table.
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Defaults to Q = 2.
    #[command(flatten)]
    pub exponents: Exponents,
    #[arg(long, value_parser = parse_tol, default_value_t = 1e-6)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    /// Refinement levels 0..=levels.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 4)]
    pub circumference: usize,
    #[arg(long, default_value_t = 2)]
    pub height: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct PropsArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, value_parser = parse_tol, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGrid(pub Vec<f64>);

fn parse_tol(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if t > 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err("tolerance must be positive".into())
    }
}

fn parse_exponent(s: &str) -> Result<f64, String> {
    let q: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if q >= 1.0 && q.is_finite() {
        Ok(q)
    } else {
        Err("Q must be at least 1".into())
    }
}

pub fn parse_grid(s: &str) -> Result<QGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, step] = parts[..] else {
        return Err("expected start:stop:step".into());
    };
    let a = parse_exponent(a)?;
    let b = parse_exponent(b)?;
    let step: f64 = step.parse().map_err(|e| format!("{e}"))?;
    if !(step > 0.0 && step.is_finite()) {
        return Err("step must be positive".into());
    }
    if b < a {
        return Err("stop is below start".into());
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(format!("grid has {count} points"));
    }
    Ok(QGrid((0..count).map(|k| a + k as f64 * step).collect()))
}
