//! `accq`: accumulator bounds, projection, overflow verification, toy
//! quantization-aware training sweeps and Pareto extraction.

mod input;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use accq::bounds::{a2q_limit, a2q_plus_limit, bound_ratio, min_acc_width, BitWidths, RationalBound};
use accq::epinit::{project_l1_ball, weight_quant_error};
use accq::intsim::{check_accumulator, enum_budget_from_env, exhaustive_check, AccumWitness, AccumulatorSpec};
use accq::qat::{
    channel_cdf, checkpoint_json, float_baseline, float_checkpoint_json, parse_checkpoint,
    parse_float_checkpoint, record_order, train, train_from, SweepRecord, TrainConfig,
};
use accq::{Error, Variant};

use input::{acc_list, int_list, integer_channels, read_file, u32_list, vector_arg, AccList};

/// Failure categories, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Parse(String),
    Overflow(String),
    Budget(String),
    Io(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Overflow(_) => 4,
            CliError::Budget(_) => 5,
            CliError::Io(_) => 6,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Parse(m)
            | CliError::Overflow(m)
            | CliError::Budget(m)
            | CliError::Io(m)
            | CliError::Failed(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::InvalidBitWidth(_)
            | Error::NonPositiveK(_)
            | Error::NonPositiveRadius(_)
            | Error::InvalidConfig(_)
            | Error::Infeasible(_) => CliError::Usage(m),
            Error::NonFinite(_) | Error::LengthMismatch { .. } | Error::Parse(_) => CliError::Parse(m),
            Error::BudgetExceeded { .. } => CliError::Budget(m),
            Error::CertificateFailed(_) => CliError::Overflow(m),
            Error::Divergence { .. } | Error::HypothesisViolation(_) => CliError::Failed(m),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "accq", version, about = "Accumulator-aware weight quantization tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the l1 budgets, their ratio and the conservative accumulator width.
    Bounds(BoundsArgs),
    /// Project a vector onto the l1 ball of the given radius.
    Project(ProjectArgs),
    /// Check integer weight channels for accumulator overflow.
    Verify(VerifyArgs),
    /// Train the toy network once and print its record as CSV.
    Train(TrainArgs),
    /// Train a grid of configurations and print all records as CSV.
    Sweep(SweepArgs),
    /// Extract the Pareto frontier from sweep records.
    #[command(long_about = "Extract the Pareto frontier from sweep records.\n\n\
        For every (variant, P) pair the record with the lowest final_loss over all \
        (M, N, seed) is kept, and the frontier is printed sorted by P. The toy task is \
        regression, so the loss is the accuracy proxy and lower is better; with a \
        classification accuracy the comparison would be reversed.")]
    Pareto(ParetoArgs),
    /// Fraction of channels of a float checkpoint that already fit each budget.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Accumulator bit width.
    #[arg(long = "P", required_unless_present_any = ["ratio", "k"])]
    p: Option<u32>,
    /// Input activation bit width.
    #[arg(long = "N")]
    n: u32,
    /// Weight bit width, for the conservative width.
    #[arg(long = "M", requires = "k")]
    m: Option<u32>,
    /// Dot-product size, for the conservative width.
    #[arg(long = "K", requires = "m")]
    k: Option<i64>,
    /// Signed input activations.
    #[arg(long, conflicts_with = "unsigned")]
    signed: bool,
    /// Unsigned input activations (the default).
    #[arg(long)]
    unsigned: bool,
    /// Print only the zero-centered budget gain.
    #[arg(long)]
    ratio: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    radius: f64,
    /// Inline values such as "3,1", or a file of comma or whitespace separated values.
    #[arg(long)]
    weights: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// File with one integer channel per line.
    #[arg(long)]
    weights: String,
    #[arg(long = "P")]
    p: u32,
    #[arg(long = "N")]
    n: u32,
    #[arg(long)]
    signed: bool,
    /// Also enumerate every input vector (bounded by ACCQ_ENUM_BUDGET).
    #[arg(long)]
    exhaustive: bool,
    /// Report which budgets each channel satisfies.
    #[arg(long)]
    props: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// a2q or a2q+.
    #[arg(long)]
    variant: Variant,
    #[arg(long = "M")]
    m: u32,
    #[arg(long = "N")]
    n: u32,
    #[arg(long = "P")]
    p: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Quantization-aware epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    save_checkpoint: Option<String>,
    #[arg(long)]
    save_float: Option<String>,
    /// Print the record and the certificate as one JSON line.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Weight widths, e.g. "4" or "3-8".
    #[arg(long = "M")]
    m: String,
    /// Activation widths.
    #[arg(long = "N")]
    n: String,
    /// Accumulator widths, or "auto" for P* down to P* - 10.
    #[arg(long = "P", default_value = "auto")]
    p: String,
    #[arg(long, default_value = "a2q,a2q+")]
    variants: String,
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ParetoArgs {
    /// CSV written by `train` or `sweep`.
    #[arg(long)]
    records: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Float checkpoint (`[[{w}]]`) or quantized checkpoint (`[[{v, t, d}]]`).
    #[arg(long)]
    checkpoint: String,
    #[arg(long = "M", default_value_t = 4)]
    m: u32,
    #[arg(long = "N", default_value_t = 4)]
    n: u32,
    #[arg(long = "P", default_value = "12,14,16,18,20")]
    p: String,
    #[arg(long)]
    signed: bool,
    /// Include the output layer.
    #[arg(long)]
    all_layers: bool,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = String::new();
    let result = match cli.command {
        Command::Bounds(a) => cmd_bounds(&a, &mut out),
        Command::Project(a) => cmd_project(&a, &mut out),
        Command::Verify(a) => cmd_verify(&a, &mut out),
        Command::Train(a) => cmd_train(&a, &mut out),
        Command::Sweep(a) => cmd_sweep(&a, &mut out),
        Command::Pareto(a) => cmd_pareto(&a, &mut out),
        Command::Analyze(a) => cmd_analyze(&a, &mut out),
    };
    // Output produced before a failure (e.g. the witnesses of an overflow)
    // is still printed.
    let mut stdout = io::stdout().lock();
    if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
        return ExitCode::from(6);
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// `a/b (decimal)`, or just the integer.
fn exact_and_decimal(r: &RationalBound) -> String {
    if r.denom() == &1.into() {
        r.to_string()
    } else {
        format!("{r} ({})", r.to_f64())
    }
}

fn cmd_bounds(a: &BoundsArgs, out: &mut String) -> CliResult {
    let signed = a.signed;
    let ratio = bound_ratio(a.n, signed)?;
    if a.ratio {
        if a.json {
            let v = json!({"bound_ratio": ratio, "bound_ratio_f64": ratio.to_f64()});
            writeln!(out, "{v}").unwrap();
        } else {
            writeln!(out, "{}", exact_and_decimal(&ratio)).unwrap();
        }
        return Ok(());
    }
    let mut row = serde_json::Map::new();
    let mut lines = Vec::new();
    if let Some(p) = a.p {
        let bits = BitWidths {
            weight_bits: a.m.unwrap_or(8),
            act_bits: a.n,
            acc_bits: p,
            act_signed: signed,
        };
        for (name, r) in [("a2q_limit", a2q_limit(&bits)?), ("a2q_plus_limit", a2q_plus_limit(&bits)?)] {
            lines.push(format!("{name:<15} {}", exact_and_decimal(&r)));
            row.insert(format!("{name}_f64"), json!(r.to_f64()));
            row.insert(name.into(), json!(r));
        }
    }
    lines.push(format!("{:<15} {}", "bound_ratio", exact_and_decimal(&ratio)));
    row.insert("bound_ratio_f64".into(), json!(ratio.to_f64()));
    row.insert("bound_ratio".into(), json!(ratio));
    if let (Some(m), Some(k)) = (a.m, a.k) {
        let bits = BitWidths::new(m, a.n, a.p.unwrap_or(32), signed)?;
        let p_star = min_acc_width(k, &bits)?;
        lines.push(format!("{:<15} {p_star}", "min_acc_width"));
        row.insert("min_acc_width".into(), json!(p_star));
    }
    if a.json {
        writeln!(out, "{}", serde_json::Value::Object(row)).unwrap();
    } else {
        for l in lines {
            writeln!(out, "{l}").unwrap();
        }
    }
    Ok(())
}

/// `[2,0]`: shortest round-trip formatting of each value.
fn vector_text(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(","))
}

fn cmd_project(a: &ProjectArgs, out: &mut String) -> CliResult {
    let w = vector_arg(&a.weights)?;
    let r = project_l1_ball(&w, a.radius)?;
    let err = weight_quant_error(&r.v_star, &w, true)?;
    let l1: f64 = r.v_star.iter().map(|x| x.abs()).sum();
    if a.json {
        let v = json!({
            "v_star": r.v_star, "theta": r.theta, "active": r.active,
            "l1": l1, "normalized_error": err,
        });
        writeln!(out, "{v}").unwrap();
    } else {
        writeln!(out, "{}", vector_text(&r.v_star)).unwrap();
        writeln!(out, "theta {}", r.theta).unwrap();
        writeln!(out, "l1 {l1}").unwrap();
        writeln!(out, "normalized_error {err}").unwrap();
    }
    Ok(())
}

#[derive(Serialize)]
struct ChannelReport<'a> {
    channel: usize,
    k: usize,
    l1: u128,
    #[serde(flatten)]
    witness: &'a AccumWitness,
    /// Whether every input vector was enumerated.
    enumerated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    props: Option<BudgetProps>,
}

#[derive(Serialize)]
struct BudgetProps {
    zero_sum: bool,
    within_a2q_limit: bool,
    within_a2q_plus_limit: bool,
    /// The budget guarantees applicable to this channel.
    guaranteed: bool,
}

fn cmd_verify(a: &VerifyArgs, out: &mut String) -> CliResult {
    let channels = integer_channels(&read_file(&a.weights)?)?;
    let spec = AccumulatorSpec::new(a.p)?;
    let bits = BitWidths {
        weight_bits: 8,
        act_bits: a.n,
        acc_bits: a.p,
        act_signed: a.signed,
    };
    let (limit, plus_limit) = (a2q_limit(&bits)?, a2q_plus_limit(&bits)?);
    let budget = enum_budget_from_env();
    let mut overflows = 0;
    for (i, q) in channels.iter().enumerate() {
        let mut witness = check_accumulator(q, a.n, a.signed, &spec)?;
        if a.exhaustive {
            let e = exhaustive_check(q, a.n, a.signed, &spec, budget)?;
            let agrees = e.overflowed == witness.overflowed && e.true_max == witness.true_max && e.true_min == witness.true_min;
            if !agrees {
                return Err(CliError::Failed(format!("channel {i}: enumeration disagrees with the extremal inputs")));
            }
            witness = e;
        }
        let l1: u128 = q.iter().map(|&c| u128::from(c.unsigned_abs())).sum();
        let props = a.props.then(|| {
            let l1_big = l1.into();
            let zero_sum = q.iter().map(|&c| i128::from(c)).sum::<i128>() == 0;
            let within = limit.admits_int(&l1_big);
            let within_plus = plus_limit.admits_int(&l1_big);
            BudgetProps {
                zero_sum,
                within_a2q_limit: within,
                within_a2q_plus_limit: within_plus,
                guaranteed: within || (zero_sum && within_plus),
            }
        });
        if props.as_ref().is_some_and(|p| p.guaranteed && witness.overflowed) {
            return Err(CliError::Failed(format!("channel {i} overflows inside its budget")));
        }
        overflows += usize::from(witness.overflowed);
        let report = ChannelReport {
            channel: i,
            k: q.len(),
            l1,
            witness: &witness,
            enumerated: a.exhaustive,
            props,
        };
        writeln!(out, "{}", serde_json::to_string(&report).unwrap()).unwrap();
    }
    if overflows > 0 {
        return Err(CliError::Overflow(format!("{overflows} of {} channels can overflow", channels.len())));
    }
    Ok(())
}

fn write_output(path: Option<&str>, text: &str, out: &mut String) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{p}: {e}"))),
        None => {
            out.push_str(text);
            Ok(())
        }
    }
}

fn write_file(path: &str, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{path}: {e}")))
}

fn records_csv(records: &[SweepRecord]) -> String {
    let mut s = String::new();
    writeln!(s, "{}", SweepRecord::CSV_HEADER).unwrap();
    for r in records {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

fn config_for(variant: Variant, m: u32, n: u32, p: u32, seed: u64, epochs: Option<usize>) -> CliResult<TrainConfig> {
    let mut c = TrainConfig::new(variant, BitWidths::new(m, n, p, false)?, seed);
    if let Some(e) = epochs {
        c.epochs = e;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_train(a: &TrainArgs, out: &mut String) -> CliResult {
    let mut config = config_for(a.variant, a.m, a.n, a.p, a.seed, a.epochs)?;
    if let Some(lr) = a.lr {
        config.lr = lr;
        config.validate()?;
    }
    let outcome = train(&config)?;
    if let Some(path) = &a.save_checkpoint {
        write_file(path, &checkpoint_json(&outcome.network))?;
    }
    if let Some(path) = &a.save_float {
        write_file(path, &float_checkpoint_json(&outcome.float_network))?;
    }
    let text = if a.json {
        let v = json!({
            "record": outcome.record,
            "float_loss": outcome.float_loss,
            "certificate": outcome.certificate,
        });
        format!("{v}\n")
    } else {
        records_csv(std::slice::from_ref(&outcome.record))
    };
    write_output(a.out.as_deref(), &text, out)
}

/// Largest dot-product size among the constrained layers.
fn constrained_k(config: &TrainConfig) -> i64 {
    let topo = config.topology();
    topo[..topo.len() - 2].iter().copied().max().unwrap_or(1) as i64
}

fn cmd_sweep(a: &SweepArgs, out: &mut String) -> CliResult {
    let ms = u32_list(&a.m)?;
    let ns = u32_list(&a.n)?;
    let accs = acc_list(&a.p)?;
    let seeds = int_list(&a.seeds)?;
    let variants: Vec<Variant> = a
        .variants
        .split(',')
        .map(|v| v.trim().parse::<Variant>())
        .collect::<Result<_, _>>()?;

    let mut points = Vec::new();
    for &m in &ms {
        for &n in &ns {
            let ps = match &accs {
                AccList::Fixed(ps) => ps.clone(),
                AccList::Auto => {
                    let probe = config_for(Variant::A2Q, m, n, 32, 0, None)?;
                    let p_star = min_acc_width(constrained_k(&probe), &probe.bits)?;
                    (p_star.saturating_sub(10).max(2)..=p_star).rev().collect()
                }
            };
            for &p in &ps {
                for &v in &variants {
                    points.push((v, m, n, p));
                }
            }
        }
    }
    // Validate every point before any training starts.
    for &(v, m, n, p) in &points {
        config_for(v, m, n, p, 0, a.epochs)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    // The dataset and float baseline depend only on the seed, so each is
    // built once and shared by that seed's grid points.
    let per_seed: Vec<CliResult<Vec<SweepRecord>>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let (v0, m0, n0, p0) = points[0];
                let (data, float) = float_baseline(&config_for(v0, m0, n0, p0, seed, a.epochs)?)?;
                points
                    .par_iter()
                    .map(|&(v, m, n, p)| {
                        let c = config_for(v, m, n, p, seed, a.epochs)?;
                        Ok(train_from(&c, &data, float.clone())?.record)
                    })
                    .collect()
            })
            .collect()
    });
    let mut records = Vec::new();
    for r in per_seed {
        records.extend(r?);
    }
    records.sort_by(record_order);
    write_output(a.out.as_deref(), &records_csv(&records), out)
}

fn read_records(path: &str) -> CliResult<Vec<SweepRecord>> {
    let text = read_file(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let records = reader
        .deserialize()
        .collect::<Result<Vec<SweepRecord>, _>>()
        .map_err(|e| CliError::Parse(format!("{path}: {e}")))?;
    Ok(records)
}

/// Lowest-loss record per `(variant, P)`, ordered by `P` then variant.
fn pareto_frontier(records: &[SweepRecord]) -> Vec<SweepRecord> {
    let mut best: BTreeMap<(u32, Variant), &SweepRecord> = BTreeMap::new();
    for r in records {
        let slot = best.entry((r.p, r.variant)).or_insert(r);
        if r.final_loss < slot.final_loss {
            *slot = r;
        }
    }
    best.into_values().cloned().collect()
}

fn cmd_pareto(a: &ParetoArgs, out: &mut String) -> CliResult {
    let records = read_records(&a.records)?;
    if records.is_empty() {
        return Err(CliError::Parse(format!("{}: no records", a.records)));
    }
    let frontier = pareto_frontier(&records);
    if a.json {
        for r in &frontier {
            writeln!(out, "{}", serde_json::to_string(r).unwrap()).unwrap();
        }
    } else {
        out.push_str(&records_csv(&frontier));
    }
    Ok(())
}

/// Float weights per channel: the checkpoint's `w`, or `g * v / ||v||_1`.
fn checkpoint_channels(text: &str) -> CliResult<Vec<Vec<Vec<f64>>>> {
    if let Ok(layers) = parse_float_checkpoint(text) {
        return Ok(layers.into_iter().map(|l| l.into_iter().map(|c| c.w).collect()).collect());
    }
    let layers = parse_checkpoint(text)?;
    Ok(layers
        .into_iter()
        .map(|l| {
            l.into_iter()
                .map(|c| {
                    let l1: f64 = c.v.iter().map(|x| x.abs()).sum();
                    let scale = if l1 > 0.0 { c.g() / l1 } else { 0.0 };
                    c.v.iter().map(|x| x * scale).collect()
                })
                .collect()
        })
        .collect())
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut String) -> CliResult {
    let mut layers = checkpoint_channels(&read_file(&a.checkpoint)?)?;
    if !a.all_layers && layers.len() > 1 {
        layers.pop();
    }
    let channels: Vec<Vec<f64>> = layers.into_iter().flatten().collect();
    if channels.is_empty() {
        return Err(CliError::Parse("checkpoint has no channels".into()));
    }
    let widths = u32_list(&a.p)?;
    let cdf = channel_cdf(&channels, a.m, a.n, a.signed, &widths)?;
    if a.json {
        for (p, frac) in cdf {
            writeln!(out, "{}", json!({"P": p, "fraction": frac, "channels": channels.len()})).unwrap();
        }
    } else {
        writeln!(out, "P,fraction").unwrap();
        for (p, frac) in cdf {
            writeln!(out, "{p},{frac}").unwrap();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(variant: Variant, p: u32, seed: u64, loss: f64) -> SweepRecord {
        SweepRecord {
            variant,
            m: 4,
            n: 4,
            p,
            seed,
            final_loss: loss,
            sparsity: 0.0,
            min_slack: RationalBound::from_integer(0),
        }
    }

    #[test]
    fn frontier_of_one_record_is_itself() {
        let r = rec(Variant::A2Q, 12, 0, 0.5);
        assert_eq!(pareto_frontier(std::slice::from_ref(&r)), vec![r]);
    }

    #[test]
    fn frontier_keeps_lowest_loss_sorted_by_p() {
        let rs = vec![
            rec(Variant::A2Q, 16, 0, 0.2),
            rec(Variant::A2Q, 12, 0, 0.5),
            rec(Variant::A2Q, 12, 1, 0.3),
            rec(Variant::A2QPlus, 12, 0, 0.4),
        ];
        let f = pareto_frontier(&rs);
        let keys: Vec<(u32, Variant, f64)> = f.iter().map(|r| (r.p, r.variant, r.final_loss)).collect();
        assert_eq!(keys, vec![(12, Variant::A2Q, 0.3), (12, Variant::A2QPlus, 0.4), (16, Variant::A2Q, 0.2)]);
    }

    #[test]
    fn error_codes_are_distinct() {
        let all = [
            CliError::Failed(String::new()),
            CliError::Usage(String::new()),
            CliError::Parse(String::new()),
            CliError::Overflow(String::new()),
            CliError::Budget(String::new()),
            CliError::Io(String::new()),
        ];
        let mut codes: Vec<u8> = all.iter().map(|e| e.code()).collect();
        codes.dedup();
        assert_eq!(codes, vec![1, 2, 3, 4, 5, 6]);
        let budget = Error::BudgetExceeded { required: 2, budget: 1 };
        assert_eq!(CliError::from(budget).code(), 5);
        assert_eq!(CliError::from(Error::Parse("x".into())).code(), 3);
        assert_eq!(CliError::from(Error::CertificateFailed("x".into())).code(), 4);
    }

    #[test]
    fn vector_text_drops_trailing_zeros() {
        assert_eq!(vector_text(&[2.0, 0.0]), "[2,0]");
        assert_eq!(vector_text(&[0.5, -1.25]), "[0.5,-1.25]");
    }
}
