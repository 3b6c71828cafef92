//! File formats shared by the CLI, the experiment harness and the service.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use elicit_core::grid::BreakpointGrid;
use elicit_core::lottery::{ComparisonRecord, Lottery, Outcome};
use elicit_core::simulate::ExponentialUtility;
use elicit_core::utility::{pla_of, PiecewiseUtility, Utility};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Fractional digits kept when probabilities leave the process.
pub const PROB_DIGITS: i32 = 12;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// A simulated or recorded set of answered queries on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub grid: BreakpointGrid,
    pub records: Vec<ComparisonRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_star: Option<f64>,
}

/// The utility behind simulated answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthUtility {
    /// `(1 - e^{-rate y}) / (1 - e^{-rate upper})`.
    Exponential { rate: f64, upper: f64 },
    Piecewise { utility: PiecewiseUtility },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub sigma_star: f64,
    pub utility: TruthUtility,
}

impl Truth {
    pub fn benchmark(sigma_star: f64) -> Self {
        let ExponentialUtility { rate, upper } = ExponentialUtility::BENCHMARK;
        Self { sigma_star, utility: TruthUtility::Exponential { rate, upper } }
    }

    pub fn value(&self, y: f64) -> Result<f64> {
        Ok(match &self.utility {
            TruthUtility::Exponential { rate, upper } => ExponentialUtility::new(*rate, *upper)?.value(y)?,
            TruthUtility::Piecewise { utility } => utility.value(y)?,
        })
    }

    /// Adjusted truth `u*(y_j) / sigma*` at the grid points.
    pub fn theta(&self, grid: &BreakpointGrid) -> Result<Vec<f64>> {
        grid.points().iter().map(|y| Ok(self.value(*y)? / self.sigma_star)).collect()
    }

    /// Piecewise-linear interpolant of the truth on `grid`.
    pub fn pla(&self, grid: &BreakpointGrid) -> Result<PiecewiseUtility> {
        Ok(match &self.utility {
            TruthUtility::Exponential { rate, upper } => pla_of(&ExponentialUtility::new(*rate, *upper)?, grid)?,
            TruthUtility::Piecewise { utility } => pla_of(utility, grid)?,
        })
    }
}

/// Formats an amount of money as a plain decimal string.
pub fn format_money(x: f64) -> String {
    let rounded = (x * 1e6).round() / 1e6;
    let mut s = format!("{rounded:.6}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn parse_money(s: &str) -> Result<f64> {
    let t = s.trim();
    let ok = !t.is_empty() && t.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '-');
    match t.parse::<f64>() {
        Ok(v) if ok && v.is_finite() => Ok(v),
        _ => Err(invalid(format!("`{s}` is not a decimal amount"))),
    }
}

pub fn round_prob(p: f64) -> f64 {
    let scale = 10f64.powi(PROB_DIGITS);
    (p * scale).round() / scale
}

/// Lottery with money as strings and probabilities rounded for transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireLottery {
    pub outcomes: Vec<WireOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireOutcome {
    pub payoff: String,
    pub prob: f64,
}

impl From<&Lottery> for WireLottery {
    /// Rounds every probability but the largest, which absorbs the residual
    /// so the rounded values still sum to one within lottery tolerance.
    fn from(l: &Lottery) -> Self {
        let outs = l.outcomes();
        let big = (0..outs.len()).max_by(|&a, &b| outs[a].prob.total_cmp(&outs[b].prob)).unwrap_or(0);
        let rest: f64 = outs.iter().enumerate().filter(|(i, _)| *i != big).map(|(_, o)| round_prob(o.prob)).sum();
        let outcomes = outs
            .iter()
            .enumerate()
            .map(|(i, o)| WireOutcome {
                payoff: format_money(o.payoff),
                prob: if i == big { round_prob(1.0 - rest) } else { round_prob(o.prob) },
            })
            .collect();
        Self { outcomes }
    }
}

impl TryFrom<&WireLottery> for Lottery {
    type Error = crate::error::AppError;

    fn try_from(w: &WireLottery) -> Result<Self> {
        let outcomes = w
            .outcomes
            .iter()
            .map(|o| Ok(Outcome { payoff: parse_money(&o.payoff)?, prob: o.prob }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Lottery::new(outcomes)?)
    }
}

/// Return scenarios: one row per scenario, columns `asset_0..asset_S`
/// holding decimal return rates, `asset_0` the risk-free asset.
pub fn parse_scenarios<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(invalid("scenario file has no header"));
    }
    for (i, h) in headers.iter().enumerate() {
        if h != format!("asset_{i}") {
            return Err(invalid(format!("column {i} is `{h}`, expected `asset_{i}`")));
        }
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| invalid(format!("scenario {line}: every entry must be a decimal rate")))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid("scenario file has no rows"));
    }
    Ok(rows)
}

pub fn read_scenarios(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_scenarios(fs::File::open(path)?)
}

/// `1` repeated, or a comma-separated list with one cap per risky asset.
pub fn parse_caps(s: &str, assets: usize) -> Result<Vec<f64>> {
    let caps = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|_| invalid(format!("cap `{c}` is not a number"))))
        .collect::<Result<Vec<f64>>>()?;
    match caps.len() {
        1 => Ok(vec![caps[0]; assets]),
        n if n == assets => Ok(caps),
        n => Err(invalid(format!("{n} caps given for {assets} risky assets"))),
    }
}
