use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("channel `{name}` is missing from the {side} series")]
    MissingChannel { name: String, side: &'static str },
    #[error("the two series share no time span")]
    EmptyOverlap,
}

/// Per-channel tolerances, matched by name prefix; the first matching rule
/// wins. Channels with no rule are reported but never fail.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tolerances {
    rules: Vec<(String, f64)>,
    default: Option<f64>,
}

impl Tolerances {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn uniform(tol: f64) -> Self {
        Self::new().with_default(tol)
    }

    pub fn with(mut self, prefix: impl Into<String>, tol: f64) -> Self {
        self.rules.push((prefix.into(), tol));
        self
    }

    pub fn with_default(mut self, tol: f64) -> Self {
        self.default = Some(tol);
        self
    }

    pub fn for_channel(&self, name: &str) -> Option<f64> {
        self.rules
            .iter()
            .find(|(p, _)| name.starts_with(p.as_str()))
            .map(|r| r.1)
            .or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelReport {
    pub name: String,
    pub max_abs: f64,
    pub rms: f64,
    /// Where the largest deviation occurs.
    pub time_of_max: f64,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub t_start: f64,
    pub t_end: f64,
    /// Points of the coarser grid the deviations were taken on.
    pub samples: usize,
    pub channels: Vec<ChannelReport>,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.channels.iter().all(|c| c.pass)
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelReport> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.channels.iter().map(|c| c.name.len()).max().unwrap_or(7).max(7);
        writeln!(
            f,
            "{:width$}  {:>12}  {:>12}  {:>9}  {:>10}  result",
            "channel", "max |dev|", "rms", "at t", "tolerance"
        )?;
        for c in &self.channels {
            let tol = c.tolerance.map_or("-".to_string(), |t| format!("{t:.3e}"));
            writeln!(
                f,
                "{:width$}  {:>12.4e}  {:>12.4e}  {:>9.4}  {:>10}  {}",
                c.name,
                c.max_abs,
                c.rms,
                c.time_of_max,
                tol,
                if c.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} channels over [{}, {}] s ({} samples): {}",
            self.channels.len(),
            self.t_start,
            self.t_end,
            self.samples,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Max and RMS deviation per channel over the common time span, with the
/// finer series interpolated linearly onto the coarser one's samples.
/// Both series must carry the same channel names.
pub fn compare_series(a: &TimeSeries, b: &TimeSeries, tol: &Tolerances) -> Result<CompareReport, CompareError> {
    for (x, y, side) in [(a, b, "second"), (b, a, "first")] {
        if let Some(name) = x.names().iter().find(|n| y.channel(n).is_none()) {
            return Err(CompareError::MissingChannel {
                name: name.clone(),
                side,
            });
        }
    }
    let (Some(&a0), Some(&b0)) = (a.time().first(), b.time().first()) else {
        return Err(CompareError::EmptyOverlap);
    };
    let t0 = a0.max(b0);
    let t1 = a.time().last().unwrap().min(*b.time().last().unwrap());
    if t1 < t0 {
        return Err(CompareError::EmptyOverlap);
    }
    let inside = |s: &TimeSeries| -> Vec<usize> {
        (0..s.len()).filter(|&k| s.time()[k] >= t0 && s.time()[k] <= t1).collect()
    };
    let (ia, ib) = (inside(a), inside(b));
    let (coarse, fine, idx) = if ib.len() < ia.len() { (b, a, ib) } else { (a, b, ia) };
    if idx.is_empty() {
        return Err(CompareError::EmptyOverlap);
    }

    let mut channels = Vec::new();
    for name in a.names() {
        let c = coarse.channel(name).expect("checked");
        let (mut max_abs, mut sum2, mut at) = (0.0_f64, 0.0, coarse.time()[idx[0]]);
        for &k in &idx {
            let t = coarse.time()[k];
            let d = (c[k] - fine.interpolate(name, t).expect("checked")).abs();
            // NaN must not hide behind max().
            if d > max_abs || d.is_nan() {
                max_abs = d;
                at = t;
            }
            sum2 += d * d;
        }
        let rms = (sum2 / idx.len() as f64).sqrt();
        let tolerance = tol.for_channel(name);
        let pass = !max_abs.is_nan() && tolerance.is_none_or(|t| max_abs <= t);
        channels.push(ChannelReport {
            name: name.clone(),
            max_abs,
            rms,
            time_of_max: at,
            tolerance,
            pass,
        });
    }
    Ok(CompareReport {
        t_start: t0,
        t_end: t1,
        samples: idx.len(),
        channels,
    })
}
