use crate::error::Result;
use crate::exec;
use crate::metrics::Measure;

use super::pipeline::{run_pipeline, METRIC_NAMES};
use super::SweepConfig;

pub const CSV_HEADER: &str = "seed,channel_kind,param_name,param_value,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub seed: u64,
    pub channel_kind: &'static str,
    pub param_name: &'static str,
    pub param_value: f64,
    pub metric: &'static str,
    pub value: Measure,
}

impl CsvRow {
    pub fn to_line(&self) -> String {
        let value = match self.value {
            Measure::Value(v) => fmt_g6(v),
            Measure::Fail => "Fail".to_string(),
        };
        format!(
            "{},{},{},{},{},{}",
            self.seed,
            self.channel_kind,
            self.param_name,
            fmt_g6(self.param_value),
            self.metric,
            value
        )
    }
}

/// Run every `(value, repetition)` point. Rows come out ordered by value, then
/// repetition, then metric, whatever the thread count.
///
/// A point whose pipeline errors yields `Fail` for every metric instead of
/// aborting the sweep.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<CsvRow>> {
    cfg.validate()?;
    let points: Vec<(f64, usize)> = cfg
        .values
        .iter()
        .flat_map(|&v| (0..cfg.repetitions).map(move |r| (v, r)))
        .collect();
    let runs = exec::map_slice(&points, |&(v, r)| {
        let point = cfg.point(v, r);
        let values = match run_pipeline(&point) {
            Ok(rec) => rec.values().map(|(_, m)| m),
            Err(_) => [Measure::Fail; METRIC_NAMES.len()],
        };
        (point, v, values)
    });
    let mut rows = Vec::with_capacity(runs.len() * METRIC_NAMES.len());
    for (point, v, values) in runs {
        for (metric, value) in METRIC_NAMES.iter().zip(values) {
            rows.push(CsvRow {
                seed: point.seed,
                channel_kind: point.channel.kind().name(),
                param_name: cfg.param.name(),
                param_value: v,
                metric,
                value,
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// C-style `%g`: six significant digits, trailing zeros dropped, exponent form
/// outside `[1e-4, 1e6)`.
pub fn fmt_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{PipelineConfig, SweepParam};
    use crate::volume::Dims;

    #[test]
    fn g6_matches_printf() {
        let cases = [
            (1.0, "1"),
            (0.5, "0.5"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (1.0 / 3.0, "0.333333"),
            (99999.95, "99999.9"),
            (999999.5, "1e+06"),
            (1e100, "1e+100"),
            (0.0, "0"),
            (f64::INFINITY, "inf"),
            (f64::NAN, "nan"),
        ];
        for (v, want) in cases {
            assert_eq!(fmt_g6(v), want, "{v}");
        }
    }

    #[test]
    fn sweep_rows_are_ordered_and_complete() {
        let cfg = SweepConfig {
            base: PipelineConfig {
                dims: Dims::new(4, 16, 16),
                ddpm: crate::harness::DdpmConfig {
                    steps: 5,
                    ..Default::default()
                },
                ..Default::default()
            },
            param: SweepParam::FlipP,
            values: vec![0.0, 0.2],
            repetitions: 2,
        };
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 * METRIC_NAMES.len());
        let keys: Vec<(f64, u64)> = rows.iter().map(|r| (r.param_value, r.seed)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(keys, sorted);
        assert!(rows.iter().all(|r| r.channel_kind == "bitflip"));
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        assert_eq!(csv.lines().count(), rows.len() + 1);
    }
}
