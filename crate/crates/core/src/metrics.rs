//! Aggregation and export: layer-rate traces, goodput ratios, fairness.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::engine::SimTime;

/// One timestamped observation of a named series.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSample {
    pub t: SimTime,
    pub series: String,
    pub value: f64,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    Some(var.sqrt())
}

/// Standard deviation of per-source mean rates, in the unit of the input.
pub fn fairness_sigma(rates: &[f64]) -> f64 {
    population_std(rates).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessReport {
    /// Mean rate of each source across the bottleneck, bits/s.
    pub rates_bps: Vec<f64>,
    pub sigma_mbps: f64,
}

impl FairnessReport {
    pub fn from_rates(rates_bps: Vec<f64>) -> Self {
        let mbps: Vec<f64> = rates_bps.iter().map(|r| r / 1e6).collect();
        FairnessReport {
            sigma_mbps: fairness_sigma(&mbps),
            rates_bps,
        }
    }

    pub fn spread_bps(&self) -> f64 {
        let max = self.rates_bps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.rates_bps.iter().copied().fold(f64::INFINITY, f64::min);
        if self.rates_bps.is_empty() {
            0.0
        } else {
            max - min
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DestinationGoodput {
    pub destination: String,
    pub connection: String,
    pub mean_goodput_bps: f64,
    pub mean_available_bps: f64,
    /// `None` when no bandwidth was available.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoodputRatioReport {
    pub destinations: Vec<DestinationGoodput>,
}

impl GoodputRatioReport {
    /// Mean ratio over destinations with a defined ratio.
    pub fn mean_ratio(&self) -> Option<f64> {
        let rs: Vec<f64> = self.destinations.iter().filter_map(|d| d.ratio).collect();
        mean(&rs)
    }
}

/// Mean goodput over mean available bandwidth.
pub fn goodput_ratio(goodput_samples: &[f64], available_samples: &[f64]) -> Option<f64> {
    let g = mean(goodput_samples)?;
    let a = mean(available_samples)?;
    (a > 0.0).then_some(g / a)
}

/// Available bandwidth of a path per bin: the minimum over its links of
/// capacity minus realized interference. `links` holds each link's capacity
/// and its interference bits per bin.
pub fn path_available(links: &[(u64, Vec<u64>)], bin: SimTime, bins: usize) -> Vec<f64> {
    let secs = bin.as_secs_f64();
    (0..bins)
        .map(|b| {
            links
                .iter()
                .map(|(cap, bits)| {
                    let load = bits.get(b).copied().unwrap_or(0) as f64 / secs;
                    (*cap as f64 - load).max(0.0)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect()
}

/// A CSV table with a schema comment line ahead of the header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &'static str, columns: &[&'static str]) -> Self {
        Table {
            schema,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schema: {}", self.schema);
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.render())
    }
}

pub fn fmt_secs(t: SimTime) -> String {
    format!("{:.6}", t.as_secs_f64())
}

pub fn fmt_bps(r: f64) -> String {
    format!("{:.0}", r)
}

pub fn fmt_f(x: f64) -> String {
    format!("{:.6}", x)
}

pub const LAYERS_SCHEMA: &str = "layers/v1 t_seconds,layer_index,cumulative_rate_bps,connection";
pub const GOODPUT_L_SCHEMA: &str = "goodput_vs_L/v1 mechanism,layers,seed,mean_goodput_ratio";
pub const GOODPUT_DELAY_SCHEMA: &str = "goodput_vs_delay/v1 mechanism,delay_seconds,seed,mean_goodput_ratio";
pub const FAIRNESS_SCHEMA: &str = "fairness/v1 mechanism,delay_seconds,v1_mbps,v2_mbps,v3_mbps,sigma_mbps";
pub const DESTINATIONS_SCHEMA: &str =
    "destinations/v1 destination,connection,mean_goodput_bps,mean_available_bps,goodput_ratio";

#[cfg(test)]
mod tests {
    use super::*;

    // two-pass oracle
    fn sigma_oracle(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| x * x).sum::<f64>() / n - m * m;
        ss.max(0.0).sqrt()
    }

    #[test]
    fn equal_rates_have_zero_sigma() {
        assert_eq!(fairness_sigma(&[3.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn sigma_of_near_equal_rates() {
        let a = [2.998, 2.996, 2.996];
        assert!((fairness_sigma(&a) - sigma_oracle(&a)).abs() < 1e-9);
        assert!((fairness_sigma(&a) - 0.00094).abs() < 5e-6);
        let b = [3.244, 3.244, 3.243];
        assert!((fairness_sigma(&b) - 0.00047).abs() < 5e-6);
    }

    #[test]
    fn report_converts_to_mbps() {
        let r = FairnessReport::from_rates(vec![3.0e6, 3.2e6, 3.1e6]);
        assert!((r.sigma_mbps - sigma_oracle(&[3.0, 3.2, 3.1])).abs() < 1e-12);
        assert!((r.spread_bps() - 0.2e6).abs() < 1e-6);
    }

    #[test]
    fn goodput_ratio_of_means() {
        assert_eq!(goodput_ratio(&[4e6, 6e6], &[10e6, 10e6]), Some(0.5));
        assert_eq!(goodput_ratio(&[0.0], &[10e6]), Some(0.0));
        assert_eq!(goodput_ratio(&[1.0], &[0.0]), None);
        assert_eq!(goodput_ratio(&[], &[1.0]), None);
    }

    #[test]
    fn path_availability_takes_the_tightest_link() {
        let bin = SimTime::from_secs(1);
        let links = vec![(100_000_000, vec![90_000_000, 95_000_000]), (100_000_000, vec![98_000_000])];
        let a = path_available(&links, bin, 2);
        assert_eq!(a, vec![2e6, 5e6]);
    }

    #[test]
    fn table_render() {
        let mut t = Table::new("x/v1 a,b", &["a", "b"]);
        t.push(vec!["1".into(), "2".into()]);
        assert_eq!(t.render(), "# schema: x/v1 a,b\na,b\n1,2\n");
    }
}
