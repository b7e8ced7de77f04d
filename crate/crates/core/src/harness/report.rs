//! Reading metrics.csv back and rendering mean +/- std comparison tables.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::runner::CSV_HEADER;

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub suite: String,
    pub split: String,
    pub strategy: String,
    pub seed: u64,
    pub plan_l2: f64,
    pub collision_rate: f64,
    pub ade: f64,
    pub fde: f64,
    pub miss_rate: f64,
    pub det_center_err: f64,
    pub det_precision: f64,
    pub det_recall: f64,
    pub update_count: u64,
    pub wall_time_s: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty metrics csv".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected csv header: {header}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Config(format!("csv line {} has {} fields", i + 2, f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Config(format!("csv line {}: {e}", i + 2)))
        };
        rows.push(CsvRow {
            suite: f[0].to_string(),
            split: f[1].to_string(),
            strategy: f[2].to_string(),
            seed: f[3].parse().map_err(|e| Error::Config(format!("csv line {}: {e}", i + 2)))?,
            plan_l2: num(f[4])?,
            collision_rate: num(f[5])?,
            ade: num(f[6])?,
            fde: num(f[7])?,
            miss_rate: num(f[8])?,
            det_center_err: num(f[9])?,
            det_precision: num(f[10])?,
            det_recall: num(f[11])?,
            update_count: f[12]
                .parse()
                .map_err(|e| Error::Config(format!("csv line {}: {e}", i + 2)))?,
            wall_time_s: num(f[13])?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text)
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub suite: String,
    pub split: String,
    pub strategy: String,
    pub seeds: usize,
    pub plan_l2: (f64, f64),
    pub collision_rate: (f64, f64),
    pub ade: (f64, f64),
    pub fde: (f64, f64),
    pub miss_rate: (f64, f64),
    pub update_count: (f64, f64),
}

/// Group rows by (suite, split, strategy) and aggregate over seeds, in
/// deterministic key order.
pub fn aggregate_rows(rows: &[CsvRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String, String)> = rows
        .iter()
        .map(|r| (r.suite.clone(), r.split.clone(), r.strategy.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(suite, split, strategy)| {
            let grp: Vec<&CsvRow> = rows
                .iter()
                .filter(|r| r.suite == suite && r.split == split && r.strategy == strategy)
                .collect();
            let col = |f: &dyn Fn(&CsvRow) -> f64| -> (f64, f64) {
                mean_std(&grp.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            AggregateRow {
                suite,
                split,
                strategy,
                seeds: grp.len(),
                plan_l2: col(&|r| r.plan_l2),
                collision_rate: col(&|r| r.collision_rate),
                ade: col(&|r| r.ade),
                fde: col(&|r| r.fde),
                miss_rate: col(&|r| r.miss_rate),
                update_count: col(&|r| r.update_count as f64),
            }
        })
        .collect()
}

/// Plain-text comparison table.
pub fn render_table(aggs: &[AggregateRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:<22} {:<18} {:>5} {:>16} {:>16} {:>16} {:>16} {:>10} {:>12}\n",
        "suite", "split", "strategy", "n", "plan_l2(m)", "col_rate", "ade(m)", "fde(m)", "miss", "updates"
    ));
    for a in aggs {
        out.push_str(&format!(
            "{:<12} {:<22} {:<18} {:>5} {:>16} {:>16} {:>16} {:>16} {:>10} {:>12}\n",
            a.suite,
            a.split,
            a.strategy,
            a.seeds,
            fmt_pair(a.plan_l2),
            fmt_pair(a.collision_rate),
            fmt_pair(a.ade),
            fmt_pair(a.fde),
            format!("{:.3}", a.miss_rate.0),
            format!("{:.1}", a.update_count.0),
        ));
    }
    out
}

fn fmt_pair((m, s): (f64, f64)) -> String {
    format!("{m:.4}±{s:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_computation() {
        let xs = [1.0, 2.0, 4.0];
        let (m, s) = mean_std(&xs);
        // mean 7/3; sample variance ((16/9)+(1/9)+(25/9))/2 = 42/18 = 7/3
        assert!((m - 7.0 / 3.0).abs() < 1e-15);
        assert!((s - (7.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn csv_round_trip_and_aggregation() {
        let text = format!(
            "{CSV_HEADER}\n\
             cross_region,a->b,frozen,0,1.5,0.1,0.9,1.4,0.05,0.2,0.9,0.8,0,3.2\n\
             cross_region,a->b,frozen,1,1.7,0.2,1.1,1.6,0.15,0.3,0.8,0.7,0,3.1\n\
             cross_region,a->b,evopsf,0,1.2,0.1,0.8,1.2,0.05,0.2,0.9,0.8,12,4.0\n"
        );
        let rows = parse_csv(&text).unwrap();
        assert_eq!(rows.len(), 3);
        let aggs = aggregate_rows(&rows);
        assert_eq!(aggs.len(), 2);
        // Keys sort evopsf before frozen.
        assert_eq!(aggs[0].strategy, "evopsf");
        let frozen = &aggs[1];
        assert_eq!(frozen.seeds, 2);
        assert!((frozen.plan_l2.0 - 1.6).abs() < 1e-12);
        let expect_std = ((0.1f64 * 0.1 + 0.1 * 0.1) / 1.0).sqrt();
        assert!((frozen.plan_l2.1 - expect_std).abs() < 1e-12);
        let table = render_table(&aggs);
        assert!(table.contains("frozen"));
        assert!(table.contains("1.6000"));
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(parse_csv("nope\n1,2,3\n").is_err());
    }
}
