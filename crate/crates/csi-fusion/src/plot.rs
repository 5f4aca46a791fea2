//! Text charts of training logs.

use std::fmt::Write as _;
use std::path::Path;

use csi_fusion_core::train::EpochLog;

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    TrainLoss,
    TestLoss,
    TestAcc,
    TestF1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::TrainLoss,
        Metric::TestLoss,
        Metric::TestAcc,
        Metric::TestF1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TrainLoss => "train_loss",
            Metric::TestLoss => "test_loss",
            Metric::TestAcc => "test_acc",
            Metric::TestF1 => "test_f1",
        }
    }

    fn get(self, e: &EpochLog) -> f64 {
        match self {
            Metric::TrainLoss => e.train_loss,
            Metric::TestLoss => e.test_loss,
            Metric::TestAcc => e.test_acc,
            Metric::TestF1 => e.test_f1,
        }
    }
}

pub fn parse_log(text: &str) -> Result<Vec<EpochLog>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == EpochLog::CSV_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || {
            Error::decode(
                "training log",
                i as u64 + 1,
                format!("malformed line {:?}", line),
            )
        };
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad());
        out.push(EpochLog {
            epoch: f[0].trim().parse().map_err(|_| bad())?,
            lr: num(1)?,
            train_loss: num(2)?,
            test_loss: num(3)?,
            test_acc: num(4)?,
            test_f1: num(5)?,
        });
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let bytes = read_file(path)?;
    let logs = parse_log(&String::from_utf8_lossy(&bytes))?;
    if logs.is_empty() {
        return Err(Error::decode(
            "training log",
            0,
            format!("{} has no epochs", path.display()),
        ));
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub series: Vec<Series>,
}

impl Chart {
    pub fn from_logs(metric: Metric, logs: &[(String, Vec<EpochLog>)]) -> Self {
        Self {
            title: metric.name().to_string(),
            series: logs
                .iter()
                .map(|(name, log)| Series {
                    name: name.clone(),
                    points: log
                        .iter()
                        .map(|e| (e.epoch as f64, metric.get(e)))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn render(&self, width: usize, height: usize) -> String {
        const GLYPHS: &[u8] = b"*o+x#@%&";
        let pts = self
            .series
            .iter()
            .flat_map(|s| &s.points)
            .filter(|p| p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let mut out = format!("{}\n", self.title);
        if x0 > x1 {
            out.push_str("(no data)\n");
            return out;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        let mut grid = vec![vec![b' '; width]; height];
        for (k, s) in self.series.iter().enumerate() {
            let g = GLYPHS[k % GLYPHS.len()];
            for &(x, y) in s.points.iter().filter(|p| p.1.is_finite()) {
                let c = ((x - x0) / (x1 - x0) * (width - 1) as f64).round() as usize;
                let r = ((y1 - y) / (y1 - y0) * (height - 1) as f64).round() as usize;
                grid[r][c] = g;
            }
        }
        for (r, row) in grid.iter().enumerate() {
            let label = match r {
                0 => format!("{y1:>10.4}"),
                r if r == height - 1 => format!("{y0:>10.4}"),
                _ => " ".repeat(10),
            };
            let _ = writeln!(out, "{label} |{}", String::from_utf8_lossy(row).trim_end());
        }
        let _ = writeln!(out, "{} +{}", " ".repeat(10), "-".repeat(width));
        let _ = writeln!(
            out,
            "{} {:<w$}{:>8}",
            " ".repeat(10),
            x0,
            x1,
            w = width.saturating_sub(8)
        );
        for (k, s) in self.series.iter().enumerate() {
            let _ = writeln!(out, "  {} {}", GLYPHS[k % GLYPHS.len()] as char, s.name);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(n: usize) -> String {
        let mut s = format!("{}\n", EpochLog::CSV_HEADER);
        for e in 1..=n {
            s += &format!(
                "{e},1e-3,{},{},{},{}\n",
                1.0 / e as f64,
                1.1 / e as f64,
                e,
                e
            );
        }
        s
    }

    #[test]
    fn hundred_epochs_hundred_points() {
        let l = parse_log(&log(100)).unwrap();
        let c = Chart::from_logs(Metric::TestAcc, &[("a".into(), l)]);
        assert_eq!(c.series[0].points.len(), 100);
    }

    #[test]
    fn overlay_has_two_legend_entries() {
        let a = parse_log(&log(5)).unwrap();
        let b = parse_log(&log(7)).unwrap();
        let text =
            Chart::from_logs(Metric::TrainLoss, &[("a".into(), a), ("b".into(), b)]).render(40, 10);
        assert!(
            text.contains("  * a\n") && text.contains("  o b\n"),
            "{text}"
        );
    }

    #[test]
    fn malformed_line() {
        assert!(parse_log("1,2,3\n").is_err());
        assert!(parse_log(EpochLog::CSV_HEADER).unwrap().is_empty());
    }
}
