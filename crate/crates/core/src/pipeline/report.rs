//! Run reports. Every artifact written here is a pure function of the
//! configuration and seed: wall-clock time is deliberately excluded so a
//! rerun produces byte-identical files.

use super::PipelineError;
use crate::detkit::{format_ap_table, EvalResult};
use std::fmt::Write as _;
use std::path::Path;

/// One logged scalar, usually a per-epoch training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub phase: String,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

/// Evaluation block attached to a report.
#[derive(Clone, Debug)]
pub struct EvalBlock {
    pub result: EvalResult,
    pub class_names: Vec<String>,
}

/// Everything a run wants to say about itself.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub config_echo: String,
    pub records: Vec<MetricRecord>,
    pub eval: Option<EvalBlock>,
    pub deviations: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config_echo: String) -> Self {
        RunReport {
            command: command.to_string(),
            seed,
            config_echo,
            records: Vec::new(),
            eval: None,
            deviations: Vec::new(),
        }
    }

    pub fn record(&mut self, phase: &str, epoch: usize, metric: &str, value: f64) {
        self.records.push(MetricRecord {
            phase: phase.to_string(),
            epoch,
            metric: metric.to_string(),
            value,
        });
    }

    /// Human-readable report. The configuration echo is embedded between
    /// `--- config ---` markers so it can be extracted and reparsed.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "seed: {}", self.seed);
        s.push_str("--- config ---\n");
        s.push_str(&self.config_echo);
        if !self.config_echo.ends_with('\n') {
            s.push('\n');
        }
        s.push_str("--- end config ---\n");
        if !self.records.is_empty() {
            s.push_str("\nmetrics:\n");
            for r in &self.records {
                let _ = writeln!(s, "  {} epoch {:>3}  {} = {:.6}", r.phase, r.epoch, r.metric, r.value);
            }
        }
        if let Some(eval) = &self.eval {
            s.push_str("\nevaluation:\n");
            for line in format_ap_table(&eval.result, &eval.class_names).lines() {
                let _ = writeln!(s, "  {line}");
            }
        }
        if !self.deviations.is_empty() {
            s.push_str("\nnotes:\n");
            for d in &self.deviations {
                let _ = writeln!(s, "  - {d}");
            }
        }
        s
    }

    /// Long-format CSV: `phase,epoch,metric,value` with evaluation rows
    /// under phase `eval`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,epoch,metric,value\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.phase, r.epoch, r.metric, r.value);
        }
        if let Some(eval) = &self.eval {
            for (i, ap) in eval.result.per_class.iter().enumerate() {
                let name = eval
                    .class_names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("class{i}"));
                match ap {
                    Some(v) => {
                        let _ = writeln!(s, "eval,0,ap_{name},{v}");
                    }
                    None => {
                        let _ = writeln!(s, "eval,0,ap_{name},");
                    }
                }
            }
            let _ = writeln!(s, "eval,0,map,{}", eval.result.map);
        }
        s
    }

    /// Writes `<stem>.txt` and `<stem>.csv` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
        for (ext, body) in [("txt", self.to_text()), ("csv", self.to_csv())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body)
                .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// Extracts the embedded configuration echo from report text.
pub fn extract_config_echo(report_text: &str) -> Option<String> {
    let start = report_text.find("--- config ---\n")? + "--- config ---\n".len();
    let end = report_text[start..].find("--- end config ---")?;
    Some(report_text[start..start + end].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::PipelineConfig;
    use crate::pipeline::parse_config_text;

    fn sample_report() -> RunReport {
        let mut report = RunReport::new("train-phase1", 7, PipelineConfig::default().echo());
        report.record("phase1", 0, "det_loss", 4.25);
        report.record("phase1", 1, "det_loss", 3.5);
        report
    }

    #[test]
    fn text_embeds_a_reparsable_config() {
        let report = sample_report();
        let text = report.to_text();
        let echo = extract_config_echo(&text).unwrap();
        assert_eq!(parse_config_text(&echo).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn csv_is_long_format() {
        let csv = sample_report().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "phase,epoch,metric,value");
        assert_eq!(lines[1], "phase1,0,det_loss,4.25");
        assert_eq!(lines[2], "phase1,1,det_loss,3.5");
    }

    #[test]
    fn eval_block_lands_in_both_forms() {
        let mut report = sample_report();
        report.eval = Some(EvalBlock {
            result: EvalResult { per_class: vec![Some(0.5), None], map: 0.5 },
            class_names: vec!["circle".to_string(), "square".to_string()],
        });
        let text = report.to_text();
        assert!(text.contains("circle"), "{text}");
        assert!(text.contains("n/a (no ground truth)"), "{text}");
        let csv = report.to_csv();
        assert!(csv.contains("eval,0,ap_circle,0.5"), "{csv}");
        assert!(csv.contains("eval,0,ap_square,\n"), "{csv}");
        assert!(csv.contains("eval,0,map,0.5"), "{csv}");
    }

    #[test]
    fn write_produces_both_files() {
        let dir = std::env::temp_dir().join(format!("report_test_{}", std::process::id()));
        let report = sample_report();
        report.write(&dir, "report_phase1").unwrap();
        let text = std::fs::read_to_string(dir.join("report_phase1.txt")).unwrap();
        let csv = std::fs::read_to_string(dir.join("report_phase1.csv")).unwrap();
        assert_eq!(text, report.to_text());
        assert_eq!(csv, report.to_csv());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
