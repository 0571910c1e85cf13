use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::cosine;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub search_examples: usize,
    pub rec_examples: usize,
    pub gen_loss: f64,
    pub contrastive_loss: f64,
    pub total_loss: f64,
    /// Cosine of the per-task probe-layer gradients; `None` when undefined.
    pub probe_cosine: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub paradigm: String,
    pub header: Vec<(String, String)>,
    pub steps: Vec<StepRecord>,
}

impl TrainTrace {
    pub fn cosines(&self) -> Vec<Option<f64>> {
        self.steps.iter().map(|s| s.probe_cosine).collect()
    }

    /// Mean over defined cosines.
    pub fn mean_cosine(&self) -> Option<f64> {
        let v: Vec<f64> = self.steps.iter().filter_map(|s| s.probe_cosine).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Cosine of two flattened gradients; undefined if either is exactly zero.
pub fn gradient_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    cosine(a, b).map(|c| c.clamp(-1.0, 1.0))
}

fn header_lines(out: &mut String, trace: &TrainTrace) {
    let _ = writeln!(out, "# paradigm={}", trace.paradigm);
    for (k, v) in &trace.header {
        let _ = writeln!(out, "# {k}={v}");
    }
}

/// `step,task_mix,gen_loss,contrastive_loss,total_loss` with `#` header lines.
pub fn write_step_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut out = String::new();
    header_lines(&mut out, trace);
    out.push_str("step,task_mix,gen_loss,contrastive_loss,total_loss\n");
    for s in &trace.steps {
        let _ = writeln!(
            out,
            "{},S{}:R{},{},{},{}",
            s.step, s.search_examples, s.rec_examples, s.gen_loss, s.contrastive_loss, s.total_loss
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `step,paradigm,cosine` for each trace; undefined entries are written as
/// `undefined`.
pub fn write_gradient_trace(path: &Path, header: &[(String, String)], traces: &[&TrainTrace]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in header {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str("step,paradigm,cosine\n");
    for t in traces {
        for s in &t.steps {
            match s.probe_cosine {
                Some(c) => writeln!(out, "{},{},{}", s.step, t.paradigm, c),
                None => writeln!(out, "{},{},undefined", s.step, t.paradigm),
            }
            .expect("write to string");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_reference_cases() {
        let g = [0.5, -1.0, 2.0];
        assert!((gradient_cosine(&g, &g).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        assert!((gradient_cosine(&g, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(gradient_cosine(&[1.0, 0.0], &[0.0, 3.0]), Some(0.0));
        assert_eq!(gradient_cosine(&[0.0, 0.0], &[1.0, 3.0]), None);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let trace = TrainTrace {
            paradigm: "gensr".into(),
            header: vec![("params".into(), "10".into())],
            steps: vec![StepRecord {
                step: 0,
                search_examples: 8,
                rec_examples: 8,
                gen_loss: 0.5,
                contrastive_loss: 2.0,
                total_loss: 0.7,
                probe_cosine: None,
            }],
        };
        let p = dir.path().join("t.csv");
        write_step_trace(&p, &trace).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "# paradigm=gensr\n# params=10\nstep,task_mix,gen_loss,contrastive_loss,total_loss\n0,S8:R8,0.5,2,0.7\n");
        write_gradient_trace(&p, &[], &[&trace]).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().ends_with("0,gensr,undefined\n"));
    }
}
