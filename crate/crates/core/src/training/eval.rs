use serde::{Deserialize, Serialize};

use super::Example;
use crate::acoustics::Point3;
use crate::error::Result;
use crate::objectives::{best_permutation, pairwise_si_sdr, si_sdr, PermutationReport};
use crate::separator::{separate, ModelParams};
use crate::tensor::Tensor;

/// Scores of one example with outputs assigned to regions by `perm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub id: String,
    /// Region labels, in the order of the per-region fields.
    pub regions: Vec<String>,
    /// Per region; `None` for regions without a talker.
    pub sisdr: Vec<Option<f64>>,
    pub sisdri: Vec<Option<f64>>,
    /// Best output permutation of this example (`perm[o]` = region of output `o`).
    pub best_perm: Vec<usize>,
    pub positions: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub label: String,
    pub sisdr: f64,
    pub sisdri: f64,
    pub count: usize,
}

/// Mean SI-SDR and SI-SDRi, overall and per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub set: String,
    pub model: String,
    pub examples: usize,
    /// Output-to-region assignment used for scoring.
    pub mapping: Vec<usize>,
    pub avg_sisdr: f64,
    pub avg_sisdri: f64,
    pub regions: Vec<RegionMetrics>,
}

impl MetricsReport {
    pub fn csv_header(labels: &[String]) -> String {
        let mut h = String::from("set,model,avg_sisdr,avg_sisdri");
        for l in labels {
            h.push_str(&format!(",{l}_sisdr,{l}_sisdri"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{:.6},{:.6}", self.set, self.model, self.avg_sisdr, self.avg_sisdri);
        for r in &self.regions {
            row.push_str(&format!(",{:.6},{:.6}", r.sisdr, r.sisdri));
        }
        row
    }
}

/// Everything `evaluate` produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub census: PermutationReport,
    pub per_example: Vec<ExampleMetrics>,
}

impl Evaluation {
    /// One row per (example, region): id, region, scores, position.
    pub fn per_example_csv(&self) -> String {
        let mut out = String::from("id,region,sisdr,sisdri,x,y,z,best_perm\n");
        for e in &self.per_example {
            let perm = e.best_perm.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("-");
            for (r, label) in self.report.regions.iter().enumerate() {
                let (Some(s), Some(i)) = (e.sisdr[r], e.sisdri[r]) else {
                    continue;
                };
                let p = e.positions[r];
                out.push_str(&format!(
                    "{},{},{s:.6},{i:.6},{:.6},{:.6},{:.6},{perm}\n",
                    e.id, label.label, p[0], p[1], p[2]
                ));
            }
        }
        out
    }
}

/// Scores already-computed estimates. Each region is scored on the output
/// the census majority assigns to it, so a model that settled on a
/// consistent non-identity mapping is scored under that mapping.
pub fn score_estimates(
    estimates: &[Tensor],
    examples: &[Example],
    labels: &[String],
    set: &str,
    model: &str,
) -> Result<Evaluation> {
    let r_count = labels.len();
    let mut perms = Vec::with_capacity(examples.len());
    for (est, ex) in estimates.iter().zip(examples) {
        perms.push(match ex.active_targets() {
            Some(tgt) if tgt.len() == r_count => {
                let t = Tensor::from_rows(&tgt)?;
                best_permutation(&pairwise_si_sdr(est, &t)?)?.0
            }
            _ => partial_perm(est, ex)?,
        });
    }
    let census = PermutationReport::from_permutations(&perms, labels)?;
    // Output o carries region majority[o]; invert for region -> output.
    let mut output_of = vec![0; r_count];
    for (o, &r) in census.majority.iter().enumerate() {
        output_of[r] = o;
    }

    let mut per_example = Vec::with_capacity(examples.len());
    for ((est, ex), perm) in estimates.iter().zip(examples).zip(&perms) {
        let mix_ref = ex.mixture.row(ex.reference);
        let mut sisdr = vec![None; r_count];
        let mut sisdri = vec![None; r_count];
        for r in 0..r_count {
            if !ex.active[r] {
                continue;
            }
            let tgt = ex.targets.row(r);
            let s = si_sdr(est.row(output_of[r]), tgt)?;
            sisdr[r] = Some(s);
            sisdri[r] = Some(s - si_sdr(mix_ref, tgt)?);
        }
        per_example.push(ExampleMetrics {
            id: ex.id.clone(),
            regions: labels.to_vec(),
            sisdr,
            sisdri,
            best_perm: perm.clone(),
            positions: ex.positions.clone(),
        });
    }

    let mut regions = Vec::with_capacity(r_count);
    for (r, label) in labels.iter().enumerate() {
        let vals: Vec<(f64, f64)> = per_example
            .iter()
            .filter_map(|e| Some((e.sisdr[r]?, e.sisdri[r]?)))
            .collect();
        let n = vals.len().max(1) as f64;
        regions.push(RegionMetrics {
            label: label.clone(),
            sisdr: vals.iter().map(|v| v.0).sum::<f64>() / n,
            sisdri: vals.iter().map(|v| v.1).sum::<f64>() / n,
            count: vals.len(),
        });
    }
    let scored: Vec<&RegionMetrics> = regions.iter().filter(|r| r.count > 0).collect();
    let k = scored.len().max(1) as f64;
    Ok(Evaluation {
        report: MetricsReport {
            set: set.to_string(),
            model: model.to_string(),
            examples: examples.len(),
            mapping: census.majority.clone(),
            avg_sisdr: scored.iter().map(|r| r.sisdr).sum::<f64>() / k,
            avg_sisdri: scored.iter().map(|r| r.sisdri).sum::<f64>() / k,
            regions,
        },
        census,
        per_example,
    })
}

/// Best permutation when some regions are silent: only active targets
/// contribute to the score.
fn partial_perm(est: &Tensor, ex: &Example) -> Result<Vec<usize>> {
    let r = ex.targets.shape()[0];
    let scores: Vec<Vec<f64>> = est
        .rows()
        .map(|e| {
            (0..r)
                .map(|t| {
                    if ex.active[t] {
                        crate::objectives::si_sdr_clamped(e, ex.targets.row(t))
                    } else {
                        Ok(0.0)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(best_permutation(&scores)?.0)
}

/// Runs the model on every example and scores it.
pub fn evaluate(params: &ModelParams, examples: &[Example], labels: &[String], set: &str, model: &str) -> Result<Evaluation> {
    let estimates = examples
        .iter()
        .map(|ex| Ok(separate(params, &ex.mixture)?.estimates))
        .collect::<Result<Vec<_>>>()?;
    score_estimates(&estimates, examples, labels, set, model)
}
