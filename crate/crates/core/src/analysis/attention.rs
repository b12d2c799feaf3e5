use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::heat_color;
use crate::error::{Error, Result};
use crate::separator::{attention_probe, ModelParams};
use crate::training::Example;

/// Examples averaged per region when the caller does not say otherwise.
pub const DEFAULT_PROBE_EXAMPLES: usize = 10;

/// Mean inter-channel attention of one block for examples whose only talker
/// is in `region`. `heads[h][i][j]`: weight of mic `j` in the output for mic `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAttention {
    pub region: String,
    pub block: usize,
    pub examples: usize,
    pub heads: Vec<Vec<Vec<f64>>>,
}

/// Averages attention grids over up to `limit` examples per active region,
/// in region order. Every example must have exactly one active region.
pub fn inspect_attention(
    params: &ModelParams,
    examples: &[Example],
    labels: &[String],
    block: usize,
    limit: usize,
) -> Result<Vec<RegionAttention>> {
    let mut by_region: BTreeMap<usize, Vec<&Example>> = BTreeMap::new();
    for ex in examples {
        let active: Vec<usize> = (0..ex.active.len()).filter(|&r| ex.active[r]).collect();
        if active.len() != 1 {
            let names: Vec<&str> = active.iter().map(|&r| labels[r].as_str()).collect();
            return Err(Error::Config(format!(
                "example {} has {} active regions {names:?}; attention probes need exactly one talker",
                ex.id,
                active.len()
            )));
        }
        let group = by_region.entry(active[0]).or_default();
        if group.len() < limit {
            group.push(ex);
        }
    }
    if by_region.is_empty() {
        return Err(Error::Missing("no examples to probe".into()));
    }
    let mut out = Vec::new();
    for (r, group) in by_region {
        let mut acc: Option<Vec<f64>> = None;
        let mut shape = Vec::new();
        for ex in &group {
            let w = attention_probe(params, &ex.mixture, block)?;
            shape = w.shape().to_vec();
            match acc.as_mut() {
                Some(a) => a.iter_mut().zip(w.data()).for_each(|(x, y)| *x += y),
                None => acc = Some(w.into_data()),
            }
        }
        let n = group.len() as f64;
        let data: Vec<f64> = acc.unwrap_or_default().into_iter().map(|v| v / n).collect();
        let (h, m) = (shape[0], shape[1]);
        let heads = (0..h)
            .map(|hi| (0..m).map(|i| data[(hi * m + i) * m..(hi * m + i + 1) * m].to_vec()).collect())
            .collect();
        out.push(RegionAttention {
            region: labels[r].clone(),
            block,
            examples: group.len(),
            heads,
        });
    }
    Ok(out)
}

pub fn grid_csv(grid: &[Vec<f64>]) -> String {
    let m = grid.len();
    let mut out = String::from("row");
    for j in 0..m {
        let _ = write!(out, ",mic{j}");
    }
    out.push('\n');
    for (i, row) in grid.iter().enumerate() {
        let _ = write!(out, "mic{i}");
        for v in row {
            let _ = write!(out, ",{v:.8}");
        }
        out.push('\n');
    }
    out
}

/// Heat map of one grid, white at 0 and dark at 1, with values printed.
pub fn grid_svg(grid: &[Vec<f64>], title: &str) -> String {
    let m = grid.len();
    let cell = 60.0;
    let top = 30.0;
    let size = cell * m as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{:.0}" viewBox="0 0 {size:.0} {:.0}">"#,
        size + top,
        size + top
    );
    let _ = writeln!(s, r#"<text x="4" y="20" font-size="13">{title}</text>"#);
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (j as f64 * cell, top + i as f64 * cell);
            let ink = if v > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.0}" y="{y:.0}" width="{cell:.0}" height="{cell:.0}" fill="{}" stroke="gray"/><text x="{:.0}" y="{:.0}" font-size="12" text-anchor="middle" fill="{ink}">{v:.3}</text>"#,
                heat_color(v),
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Mean pairwise cosine similarity of the flattened per-region grids
/// (all heads concatenated). 1 for a single region.
pub fn similarity_score(regions: &[RegionAttention]) -> f64 {
    let flat: Vec<Vec<f64>> = regions
        .iter()
        .map(|r| r.heads.iter().flatten().flatten().copied().collect())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..flat.len() {
        for b in a + 1..flat.len() {
            let dot: f64 = flat[a].iter().zip(&flat[b]).map(|(x, y)| x * y).sum();
            let na = flat[a].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = flat[b].iter().map(|x| x * x).sum::<f64>().sqrt();
            total += dot / (na * nb);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        total / pairs as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separator::ModelConfig;
    use crate::tensor::Tensor;

    fn single(id: &str, region: usize, seed: u64) -> Example {
        let mut rng = crate::rng::seeded(seed);
        Example {
            id: id.into(),
            mixture: Tensor::uniform([2, 96], 1.0, &mut rng),
            targets: Tensor::zeros([2, 96]),
            reference: 0,
            active: (0..2).map(|r| r == region).collect(),
            positions: vec![[0.0; 3]; 2],
        }
    }

    #[test]
    fn grids_are_row_stochastic_and_grouped() {
        let params = ModelParams::init(&ModelConfig::tiny(), 2).unwrap();
        let labels = vec!["D".to_string(), "C".to_string()];
        let exs = vec![single("a", 1, 1), single("b", 0, 2), single("c", 1, 3)];
        let grids = inspect_attention(&params, &exs, &labels, 0, DEFAULT_PROBE_EXAMPLES).unwrap();
        assert_eq!(grids.len(), 2);
        assert_eq!((grids[0].region.as_str(), grids[0].examples), ("D", 1));
        assert_eq!((grids[1].region.as_str(), grids[1].examples), ("C", 2));
        for g in &grids {
            assert_eq!(g.heads.len(), 2);
            for row in g.heads.iter().flatten() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let again = inspect_attention(&params, &exs, &labels, 0, DEFAULT_PROBE_EXAMPLES).unwrap();
        assert_eq!(grids, again);
        let sim = similarity_score(&grids);
        assert!(sim > 0.0 && sim <= 1.0 + 1e-12);
    }

    #[test]
    fn multi_talker_examples_are_rejected() {
        let params = ModelParams::init(&ModelConfig::tiny(), 2).unwrap();
        let labels = vec!["D".to_string(), "C".to_string()];
        let mut ex = single("mix", 0, 1);
        ex.active = vec![true, true];
        let err = inspect_attention(&params, &[ex], &labels, 0, 10).unwrap_err();
        assert!(err.to_string().contains("exactly one talker"), "{err}");
    }

    #[test]
    fn csv_layout() {
        let csv = grid_csv(&[vec![0.25, 0.75], vec![1.0, 0.0]]);
        assert_eq!(csv, "row,mic0,mic1\nmic0,0.25000000,0.75000000\nmic1,1.00000000,0.00000000\n");
    }
}
