use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::ExampleMetrics;

/// Mean SI-SDRi of every example that placed a talker at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub region: String,
    pub mean_sisdri: f64,
    pub count: usize,
}

/// Groups per-example scores by (region, exact position). Output is sorted
/// by the region order of the first example, then x, y, z.
pub fn aggregate_positions(examples: &[ExampleMetrics]) -> Result<Vec<ScatterPoint>> {
    let labels = examples.first().map(|e| e.regions.clone()).unwrap_or_default();
    let mut groups: BTreeMap<(usize, [u64; 3]), (f64, usize)> = BTreeMap::new();
    for e in examples {
        if e.regions != labels || e.sisdri.len() != labels.len() || e.positions.len() != labels.len() {
            return Err(Error::shape(
                "aggregate_positions",
                format!("example {} regions {:?} differ from {labels:?}", e.id, e.regions),
            ));
        }
        for (r, s) in e.sisdri.iter().enumerate() {
            let Some(s) = s else { continue };
            // Order-preserving key for non-negative coordinates.
            let key = e.positions[r].map(|c| c.to_bits());
            let g = groups.entry((r, key)).or_default();
            g.0 += s;
            g.1 += 1;
        }
    }
    if groups.is_empty() {
        return Err(Error::Missing("evaluation log holds no scored examples".into()));
    }
    Ok(groups
        .into_iter()
        .map(|((r, key), (sum, count))| ScatterPoint {
            x: f64::from_bits(key[0]),
            y: f64::from_bits(key[1]),
            z: f64::from_bits(key[2]),
            region: labels[r].clone(),
            mean_sisdri: sum / count as f64,
            count,
        })
        .collect())
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("x,y,region,mean_sisdri,count\n");
    for p in points {
        let _ = writeln!(out, "{:.6},{:.6},{},{:.6},{}", p.x, p.y, p.region, p.mean_sisdri, p.count);
    }
    out
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Top view (x right, y up) of the room. Circle area grows linearly with the
/// position's mean SI-SDRi above the smallest mean in the set.
pub fn scatter_svg(points: &[ScatterPoint], room: [f64; 2]) -> String {
    let (w, h, pad) = (600.0, 600.0 * room[1] / room[0], 30.0);
    let sx = |x: f64| pad + x / room[0] * w;
    let sy = |y: f64| pad + h - y / room[1] * h;
    let lo = points.iter().map(|p| p.mean_sisdri).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.mean_sisdri).fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);

    let mut labels: Vec<&str> = Vec::new();
    for p in points {
        if !labels.contains(&p.region.as_str()) {
            labels.push(&p.region);
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        w + 2.0 * pad + 120.0,
        h + 2.0 * pad,
        w + 2.0 * pad + 120.0,
        h + 2.0 * pad
    );
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{w:.1}" height="{h:.1}" fill="none" stroke="black"/>"#
    );
    for p in points {
        let color = PALETTE[labels.iter().position(|l| *l == p.region).unwrap_or(0) % PALETTE.len()];
        let area = 0.1 + 0.9 * (p.mean_sisdri - lo) / span;
        let r = 10.0 * area.sqrt();
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="{color}" fill-opacity="0.6"><title>{} {:.2} dB (n={})</title></circle>"#,
            sx(p.x),
            sy(p.y),
            p.region,
            p.mean_sisdri,
            p.count
        );
    }
    for (i, l) in labels.iter().enumerate() {
        let y = pad + 20.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="6" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">{l}</text>"#,
            w + pad + 20.0,
            PALETTE[i % PALETTE.len()],
            w + pad + 32.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{:.1}" font-size="12">mean SI-SDRi {lo:.2} to {hi:.2} dB</text>"#,
        h + 2.0 * pad - 8.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(id: &str, sisdri: Vec<Option<f64>>, positions: Vec<[f64; 3]>) -> ExampleMetrics {
        ExampleMetrics {
            id: id.into(),
            regions: vec!["D".into(), "C".into()],
            sisdr: sisdri.clone(),
            sisdri,
            best_perm: vec![0, 1],
            positions,
        }
    }

    #[test]
    fn means_per_position() {
        let a = [1.0, 0.5, 1.0];
        let b = [1.2, 1.5, 1.0];
        let c = [1.3, 1.6, 1.0];
        let log = vec![
            metrics("0", vec![Some(10.0), Some(4.0)], vec![a, b]),
            metrics("1", vec![Some(14.0), Some(8.0)], vec![a, c]),
            metrics("2", vec![Some(12.0), None], vec![a, b]),
        ];
        let pts = aggregate_positions(&log).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[0].region.as_str(), pts[0].mean_sisdri, pts[0].count), ("D", 12.0, 3));
        assert_eq!((pts[1].y, pts[1].mean_sisdri, pts[1].count), (1.5, 4.0, 1));
        assert_eq!((pts[2].y, pts[2].mean_sisdri), (1.6, 8.0));
        let csv = scatter_csv(&pts);
        assert!(csv.starts_with("x,y,region,mean_sisdri,count\n1.000000,0.500000,D,12.000000,3\n"));
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(aggregate_positions(&[]).is_err());
    }
}
