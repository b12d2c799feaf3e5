//! Result summaries written as CSV and static SVG.

mod attention;
mod scatter;

pub use attention::{grid_csv, grid_svg, inspect_attention, similarity_score, RegionAttention, DEFAULT_PROBE_EXAMPLES};
pub use scatter::{aggregate_positions, scatter_csv, scatter_svg, ScatterPoint};

/// Linear blend from white to a dark blue for values in `[0, 1]`.
pub(crate) fn heat_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}
