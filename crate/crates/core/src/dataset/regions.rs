use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::{Point3, RoomSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Cuboid zone in which at most one talker is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub label: String,
    pub center: Point3,
    /// Edge lengths along x, y, z in meters.
    pub edge_lengths: Point3,
}

impl RegionSpec {
    pub fn new(label: &str, center: Point3, edge_lengths: Point3) -> Self {
        RegionSpec {
            label: label.to_string(),
            center,
            edge_lengths,
        }
    }

    pub fn min_corner(&self) -> Point3 {
        std::array::from_fn(|i| self.center[i] - self.edge_lengths[i] / 2.0)
    }

    pub fn max_corner(&self) -> Point3 {
        std::array::from_fn(|i| self.center[i] + self.edge_lengths[i] / 2.0)
    }

    pub fn contains(&self, p: Point3) -> bool {
        let (lo, hi) = (self.min_corner(), self.max_corner());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        if self.edge_lengths.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Geometry(format!("region {} has non-positive edges", self.label)));
        }
        let (lo, hi) = (self.min_corner(), self.max_corner());
        if (0..3).any(|i| lo[i] <= 0.0 || hi[i] >= room.dimensions[i]) {
            return Err(Error::Geometry(format!(
                "region {} spans {lo:?}..{hi:?}, outside room {:?}",
                self.label, room.dimensions
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Point3 {
        let lo = self.min_corner();
        std::array::from_fn(|i| lo[i] + rng.random::<f64>() * self.edge_lengths[i])
    }
}

/// Driver, co-driver and backseat zones, in that (canonical output) order.
/// The backseat spans the cabin width behind the front seats.
pub fn car_cabin_regions() -> Vec<RegionSpec> {
    vec![
        RegionSpec::new("D", [1.25, 0.5, 1.0], [0.5, 0.5, 0.5]),
        RegionSpec::new("C", [1.25, 1.5, 1.0], [0.5, 0.5, 0.5]),
        RegionSpec::new("B", [2.25, 1.0, 1.0], [0.5, 1.5, 0.5]),
    ]
}

/// Points per region for the cabin scenario.
pub const CAR_CABIN_COUNTS: [usize; 3] = [50, 50, 150];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        self as u64
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sizes of a 60/20/20 split of `n` items.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let train = (n as f64 * 0.6).round() as usize;
    let val = (n as f64 * 0.2).round() as usize;
    [train, val, n - train - val]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedPoint {
    pub point: Point3,
    pub split: Split,
}

/// Sampled positions of every region, each tagged with its split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionBank {
    pub regions: Vec<RegionSpec>,
    pub points: Vec<Vec<TaggedPoint>>,
}

impl PositionBank {
    /// Indices into `points[region]` belonging to `split`.
    pub fn indices(&self, region: usize, split: Split) -> Vec<usize> {
        self.points[region]
            .iter()
            .enumerate()
            .filter(|(_, p)| p.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn point(&self, region: usize, index: usize) -> Point3 {
        self.points[region][index].point
    }
}

/// Uniform i.i.d. points in each cuboid with a seeded 60/20/20 split.
pub fn sample_positions(
    room: &RoomSpec,
    regions: &[RegionSpec],
    counts: &[usize],
    seed: u64,
) -> Result<PositionBank> {
    if regions.len() != counts.len() {
        return Err(Error::Config(format!(
            "{} regions but {} position counts",
            regions.len(),
            counts.len()
        )));
    }
    let mut points = Vec::with_capacity(regions.len());
    for (r, (region, &n)) in regions.iter().zip(counts).enumerate() {
        region.validate(room)?;
        if n == 0 {
            return Err(Error::Config(format!("region {} needs at least one position", region.label)));
        }
        let mut rng = seeded(derive_seed(seed, &[0x706f73, r as u64]));
        let pts: Vec<Point3> = (0..n).map(|_| region.sample(&mut rng)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let [train, val, _] = split_sizes(n);
        let mut tags = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            tags[i] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
        points.push(
            pts.into_iter()
                .zip(tags)
                .map(|(point, split)| TaggedPoint { point, split })
                .collect(),
        );
    }
    Ok(PositionBank {
        regions: regions.to_vec(),
        points,
    })
}
