//! Road geometry: segment list, lane counts, centerline poses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Straight,
    Curve,
    OnRampMerge,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Arc length in meters.
    pub arc_length: f64,
    /// Signed curvature in 1/m (0 for straights).
    pub curvature: f64,
}

/// Declarative description of the highway map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSpec {
    pub segments: Vec<Segment>,
    pub main_lane_count: u32,
    pub lane_width: f64,
    pub total_length: f64,
    /// Span over which the ramp lane joins the main road; the ramp lane
    /// exists for s < merge_window.1 and is gone afterwards.
    pub merge_window: [f64; 2],
    /// Spawn range along s.
    pub init_area: [f64; 2],
}

impl MapSpec {
    /// Default map: ramp merge over [100, 300], two opposing curves
    /// separated by straights, 2400 m total.
    pub fn default_map() -> Self {
        MapSpec {
            segments: vec![
                Segment {
                    kind: SegmentKind::OnRampMerge,
                    arc_length: 400.0,
                    curvature: 0.0,
                },
                Segment {
                    kind: SegmentKind::Curve,
                    arc_length: 300.0,
                    curvature: 1.0 / 800.0,
                },
                Segment {
                    kind: SegmentKind::Straight,
                    arc_length: 500.0,
                    curvature: 0.0,
                },
                Segment {
                    kind: SegmentKind::Curve,
                    arc_length: 300.0,
                    curvature: -1.0 / 800.0,
                },
                Segment {
                    kind: SegmentKind::Straight,
                    arc_length: 900.0,
                    curvature: 0.0,
                },
            ],
            main_lane_count: 4,
            lane_width: 3.5,
            total_length: 2400.0,
            merge_window: [100.0, 300.0],
            init_area: [320.0, 560.0],
        }
    }

    /// Reduced straight map for desk-scale training runs.
    pub fn desk_map() -> Self {
        MapSpec {
            segments: vec![Segment {
                kind: SegmentKind::Straight,
                arc_length: 1200.0,
                curvature: 0.0,
            }],
            main_lane_count: 4,
            lane_width: 3.5,
            total_length: 1200.0,
            merge_window: [0.0, 0.0],
            // Dense spawn keeps desk-scale traffic interacting: with a
            // sparse area a learner's typical front gap hits the 100 m cap
            // and ending the episode early outscores driving, while random
            // early policies rarely conflict at all.
            init_area: [20.0, 130.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.segments.iter().map(|seg| seg.arc_length).sum();
        if (sum - self.total_length).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "segment arc lengths sum to {sum}, expected total_length {}",
                self.total_length
            )));
        }
        if self.lane_width <= 0.0 {
            return Err(Error::Config("lane_width must be positive".into()));
        }
        if self.main_lane_count < 2 {
            return Err(Error::Config("main_lane_count must be at least 2".into()));
        }
        let [m0, m1] = self.merge_window;
        if m0 > m1 || m0 < 0.0 || m1 > self.total_length {
            return Err(Error::Config(format!(
                "merge_window [{m0}, {m1}] outside road span"
            )));
        }
        let [i0, i1] = self.init_area;
        if i0 >= i1 || i0 < 0.0 || i1 > self.total_length {
            return Err(Error::Config(format!(
                "init_area [{i0}, {i1}] outside road span"
            )));
        }
        // Spawning on a lane that is about to vanish is a setup mistake.
        if m1 > m0 && i0 < m1 && m0 < i1 {
            return Err(Error::Config(
                "init_area overlaps merge_window".into(),
            ));
        }
        Ok(())
    }

    pub fn has_ramp(&self) -> bool {
        self.merge_window[1] > self.merge_window[0]
    }
}

/// Immutable queryable geometry built from a [`MapSpec`].
#[derive(Debug, Clone)]
pub struct RoadGeometry {
    spec: MapSpec,
    /// Cumulative arc length at the start of each segment.
    seg_starts: Vec<f64>,
    /// Reference-line pose (x, y, heading) at the start of each segment.
    seg_poses: Vec<(f64, f64, f64)>,
}

impl RoadGeometry {
    pub fn build(spec: MapSpec) -> Result<Self> {
        spec.validate()?;
        let mut seg_starts = Vec::with_capacity(spec.segments.len());
        let mut seg_poses = Vec::with_capacity(spec.segments.len());
        let (mut s, mut x, mut y, mut h) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        for seg in &spec.segments {
            seg_starts.push(s);
            seg_poses.push((x, y, h));
            if seg.curvature.abs() < 1e-12 {
                x += seg.arc_length * h.cos();
                y += seg.arc_length * h.sin();
            } else {
                let k = seg.curvature;
                let h1 = h + k * seg.arc_length;
                x += (h1.sin() - h.sin()) / k;
                y += (h.cos() - h1.cos()) / k;
                h = h1;
            }
            s += seg.arc_length;
        }
        Ok(RoadGeometry {
            spec,
            seg_starts,
            seg_poses,
        })
    }

    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    pub fn total_length(&self) -> f64 {
        self.spec.total_length
    }

    pub fn lane_width(&self) -> f64 {
        self.spec.lane_width
    }

    /// Number of lanes at arc position s. The ramp lane (index
    /// main_lane_count + 1) exists up to the end of the merge window.
    pub fn lane_count_at(&self, s: f64) -> u32 {
        if self.spec.has_ramp() && s < self.spec.merge_window[1] {
            self.spec.main_lane_count + 1
        } else {
            self.spec.main_lane_count
        }
    }

    fn segment_index(&self, s: f64) -> usize {
        match self
            .seg_starts
            .binary_search_by(|start| start.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.spec.segments[self.segment_index(s)].curvature
    }

    /// Heading of the reference line at s.
    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_index(s);
        let (_, _, h) = self.seg_poses[i];
        h + self.spec.segments[i].curvature * (s - self.seg_starts[i])
    }

    /// Centerline pose of `lane` at arc position s, as (x, y, heading).
    /// Lane 1 is the leftmost lane; the reference line is the lane-1
    /// centerline and higher lanes sit to its right.
    pub fn centerline_pose(&self, lane: u32, s: f64) -> (f64, f64, f64) {
        let i = self.segment_index(s);
        let (x0, y0, h0) = self.seg_poses[i];
        let ds = s - self.seg_starts[i];
        let k = self.spec.segments[i].curvature;
        let (x, y, h) = if k.abs() < 1e-12 {
            (x0 + ds * h0.cos(), y0 + ds * h0.sin(), h0)
        } else {
            let h1 = h0 + k * ds;
            (
                x0 + (h1.sin() - h0.sin()) / k,
                y0 + (h0.cos() - h1.cos()) / k,
                h1,
            )
        };
        let offset = (lane as f64 - 1.0) * self.spec.lane_width;
        // Rightward normal is (sin h, -cos h).
        (x + offset * h.sin(), y - offset * h.cos(), h)
    }

    /// Lateral coordinate of a lane centerline, measured rightward from
    /// the lane-1 centerline.
    pub fn lane_center(&self, lane: u32) -> f64 {
        (lane as f64 - 1.0) * self.spec.lane_width
    }

    /// Nearest lane to a lateral coordinate, ties resolved to the lower index.
    pub fn nearest_lane(&self, lat: f64, s: f64) -> u32 {
        let count = self.lane_count_at(s);
        let mut best = 1u32;
        let mut best_d = f64::INFINITY;
        for lane in 1..=count {
            let d = (lat - self.lane_center(lane)).abs();
            if d < best_d {
                best_d = d;
                best = lane;
            }
        }
        best
    }
}
