//! Fidelity metrics: uniform histograms, Jensen-Shannon divergence and
//! the behavior distributions (velocity, lane-change TTC) they compare.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::TrajectoryLog;
use crate::world::Role;

/// Additive smoothing applied when normalizing counts to probabilities.
pub const SMOOTHING_EPS: f64 = 1e-9;

/// Histogram over uniform bins on [lo, hi); samples outside are clamped
/// into the boundary bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(bins > 0 && hi > lo);
        Histogram {
            lo,
            hi,
            bins,
            counts: vec![0; bins],
        }
    }

    /// Velocity binning: 0-40 m/s, 1 m/s wide.
    pub fn velocity() -> Self {
        Histogram::new(0.0, 40.0, 40)
    }

    /// TTC binning: 0-20 s, 0.5 s wide.
    pub fn ttc() -> Self {
        Histogram::new(0.0, 20.0, 40)
    }

    pub fn add(&mut self, x: f64) {
        let width = (self.hi - self.lo) / self.bins as f64;
        let idx = ((x - self.lo) / width).floor() as i64;
        let idx = idx.clamp(0, self.bins as i64 - 1) as usize;
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Smoothed probability vector; sums to 1 within 1e-12.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total() as f64;
        let denom = total + SMOOTHING_EPS * self.bins as f64;
        self.counts
            .iter()
            .map(|&c| (c as f64 + SMOOTHING_EPS) / denom)
            .collect()
    }

    fn same_edges(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.bins == other.bins
    }
}

/// Jensen-Shannon divergence with base-2 logs:
/// JS = KL(P||M)/2 + KL(Q||M)/2 with M = (P+Q)/2; bounded by [0, 1].
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    if !p.same_edges(q) {
        return Err(Error::Contract(
            "histograms have mismatched bin edges".into(),
        ));
    }
    if p.total() == 0 || q.total() == 0 {
        return Err(Error::Contract("empty histogram in JS divergence".into()));
    }
    let pp = p.probabilities();
    let qq = q.probabilities();
    let mut js = 0.0;
    for (a, b) in pp.iter().zip(&qq) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            js += 0.5 * a * (a / m).log2();
        }
        if *b > 0.0 {
            js += 0.5 * b * (b / m).log2();
        }
    }
    Ok(js.max(0.0))
}

/// The two behavior distributions of the fidelity comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDistributions {
    pub velocity: Histogram,
    pub lane_change_ttc: Histogram,
}

/// Front-gap TTC of `ego_idx` against the nearest same-lane leader;
/// None when nothing ahead is being approached.
fn front_gap_ttc(
    vehicles: &[(u32, u32, f64, f64, f64)], // (id, lane, front, rear, v)
    ego: usize,
) -> Option<f64> {
    let (id, lane, front, _, v) = vehicles[ego];
    let leader = vehicles
        .iter()
        .filter(|(vid, vlane, _, vrear, _)| *vid != id && *vlane == lane && *vrear >= front)
        .min_by(|a, b| a.3.total_cmp(&b.3))?;
    let gap = leader.3 - front;
    let closing = v - leader.4;
    if closing > 0.0 {
        Some(gap / closing)
    } else {
        None
    }
}

/// Build behavior distributions from episode logs: BV velocity sampled
/// per vehicle per step, and front-gap TTC at each step where a BV's
/// lane assignment changes (the observable lane-change onset).
pub fn behavior_distributions(logs: &[TrajectoryLog]) -> Result<BehaviorDistributions> {
    let mut velocity = Histogram::velocity();
    let mut ttc = Histogram::ttc();
    for log in logs {
        for pair in log.states.windows(2) {
            let rows: Vec<(u32, u32, f64, f64, f64)> = pair[0]
                .vehicles
                .iter()
                .map(|v| (v.id, v.lane, v.front(), v.rear(), v.v_s))
                .collect();
            for (i, v) in pair[0].vehicles.iter().enumerate() {
                if v.role != Role::Bv {
                    continue;
                }
                velocity.add(v.v_s);
                let after = pair[1].vehicle(v.id);
                if let Some(after) = after {
                    if after.lane != v.lane {
                        if let Some(t) = front_gap_ttc(&rows, i) {
                            ttc.add(t);
                        }
                    }
                }
            }
        }
    }
    if ttc.total() == 0 {
        return Err(Error::Contract(
            "no lane-change TTC samples in the corpus".into(),
        ));
    }
    Ok(BehaviorDistributions {
        velocity,
        lane_change_ttc: ttc,
    })
}

/// Build the same distributions from archived scenario windows; the TTC
/// histogram may be empty when no window contains a lane change.
pub fn record_distributions(records: &[crate::scenarios::ScenarioRecord]) -> BehaviorDistributions {
    let mut velocity = Histogram::velocity();
    let mut ttc = Histogram::ttc();
    for record in records {
        let states: Vec<_> = record.steps.iter().filter_map(|s| s.state.as_ref()).collect();
        for pair in states.windows(2) {
            let rows: Vec<(u32, u32, f64, f64, f64)> = pair[0]
                .vehicles
                .iter()
                .map(|v| (v.id, v.lane, v.front(), v.rear(), v.v_s))
                .collect();
            for (i, v) in pair[0].vehicles.iter().enumerate() {
                if v.role != Role::Bv {
                    continue;
                }
                velocity.add(v.v_s);
                if let Some(after) = pair[1].vehicle(v.id) {
                    if after.lane != v.lane {
                        if let Some(t) = front_gap_ttc(&rows, i) {
                            ttc.add(t);
                        }
                    }
                }
            }
        }
    }
    BehaviorDistributions {
        velocity,
        lane_change_ttc: ttc,
    }
}

/// Assumed vehicle length when the trajectory schema carries none.
const CSV_VEHICLE_LENGTH: f64 = 4.7;

/// Read naturalistic trajectories from a HighD-schema CSV (columns:
/// frame, id, x, y, xVelocity, yVelocity, xAcceleration, laneId) and
/// build the same two distributions.
pub fn behavior_distributions_from_csv(path: &Path) -> Result<BehaviorDistributions> {
    #[derive(Debug, Deserialize)]
    struct Row {
        frame: u64,
        id: u32,
        x: f64,
        #[allow(dead_code)]
        y: f64,
        #[serde(rename = "xVelocity")]
        x_velocity: f64,
        #[serde(rename = "yVelocity")]
        y_velocity: f64,
        #[serde(rename = "xAcceleration")]
        #[allow(dead_code)]
        x_acceleration: f64,
        #[serde(rename = "laneId")]
        lane_id: u32,
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("opening {}: {e}", path.display())))?;
    let mut frames: std::collections::BTreeMap<u64, Vec<Row>> = std::collections::BTreeMap::new();
    for row in reader.deserialize() {
        let row: Row = row.map_err(|e| Error::Parse(format!("csv row: {e}")))?;
        frames.entry(row.frame).or_default().push(row);
    }
    let mut velocity = Histogram::velocity();
    let mut ttc = Histogram::ttc();
    let frame_list: Vec<&Vec<Row>> = frames.values().collect();
    for (fi, frame) in frame_list.iter().enumerate() {
        let rows: Vec<(u32, u32, f64, f64, f64)> = frame
            .iter()
            .map(|r| {
                let speed = (r.x_velocity * r.x_velocity + r.y_velocity * r.y_velocity).sqrt();
                (
                    r.id,
                    r.lane_id,
                    r.x + CSV_VEHICLE_LENGTH / 2.0,
                    r.x - CSV_VEHICLE_LENGTH / 2.0,
                    speed,
                )
            })
            .collect();
        for (i, r) in frame.iter().enumerate() {
            let speed = rows[i].4;
            velocity.add(speed);
            if let Some(next_frame) = frame_list.get(fi + 1) {
                if let Some(next) = next_frame.iter().find(|n| n.id == r.id) {
                    if next.lane_id != r.lane_id {
                        if let Some(t) = front_gap_ttc(&rows, i) {
                            ttc.add(t);
                        }
                    }
                }
            }
        }
    }
    if ttc.total() == 0 {
        return Err(Error::Contract(
            "no lane-change TTC samples in the reference data".into(),
        ));
    }
    Ok(BehaviorDistributions {
        velocity,
        lane_change_ttc: ttc,
    })
}

/// Minimal SVG bar chart of a histogram, for report plots.
pub fn histogram_svg(h: &Histogram, title: &str) -> String {
    let probs = h.probabilities();
    let max = probs.iter().cloned().fold(1e-12, f64::max);
    let (w, height, pad) = (400.0, 200.0, 20.0);
    let bar_w = (w - 2.0 * pad) / h.bins as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{}\">\n<text x=\"{pad}\" y=\"14\">{title}</text>\n",
        height + 2.0 * pad
    );
    for (i, p) in probs.iter().enumerate() {
        let bh = p / max * height;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>\n",
            pad + i as f64 * bar_w,
            pad + height - bh,
            bar_w * 0.9,
            bh
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probabilities_sum_to_one() {
        let mut h = Histogram::velocity();
        for i in 0..100 {
            h.add(i as f64 * 0.4);
        }
        let p = h.probabilities();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn js_identical_is_zero_and_disjoint_is_one() {
        let mut p = Histogram::new(0.0, 2.0, 2);
        let mut q = Histogram::new(0.0, 2.0, 2);
        for _ in 0..100 {
            p.add(0.5);
            q.add(0.5);
        }
        assert!(js_divergence(&p, &q).unwrap() < 1e-9);

        let mut p = Histogram::new(0.0, 2.0, 2);
        let mut q = Histogram::new(0.0, 2.0, 2);
        for _ in 0..1000 {
            p.add(0.5);
            q.add(1.5);
        }
        let js = js_divergence(&p, &q).unwrap();
        assert!((js - 1.0).abs() < 1e-6, "js {js}");
    }

    #[test]
    fn js_matches_hand_implementation_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let bins = rng.gen_range(2..30);
            let mut p = Histogram::new(0.0, 1.0, bins);
            let mut q = Histogram::new(0.0, 1.0, bins);
            for _ in 0..rng.gen_range(1..200) {
                p.add(rng.gen_range(0.0..1.0));
            }
            for _ in 0..rng.gen_range(1..200) {
                q.add(rng.gen_range(0.0..1.0));
            }
            let js = js_divergence(&p, &q).unwrap();
            // Direct definition-level evaluation.
            let (pp, qq) = (p.probabilities(), q.probabilities());
            let kl = |a: &[f64], m: &[f64]| -> f64 {
                a.iter()
                    .zip(m)
                    .map(|(x, y)| if *x > 0.0 { x * (x / y).log2() } else { 0.0 })
                    .sum()
            };
            let m: Vec<f64> = pp.iter().zip(&qq).map(|(a, b)| 0.5 * (a + b)).collect();
            let expect = 0.5 * kl(&pp, &m) + 0.5 * kl(&qq, &m);
            assert!((js - expect).abs() < 1e-12);
            // Symmetry and bounds.
            assert!((js - js_divergence(&q, &p).unwrap()).abs() < 1e-15);
            assert!((0.0..=1.0 + 1e-12).contains(&js));
        }
    }

    #[test]
    fn js_rejects_mismatched_edges() {
        let p = Histogram::new(0.0, 1.0, 4);
        let q = Histogram::new(0.0, 2.0, 4);
        assert!(js_divergence(&p, &q).is_err());
    }

    #[test]
    fn csv_reader_counts_lane_change_ttc() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.csv");
        // Vehicle 2 approaches vehicle 1 and changes lane at frame 2.
        let csv = "\
frame,id,x,y,xVelocity,yVelocity,xAcceleration,laneId
1,1,100.0,0.0,20.0,0.0,0.0,2
1,2,60.0,0.0,30.0,0.0,0.0,2
2,1,102.0,0.0,20.0,0.0,0.0,2
2,2,63.0,0.0,30.0,0.0,0.0,2
3,1,104.0,0.0,20.0,0.0,0.0,2
3,2,66.0,0.0,30.0,0.0,0.0,3
";
        std::fs::write(&path, csv).unwrap();
        let dist = behavior_distributions_from_csv(&path).unwrap();
        assert_eq!(dist.velocity.total(), 6);
        assert_eq!(dist.lane_change_ttc.total(), 1);
        // Gap = (102-2.35) - (63+2.35) = 34.3 m, closing 10 m/s -> 3.43 s,
        // bin index floor(3.43/0.5) = 6.
        assert_eq!(dist.lane_change_ttc.counts[6], 1);
    }

    #[test]
    fn constant_speed_corpus_is_a_spike() {
        let mut h = Histogram::velocity();
        for _ in 0..500 {
            h.add(23.0);
        }
        assert_eq!(h.counts[23], 500);
        assert_eq!(h.total(), 500);
    }
}
