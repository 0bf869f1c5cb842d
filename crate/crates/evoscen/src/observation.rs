//! Ego-centric 25x5x5 layered grid observation and the adversarial
//! modality marker layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{adversarial_area_contains, Role, RoadGeometry, VehicleState, WorldState};

pub const ROWS: usize = 25;
pub const COLS: usize = 5;
pub const LAYERS: usize = 5;
pub const GRID_LEN: usize = ROWS * COLS * LAYERS;

/// Row the ego occupies (0-based, counted from the rear of the window).
pub const EGO_ROW: i64 = 4;
/// Longitudinal cell size, m.
pub const CELL_LEN: f64 = 5.0;
/// Longitudinal speed normalization (120 km/h).
pub const V_LONG_NORM: f64 = 120.0 / 3.6;
/// Lateral speed normalization.
pub const V_LAT_NORM: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Occupancy (0/1).
    P = 0,
    /// Relative longitudinal velocity, normalized.
    DVs = 1,
    /// Relative lateral velocity, normalized.
    DVt = 2,
    /// Relative yaw, rad.
    DH = 3,
    /// Adversarial determination factor (0/1, SV cells only).
    M = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    NonAdversarial,
    Adversarial,
}

/// The 25x5x5 observation fed to policies, row 0 rearmost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationGrid {
    values: Vec<f64>,
}

impl Default for ObservationGrid {
    fn default() -> Self {
        ObservationGrid {
            values: vec![0.0; GRID_LEN],
        }
    }
}

impl ObservationGrid {
    #[inline]
    fn idx(row: usize, col: usize, layer: Layer) -> usize {
        (row * COLS + col) * LAYERS + layer as usize
    }

    pub fn get(&self, row: usize, col: usize, layer: Layer) -> f64 {
        self.values[Self::idx(row, col, layer)]
    }

    pub fn set(&mut self, row: usize, col: usize, layer: Layer, value: f64) {
        self.values[Self::idx(row, col, layer)] = value;
    }

    /// Flattened view in (row, col, layer) order; the policy input.
    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    /// Plain-text matrix dump of one layer, front row first.
    pub fn dump_layer(&self, layer: Layer) -> String {
        let mut out = String::new();
        for row in (0..ROWS).rev() {
            for col in 0..COLS {
                if col > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{:7.3}", self.get(row, col, layer)));
            }
            out.push('\n');
        }
        out
    }
}

/// Row index of a longitudinal offset's center: 4 + floor(ds / 5).
fn center_row(ds: f64) -> i64 {
    EGO_ROW + (ds / CELL_LEN).floor() as i64
}

/// Rows whose [5(r-4), 5(r-3)) bin overlaps the body span [ds-l/2, ds+l/2].
fn row_span(ds: f64, length: f64) -> impl Iterator<Item = usize> {
    let lo = ds - length / 2.0;
    let hi = ds + length / 2.0;
    let first = (EGO_ROW + (lo / CELL_LEN).floor() as i64).max(0);
    let last = (EGO_ROW + (hi / CELL_LEN).floor() as i64).min(ROWS as i64 - 1);
    (first..=last)
        .filter(move |&r| {
            let bin_lo = CELL_LEN * (r - EGO_ROW) as f64;
            let bin_hi = bin_lo + CELL_LEN;
            lo < bin_hi && hi > bin_lo
        })
        .map(|r| r as usize)
}

/// Encode the ego-centric grid for one vehicle. A vehicle is included iff
/// its center row falls inside the window; it then marks every row its
/// body span overlaps, in its lane's column. When two vehicles share a
/// cell the one with the lower id supplies the relative layers.
pub fn encode(world: &WorldState, geo: &RoadGeometry, ego_id: u32) -> Result<ObservationGrid> {
    let ego = world
        .vehicle(ego_id)
        .ok_or_else(|| Error::Contract(format!("unknown ego id {ego_id}")))?;
    let mut grid = ObservationGrid::default();
    let _ = geo; // lane assignment already lives on the vehicle states

    let mut by_id: Vec<&VehicleState> = world.vehicles.iter().filter(|v| v.id != ego_id).collect();
    by_id.sort_by_key(|v| v.id);

    for other in &by_id {
        let col = 2 + other.lane as i64 - ego.lane as i64;
        if !(0..COLS as i64).contains(&col) {
            continue;
        }
        let ds = other.s - ego.s;
        if !(0..ROWS as i64).contains(&center_row(ds)) {
            continue;
        }
        let col = col as usize;
        for row in row_span(ds, other.length) {
            if grid.get(row, col, Layer::P) != 0.0 {
                continue;
            }
            grid.set(row, col, Layer::P, 1.0);
            grid.set(row, col, Layer::DVs, (other.v_s - ego.v_s) / V_LONG_NORM);
            grid.set(row, col, Layer::DVt, (other.v_t - ego.v_t) / V_LAT_NORM);
            grid.set(row, col, Layer::DH, other.heading_err - ego.heading_err);
        }
    }

    // M layer: the SV's cells, only while the ego BV is inside the
    // adversarial driving area. The area reaches 22.5 m behind the ego but
    // the window only 20 m, so an in-area SV just off the rear edge is
    // clamped onto the nearest window row to keep the marker live.
    if ego.role == Role::Bv {
        if let Some(sv) = world.sv() {
            if adversarial_area_contains(ego, sv) {
                let col = (2 + sv.lane as i64 - ego.lane as i64) as usize;
                let ds = sv.s - ego.s;
                let rows: Vec<usize> = row_span(ds, sv.length).collect();
                if rows.is_empty() {
                    let row = center_row(ds).clamp(0, ROWS as i64 - 1) as usize;
                    grid.set(row, col, Layer::M, 1.0);
                } else {
                    for row in rows {
                        grid.set(row, col, Layer::M, 1.0);
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Adversarial iff any M cell is set.
pub fn modality_of(grid: &ObservationGrid) -> Modality {
    for row in 0..ROWS {
        for col in 0..COLS {
            if grid.get(row, col, Layer::M) != 0.0 {
                return Modality::Adversarial;
            }
        }
    }
    Modality::NonAdversarial
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{MapSpec, Role, VehicleState, WorldState};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geo() -> RoadGeometry {
        RoadGeometry::build(MapSpec::default_map()).unwrap()
    }

    fn vehicle(id: u32, role: Role, lane: u32, s: f64, v_s: f64) -> VehicleState {
        VehicleState {
            id,
            role,
            lane,
            s,
            d: 0.0,
            heading_err: 0.0,
            v_s,
            v_t: 0.0,
            a: 0.0,
            length: 4.7,
            width: 1.9,
            v_max: 33.333,
        }
    }

    fn world_of(vehicles: Vec<VehicleState>) -> WorldState {
        WorldState {
            t: 0.0,
            step_index: 0,
            vehicles,
            rng_seed: 0,
            events: Vec::new(),
        }
    }

    /// Independent per-cell scan used as the encode oracle.
    pub(crate) fn encode_oracle(
        world: &WorldState,
        ego_id: u32,
    ) -> ObservationGrid {
        let ego = world.vehicle(ego_id).unwrap();
        let mut grid = ObservationGrid::default();
        let sv = world.sv();
        for row in 0..ROWS {
            for col in 0..COLS {
                let lane = ego.lane as i64 + col as i64 - 2;
                let bin_lo = CELL_LEN * (row as i64 - EGO_ROW) as f64;
                let bin_hi = bin_lo + CELL_LEN;
                let mut occupant: Option<&VehicleState> = None;
                for v in world.vehicles.iter().filter(|v| v.id != ego_id) {
                    if v.lane as i64 != lane {
                        continue;
                    }
                    let ds = v.s - ego.s;
                    let cr = EGO_ROW + (ds / CELL_LEN).floor() as i64;
                    if !(0..ROWS as i64).contains(&cr) {
                        continue;
                    }
                    let lo = ds - v.length / 2.0;
                    let hi = ds + v.length / 2.0;
                    if lo < bin_hi && hi > bin_lo {
                        match occupant {
                            Some(o) if o.id < v.id => {}
                            _ => occupant = Some(v),
                        }
                    }
                }
                if let Some(v) = occupant {
                    grid.set(row, col, Layer::P, 1.0);
                    grid.set(row, col, Layer::DVs, (v.v_s - ego.v_s) / V_LONG_NORM);
                    grid.set(row, col, Layer::DVt, (v.v_t - ego.v_t) / V_LAT_NORM);
                    grid.set(row, col, Layer::DH, v.heading_err - ego.heading_err);
                }
                if let (Role::Bv, Some(sv)) = (ego.role, sv) {
                    if adversarial_area_contains(ego, sv) && sv.lane as i64 == lane {
                        let ds = sv.s - ego.s;
                        let lo = ds - sv.length / 2.0;
                        let hi = ds + sv.length / 2.0;
                        let window_lo = -CELL_LEN * EGO_ROW as f64;
                        if lo < bin_hi && hi > bin_lo {
                            grid.set(row, col, Layer::M, 1.0);
                        } else if hi <= window_lo {
                            // SV fully behind the window: marker clamps to
                            // the nearest in-window row.
                            let cr = EGO_ROW + (ds / CELL_LEN).floor() as i64;
                            if row as i64 == cr.clamp(0, ROWS as i64 - 1) {
                                grid.set(row, col, Layer::M, 1.0);
                            }
                        }
                    }
                }
            }
        }
        grid
    }

    pub(crate) fn random_world(rng: &mut ChaCha8Rng, max_vehicles: usize) -> WorldState {
        let n = rng.gen_range(2..=max_vehicles);
        let sv_idx = rng.gen_range(0..n);
        let vehicles = (0..n)
            .map(|i| {
                let mut v = vehicle(
                    i as u32,
                    if i == sv_idx { Role::Sv } else { Role::Bv },
                    rng.gen_range(1..=5),
                    800.0 + rng.gen_range(-150.0..150.0),
                    rng.gen_range(0.0..33.0),
                );
                v.v_t = rng.gen_range(-3.0..3.0);
                v.heading_err = rng.gen_range(-0.2..0.2);
                v
            })
            .collect();
        world_of(vehicles)
    }

    #[test]
    fn empty_road_all_zero() {
        let geo = geo();
        let w = world_of(vec![vehicle(0, Role::Bv, 3, 1000.0, 20.0)]);
        let grid = encode(&w, &geo, 0).unwrap();
        assert!(grid.flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn body_span_marks_two_rows() {
        // BV 10 m ahead, 4.7 m long -> rows 5 and 6 of column 2.
        let geo = geo();
        let w = world_of(vec![
            vehicle(0, Role::Bv, 3, 1000.0, 20.0),
            vehicle(1, Role::Bv, 3, 1010.0, 25.0),
        ]);
        let grid = encode(&w, &geo, 0).unwrap();
        for row in 0..ROWS {
            for col in 0..COLS {
                let expect = if (row == 5 || row == 6) && col == 2 { 1.0 } else { 0.0 };
                assert_eq!(grid.get(row, col, Layer::P), expect, "row {row} col {col}");
            }
        }
        let dvs = grid.get(5, 2, Layer::DVs);
        assert!((dvs - 5.0 / V_LONG_NORM).abs() < 1e-12);
    }

    #[test]
    fn marker_follows_adversarial_area() {
        let geo = geo();
        // Ego 10 m behind SV, adjacent lane: inside the area, M set on SV cells.
        let w = world_of(vec![
            vehicle(0, Role::Bv, 2, 1000.0, 20.0),
            vehicle(1, Role::Sv, 3, 1010.0, 20.0),
        ]);
        let grid = encode(&w, &geo, 0).unwrap();
        assert_eq!(grid.get(5, 3, Layer::M), 1.0);
        assert_eq!(grid.get(6, 3, Layer::M), 1.0);
        assert_eq!(modality_of(&grid), Modality::Adversarial);

        // Same geometry 60 m out: all M zero.
        let w = world_of(vec![
            vehicle(0, Role::Bv, 2, 1000.0, 20.0),
            vehicle(1, Role::Sv, 3, 1060.0, 20.0),
        ]);
        let grid = encode(&w, &geo, 0).unwrap();
        assert_eq!(modality_of(&grid), Modality::NonAdversarial);
        // P is set for the SV but P alone does not flip the modality.
        assert_eq!(grid.get(15, 3, Layer::P), 1.0);
    }

    #[test]
    fn unknown_ego_errors() {
        let geo = geo();
        let w = world_of(vec![vehicle(0, Role::Bv, 3, 1000.0, 20.0)]);
        assert!(encode(&w, &geo, 99).is_err());
    }

    #[test]
    fn translation_invariance() {
        let geo = geo();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let w = random_world(&mut rng, 10);
            let ego = w.vehicles[0].id;
            let g1 = encode(&w, &geo, ego).unwrap();
            let mut shifted = w.clone();
            for v in &mut shifted.vehicles {
                v.s += 137.0;
            }
            let g2 = encode(&shifted, &geo, ego).unwrap();
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn matches_per_cell_oracle() {
        let geo = geo();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let w = random_world(&mut rng, 16);
            for v in &w.vehicles {
                let got = encode(&w, &geo, v.id).unwrap();
                let want = encode_oracle(&w, v.id);
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn modality_iff_area_membership() {
        let geo = geo();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let w = random_world(&mut rng, 16);
            let sv = w.sv().copied().unwrap();
            for v in w.vehicles.iter().filter(|v| v.role == Role::Bv) {
                let grid = encode(&w, &geo, v.id).unwrap();
                let inside = adversarial_area_contains(v, &sv);
                // Modality can only fire when the SV is also visible in the
                // window, which the 22.5 m / 2-lane area guarantees.
                assert_eq!(
                    modality_of(&grid) == Modality::Adversarial,
                    inside,
                    "ds {} dlane {}",
                    v.s - sv.s,
                    v.lane as i64 - sv.lane as i64
                );
            }
        }
    }

    #[test]
    fn sparsity_nonzero_layers_bounded_by_occupancy() {
        let geo = geo();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let w = random_world(&mut rng, 16);
            let grid = encode(&w, &geo, w.vehicles[0].id).unwrap();
            let mut p_cells = 0;
            let mut nonzero_other = 0;
            for row in 0..ROWS {
                for col in 0..COLS {
                    if grid.get(row, col, Layer::P) == 1.0 {
                        p_cells += 1;
                    }
                    let any = [Layer::DVs, Layer::DVt, Layer::DH]
                        .iter()
                        .any(|&l| grid.get(row, col, l) != 0.0);
                    if any {
                        nonzero_other += 1;
                        assert_eq!(grid.get(row, col, Layer::P), 1.0);
                    }
                }
            }
            assert!(nonzero_other <= p_cells);
        }
    }
}
