//! Synthetic coordinate → address lookup on a 0.01° grid.

use crate::domain::GeoPoint;

const CELL_DEG: f64 = 0.01;
const WARDS: i64 = 60;
const BLOCKS: i64 = 40;

pub fn address_for(p: &GeoPoint) -> String {
    let lat_cell = (p.lat / CELL_DEG).floor() as i64;
    let lon_cell = (p.lon / CELL_DEG).floor() as i64;
    let ward = lat_cell.rem_euclid(WARDS) + 1;
    let block = lon_cell.rem_euclid(BLOCKS) + 1;
    format!("Ward W-{ward}, Block {block}")
}
