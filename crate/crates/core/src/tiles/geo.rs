use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TILE_SIZE: u32 = 256;
/// WGS-84 semi-major axis, meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
pub const MAX_LATITUDE: f64 = 85.051_128_78;
pub const MIN_ZOOM: u8 = 1;
pub const MAX_ZOOM: u8 = 23;

/// Web-Mercator tile address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub x: u32,
    pub y: u32,
    pub zoom: u8,
}

impl TileCoord {
    pub fn new(x: u32, y: u32, zoom: u8) -> Result<Self> {
        if !(MIN_ZOOM..=MAX_ZOOM).contains(&zoom) {
            return Err(Error::arg(format!(
                "zoom {zoom} outside [{MIN_ZOOM}, {MAX_ZOOM}]"
            )));
        }
        let side = 1u32 << zoom;
        if x >= side || y >= side {
            return Err(Error::arg(format!(
                "tile ({x}, {y}) outside the {side}x{side} grid at zoom {zoom}"
            )));
        }
        Ok(TileCoord { x, y, zoom })
    }

    pub fn quadkey(&self) -> QuadKey {
        tile_to_quadkey(*self)
    }
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.zoom, self.x, self.y)
    }
}

/// Base-4 tile key, one digit per zoom level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuadKey(String);

impl QuadKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn zoom(&self) -> u8 {
        self.0.len() as u8
    }
}

impl fmt::Display for QuadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for QuadKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() || s.len() > MAX_ZOOM as usize {
            return Err(Error::Parse(format!(
                "quadkey must have 1..={MAX_ZOOM} digits, got {:?}",
                s
            )));
        }
        if let Some(bad) = s.chars().find(|c| !('0'..='3').contains(c)) {
            return Err(Error::Parse(format!(
                "invalid quadkey digit {bad:?} in {s:?}"
            )));
        }
        Ok(QuadKey(s.to_owned()))
    }
}

pub fn tile_to_quadkey(t: TileCoord) -> QuadKey {
    let key = (1..=t.zoom)
        .rev()
        .map(|i| {
            let mask = 1u32 << (i - 1);
            let mut digit = b'0';
            if t.x & mask != 0 {
                digit += 1;
            }
            if t.y & mask != 0 {
                digit += 2;
            }
            digit as char
        })
        .collect();
    QuadKey(key)
}

pub fn quadkey_to_tile(q: &QuadKey) -> TileCoord {
    let zoom = q.zoom();
    let (mut x, mut y) = (0u32, 0u32);
    for (digit, i) in q.0.bytes().zip((1..=zoom).rev()) {
        let mask = 1u32 << (i - 1);
        let d = digit - b'0';
        if d & 1 != 0 {
            x |= mask;
        }
        if d & 2 != 0 {
            y |= mask;
        }
    }
    TileCoord { x, y, zoom }
}

/// Map width and height in pixels at `zoom`.
pub fn map_size(zoom: u8) -> f64 {
    TILE_SIZE as f64 * 2f64.powi(zoom as i32)
}

pub fn clip_latitude(lat: f64) -> f64 {
    lat.clamp(-MAX_LATITUDE, MAX_LATITUDE)
}

/// Wraps a longitude into [-180, 180).
pub fn clip_longitude(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        lon
    } else {
        (lon + 180.0).rem_euclid(360.0) - 180.0
    }
}

/// Global pixel coordinates of a WGS-84 position, clamped to the map.
pub fn latlon_to_pixel_xy(lat: f64, lon: f64, zoom: u8) -> (f64, f64) {
    let lat = clip_latitude(lat);
    let lon = clip_longitude(lon);
    let size = map_size(zoom);
    let x = (lon + 180.0) / 360.0;
    let sin_lat = lat.to_radians().sin();
    let y = 0.5 - ((1.0 + sin_lat) / (1.0 - sin_lat)).ln() / (4.0 * PI);
    (
        (x * size).clamp(0.0, size - 1.0),
        (y * size).clamp(0.0, size - 1.0),
    )
}

/// Tile containing a global pixel, and the integer offset inside it.
pub fn pixel_to_tile(px: f64, py: f64, zoom: u8) -> (TileCoord, (u32, u32)) {
    let max = (1u64 << zoom) * TILE_SIZE as u64 - 1;
    let px = (px.max(0.0).floor() as u64).min(max);
    let py = (py.max(0.0).floor() as u64).min(max);
    let tile = TileCoord {
        x: (px / TILE_SIZE as u64) as u32,
        y: (py / TILE_SIZE as u64) as u32,
        zoom,
    };
    (
        tile,
        ((px % TILE_SIZE as u64) as u32, (py % TILE_SIZE as u64) as u32),
    )
}

/// Meters of ground per map pixel at a latitude and zoom. Zoom 0 is allowed
/// here even though tiles start at zoom 1.
pub fn ground_resolution(lat: f64, zoom: u8) -> f64 {
    clip_latitude(lat).to_radians().cos() * 2.0 * PI * EARTH_RADIUS_M / map_size(zoom)
}

/// Native pixel side of an `extent_m` square centered at `lat`.
pub fn patch_side_px(lat: f64, zoom: u8, extent_m: f64) -> u32 {
    (extent_m / ground_resolution(lat, zoom)).round().max(1.0) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_examples() {
        assert_eq!(latlon_to_pixel_xy(0.0, 0.0, 1), (256.0, 256.0));
        assert_eq!(latlon_to_pixel_xy(0.0, -180.0, 1), (0.0, 256.0));
        let (_, py) = latlon_to_pixel_xy(MAX_LATITUDE, 0.0, 1);
        assert!(py.abs() < 1e-6, "{py}");
        // Beyond the clip latitude clamps to the same row.
        assert_eq!(latlon_to_pixel_xy(89.0, 0.0, 1).1, py);
    }

    #[test]
    fn tile_examples() {
        assert_eq!(pixel_to_tile(256.0, 256.0, 2), (TileCoord { x: 1, y: 1, zoom: 2 }, (0, 0)));
        assert_eq!(pixel_to_tile(255.0, 0.0, 2), (TileCoord { x: 0, y: 0, zoom: 2 }, (255, 0)));
        assert_eq!(pixel_to_tile(600.0, 300.0, 3), (TileCoord { x: 2, y: 1, zoom: 3 }, (88, 44)));
    }

    #[test]
    fn quadkey_examples() {
        let qk = |x, y, z| tile_to_quadkey(TileCoord::new(x, y, z).unwrap()).to_string();
        assert_eq!(qk(0, 0, 1), "0");
        assert_eq!(qk(1, 1, 1), "3");
        assert_eq!(qk(3, 5, 3), "213");
        let back = |s: &str| quadkey_to_tile(&s.parse().unwrap());
        assert_eq!(back("0"), TileCoord { x: 0, y: 0, zoom: 1 });
        assert_eq!(back("213"), TileCoord { x: 3, y: 5, zoom: 3 });
    }

    #[test]
    fn quadkey_parse_errors() {
        assert!(matches!("214".parse::<QuadKey>(), Err(Error::Parse(_))));
        assert!("".parse::<QuadKey>().is_err());
    }

    #[test]
    fn tile_coord_validation() {
        assert!(TileCoord::new(2, 0, 1).is_err());
        assert!(TileCoord::new(0, 0, 0).is_err());
        assert!(TileCoord::new(0, 0, 24).is_err());
        assert!(TileCoord::new(7, 7, 3).is_ok());
    }

    #[test]
    fn ground_resolution_examples() {
        assert!((ground_resolution(0.0, 0) - 156_543.034).abs() < 1e-2);
        assert_eq!(ground_resolution(0.0, 1), ground_resolution(0.0, 0) / 2.0);
        let mid_lat = ground_resolution(35.595, 16);
        assert!((mid_lat - 1.942).abs() < 1e-3, "{mid_lat}");
        assert_eq!(patch_side_px(35.595, 16, 600.0), 309);
    }

    #[test]
    fn longitude_wraps() {
        assert_eq!(clip_longitude(180.0), -180.0);
        assert_eq!(clip_longitude(190.0), -170.0);
        assert_eq!(clip_longitude(-181.0), 179.0);
    }
}
