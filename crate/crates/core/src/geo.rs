//! Geodetic points and great-circle distances.

use serde::{Deserialize, Serialize};

/// WGS84 mean earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> GeoPoint {
        GeoPoint { lat_deg, lon_deg }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat_deg) && (-180.0..=180.0).contains(&self.lon_deg)
    }
}

/// Haversine great-circle distance in kilometres.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat_deg.to_radians();
    let lat2 = b.lat_deg.to_radians();
    let dlat = (b.lat_deg - a.lat_deg).to_radians();
    let dlon = (b.lon_deg - a.lon_deg).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Linear interpolation between two points by fraction `f` in [0, 1].
/// Adequate at city scale where segments are short.
pub fn interpolate(a: GeoPoint, b: GeoPoint, f: f64) -> GeoPoint {
    GeoPoint {
        lat_deg: a.lat_deg + (b.lat_deg - a.lat_deg) * f,
        lon_deg: a.lon_deg + (b.lon_deg - a.lon_deg) * f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_for_identical_points() {
        let p = GeoPoint::new(53.55, 9.99);
        assert_eq!(great_circle_km(p, p), 0.0);
    }

    #[test]
    fn one_degree_latitude_is_about_111_km() {
        let a = GeoPoint::new(53.0, 10.0);
        let b = GeoPoint::new(54.0, 10.0);
        let d = great_circle_km(a, b);
        assert!((d - 111.2).abs() < 0.3, "got {d}");
    }

    #[test]
    fn symmetric() {
        let a = GeoPoint::new(53.55, 9.99);
        let b = GeoPoint::new(53.46, 9.97);
        assert_eq!(great_circle_km(a, b), great_circle_km(b, a));
    }
}
