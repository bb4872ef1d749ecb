//! UTM coordinates and the affine pixel grid used by frames and patches.
//!
//! Row index grows with northing (down-track), column index grows with
//! easting (cross-track). Pixel `(r, c)` has its center at
//! `origin + (c·res, r·res)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Utm {
    pub easting: f64,
    pub northing: f64,
}

impl Utm {
    pub const fn new(easting: f64, northing: f64) -> Self {
        Self { easting, northing }
    }

    pub fn distance(&self, other: &Utm) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Utm) -> f64 {
        let de = self.easting - other.easting;
        let dn = self.northing - other.northing;
        de * de + dn * dn
    }

    pub fn offset(&self, de: f64, dn: f64) -> Utm {
        Utm::new(self.easting + de, self.northing + dn)
    }

    /// Lexicographic order (easting, then northing); used for deterministic tie breaks.
    pub fn lex_cmp(&self, other: &Utm) -> std::cmp::Ordering {
        self.easting
            .total_cmp(&other.easting)
            .then(self.northing.total_cmp(&other.northing))
    }
}

/// Axis-aligned rectangle in UTM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Utm,
    pub max: Utm,
}

impl Bounds {
    pub fn contains(&self, p: &Utm) -> bool {
        p.easting >= self.min.easting
            && p.easting <= self.max.easting
            && p.northing >= self.min.northing
            && p.northing <= self.max.northing
    }

    pub fn width(&self) -> f64 {
        self.max.easting - self.min.easting
    }

    pub fn length(&self) -> f64 {
        self.max.northing - self.min.northing
    }

    pub fn area(&self) -> f64 {
        self.width() * self.length()
    }
}

/// Affine map between pixel indices and UTM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// UTM of the center of pixel (0, 0).
    pub origin: Utm,
    pub resolution_m: f64,
}

impl GridGeometry {
    pub fn pixel_to_utm(&self, row: f64, col: f64) -> Utm {
        Utm::new(
            self.origin.easting + col * self.resolution_m,
            self.origin.northing + row * self.resolution_m,
        )
    }

    /// Fractional `(row, col)` of a UTM location.
    pub fn utm_to_pixel(&self, p: &Utm) -> (f64, f64) {
        (
            (p.northing - self.origin.northing) / self.resolution_m,
            (p.easting - self.origin.easting) / self.resolution_m,
        )
    }

    /// Nearest pixel index, or `None` when it falls outside `rows × cols`.
    pub fn nearest_pixel(&self, p: &Utm, rows: usize, cols: usize) -> Option<(usize, usize)> {
        let (r, c) = self.utm_to_pixel(p);
        let (r, c) = (r.round(), c.round());
        if r < 0.0 || c < 0.0 || r >= rows as f64 || c >= cols as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pixel_utm_round_trip_is_sub_nanometre(
            r in 0.0f64..30000.0,
            c in 0.0f64..1000.0,
            e0 in 3.0e5f64..7.0e5,
            n0 in 3.0e6f64..4.5e6,
        ) {
            let g = GridGeometry { origin: Utm::new(e0, n0), resolution_m: 0.03 };
            let u = g.pixel_to_utm(r, c);
            let (r2, c2) = g.utm_to_pixel(&u);
            prop_assert!((r2 - r).abs() * g.resolution_m < 1e-9);
            prop_assert!((c2 - c).abs() * g.resolution_m < 1e-9);
        }
    }

    #[test]
    fn nearest_pixel_rejects_outside() {
        let g = GridGeometry { origin: Utm::new(0.0, 0.0), resolution_m: 1.0 };
        assert_eq!(g.nearest_pixel(&Utm::new(2.4, 1.6), 3, 3), Some((2, 2)));
        assert_eq!(g.nearest_pixel(&Utm::new(-0.6, 0.0), 3, 3), None);
        assert_eq!(g.nearest_pixel(&Utm::new(0.0, 2.6), 3, 3), None);
    }
}
