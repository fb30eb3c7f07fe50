//! Parametric Fin Ray outline.
//!
//! Frame: the base edge lies on `x = 0` for `y` in `[0, L]`, the front (flex)
//! wall runs along `y = 0` out to `x = H`, the tip segment of length `L_tip`
//! leaves `(H, 0)` at `L_angle` above the front wall, and the back wall joins
//! the tip back to `(0, L)`. Walls are offset inwards by their thickness; the
//! base plate and the tip cap use `t_rib`. Ribs are strips perpendicular to
//! the front wall with centres evenly spaced across the void.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::polygon::{bounds, clip_halfplane, polygon_area};
use super::{Domain2D, GeometryError, Point2, Polygon};

const MIN_VOID_AREA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinRayParams {
    #[serde(rename = "H")]
    pub height: f64,
    #[serde(rename = "L")]
    pub base_length: f64,
    /// Out-of-plane width; does not enter the 2D outline.
    #[serde(rename = "W")]
    pub width: f64,
    /// Degrees.
    #[serde(rename = "L_angle")]
    pub tip_angle: f64,
    #[serde(rename = "L_tip")]
    pub tip_length: f64,
    #[serde(rename = "N")]
    pub ribs: u32,
    pub t_rib: f64,
    pub t_flex: f64,
    pub t_back: f64,
}

impl Default for FinRayParams {
    fn default() -> Self {
        Self {
            height: 90.0,
            base_length: 30.0,
            width: 20.0,
            tip_angle: 20.0,
            tip_length: 20.0,
            ribs: 4,
            t_rib: 2.0,
            t_flex: 2.0,
            t_back: 2.0,
        }
    }
}

impl FinRayParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let named = [
            ("H", self.height),
            ("L", self.base_length),
            ("W", self.width),
            ("L_angle", self.tip_angle),
            ("L_tip", self.tip_length),
            ("t_rib", self.t_rib),
            ("t_flex", self.t_flex),
            ("t_back", self.t_back),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tip_angle >= 90.0 {
            return Err(GeometryError::InvalidParams(format!(
                "L_angle must be below 90 degrees, got {}",
                self.tip_angle
            )));
        }
        Ok(())
    }

    /// Far end of the tip segment.
    pub fn tip_point(&self) -> Point2 {
        let a = self.tip_angle.to_radians();
        Point2::new(self.height - self.tip_length * a.cos(), self.tip_length * a.sin())
    }

    /// Outer outline, counter-clockwise from the origin.
    pub fn outline(&self) -> Polygon {
        vec![Point2::new(0.0, 0.0), Point2::new(self.height, 0.0), self.tip_point(), Point2::new(0.0, self.base_length)]
    }
}

/// Builds the Fin Ray domain; `N` ribs leave `N + 1` holes.
pub fn build_finray(params: &FinRayParams) -> Result<Domain2D, GeometryError> {
    params.validate()?;
    let outer = params.outline();
    let tip = params.tip_point();
    if tip.x <= 0.0 {
        return Err(GeometryError::InvalidParams(
            "tip segment reaches past the base (L_tip * cos(L_angle) >= H)".into(),
        ));
    }
    for i in 0..4 {
        let (a, b, c) = (outer[i], outer[(i + 1) % 4], outer[(i + 2) % 4]);
        if (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x) <= 0.0 {
            return Err(GeometryError::InvalidParams(
                "outline is not convex: tip point lies above the base-to-tip line".into(),
            ));
        }
    }

    // Wall thickness per outline edge, in outline order: front, tip cap, back, base plate.
    let thickness = [params.t_flex, params.t_rib, params.t_back, params.t_rib];
    let mut void = outer.clone();
    for (i, &t) in thickness.iter().enumerate() {
        let (a, b) = (outer[i], outer[(i + 1) % 4]);
        let len = a.dist(b);
        let inward = (-(b.y - a.y) / len, (b.x - a.x) / len);
        let n = (-inward.0, -inward.1);
        void = clip_halfplane(&void, n, n.0 * a.x + n.1 * a.y - t);
        if void.len() < 3 {
            break;
        }
    }
    if void.len() < 3 || polygon_area(&void) < MIN_VOID_AREA {
        return Err(GeometryError::InvalidParams(
            "walls overlap: t_flex, t_back and t_rib leave no interior void".into(),
        ));
    }

    let (lo, hi) = bounds(&void);
    let n = params.ribs as usize;
    let centers: Vec<f64> = (1..=n).map(|i| lo.x + (hi.x - lo.x) * i as f64 / (n + 1) as f64).collect();
    let half = 0.5 * params.t_rib;
    let mut holes = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut hole = void.clone();
        if k > 0 {
            hole = clip_halfplane(&hole, (-1.0, 0.0), -(centers[k - 1] + half));
        }
        if k < n {
            hole = clip_halfplane(&hole, (1.0, 0.0), centers[k] - half);
        }
        if hole.len() < 3 || polygon_area(&hole) < MIN_VOID_AREA {
            return Err(GeometryError::InvalidParams(format!(
                "ribs too thick or too many: void {k} between ribs is empty"
            )));
        }
        holes.push(hole);
    }

    let base = Point2::new(0.0, params.base_length);
    let edges = BTreeMap::from([
        ("base".to_string(), vec![Point2::new(0.0, 0.0), base]),
        ("front".to_string(), vec![Point2::new(0.0, 0.0), Point2::new(params.height, 0.0)]),
        ("tip".to_string(), vec![Point2::new(params.height, 0.0), tip]),
        ("back".to_string(), vec![tip, base]),
    ]);
    Domain2D::new(outer, holes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_design_has_five_holes() {
        let d = build_finray(&FinRayParams::default()).unwrap();
        assert_eq!(d.holes().len(), 5);
        let holes: f64 = d.hole_areas().iter().sum();
        assert!((d.outer_area() - (d.material_area() + holes)).abs() < 1e-9);
        assert!(d.hole_areas().iter().all(|&a| a > 0.0));
        // base edge spans x = 0 from y = 0 to y = L
        assert_eq!(d.edge("base").unwrap(), &[Point2::new(0.0, 0.0), Point2::new(0.0, 30.0)]);
        // actuation point lies on the front wall
        assert!(d.edge_distance("front", Point2::new(35.0, 0.0)).unwrap() < 1e-12);
    }

    #[test]
    fn outline_area_by_hand_for_no_ribs() {
        // One void: the outline shrunk by every wall thickness.
        let p = FinRayParams { ribs: 0, ..Default::default() };
        let d = build_finray(&p).unwrap();
        assert_eq!(d.holes().len(), 1);
        let outline = 0.5 * (90.0 * p.tip_point().y + p.tip_point().x * 30.0);
        assert!((d.outer_area() - outline).abs() < 1e-9);
    }

    #[test]
    fn thick_walls_overlap() {
        let p = FinRayParams { t_flex: 29.0, ..Default::default() };
        let err = build_finray(&p).unwrap_err().to_string();
        assert!(err.contains("walls overlap"), "{err}");
    }

    #[test]
    fn too_many_ribs() {
        let p = FinRayParams { ribs: 60, ..Default::default() };
        assert!(build_finray(&p).unwrap_err().to_string().contains("ribs"));
    }

    #[test]
    fn non_positive_length_named() {
        let p = FinRayParams { t_back: 0.0, ..Default::default() };
        assert!(build_finray(&p).unwrap_err().to_string().contains("t_back"));
    }

    #[test]
    fn params_json_round_trip_rebuilds_same_domain() {
        let p = FinRayParams::default();
        let text = serde_json::to_string(&p).unwrap();
        for key in
            ["\"H\"", "\"L\"", "\"W\"", "\"L_angle\"", "\"L_tip\"", "\"N\"", "\"t_rib\"", "\"t_flex\"", "\"t_back\""]
        {
            assert!(text.contains(key), "{key} missing from {text}");
        }
        let back: FinRayParams = serde_json::from_str(&text).unwrap();
        assert_eq!(build_finray(&back).unwrap(), build_finray(&p).unwrap());
    }
}
