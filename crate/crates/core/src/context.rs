//! Intersection geometry, pedestrian light state and the transition-feature
//! vectors built from them.
//!
//! The intersection is approximated by two orthogonal curb lines meeting at
//! a corner. They define the curb frame: `x_c` runs along the right curb,
//! `y_c` along the left curb, with the origin at the corner. Coordinates in
//! that frame are the signed distances `(c_l, c_r)` of a point to the two
//! curbs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHOGONALITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        if !(min_x < max_x && min_y < max_y) {
            return Err(Error::invalid(format!(
                "degenerate rectangle [{min_x}, {max_x}] x [{min_y}, {max_y}]"
            )));
        }
        Ok(Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// A line through `point` oriented along `direction` (unit vector).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectedLine {
    pub point: (f64, f64),
    pub direction: (f64, f64),
}

impl DirectedLine {
    /// Signed perpendicular distance, positive to the left of the direction.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.point.0, y - self.point.1);
        self.direction.0 * dy - self.direction.1 * dx
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionMap {
    /// Orientation of the curb frame relative to the global frame, radians.
    pub curb_frame_angle: f64,
    /// Where the two curb lines meet.
    pub corner: (f64, f64),
    pub bounds: Rect,
}

impl IntersectionMap {
    pub fn new(curb_frame_angle: f64, corner: (f64, f64), bounds: Rect) -> Result<Self> {
        if !(curb_frame_angle.is_finite() && corner.0.is_finite() && corner.1.is_finite()) {
            return Err(Error::Config("map parameters must be finite".into()));
        }
        Ok(IntersectionMap {
            curb_frame_angle,
            corner,
            bounds,
        })
    }

    /// Builds the map from the headings of the two curb lines. The lines must
    /// be orthogonal, with the left curb a quarter turn counter-clockwise
    /// from the right curb.
    pub fn from_curb_headings(
        corner: (f64, f64),
        right_heading: f64,
        left_heading: f64,
        bounds: Rect,
    ) -> Result<Self> {
        let (rs, rc) = right_heading.sin_cos();
        let (ls, lc) = left_heading.sin_cos();
        let dot = rc * lc + rs * ls;
        let cross = rc * ls - rs * lc;
        if dot.abs() > ORTHOGONALITY_TOL {
            return Err(Error::Config(format!(
                "curb lines are not orthogonal (cos = {dot:.3e})"
            )));
        }
        if cross < 0.0 {
            return Err(Error::Config(
                "left curb must point a quarter turn counter-clockwise from the right curb".into(),
            ));
        }
        IntersectionMap::new(right_heading, corner, bounds)
    }

    /// The curb along `y_c`. Points on the sidewalk side have `c_l > 0`.
    pub fn curb_left(&self) -> DirectedLine {
        let (s, c) = self.curb_frame_angle.sin_cos();
        // Direction +y_c; the sidewalk (+x_c) lies to its right, so flip it
        // to keep "left of direction is positive" consistent with c_l.
        DirectedLine {
            point: self.corner,
            direction: (s, -c),
        }
    }

    /// The curb along `x_c`. Points on the sidewalk side have `c_r > 0`.
    pub fn curb_right(&self) -> DirectedLine {
        let (s, c) = self.curb_frame_angle.sin_cos();
        DirectedLine {
            point: self.corner,
            direction: (c, s),
        }
    }

    /// Maps a curb-frame point back to global coordinates.
    pub fn from_curb_frame(&self, xc: f64, yc: f64) -> (f64, f64) {
        let (s, c) = self.curb_frame_angle.sin_cos();
        (
            self.corner.0 + c * xc - s * yc,
            self.corner.1 + s * xc + c * yc,
        )
    }

    /// The same map after a rigid motion of the plane (rotation by `angle`
    /// about the origin, then translation).
    pub fn transformed(&self, angle: f64, translation: (f64, f64)) -> IntersectionMap {
        let (s, c) = angle.sin_cos();
        let rot = |(x, y): (f64, f64)| (c * x - s * y + translation.0, s * x + c * y + translation.1);
        let corners = [
            rot((self.bounds.min_x, self.bounds.min_y)),
            rot((self.bounds.max_x, self.bounds.min_y)),
            rot((self.bounds.min_x, self.bounds.max_y)),
            rot((self.bounds.max_x, self.bounds.max_y)),
        ];
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
            corners.iter().map(pick).fold(init, f)
        };
        IntersectionMap {
            curb_frame_angle: self.curb_frame_angle + angle,
            corner: rot(self.corner),
            bounds: Rect {
                min_x: fold(f64::min, f64::INFINITY, |p| p.0),
                min_y: fold(f64::min, f64::INFINITY, |p| p.1),
                max_x: fold(f64::max, f64::NEG_INFINITY, |p| p.0),
                max_y: fold(f64::max, f64::NEG_INFINITY, |p| p.1),
            },
        }
    }
}

/// State of the two complementary pedestrian lights. `t1` is the walk
/// signal for the crosswalk straight ahead, `t2` for the one after the turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LightState {
    t1: bool,
    t2: bool,
}

impl LightState {
    pub fn from_t1(t1: bool) -> Self {
        LightState { t1, t2: !t1 }
    }

    /// Both lights supplied; they must be complementary.
    pub fn from_pair(t1: bool, t2: bool) -> Result<Self> {
        if t1 == t2 {
            return Err(Error::invalid(format!(
                "pedestrian lights must be complementary, got T1 = {}, T2 = {}",
                t1 as u8, t2 as u8
            )));
        }
        Ok(LightState { t1, t2 })
    }

    pub fn t1(&self) -> bool {
        self.t1
    }

    pub fn t2(&self) -> bool {
        self.t2
    }

    /// The scalar light feature.
    pub fn tr(&self) -> f64 {
        if self.t1 {
            1.0
        } else {
            0.0
        }
    }

    pub fn flipped(&self) -> Self {
        LightState::from_t1(!self.t1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSet {
    /// `(x, y)`
    #[serde(rename = "asnsc")]
    Asnsc,
    /// `(x, y, tr)`
    #[serde(rename = "casnsc1")]
    Casnsc1,
    /// `(x', y', tr)`: position in the curb-aligned frame.
    #[serde(rename = "casnsc2")]
    Casnsc2,
    /// `(c_l, c_r, tr)`: signed distances to the two curbs.
    #[serde(rename = "casnsc3")]
    Casnsc3,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::Asnsc,
        FeatureSet::Casnsc1,
        FeatureSet::Casnsc2,
        FeatureSet::Casnsc3,
    ];

    pub fn dim(self) -> usize {
        match self {
            FeatureSet::Asnsc => 2,
            _ => 3,
        }
    }

    pub fn uses_lights(self) -> bool {
        self != FeatureSet::Asnsc
    }

    pub fn needs_map(self) -> bool {
        matches!(self, FeatureSet::Casnsc2 | FeatureSet::Casnsc3)
    }

    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::Asnsc => "ASNSC",
            FeatureSet::Casnsc1 => "CASNSC-1",
            FeatureSet::Casnsc2 => "CASNSC-2",
            FeatureSet::Casnsc3 => "CASNSC-3",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            FeatureSet::Asnsc => "asnsc",
            FeatureSet::Casnsc1 => "casnsc1",
            FeatureSet::Casnsc2 => "casnsc2",
            FeatureSet::Casnsc3 => "casnsc3",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        FeatureSet::ALL
            .into_iter()
            .find(|fs| fs.key() == norm)
            .ok_or_else(|| Error::Config(format!("unknown feature set {s:?}")))
    }
}

/// Rotates `(x, y) - corner` by `-curb_frame_angle`.
pub fn rotate_to_curb_frame(x: f64, y: f64, map: &IntersectionMap) -> (f64, f64) {
    let (s, c) = map.curb_frame_angle.sin_cos();
    let (dx, dy) = (x - map.corner.0, y - map.corner.1);
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Signed distances `(c_l, c_r)` to the left and right curbs.
pub fn signed_curb_distances(x: f64, y: f64, map: &IntersectionMap) -> (f64, f64) {
    rotate_to_curb_frame(x, y, map)
}

/// Transition features at `(x, y)`. Returns a vector of length `fs.dim()`.
pub fn extract_features(
    x: f64,
    y: f64,
    lights: LightState,
    map: Option<&IntersectionMap>,
    fs: FeatureSet,
) -> Result<Vec<f64>> {
    let need_map = || {
        map.ok_or_else(|| Error::Config(format!("{fs} features need an intersection map")))
    };
    Ok(match fs {
        FeatureSet::Asnsc => vec![x, y],
        FeatureSet::Casnsc1 => vec![x, y, lights.tr()],
        FeatureSet::Casnsc2 => {
            let (xr, yr) = rotate_to_curb_frame(x, y, need_map()?);
            vec![xr, yr, lights.tr()]
        }
        FeatureSet::Casnsc3 => {
            let (cl, cr) = signed_curb_distances(x, y, need_map()?);
            vec![cl, cr, lights.tr()]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    use proptest::prelude::*;

    fn map(angle: f64, corner: (f64, f64)) -> IntersectionMap {
        IntersectionMap::new(angle, corner, Rect::new(-50.0, -50.0, 50.0, 50.0).unwrap()).unwrap()
    }

    #[test]
    fn rotation_examples() {
        let m = map(0.0, (0.0, 0.0));
        assert_eq!(rotate_to_curb_frame(3.0, -2.0, &m), (3.0, -2.0));
        let m = map(FRAC_PI_2, (0.0, 0.0));
        let (x, y) = rotate_to_curb_frame(1.0, 0.0, &m);
        assert!(x.abs() < 1e-15 && (y + 1.0).abs() < 1e-15);
    }

    #[test]
    fn curb_distance_examples() {
        let m = map(0.7, (3.0, -1.0));
        let (cl, cr) = signed_curb_distances(3.0, -1.0, &m);
        assert_eq!((cl, cr), (0.0, 0.0));
        let m = map(0.0, (0.0, 0.0));
        assert_eq!(signed_curb_distances(2.0, 3.0, &m), (2.0, 3.0));
    }

    #[test]
    fn curb_lines_agree_with_frame_coordinates() {
        let m = map(0.4, (1.0, 2.0));
        let (x, y) = m.from_curb_frame(2.5, 4.0);
        assert!((m.curb_left().signed_distance(x, y) - 2.5).abs() < 1e-12);
        assert!((m.curb_right().signed_distance(x, y) - 4.0).abs() < 1e-12);
        let (cl, cr) = signed_curb_distances(x, y, &m);
        assert!((cl - 2.5).abs() < 1e-12 && (cr - 4.0).abs() < 1e-12);
    }

    #[test]
    fn curb_headings_must_be_orthogonal() {
        let b = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(IntersectionMap::from_curb_headings((0.0, 0.0), 0.3, 0.3 + FRAC_PI_2, b).is_ok());
        assert!(matches!(
            IntersectionMap::from_curb_headings((0.0, 0.0), 0.3, 0.3 + 1.4, b),
            Err(Error::Config(_))
        ));
        assert!(IntersectionMap::from_curb_headings((0.0, 0.0), 0.3, 0.3 - FRAC_PI_2, b).is_err());
    }

    #[test]
    fn light_encoding() {
        assert_eq!(LightState::from_t1(true).tr(), 1.0);
        assert_eq!(LightState::from_t1(false).tr(), 0.0);
        assert!(!LightState::from_t1(true).t2());
        assert!(LightState::from_pair(true, true).is_err());
        assert!(LightState::from_pair(false, false).is_err());
        assert_eq!(LightState::from_pair(false, true).unwrap().tr(), 0.0);
    }

    #[test]
    fn feature_examples() {
        let on = LightState::from_t1(true);
        let off = LightState::from_t1(false);
        assert_eq!(
            extract_features(1.0, 2.0, on, None, FeatureSet::Casnsc1).unwrap(),
            vec![1.0, 2.0, 1.0]
        );
        let m = map(0.0, (0.0, 0.0));
        assert_eq!(
            extract_features(1.0, 2.0, on, Some(&m), FeatureSet::Casnsc2).unwrap(),
            extract_features(1.0, 2.0, on, None, FeatureSet::Casnsc1).unwrap()
        );
        let m = map(0.3, (4.0, 5.0));
        assert_eq!(
            extract_features(4.0, 5.0, off, Some(&m), FeatureSet::Casnsc3).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        assert_eq!(
            extract_features(4.0, 5.0, off, None, FeatureSet::Asnsc).unwrap(),
            vec![4.0, 5.0]
        );
        assert!(matches!(
            extract_features(0.0, 0.0, on, None, FeatureSet::Casnsc3),
            Err(Error::Config(_))
        ));
        assert!(extract_features(0.0, 0.0, on, None, FeatureSet::Casnsc2).is_err());
    }

    #[test]
    fn feature_set_parsing() {
        assert_eq!("casnsc3".parse::<FeatureSet>().unwrap(), FeatureSet::Casnsc3);
        assert_eq!("CASNSC-1".parse::<FeatureSet>().unwrap(), FeatureSet::Casnsc1);
        assert_eq!("asnsc".parse::<FeatureSet>().unwrap(), FeatureSet::Asnsc);
        assert!("casnsc4".parse::<FeatureSet>().is_err());
        assert_eq!(FeatureSet::Asnsc.dim(), 2);
        assert_eq!(FeatureSet::Casnsc2.dim(), 3);
    }

    proptest! {
        #[test]
        fn rotation_is_an_isometry_about_the_corner(
            angle in -PI..PI, cx in -20.0..20.0f64, cy in -20.0..20.0f64,
            x in -30.0..30.0f64, y in -30.0..30.0f64,
        ) {
            let m = map(angle, (cx, cy));
            let (xr, yr) = rotate_to_curb_frame(x, y, &m);
            prop_assert!((xr.hypot(yr) - (x - cx).hypot(y - cy)).abs() < 1e-12);
        }

        #[test]
        fn curb_features_survive_rigid_motions(
            angle in -PI..PI, cx in -20.0..20.0f64, cy in -20.0..20.0f64,
            x in -30.0..30.0f64, y in -30.0..30.0f64,
            rot in -PI..PI, tx in -50.0..50.0f64, ty in -50.0..50.0f64, t1: bool,
        ) {
            let m = map(angle, (cx, cy));
            let lights = LightState::from_t1(t1);
            let before = extract_features(x, y, lights, Some(&m), FeatureSet::Casnsc3).unwrap();
            let moved = m.transformed(rot, (tx, ty));
            let (s, c) = rot.sin_cos();
            let (x2, y2) = (c * x - s * y + tx, s * x + c * y + ty);
            let after = extract_features(x2, y2, lights, Some(&moved), FeatureSet::Casnsc3).unwrap();
            for (a, b) in before.iter().zip(&after) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn light_feature_ignores_position(x in -30.0..30.0f64, y in -30.0..30.0f64, t1: bool) {
            let m = map(0.2, (1.0, 1.0));
            let lights = LightState::from_t1(t1);
            for fs in [FeatureSet::Casnsc1, FeatureSet::Casnsc2, FeatureSet::Casnsc3] {
                let f = extract_features(x, y, lights, Some(&m), fs).unwrap();
                prop_assert_eq!(f[2], lights.tr());
            }
        }

        #[test]
        fn casnsc2_is_a_rigid_image_of_casnsc1(
            angle in -PI..PI, cx in -20.0..20.0f64, cy in -20.0..20.0f64,
            x in -30.0..30.0f64, y in -30.0..30.0f64,
        ) {
            let m = map(angle, (cx, cy));
            let lights = LightState::from_t1(true);
            let f1 = extract_features(x, y, lights, Some(&m), FeatureSet::Casnsc1).unwrap();
            let f2 = extract_features(x, y, lights, Some(&m), FeatureSet::Casnsc2).unwrap();
            let (s, c) = angle.sin_cos();
            let ex = c * (f1[0] - cx) + s * (f1[1] - cy);
            let ey = -s * (f1[0] - cx) + c * (f1[1] - cy);
            prop_assert!((f2[0] - ex).abs() < 1e-12 && (f2[1] - ey).abs() < 1e-12);
            prop_assert_eq!(f2[2], f1[2]);
        }
    }
}
