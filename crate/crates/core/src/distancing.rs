//! Pairwise proximity classification of detected persons.
//!
//! Distances are measured between box centers in the image plane and
//! converted to meters with a single meters-per-pixel factor derived from
//! the camera's range and horizontal field of view. There is no depth or
//! ground-plane correction: two people at different distances from the
//! camera are compared as if they stood on the same plane at `range_m`.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{center, pixel_distance, BoundingBox};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub range_m: f64,
    pub hfov_deg: f64,
    pub image_width_px: f64,
    pub image_height_px: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_m.is_finite() && self.range_m > 0.0) {
            return Err(Error::Domain(format!(
                "range_m must be positive, got {}",
                self.range_m
            )));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::Domain(format!(
                "hfov_deg must lie in (0, 180), got {}",
                self.hfov_deg
            )));
        }
        if !(self.image_width_px.is_finite() && self.image_width_px > 0.0) {
            return Err(Error::Domain(format!(
                "image_width_px must be positive, got {}",
                self.image_width_px
            )));
        }
        Ok(())
    }

    /// Width of the monitored plane covered by the image, in meters.
    pub fn scene_width_m(&self) -> f64 {
        2.0 * self.range_m * (self.hfov_deg.to_radians() / 2.0).tan()
    }
}

pub fn meters_per_pixel(cam: &CameraModel) -> Result<f64> {
    cam.validate()?;
    Ok(cam.scene_width_m() / cam.image_width_px)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistancingConfig {
    pub threshold_m: f64,
}

impl Default for DistancingConfig {
    fn default() -> Self {
        Self { threshold_m: 2.0 }
    }
}

impl DistancingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_m.is_finite() && self.threshold_m > 0.0) {
            return Err(Error::Domain(format!(
                "threshold_m must be positive, got {}",
                self.threshold_m
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SafetyColor {
    Green,
    Red,
}

impl SafetyColor {
    pub fn as_str(self) -> &'static str {
        match self {
            SafetyColor::Green => "green",
            SafetyColor::Red => "red",
        }
    }
}

impl fmt::Display for SafetyColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub distance_m: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameAssessment {
    pub colors: Vec<SafetyColor>,
    /// Ordered by `(i, j)` with `i < j`.
    pub violating_pairs: Vec<Violation>,
    pub distances_m: Vec<Vec<f64>>,
}

impl FrameAssessment {
    pub fn red_count(&self) -> usize {
        self.colors
            .iter()
            .filter(|&&c| c == SafetyColor::Red)
            .count()
    }
}

/// Colors every box green or red. A pair closer than the threshold (strict
/// inequality) turns both members red; a distance exactly at the threshold
/// is safe. A single box is always green.
pub fn assess_frame(
    boxes: &[BoundingBox],
    cam: &CameraModel,
    cfg: &DistancingConfig,
) -> Result<FrameAssessment> {
    cfg.validate()?;
    let mpp = meters_per_pixel(cam)?;
    let n = boxes.len();
    let mut assessment = FrameAssessment {
        colors: vec![SafetyColor::Green; n],
        violating_pairs: Vec::new(),
        distances_m: vec![vec![0.0; n]; n],
    };
    if n < 2 {
        return Ok(assessment);
    }
    let centers: Vec<_> = boxes.iter().map(center).collect();
    for i in 0..n {
        for j in i + 1..n {
            let d = pixel_distance(centers[i], centers[j]) * mpp;
            assessment.distances_m[i][j] = d;
            assessment.distances_m[j][i] = d;
            if d < cfg.threshold_m {
                assessment.colors[i] = SafetyColor::Red;
                assessment.colors[j] = SafetyColor::Red;
                assessment.violating_pairs.push(Violation {
                    i,
                    j,
                    distance_m: d,
                });
            }
        }
    }
    Ok(assessment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SafetyColor::*;

    fn cam(width: f64) -> CameraModel {
        CameraModel {
            range_m: 10.0,
            hfov_deg: 90.0,
            image_width_px: width,
            image_height_px: 480.0,
        }
    }

    #[test]
    fn mpp_closed_forms() {
        let c = cam(640.0);
        assert!((c.scene_width_m() - 20.0).abs() < 1e-12);
        assert!((meters_per_pixel(&c).unwrap() - 0.03125).abs() < 1e-15);
        let far = CameraModel { range_m: 20.0, ..c };
        assert!((meters_per_pixel(&far).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn mpp_hand_trig() {
        // tan(30°) = 1/√3, so scene width = 16/√3 m over 384 px
        let c = CameraModel {
            range_m: 8.0,
            hfov_deg: 60.0,
            image_width_px: 384.0,
            image_height_px: 288.0,
        };
        let expected = 16.0 / 3f64.sqrt() / 384.0;
        assert!((meters_per_pixel(&c).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn mpp_domain_errors() {
        for bad in [
            CameraModel {
                range_m: 0.0,
                ..cam(640.0)
            },
            CameraModel {
                hfov_deg: 180.0,
                ..cam(640.0)
            },
            CameraModel {
                hfov_deg: 0.0,
                ..cam(640.0)
            },
            cam(0.0),
        ] {
            assert!(matches!(meters_per_pixel(&bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn decision_table_cases() {
        let c = cam(640.0);
        let cfg = DistancingConfig::default();
        let at = |cx: f64| BoundingBox::from_center(cx, 100.0, 20.0, 60.0);

        assert!(assess_frame(&[], &c, &cfg).unwrap().colors.is_empty());
        assert_eq!(
            assess_frame(&[at(0.0)], &c, &cfg).unwrap().colors,
            vec![Green]
        );

        // 32 px = 1 m
        let close = assess_frame(&[at(100.0), at(132.0)], &c, &cfg).unwrap();
        assert_eq!(close.colors, vec![Red, Red]);
        let far = assess_frame(&[at(100.0), at(300.0)], &c, &cfg).unwrap();
        assert_eq!(far.colors, vec![Green, Green]);

        let three = assess_frame(&[at(100.0), at(132.0), at(400.0)], &c, &cfg).unwrap();
        assert_eq!(three.colors, vec![Red, Red, Green]);
        assert_eq!(three.violating_pairs.len(), 1);
        assert_eq!(
            (three.violating_pairs[0].i, three.violating_pairs[0].j),
            (0, 1)
        );
        assert!((three.violating_pairs[0].distance_m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_threshold_is_safe() {
        let c = cam(640.0);
        let boxes = [
            BoundingBox::from_center(0.0, 0.0, 4.0, 4.0),
            BoundingBox::from_center(64.0, 0.0, 4.0, 4.0),
        ];
        let d = assess_frame(&boxes, &c, &DistancingConfig::default())
            .unwrap()
            .distances_m[0][1];
        assert!((d - 2.0).abs() < 1e-9);
        let a = assess_frame(&boxes, &c, &DistancingConfig { threshold_m: d }).unwrap();
        assert_eq!(a.colors, vec![Green, Green]);
        assert!(a.violating_pairs.is_empty());
        let above = DistancingConfig {
            threshold_m: d + 1e-12,
        };
        assert_eq!(
            assess_frame(&boxes, &c, &above).unwrap().colors,
            vec![Red, Red]
        );
    }

    fn arb_boxes() -> impl Strategy<Value = Vec<BoundingBox>> {
        prop::collection::vec(
            (0.0..600.0f64, 0.0..400.0f64, 1.0..80.0f64, 1.0..160.0f64)
                .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h)),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn red_iff_in_violating_pair(boxes in arb_boxes(), t in 0.1..5.0f64) {
            let a = assess_frame(&boxes, &cam(640.0), &DistancingConfig { threshold_m: t }).unwrap();
            for (k, color) in a.colors.iter().enumerate() {
                let in_pair = a.violating_pairs.iter().any(|v| v.i == k || v.j == k);
                prop_assert_eq!(*color == Red, in_pair);
            }
            for v in &a.violating_pairs {
                prop_assert!(v.distance_m < t);
                prop_assert_eq!(a.distances_m[v.i][v.j], v.distance_m);
            }
        }

        #[test]
        fn scale_invariance(boxes in arb_boxes(), k in 0.25..4.0f64) {
            let cfg = DistancingConfig::default();
            let base = assess_frame(&boxes, &cam(640.0), &cfg).unwrap();
            let scaled_boxes: Vec<_> = boxes
                .iter()
                .map(|b| BoundingBox::new(b.x * k, b.y * k, b.w * k, b.h * k))
                .collect();
            let scaled = assess_frame(&scaled_boxes, &cam(640.0 * k), &cfg).unwrap();
            for (ra, rb) in base.distances_m.iter().zip(&scaled.distances_m) {
                for (a, b) in ra.iter().zip(rb) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
            // colors can only differ for pairs within rounding of the threshold
            let near_boundary = base
                .distances_m
                .iter()
                .flatten()
                .any(|d| (d - cfg.threshold_m).abs() < 1e-9);
            if !near_boundary {
                prop_assert_eq!(&base.colors, &scaled.colors);
                let pairs = |a: &FrameAssessment| a.violating_pairs.iter().map(|v| (v.i, v.j)).collect::<Vec<_>>();
                prop_assert_eq!(pairs(&base), pairs(&scaled));
            }
        }

        #[test]
        fn raising_threshold_is_monotone(boxes in arb_boxes(), t in 0.1..3.0f64, dt in 0.0..3.0f64) {
            let c = cam(640.0);
            let lo = assess_frame(&boxes, &c, &DistancingConfig { threshold_m: t }).unwrap();
            let hi = assess_frame(&boxes, &c, &DistancingConfig { threshold_m: t + dt }).unwrap();
            for (a, b) in lo.colors.iter().zip(&hi.colors) {
                prop_assert!(!(*a == Red && *b == Green));
            }
            for v in &lo.violating_pairs {
                prop_assert!(hi.violating_pairs.iter().any(|w| (w.i, w.j) == (v.i, v.j)));
            }
        }

        #[test]
        fn permutation_equivariance(boxes in arb_boxes(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..boxes.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<_> = perm.iter().map(|&k| boxes[k]).collect();
            let cfg = DistancingConfig::default();
            let a = assess_frame(&boxes, &cam(640.0), &cfg).unwrap();
            let b = assess_frame(&shuffled, &cam(640.0), &cfg).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                prop_assert_eq!(b.colors[new], a.colors[old]);
            }
        }
    }
}
