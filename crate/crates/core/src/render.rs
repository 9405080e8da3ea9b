//! Annotated output images: the grayscale frame with each person's box
//! outlined in its safety color.

use crate::distancing::{FrameAssessment, SafetyColor};
use crate::geometry::BoundingBox;
use crate::thermal::pnm::{self, PnmImage, PnmKind};
use crate::thermal::ThermalFrame;

pub type Rgb = [u8; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderStyle {
    pub safe_color: Rgb,
    pub unsafe_color: Rgb,
    pub line_thickness_px: usize,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            safe_color: [0, 255, 0],
            unsafe_color: [255, 0, 0],
            line_thickness_px: 2,
        }
    }
}

impl RenderStyle {
    pub fn color(&self, c: SafetyColor) -> Rgb {
        match c {
            SafetyColor::Green => self.safe_color,
            SafetyColor::Red => self.unsafe_color,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn from_frame(frame: &ThermalFrame) -> Self {
        let mut data = Vec::with_capacity(frame.width * frame.height * 3);
        for y in 0..frame.height {
            for x in 0..frame.width {
                let v = frame.display_level(x, y);
                data.extend([v, v, v]);
            }
        }
        Self {
            width: frame.width,
            height: frame.height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Binary pixmap (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        pnm::encode(&PnmImage {
            kind: PnmKind::Pixmap,
            width: self.width,
            height: self.height,
            max_value: 255,
            samples: self.data.iter().map(|&b| b as u16).collect(),
        })
    }
}

/// Inclusive pixel rectangle `(left, top, right, bottom)` covered by `b`
/// after clipping to the image, or `None` when nothing remains.
pub fn pixel_rect(
    b: &BoundingBox,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let clipped = b.clip(width as f64, height as f64)?;
    let left = clipped.x.floor() as usize;
    let top = clipped.y.floor() as usize;
    let right = (clipped.right().ceil() as usize).min(width) - 1;
    let bottom = (clipped.bottom().ceil() as usize).min(height) - 1;
    Some((left, top, right, bottom))
}

/// Outlines a box: every pixel of its clipped rectangle that lies within
/// `thickness` pixels of the rectangle's edge.
pub fn draw_outline(img: &mut RgbImage, b: &BoundingBox, color: Rgb, thickness: usize) {
    let Some((l, t, r, btm)) = pixel_rect(b, img.width, img.height) else {
        return;
    };
    let th = thickness.max(1);
    for y in t..=btm {
        let edge_row = y < t + th || y + th > btm;
        for x in l..=r {
            if edge_row || x < l + th || x + th > r {
                img.set(x, y, color);
            }
        }
    }
}

/// Green boxes are drawn first and red boxes on top, so a pixel shared by
/// both shows red.
pub fn render_annotated(
    frame: &ThermalFrame,
    boxes: &[BoundingBox],
    assessment: &FrameAssessment,
    style: &RenderStyle,
) -> RgbImage {
    let mut img = RgbImage::from_frame(frame);
    for pass in [SafetyColor::Green, SafetyColor::Red] {
        for (b, &c) in boxes.iter().zip(&assessment.colors) {
            if c == pass {
                draw_outline(&mut img, b, style.color(c), style.line_thickness_px);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, v: u16) -> ThermalFrame {
        ThermalFrame::new("r", w, h, 255, vec![v; w * h]).unwrap()
    }

    #[test]
    fn empty_assessment_is_plain_gray() {
        let f = frame(4, 3, 77);
        let img = render_annotated(
            &f,
            &[],
            &FrameAssessment::default(),
            &RenderStyle::default(),
        );
        assert!(img.data.iter().all(|&b| b == 77));
    }

    #[test]
    fn sixteen_bit_frames_are_rescaled() {
        let f = ThermalFrame::new("s", 2, 1, 1000, vec![0, 1000]).unwrap();
        let img = RgbImage::from_frame(&f);
        assert_eq!(img.pixel(0, 0), [0, 0, 0]);
        assert_eq!(img.pixel(1, 0), [255, 255, 255]);
    }

    #[test]
    fn outline_pixel_count() {
        let f = frame(40, 30, 10);
        let b = BoundingBox::new(5.0, 4.0, 12.0, 9.0);
        let a = FrameAssessment {
            colors: vec![SafetyColor::Green],
            ..Default::default()
        };
        for t in 1..=5 {
            let style = RenderStyle {
                line_thickness_px: t,
                ..Default::default()
            };
            let img = render_annotated(&f, &[b], &a, &style);
            let green = (0..30)
                .flat_map(|y| (0..40).map(move |x| (x, y)))
                .filter(|&(x, y)| img.pixel(x, y) == [0, 255, 0])
                .count();
            let inner = 12usize.saturating_sub(2 * t) * 9usize.saturating_sub(2 * t);
            assert_eq!(green, 12 * 9 - inner, "thickness {t}");
        }
    }

    #[test]
    fn boxes_clip_at_edges() {
        let f = frame(10, 10, 0);
        let b = BoundingBox::new(-5.0, -5.0, 8.0, 8.0);
        let a = FrameAssessment {
            colors: vec![SafetyColor::Red],
            ..Default::default()
        };
        let img = render_annotated(
            &f,
            &[b],
            &a,
            &RenderStyle {
                line_thickness_px: 1,
                ..Default::default()
            },
        );
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(2, 2), [255, 0, 0]);
        assert_eq!(img.pixel(1, 1), [0, 0, 0]);
        assert_eq!(img.pixel(3, 3), [0, 0, 0]);
    }

    #[test]
    fn ppm_header() {
        let img = RgbImage {
            width: 1,
            height: 1,
            data: vec![1, 2, 3],
        };
        assert_eq!(img.to_ppm(), b"P6\n1 1\n255\n\x01\x02\x03".to_vec());
    }
}
