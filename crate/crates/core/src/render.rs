//! Orthographic software rendering of a world into four fixed views.
//!
//! Boxes are drawn as filled polygons, far to near. Polygon vertices are
//! snapped to a 1/256-pixel grid and coverage is decided by integer edge
//! functions at pixel centres, so images are bit-identical everywhere.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{BoxObject, Vec3};
use crate::robot::RobotModel;
use crate::sim::WorldState;

pub const IMAGE_SIZE: u32 = 512;
pub const BACKGROUND: [u8; 3] = [236, 236, 232];
const SUBPIXEL: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Front,
    Top,
    Left,
    Right,
}

impl View {
    pub const ALL: [View; 4] = [View::Front, View::Top, View::Left, View::Right];

    pub fn name(self) -> &'static str {
        match self {
            View::Front => "front",
            View::Top => "top",
            View::Left => "left",
            View::Right => "right",
        }
    }
}

/// Image axes and viewing direction of one view, with the visible window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub view: View,
    pub size: u32,
    /// World point shown at the image centre.
    pub center: Vec3,
    /// Half the side of the visible square, in metres.
    pub half_width: f64,
}

impl ViewSpec {
    pub fn new(view: View) -> ViewSpec {
        let center = match view {
            View::Top => Vec3::new(0.0, 0.0, 0.0),
            _ => Vec3::new(0.0, 0.0, 0.6),
        };
        ViewSpec { view, size: IMAGE_SIZE, center, half_width: 0.75 }
    }

    /// (image right, image up, towards the viewer).
    fn axes(&self) -> (Vec3, Vec3, Vec3) {
        match self.view {
            View::Top => (Vec3::x(), Vec3::y(), Vec3::z()),
            View::Front => (Vec3::x(), Vec3::z(), -Vec3::y()),
            View::Left => (-Vec3::y(), Vec3::z(), -Vec3::x()),
            View::Right => (Vec3::y(), Vec3::z(), Vec3::x()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, top row first.
    pub pixels: Vec<u8>,
}

impl Image {
    fn filled(width: u32, height: u32, color: [u8; 3]) -> Image {
        let pixels = color.iter().copied().cycle().take((width * height * 3) as usize).collect();
        Image { width, height, pixels }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("in-memory png header");
            w.write_image_data(&self.pixels).expect("in-memory png data");
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> std::io::Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_png())
    }

    /// Fills the convex polygon given in sub-pixel units (y down).
    fn fill(&mut self, poly: &[(i64, i64)], color: [u8; 3]) {
        if poly.len() < 3 {
            return;
        }
        let area: i64 = (0..poly.len())
            .map(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum();
        if area == 0 {
            return;
        }
        let sign = area.signum();
        let s = SUBPIXEL as i64;
        let min_x = poly.iter().map(|p| p.0).min().unwrap_or(0).div_euclid(s).max(0);
        let max_x = poly.iter().map(|p| p.0).max().unwrap_or(0).div_euclid(s).min(self.width as i64 - 1);
        let min_y = poly.iter().map(|p| p.1).min().unwrap_or(0).div_euclid(s).max(0);
        let max_y = poly.iter().map(|p| p.1).max().unwrap_or(0).div_euclid(s).min(self.height as i64 - 1);
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                let (cx, cy) = (px * s + s / 2, py * s + s / 2);
                let inside = (0..poly.len()).all(|i| {
                    let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                    ((b.0 - a.0) * (cy - a.1) - (b.1 - a.1) * (cx - a.0)) * sign >= 0
                });
                if inside {
                    let i = ((py as u32 * self.width + px as u32) * 3) as usize;
                    self.pixels[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
}

/// Projected outline of a box and the depth of its nearest corner.
fn project(b: &BoxObject, spec: &ViewSpec) -> (f64, Vec<(f64, f64)>) {
    let (right, up, toward) = spec.axes();
    let h = b.half_extents;
    let corners: Vec<Vec3> = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .flat_map(|&(sx, sy)| [-1.0, 1.0].map(|sz| b.pose.transform_point(&Vec3::new(sx * h.x, sy * h.y, sz * h.z))))
        .collect();
    let depth = corners.iter().map(|c| c.dot(&toward)).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = corners.iter().map(|c| ((c - spec.center).dot(&right), (c - spec.center).dot(&up))).collect();
    let outline = if spec.view == View::Top {
        // Footprint: the four bottom corners in order.
        pts.iter().step_by(2).copied().collect()
    } else {
        let (lo_u, hi_u) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
        let (lo_v, hi_v) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
        vec![(lo_u, lo_v), (hi_u, lo_v), (hi_u, hi_v), (lo_u, hi_v)]
    };
    (depth, outline)
}

fn to_subpixels(spec: &ViewSpec, (u, v): (f64, f64)) -> (i64, i64) {
    let scale = spec.size as f64 / (2.0 * spec.half_width);
    let x = (u + spec.half_width) * scale;
    let y = (spec.half_width - v) * scale;
    ((x * SUBPIXEL).round() as i64, (y * SUBPIXEL).round() as i64)
}

/// Depth, id, outline and colour of one box.
type Painted<'a> = (f64, &'a str, Vec<(f64, f64)>, [u8; 3]);

/// Draws the scene objects and, when a model is given, the arm.
pub fn render_view(world: &WorldState, robot: Option<&RobotModel>, spec: &ViewSpec) -> Image {
    let mut img = Image::filled(spec.size, spec.size, BACKGROUND);
    let links = robot.map(|r| r.link_collision_boxes_at(&world.robot_config)).unwrap_or_default();
    let mut items: Vec<Painted> = world
        .scene
        .objects
        .values()
        .chain(links.iter())
        .map(|b| {
            let (depth, outline) = project(b, spec);
            (depth, b.id.as_str(), outline, b.color)
        })
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    for (_, _, outline, color) in items {
        let poly: Vec<(i64, i64)> = outline.into_iter().map(|p| to_subpixels(spec, p)).collect();
        img.fill(&poly, color);
    }
    img
}

/// The front, top, left and right views, in that order.
pub fn render_all(world: &WorldState, robot: Option<&RobotModel>) -> Vec<(View, Image)> {
    View::ALL.iter().map(|&v| (v, render_view(world, robot, &ViewSpec::new(v)))).collect()
}
