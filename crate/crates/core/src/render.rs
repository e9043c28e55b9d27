//! Integer-only rasterization of the visual evidence sent to the VLM.

use thiserror::Error;

use crate::clips::ClipRange;
use crate::geom::{Point, Rect};
use crate::lane::{rasterize_polygon, BoundaryLine};
use crate::prompt::Catalog;
use crate::scene::{Detection, MaskClass, ScenePriors, Tracklet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("region of interest is empty after clipping")]
    EmptyRoi,
    #[error("malformed PPM: {0}")]
    Ppm(String),
}

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, pixels: fill.repeat(n) }
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.idx(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = self.idx(x, y);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn set_signed(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            self.set(x as u32, y as u32, c);
        }
    }

    /// Blends `c` over the pixel with opacity `alpha / 1000`.
    fn blend_signed(&mut self, x: i64, y: i64, c: [u8; 3], alpha: u32) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            let old = self.get(x as u32, y as u32);
            let mix = |o: u8, n: u8| ((o as u32 * (1000 - alpha) + n as u32 * alpha + 500) / 1000) as u8;
            self.set(x as u32, y as u32, [mix(old[0], c[0]), mix(old[1], c[1]), mix(old[2], c[2])]);
        }
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width as f64, self.height as f64)
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, RenderError> {
        let bad = |m: &str| RenderError::Ppm(m.to_string());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("expected P6 with maxval 255"));
        }
        let width: u32 = fields[1].parse().map_err(|_| bad("width"))?;
        let height: u32 = fields[2].parse().map_err(|_| bad("height"))?;
        let data = &bytes[pos + 1..];
        if data.len() != 3 * width as usize * height as usize {
            return Err(bad("pixel data length"));
        }
        Ok(Self { width, height, pixels: data.to_vec() })
    }
}

fn fill_polygon(img: &mut RasterImage, poly: &[Point], c: [u8; 3], alpha: Option<u32>) {
    let Ok(grid) = rasterize_polygon(poly, img.width as usize, img.height as usize) else { return };
    for (x, y) in grid.iter_set() {
        match alpha {
            Some(a) => img.blend_signed(x as i64, y as i64, c, a),
            None => img.set(x as u32, y as u32, c),
        }
    }
}

/// Pixels on the Bresenham line between the cells containing `a` and `b`.
fn line_pixels(a: Point, b: Point) -> Vec<(i64, i64)> {
    let (mut x0, mut y0) = (a.x.floor() as i64, a.y.floor() as i64);
    let (x1, y1) = (b.x.floor() as i64, b.y.floor() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn draw_polyline(img: &mut RasterImage, line: &[Point], c: [u8; 3]) {
    for w in line.windows(2) {
        for (x, y) in line_pixels(w[0], w[1]) {
            img.set_signed(x, y, c);
        }
    }
}

/// Schematic stand-in for a decoded frame: road surfaces in gray, sidewalks
/// and curbs in their class colors, crosswalks and declared lane lines in
/// white.
pub fn schematic_frame(priors: &ScenePriors, frame: usize, catalog: &Catalog) -> RasterImage {
    let mut img = RasterImage::new(priors.meta.width, priors.meta.height, catalog.color("background"));
    let order = [MaskClass::Sidewalk, MaskClass::Curb, MaskClass::OtherLane, MaskClass::EgoLane, MaskClass::HardObject];
    for class in order {
        for m in priors.masks_of(class) {
            if m.is_crosswalk() {
                continue;
            }
            if let Some(f) = m.at_frame(frame) {
                let c = if class.is_lane() { catalog.color("road") } else { catalog.color(class.as_str()) };
                fill_polygon(&mut img, &f.polygon, c, None);
            }
        }
    }
    for m in priors.crosswalks() {
        if let Some(f) = m.at_frame(frame) {
            fill_polygon(&mut img, &f.polygon, catalog.color("marking"), None);
        }
    }
    for b in &priors.boundaries {
        if let Some(f) = b.at_frame(frame) {
            draw_polyline(&mut img, &f.polyline, catalog.color("marking"));
        }
    }
    img
}

/// Ego-lane highlight (alpha 0.4) and lane lines: solid rule lines in the
/// solid-line color, the rest in the marking color.
pub fn overlay_lanes(img: &mut RasterImage, ego_lane: &[Vec<Point>], boundaries: &[BoundaryLine], catalog: &Catalog) {
    for poly in ego_lane {
        fill_polygon(img, poly, catalog.color("ego_lane"), Some(400));
    }
    for b in boundaries {
        let c = if b.style.is_solid() { catalog.color("solid_line") } else { catalog.color("marking") };
        draw_polyline(img, &b.polyline, c);
    }
}

/// Integer pixel span `[lo, hi)` covered by `[start, start + len)`.
fn span(start: f64, len: f64, limit: u32) -> (i64, i64) {
    let lo = start.round() as i64;
    let hi = (start + len).round() as i64;
    (lo.max(0), hi.min(limit as i64))
}

/// Draws a 2-pixel stroke along the inside of `rect`'s border.
pub fn draw_box(img: &mut RasterImage, rect: &Rect, c: [u8; 3]) {
    let (x0, x1) = span(rect.x, rect.w, img.width);
    let (y0, y1) = span(rect.y, rect.h, img.height);
    let (rx0, rx1) = (rect.x.round() as i64, (rect.x + rect.w).round() as i64);
    let (ry0, ry1) = (rect.y.round() as i64, (rect.y + rect.h).round() as i64);
    for y in y0..y1 {
        for x in x0..x1 {
            let border = x < rx0 + 2 || x >= rx1 - 2 || y < ry0 + 2 || y >= ry1 - 2;
            if border {
                img.set(x as u32, y as u32, c);
            }
        }
    }
}

fn class_color(catalog: &Catalog, d: &Detection) -> [u8; 3] {
    catalog.color(d.class.as_str())
}

/// Raw, boxed and mask-overlaid versions of one frame.
pub fn render_keyframe_triplet(
    raw: &RasterImage,
    boxes: &[&Detection],
    masks: &[(MaskClass, &[Point])],
    catalog: &Catalog,
) -> (RasterImage, RasterImage, RasterImage) {
    let mut boxed = raw.clone();
    for d in boxes {
        draw_box(&mut boxed, &d.rect, class_color(catalog, d));
    }
    let mut masked = raw.clone();
    for (class, poly) in masks {
        fill_polygon(&mut masked, poly, catalog.color(class.as_str()), Some(400));
    }
    (raw.clone(), boxed, masked)
}

/// Grows `rect` by `margin` of its size on every side about its center and
/// clips it to `bounds`.
pub fn expand_roi(rect: &Rect, margin: f64, bounds: &Rect) -> Option<Rect> {
    let (w, h) = (rect.w * (1.0 + 2.0 * margin), rect.h * (1.0 + 2.0 * margin));
    let (cx, cy) = (rect.x + rect.w / 2.0, rect.y + rect.h / 2.0);
    Rect::new(cx - w / 2.0, cy - h / 2.0, w, h).intersect(bounds)
}

/// Crops the expanded, clipped box, rescales it with one factor for both axes
/// (nearest neighbor) and centers it on a black `target` canvas.
pub fn crop_roi(frame: &RasterImage, rect: &Rect, margin: f64, target: (u32, u32)) -> Result<RasterImage, RenderError> {
    let roi = expand_roi(rect, margin, &frame.bounds()).ok_or(RenderError::EmptyRoi)?;
    if roi.w <= 0.0 || roi.h <= 0.0 {
        return Err(RenderError::EmptyRoi);
    }
    let (tw, th) = target;
    let scale = (tw as f64 / roi.w).min(th as f64 / roi.h);
    let ow = ((roi.w * scale).round() as u32).clamp(1, tw);
    let oh = ((roi.h * scale).round() as u32).clamp(1, th);
    let (ox, oy) = ((tw - ow) / 2, (th - oh) / 2);
    let mut out = RasterImage::new(tw, th, [0, 0, 0]);
    let cols: Vec<usize> = (0..ow)
        .map(|i| (roi.x + (i as f64 + 0.5) / scale).floor().clamp(0.0, frame.width as f64 - 1.0) as usize)
        .collect();
    for j in 0..oh {
        let sy = (roi.y + (j as f64 + 0.5) / scale).floor().clamp(0.0, frame.height as f64 - 1.0) as u32;
        let src = &frame.pixels[frame.idx(0, sy)..frame.idx(0, sy) + 3 * frame.width as usize];
        let start = out.idx(ox, oy + j);
        let dst = &mut out.pixels[start..start + 3 * ow as usize];
        for (d, &sx) in dst.chunks_exact_mut(3).zip(&cols) {
            d.copy_from_slice(&src[3 * sx..3 * sx + 3]);
        }
    }
    Ok(out)
}

/// Whole frame letterboxed to `target`.
pub fn fit_frame(frame: &RasterImage, target: (u32, u32)) -> RasterImage {
    crop_roi(frame, &frame.bounds(), 0.0, target).expect("frame bounds are nonempty")
}

/// Opacity in thousandths for a track point `age` frames old.
fn fade_alpha(age: usize, window: usize) -> u32 {
    if window <= 1 {
        return 1000;
    }
    let age = age.min(window - 1) as u32;
    1000 - 800 * age / (window as u32 - 1)
}

/// Draws each track's recent bottom-center path (within `window` frames up
/// to `frame`) fading from full opacity to 0.2, plus a 3x3 dot at the
/// current position.
pub fn draw_track_overlay(img: &mut RasterImage, tracks: &[&Tracklet], frame: usize, window: usize, catalog: &Catalog) {
    for t in tracks {
        let c = catalog.color(t.class.as_str());
        let recent: Vec<&Detection> =
            t.boxes.iter().filter(|b| b.frame <= frame && b.frame + window > frame).collect();
        for w in recent.windows(2) {
            let alpha = fade_alpha(frame - w[1].frame, window);
            for (x, y) in line_pixels(w[0].bottom_center(), w[1].bottom_center()) {
                img.blend_signed(x, y, c, alpha);
            }
        }
        if let Some(cur) = t.at_frame(frame) {
            let p = cur.bottom_center();
            let (px, py) = (p.x.floor() as i64, p.y.floor() as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    img.set_signed(px + dx, py + dy, c);
                }
            }
        }
    }
}

/// Raw frames and their track-overlaid counterparts for `frames`.
pub fn render_clip_pair(
    raw_frames: &[(usize, RasterImage)],
    tracks: &[&Tracklet],
    window: usize,
    catalog: &Catalog,
) -> (Vec<RasterImage>, Vec<RasterImage>) {
    let raw: Vec<RasterImage> = raw_frames.iter().map(|(_, img)| img.clone()).collect();
    let overlaid = raw_frames
        .iter()
        .map(|(f, img)| {
            let mut o = img.clone();
            draw_track_overlay(&mut o, tracks, *f, window, catalog);
            o
        })
        .collect();
    (raw, overlaid)
}

/// Two-level sub-clips: the full clip at stride 2, then each half at stride
/// 1. Clips shorter than 4 frames yield only themselves.
pub fn sub_clips(clip: &ClipRange) -> Vec<Vec<usize>> {
    let frames: Vec<usize> = clip.frames().collect();
    if frames.len() < 4 {
        return vec![frames];
    }
    let half = frames.len() / 2;
    vec![frames.iter().copied().step_by(2).collect(), frames[..half].to_vec(), frames[half..].to_vec()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ActorClass;

    fn det(x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection { frame: 0, rect: Rect::new(x, y, w, h), class: ActorClass::Vehicle, conf: 1.0 }
    }

    #[test]
    fn empty_overlays_are_identity() {
        let raw = RasterImage::new(16, 12, [50, 60, 70]);
        let (a, b, c) = render_keyframe_triplet(&raw, &[], &[], Catalog::builtin());
        assert!(a == raw && b == raw && c == raw);
    }

    #[test]
    fn box_stroke_only_touches_border() {
        let raw = RasterImage::new(64, 64, [128, 128, 128]);
        let d = det(10.0, 10.0, 20.0, 20.0);
        let (_, boxed, _) = render_keyframe_triplet(&raw, &[&d], &[], Catalog::builtin());
        for y in 0..64 {
            for x in 0..64 {
                let inside = (10..30).contains(&x) && (10..30).contains(&y);
                let inner = (12..28).contains(&x) && (12..28).contains(&y);
                let border = inside && !inner;
                assert_eq!(boxed.get(x, y) != raw.get(x, y), border, "({x},{y})");
            }
        }
    }

    #[test]
    fn roi_expansion_and_clipping() {
        let b = Rect::new(0.0, 0.0, 100.0, 100.0);
        assert_eq!(expand_roi(&Rect::new(10.0, 10.0, 20.0, 20.0), 0.25, &b), Some(Rect::new(5.0, 5.0, 30.0, 30.0)));
        assert_eq!(expand_roi(&Rect::new(0.0, 0.0, 10.0, 10.0), 0.25, &b), Some(Rect::new(0.0, 0.0, 12.5, 12.5)));
    }

    #[test]
    fn letterbox_bars_are_symmetric() {
        let img = RasterImage::new(40, 40, [200, 200, 200]);
        let out = crop_roi(&img, &Rect::new(10.0, 10.0, 20.0, 20.0), 0.0, (64, 32)).unwrap();
        let lit: Vec<u32> = (0..64).filter(|&x| out.get(x, 16) != [0, 0, 0]).collect();
        let left = lit[0];
        let right = 63 - lit[lit.len() - 1];
        assert!(left.abs_diff(right) <= 1, "{left} {right}");
        assert_eq!(lit.len(), 32);
    }

    #[test]
    fn empty_roi_is_error() {
        let img = RasterImage::new(10, 10, [0, 0, 0]);
        assert_eq!(crop_roi(&img, &Rect::new(50.0, 50.0, 5.0, 5.0), 0.25, (8, 8)), Err(RenderError::EmptyRoi));
    }

    #[test]
    fn sub_clip_rule() {
        let c = ClipRange { index: 0, start: 0, end: 10, key_frame: 5 };
        assert_eq!(sub_clips(&c), vec![vec![0, 2, 4, 6, 8], vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]]);
        let c = ClipRange { index: 0, start: 0, end: 2, key_frame: 1 };
        assert_eq!(sub_clips(&c), vec![vec![0, 1]]);
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = RasterImage::new(3, 2, [1, 2, 3]);
        img.set(2, 1, [9, 8, 7]);
        assert_eq!(RasterImage::from_ppm(&img.to_ppm()).unwrap(), img);
    }

    #[test]
    fn fade_endpoints() {
        assert_eq!(fade_alpha(0, 16), 1000);
        assert_eq!(fade_alpha(15, 16), 200);
        assert_eq!(fade_alpha(40, 16), 200);
    }

    #[test]
    fn single_frame_track_is_a_dot() {
        let mut img = RasterImage::new(20, 20, [0, 0, 0]);
        let t = Tracklet { track_id: 1, class: ActorClass::Vehicle, boxes: vec![det(5.0, 5.0, 4.0, 4.0)] };
        draw_track_overlay(&mut img, &[&t], 0, 16, Catalog::builtin());
        let changed = (0..20).flat_map(|y| (0..20).map(move |x| (x, y))).filter(|&(x, y)| img.get(x, y) != [0, 0, 0]).count();
        assert_eq!(changed, 9);
    }
}
