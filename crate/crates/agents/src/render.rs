//! PNG rendering of density fields and convergence histories.

use std::path::Path;

use image::{ImageResult, Rgb, RgbImage};
use topopt_core::optimizer::OptimizationHistory;

const VOID_COLOUR: Rgb<u8> = Rgb([214, 226, 240]);
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const SERIES: [Rgb<u8>; 4] = [Rgb([31, 119, 180]), Rgb([214, 39, 40]), Rgb([44, 160, 44]), Rgb([148, 103, 189])];

/// Grayscale density image, 0 → white and 1 → black, inactive elements in a
/// pale blue. Row 0 of the image is the top of the domain.
pub fn density_image(rho_bar: &[f64], active: &[bool], nx: usize, ny: usize, pixels_per_element: u32) -> RgbImage {
    let s = pixels_per_element.max(1);
    let mut img = RgbImage::new(nx as u32 * s, ny as u32 * s);
    for ey in 0..ny {
        for ex in 0..nx {
            let e = ey * nx + ex;
            let colour = if active[e] {
                let g = (255.0 * (1.0 - rho_bar[e].clamp(0.0, 1.0))).round() as u8;
                Rgb([g, g, g])
            } else {
                VOID_COLOUR
            };
            let top = (ny - 1 - ey) as u32 * s;
            for py in 0..s {
                for px in 0..s {
                    img.put_pixel(ex as u32 * s + px, top + py, colour);
                }
            }
        }
    }
    img
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), colour: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, colour);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Line chart of the objective (blue) and each constraint (further colours),
/// every series rescaled to its own range. Beta changes are marked with
/// light vertical rules.
pub fn convergence_image(history: &OptimizationHistory, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let margin = 24i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let records = &history.records;
    if w <= 0 || h <= 0 {
        return img;
    }
    let n = records.len();
    let x_of = |i: usize| margin + if n > 1 { (i as i64 * w) / (n as i64 - 1) } else { 0 };

    for i in 1..n {
        if records[i].beta != records[i - 1].beta {
            let x = x_of(i);
            draw_line(&mut img, (x, margin), (x, margin + h), GRID);
        }
    }
    draw_line(&mut img, (margin, margin), (margin, margin + h), AXIS);
    draw_line(&mut img, (margin, margin + h), (margin + w, margin + h), AXIS);

    let mut series: Vec<Vec<f64>> = vec![records.iter().map(|r| r.objective).collect()];
    for c in 0..history.n_constraints() {
        series.push(records.iter().map(|r| r.constraints[c]).collect());
    }
    for (k, values) in series.iter().enumerate() {
        let finite = values.iter().copied().filter(|v| v.is_finite());
        let lo = finite.clone().fold(f64::INFINITY, f64::min);
        let hi = finite.fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            continue;
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        let y_of = |v: f64| margin + h - (((v - lo) / span) * h as f64).round() as i64;
        let colour = SERIES[k % SERIES.len()];
        let points: Vec<(i64, i64)> =
            values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| (x_of(i), y_of(v))).collect();
        if let [only] = points.as_slice() {
            draw_line(&mut img, *only, *only, colour);
        }
        for pair in points.windows(2) {
            draw_line(&mut img, pair[0], pair[1], colour);
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> ImageResult<()> {
    img.save_with_format(path, image::ImageFormat::Png)
}
