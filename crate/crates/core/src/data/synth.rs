//! Procedurally generated digit-glyph corpus.
//!
//! Renders jittered 5x7 digit glyphs (random placement, scale, intensity
//! and pixel noise) at an arbitrary square resolution. Serves as a
//! self-contained stand-in for handwritten-digit data in environments
//! where no dataset files are available.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::rng;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

#[rustfmt::skip]
const GLYPHS: [[u8; GLYPH_H]; 10] = [
    // each row is a 5-bit bitmap, most significant bit leftmost
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

fn glyph_at(digit: usize, x: f64, y: f64) -> f64 {
    // bilinear sample of the binary bitmap; outside is background
    let gx = x * GLYPH_W as f64 - 0.5;
    let gy = y * GLYPH_H as f64 - 0.5;
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    let read = |cx: i64, cy: i64| -> f64 {
        if cx < 0 || cy < 0 || cx >= GLYPH_W as i64 || cy >= GLYPH_H as i64 {
            0.0
        } else {
            let row = GLYPHS[digit][cy as usize];
            ((row >> (GLYPH_W - 1 - cx as usize)) & 1) as f64
        }
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    read(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + read(x0 + 1, y0) * fx * (1.0 - fy)
        + read(x0, y0 + 1) * (1.0 - fx) * fy
        + read(x0 + 1, y0 + 1) * fx * fy
}

fn render(digit: usize, side: usize, r: &mut impl Rng) -> Vec<f32> {
    let scale = r.gen_range(0.70..0.92);
    let box_h = side as f64 * scale;
    let box_w = box_h * (GLYPH_W as f64 / GLYPH_H as f64);
    let max_dx = (side as f64 - box_w).max(0.0);
    let max_dy = (side as f64 - box_h).max(0.0);
    let off_x = r.gen_range(0.0..=max_dx);
    let off_y = r.gen_range(0.0..=max_dy);
    let intensity = r.gen_range(0.6..1.0);
    let noise = 0.03;

    let mut out = vec![0.0f32; side * side];
    for py in 0..side {
        for px in 0..side {
            let u = (px as f64 + 0.5 - off_x) / box_w;
            let v = (py as f64 + 0.5 - off_y) / box_h;
            let ink = if (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v) {
                glyph_at(digit, u, v)
            } else {
                0.0
            };
            let n: f64 = r.sample(StandardNormal);
            out[py * side + px] = ((ink * intensity + noise * n).clamp(0.0, 1.0)) as f32;
        }
    }
    out
}

/// Generate `per_class` samples of each digit 0-9 at `side x side`
/// resolution. Samples are class-blocked; labels carried.
pub fn synthetic_digits(per_class: usize, side: usize, seed: u64) -> Result<SampleBatch> {
    if per_class == 0 || side < 5 {
        return Err(Error::Data("need per_class >= 1 and side >= 5".into()));
    }
    let count = per_class * 10;
    let dim = side * side;
    let mut data = Array2::zeros((count, dim));
    let mut labels = Vec::with_capacity(count);
    let mut r = rng::stream(seed, "synth/digits");
    for digit in 0..10usize {
        for i in 0..per_class {
            let row = render(digit, side, &mut r);
            for (j, v) in row.iter().enumerate() {
                data[[digit * per_class + i, j]] = *v;
            }
            labels.push(digit as u16);
            let _ = i;
        }
    }
    SampleBatch::new(data, vec![1, side, side], Some(labels), None)
}
