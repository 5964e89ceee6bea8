//! Procedural textures used as a desk-scale training corpus: a colour
//! gradient background, a striped half, and a few solid rectangles. The
//! stripes give the shift connection repeated structure to copy.

use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

fn color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
}

/// One `1×3×size×size` image in `[−1, 1]`.
pub fn texture<T: Real>(size: usize, rng: &mut impl Rng) -> Tensor<T> {
    let s = size as f64;
    let (c0, c1) = (color(rng), color(rng));
    let angle: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
    let (dx, dy) = (num_traits::Float::cos(angle), num_traits::Float::sin(angle));

    // Stripes must stand out from the background they cover.
    let mid: [f64; 3] = core::array::from_fn(|c| 0.5 * (c0[c] + c1[c]));
    let stripe_color = loop {
        let c = color(rng);
        if (0..3).any(|i| (c[i] - mid[i]).abs() >= 0.6) {
            break c;
        }
    };
    let period = rng.gen_range(3..=8usize);
    let orientation = rng.gen_range(0..3u8);
    let half = rng.gen_range(0..4u8);

    let n_rects = rng.gen_range(1..=2usize);
    let mut rects = [(0usize, 0usize, 0usize, 0usize, [0.0f64; 3]); 2];
    for r in rects.iter_mut().take(n_rects) {
        let h = rng.gen_range(size / 8..=size / 4).max(1);
        let w = rng.gen_range(size / 8..=size / 4).max(1);
        let y = rng.gen_range(0..=size - h);
        let x = rng.gen_range(0..=size - w);
        *r = (y, x, h, w, color(rng));
    }

    let mut img = Tensor::zeros([1, 3, size, size]);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 / s - 0.5, x as f64 / s - 0.5);
            let t = ((fx * dx + fy * dy) + 0.75).clamp(0.0, 1.5) / 1.5;
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] + (c1[c] - c0[c]) * t;
            }
            let in_half = match half {
                0 => x < size / 2,
                1 => x >= size / 2,
                2 => y < size / 2,
                _ => y >= size / 2,
            };
            let phase = match orientation {
                0 => x,
                1 => y,
                _ => x + y,
            };
            if in_half && (phase / period.div_ceil(2)) % 2 == 0 {
                px = stripe_color;
            }
            for &(ry, rx, rh, rw, rc) in rects.iter().take(n_rects) {
                if (ry..ry + rh).contains(&y) && (rx..rx + rw).contains(&x) {
                    px = rc;
                }
            }
            for (c, v) in px.iter().enumerate() {
                let i = img.idx4(0, c, y, x);
                img.data_mut()[i] = T::lit(v.clamp(-1.0, 1.0));
            }
        }
    }
    img
}
