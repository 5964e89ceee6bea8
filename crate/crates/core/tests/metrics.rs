use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftnet_core::mask::MaskImage;
use shiftnet_core::metrics::{evaluate, mean_l2, psnr, ssim, Region, PSNR_CAP};
use shiftnet_core::Tensor;

fn gray(t: &Tensor<f64>) -> (usize, usize, Vec<f64>) {
    let (_, c, h, w) = t.dims4().unwrap();
    let g = (0..h * w)
        .map(|p| (0..c).map(|ch| t.data()[ch * h * w + p]).sum::<f64>() / c as f64)
        .collect();
    (h, w, g)
}

/// Direct windowed SSIM: explicit 2-D Gaussian weights at every valid
/// window, no separable filtering.
fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (h, w, x) = gray(a);
    let (_, _, y) = gray(b);
    let mut kernel = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *k = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *k;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for top in 0..=h - 11 {
        for left in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = kernel[i][j] / total;
                    let p = (top + i) * w + left + j;
                    mx += k * x[p];
                    my += k * y[p];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = kernel[i][j] / total;
                    let p = (top + i) * w + left + j;
                    vx += k * (x[p] - mx).powi(2);
                    vy += k * (y[p] - my).powi(2);
                    cov += k * (x[p] - mx) * (y[p] - my);
                }
            }
            sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn psnr_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64;
    -10.0 * mse.log10()
}

fn random_pair(seed: u64, h: usize, w: usize) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::uniform([1, 3, h, w], 0.0, 1.0, &mut rng);
    let b = Tensor::uniform([1, 3, h, w], 0.0, 1.0, &mut rng);
    (a, b)
}

#[test]
fn metrics_match_direct_oracles() {
    for seed in 0..10 {
        let (a, b) = random_pair(seed, 16 + seed as usize, 20);
        assert!((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        let inv = a.map(|v| 1.0 - v);
        assert!((ssim(&a, &inv).unwrap() - ssim_oracle(&a, &inv)).abs() < 1e-9);
    }
}

#[test]
fn identical_images_hit_the_edge_values() {
    let (a, _) = random_pair(3, 24, 24);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(mean_l2(&a, &a).unwrap(), 0.0);
}

#[test]
fn shape_mismatch_is_an_error() {
    let (a, _) = random_pair(0, 16, 16);
    let (b, _) = random_pair(0, 16, 17);
    assert!(psnr(&a, &b).is_err());
    assert!(ssim(&a, &b).is_err());
    assert!(mean_l2(&a, &b).is_err());
}

#[test]
fn hole_region_ignores_known_pixels() {
    let (a, _) = random_pair(1, 16, 16);
    let mask = MaskImage::from_fn(16, 16, |y, x| (4..12).contains(&y) && (4..12).contains(&x));
    let mut b = a.clone();
    b.data_mut()[0] = 0.123; // known pixel (0, 0), channel 0
    let hole = evaluate(&a, &b, &mask, Region::Hole).unwrap();
    assert_eq!(hole.mean_l2, 0.0);
    assert_eq!(hole.psnr, PSNR_CAP);
    let full = evaluate(&a, &b, &mask, Region::Full).unwrap();
    assert!(full.mean_l2 > 0.0);
}

#[test]
fn psnr_falls_with_noise_amplitude() {
    let (a, n) = random_pair(2, 16, 16);
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let b = a.zip_map(&n, |x, r| x + amp * (r - 0.5)).unwrap();
        let p = psnr(&a, &b).unwrap();
        assert!(p < last);
        last = p;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_symmetric(seed in any::<u64>()) {
        let (a, b) = random_pair(seed, 12, 12);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(mean_l2(&a, &b).unwrap(), mean_l2(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }
}
