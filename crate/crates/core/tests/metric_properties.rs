use egosynth_core::data::frame::Frame;
use egosynth_core::metrics::{fid, perceptual_distance, psnr, ssim, RandomProjection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn textured(phase: f32) -> Frame {
    Frame::from_fn(32, 32, 3, |y, x, c| {
        let (y, x) = (y as f32, x as f32);
        0.5 + 0.25 * (0.35 * x + phase + c as f32).sin() + 0.2 * (0.27 * y - 0.6 * phase).cos()
    })
}

fn noisy(frame: &Frame, std: f64, rng: &mut ChaCha8Rng) -> Frame {
    let n = Normal::new(0.0, std).unwrap();
    Frame::from_fn(frame.height(), frame.width(), frame.channels(), |y, x, c| {
        frame.get(y, x, c) + n.sample(rng) as f32
    })
}

const LEVELS: [f64; 3] = [0.02, 0.08, 0.2];

#[test]
fn pairwise_metrics_degrade_with_noise() {
    let clean = textured(0.3);
    let ex = RandomProjection::standard(0);
    let mut sums = [[0.0; 3]; 3];
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, &std) in LEVELS.iter().enumerate() {
            let n = noisy(&clean, std, &mut rng);
            sums[0][i] += ssim(&clean, &n).unwrap();
            sums[1][i] += psnr(&clean, &n).unwrap();
            sums[2][i] += perceptual_distance(&clean, &n, &ex).unwrap();
        }
    }
    for i in 1..3 {
        assert!(sums[0][i] < sums[0][i - 1], "ssim {:?}", sums[0]);
        assert!(sums[1][i] < sums[1][i - 1], "psnr {:?}", sums[1]);
        assert!(sums[2][i] > sums[2][i - 1], "perceptual {:?}", sums[2]);
    }
}

#[test]
fn fid_grows_with_noise() {
    let ex = RandomProjection::new("small", 1, 8, 3, 8);
    let clean: Vec<Frame> = (0..24).map(|k| textured(k as f32 * 0.4)).collect();
    let mut sums = [0.0; 3];
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, &std) in LEVELS.iter().enumerate() {
            let set: Vec<Frame> = clean.iter().map(|f| noisy(f, std, &mut rng)).collect();
            sums[i] += fid(&clean, &set, &ex).unwrap();
        }
    }
    assert!(sums[0] < sums[1] && sums[1] < sums[2], "{sums:?}");
}

#[test]
fn ssim_tolerates_a_one_pixel_shift_better_than_sparse_corruption() {
    let img = textured(1.1);
    let shifted = Frame::from_fn(32, 32, 3, |y, x, c| img.get(y, x.saturating_sub(1), c));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corrupted = Frame::from_fn(32, 32, 3, |y, x, c| {
        if rng.random::<f64>() < 0.05 {
            rng.random::<f32>()
        } else {
            img.get(y, x, c)
        }
    });
    let drop_shift = 1.0 - ssim(&img, &shifted).unwrap();
    let drop_corrupt = 1.0 - ssim(&img, &corrupted).unwrap();
    assert!(drop_shift < drop_corrupt, "shift {drop_shift} vs corruption {drop_corrupt}");
}

#[test]
fn fid_is_symmetric() {
    let ex = RandomProjection::new("small", 2, 8, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<Frame> = (0..20).map(|k| noisy(&textured(k as f32), 0.05, &mut rng)).collect();
    let b: Vec<Frame> = (0..20).map(|k| noisy(&textured(k as f32 * 0.7), 0.1, &mut rng)).collect();
    assert!((fid(&a, &b, &ex).unwrap() - fid(&b, &a, &ex).unwrap()).abs() < 1e-6);
}
