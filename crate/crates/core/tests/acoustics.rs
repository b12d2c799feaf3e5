use std::f64::consts::PI;

use rand::Rng;
use regionsep::acoustics::{
    distance, reflection_coefficient, schroeder_t60, simulate_array_rirs, simulate_rir, simulate_rir_with_beta,
    ArraySpec, ImageOrder, Point3, RoomSpec, WallModel, KERNEL_TAPS,
};
use regionsep::dataset::car_cabin_regions;
use regionsep::rng::seeded;

/// Independent fractional-delay oracle: direct path plus the six first-order
/// wall images, each a Hann-windowed sinc.
fn first_order_oracle(room: &RoomSpec, beta: f64, src: Point3, mic: Point3, len: usize) -> Vec<f64> {
    let half = (KERNEL_TAPS as i64 - 1) / 2;
    let mut images = vec![(src, 1.0)];
    for axis in 0..3 {
        for wall in [0.0, room.dimensions[axis]] {
            let mut img = src;
            img[axis] = 2.0 * wall - src[axis];
            images.push((img, beta));
        }
    }
    let mut out = vec![0.0; len];
    for (img, gain) in images {
        let d = distance(img, mic);
        let delay = d * room.sample_rate / room.speed_of_sound;
        let center = delay.floor() as i64;
        for n in (center - half).max(0)..=(center + half).min(len as i64 - 1) {
            let x = n as f64 - delay;
            let window = 0.5 * (1.0 + (PI * x / (half as f64 + 1.0)).cos());
            let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            out[n as usize] += gain / (4.0 * PI * d) * window * sinc;
        }
    }
    out
}

fn random_point(rng: &mut impl Rng, lo: Point3, hi: Point3) -> Point3 {
    [0, 1, 2].map(|i| rng.random_range(lo[i]..hi[i]))
}

#[test]
fn first_order_matches_brute_force() {
    let room = RoomSpec::car_cabin(0.1).unwrap();
    let mut rng = seeded(11);
    for _ in 0..10 {
        let src = random_point(&mut rng, [0.3, 0.3, 0.3], [2.7, 1.7, 1.2]);
        let mic = random_point(&mut rng, [0.3, 0.3, 0.3], [2.7, 1.7, 1.2]);
        let beta = rng.random_range(0.1..0.95);
        let rir = simulate_rir_with_beta(&room, beta, src, mic, ImageOrder::Limited(1)).unwrap();
        let oracle = first_order_oracle(&room, beta, src, mic, rir.samples.len());
        let dev = rir
            .samples
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-10, "deviation {dev:e}");
    }
}

#[test]
fn direct_path_arrives_first() {
    let room = RoomSpec::car_cabin(0.08).unwrap();
    let array = ArraySpec::car_cabin();
    let mut rng = seeded(5);
    for region in car_cabin_regions() {
        for _ in 0..3 {
            let src = random_point(&mut rng, region.min_corner(), region.max_corner());
            for rir in simulate_array_rirs(&room, &array, src).unwrap() {
                let d = distance(src, rir.mic);
                let direct = d * room.sample_rate / room.speed_of_sound;
                // First sample above 30% of the direct-path amplitude: beyond
                // every kernel sidelobe, so it marks the first arrival.
                let level = 0.3 / (4.0 * PI * d);
                let first = rir.samples.iter().position(|v| v.abs() > level).unwrap();
                assert!((first as f64 - direct).abs() <= 1.0, "first arrival {first}, direct {direct}");
            }
        }
    }
}

#[test]
fn adjacent_mic_delay_bounded_by_spacing() {
    let room = RoomSpec::car_cabin(0.05).unwrap();
    let array = ArraySpec::car_cabin();
    let bound = 0.08 * room.sample_rate / room.speed_of_sound;
    assert!((bound - 3.7318).abs() < 1e-3);
    let mut rng = seeded(9);
    for region in car_cabin_regions() {
        for _ in 0..5 {
            let src = random_point(&mut rng, region.min_corner(), region.max_corner());
            let rirs = simulate_array_rirs(&room, &array, src).unwrap();
            let arrivals: Vec<usize> = rirs
                .iter()
                .map(|h| {
                    let level = 0.3 / (4.0 * PI * distance(src, h.mic));
                    h.samples.iter().position(|v| v.abs() > level).unwrap()
                })
                .collect();
            for m in 0..2 {
                let geometric = (distance(src, array.mic_positions[m]) - distance(src, array.mic_positions[m + 1])).abs()
                    * room.sample_rate
                    / room.speed_of_sound;
                assert!(geometric <= bound + 1e-9);
                // Integer arrival indices can round up by one sample at most.
                assert!((arrivals[m] as f64 - arrivals[m + 1] as f64).abs() <= bound.ceil());
            }
        }
    }
}

#[test]
fn sabine_coefficient_at_reference_t60() {
    let room = RoomSpec::car_cabin(0.1).unwrap();
    let beta = reflection_coefficient(&room).unwrap();
    assert!((beta - 0.680).abs() < 1e-3, "{beta}");
    assert!(reflection_coefficient(&room.with_t60(0.05)).is_err());
}

#[test]
fn measured_t60_tracks_request() {
    let array = ArraySpec::car_cabin();
    let mut rng = seeded(21);
    for t60 in [0.05, 0.1] {
        let room = RoomSpec::car_cabin(t60).unwrap();
        assert_eq!(room.wall_model, WallModel::Calibrated);
        let mut estimates = Vec::new();
        for region in car_cabin_regions() {
            for _ in 0..2 {
                let src = random_point(&mut rng, region.min_corner(), region.max_corner());
                let rir = simulate_rir(&room, src, array.mic_positions[1], ImageOrder::Auto).unwrap();
                estimates.push(schroeder_t60(&rir.samples, room.sample_rate).unwrap());
            }
        }
        for est in &estimates {
            assert!((est - t60).abs() <= 0.2 * t60, "T60 {t60}: estimate {est}");
        }
    }
}
