use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use regionsep::acoustics::{simulate_rir_with_beta, ImageOrder, RoomSpec};
use regionsep::objectives::Regime;
use regionsep::rng::seeded;
use regionsep::separator::{forward, ModelConfig, ModelParams};
use regionsep::{Tape, Tensor};

fn matmul(c: &mut Criterion) {
    let mut rng = seeded(1);
    let a = Tensor::uniform([64, 128], 1.0, &mut rng);
    let b = Tensor::uniform([128, 128], 1.0, &mut rng);
    c.bench_function("matmul_64x128x128_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (x, w) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
            let y = tape.matmul(x, w).unwrap();
            let s = tape.sum(y);
            tape.backward(s).unwrap()
        })
    });
}

fn conv1d(c: &mut Criterion) {
    let mut rng = seeded(2);
    let x = Tensor::uniform([3, 4000], 1.0, &mut rng);
    let k = Tensor::uniform([16, 1, 16], 0.2, &mut rng);
    c.bench_function("conv1d_3x4000_f16_w16_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let xv = tape.reshape(xv, &[3, 1, 4000]).unwrap();
            let kv = tape.leaf(k.clone());
            let y = tape.conv1d(xv, kv, 8).unwrap();
            let s = tape.sum(y);
            tape.backward(s).unwrap()
        })
    });
}

fn rir(c: &mut Criterion) {
    let room = RoomSpec::car_cabin(0.1).unwrap();
    let mut group = c.benchmark_group("rir");
    group.sample_size(20);
    group.bench_function("cabin_t60_0.1", |bench| {
        bench.iter(|| simulate_rir_with_beta(&room, 0.68, [1.25, 0.5, 1.0], [0.5, 1.0, 1.0], ImageOrder::Auto).unwrap())
    });
    group.finish();
}

fn separator(c: &mut Criterion) {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, 0).unwrap();
    let mut rng = seeded(3);
    let y = Tensor::uniform([cfg.num_mics, 128], 1.0, &mut rng);
    let t = Tensor::uniform([cfg.num_regions, 128], 1.0, &mut rng);
    c.bench_function("tiny_separator_step", |bench| {
        bench.iter_batched(
            Tape::new,
            |mut tape| {
                let p = params.bind(&mut tape, true);
                let yv = tape.constant(y.clone());
                let out = forward(&mut tape, &p, &cfg, yv).unwrap();
                let (loss, _) = tape.separation_loss(out.estimates, &t, Regime::Pit).unwrap();
                tape.backward(loss).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, matmul, conv1d, rir, separator);
criterion_main!(benches);
