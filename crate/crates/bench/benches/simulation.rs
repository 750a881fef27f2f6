use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tbqkd::apparatus::{prepare_channel, ChannelVector, ReturnMap};
use tbqkd::noise::NoiseSample;
use tbqkd::protocol::{run_session_tally, SessionConfig};
use tbqkd::{estimate_visibility, propagate, ApparatusConfig, DetectorConfig, NoiseModel, OutputPort};

fn round_trip(c: &mut Criterion) {
    let config = ApparatusConfig::filtered(2);
    let noise = NoiseSample::from_pairs((0..4).map(|b| (b, 0.1 * f64::from(b))));
    c.bench_function("propagate/filtered_n2", |b| {
        b.iter(|| propagate(black_box(&config), 0.0, 0.0, black_box(&noise)).unwrap())
    });

    let vector = ChannelVector::new(&prepare_channel(&config, 0.0).unwrap());
    let ret = ReturnMap::compile(&config, &vector, 0.0).unwrap();
    let x = vector.amplitudes.clone();
    c.bench_function("return_map/filtered_n2", |b| {
        b.iter(|| ret.intensity(black_box(&x), OutputPort::P1, 2))
    });
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for n in [1, 2, 8] {
        let config = ApparatusConfig::filtered(n);
        group.bench_function(format!("visibility_10k/n{n}"), |b| {
            b.iter(|| estimate_visibility(&config, 0.5, 10_000, 0).unwrap())
        });
    }
    let session = SessionConfig::new(
        ApparatusConfig::filtered(2),
        NoiseModel::new(0.3655).unwrap(),
        DetectorConfig::default(),
    );
    group.bench_function("session_tally_100k", |b| {
        b.iter(|| run_session_tally(&session, 100_000, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, round_trip, monte_carlo);
criterion_main!(benches);
