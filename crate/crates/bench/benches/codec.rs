use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ocsc_bench::frames;
use ocsc_core::codec::{parse_frame, parse_tlvs, serialize, TlvLayout, HEADER_LEN};

fn bench_parse(c: &mut Criterion) {
    let mut group = c.benchmark_group("parse_frame");
    for (name, frame) in frames() {
        group.throughput(Throughput::Bytes(frame.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(name), &frame, |b, f| {
            b.iter(|| parse_frame(black_box(f)).unwrap())
        });
    }
    group.finish();
}

fn bench_serialize(c: &mut Criterion) {
    let mut group = c.benchmark_group("serialize");
    for (name, frame) in frames() {
        let msg = parse_frame(&frame).unwrap();
        group.throughput(Throughput::Bytes(frame.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(name), &msg, |b, m| {
            b.iter(|| serialize(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_tlvs(c: &mut Criterion) {
    let (_, listing) = &frames()[0];
    let body = &listing[HEADER_LEN..];
    c.bench_function("parse_tlvs/listing_body", |b| {
        b.iter(|| parse_tlvs(black_box(body), TlvLayout::Narrow))
    });
}

criterion_group!(codec, bench_parse, bench_serialize, bench_tlvs);
criterion_main!(codec);
