use std::io::Cursor;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use pcr::sim::SimExtent;
use pcr::{
    assemble, encode_record, mssim, parse_scans, read_prefix, simulate, FidelityRequest,
    GradModel, ImageDecoder, JpegDecoder, SimConfig,
};
use pcr_bench::{fixture_corpus, record_bytes};

fn scans(c: &mut Criterion) {
    let corpus = fixture_corpus();
    let bytes: u64 = corpus.iter().map(|(b, _)| b.len() as u64).sum();
    let mut g = c.benchmark_group("parse_scans");
    g.throughput(Throughput::Bytes(bytes));
    g.bench_function("fixtures", |b| {
        b.iter(|| {
            for (jpeg, _) in &corpus {
                criterion::black_box(parse_scans(jpeg).unwrap());
            }
        })
    });
    g.finish();
}

fn encode(c: &mut Criterion) {
    let corpus = fixture_corpus();
    let bytes: u64 = corpus.iter().map(|(b, _)| b.len() as u64).sum();
    let mut g = c.benchmark_group("encode_record");
    g.throughput(Throughput::Bytes(bytes));
    g.bench_function("fixtures_10_groups", |b| b.iter(|| encode_record(&corpus, 10).unwrap()));
    g.finish();
}

fn read(c: &mut Criterion) {
    let corpus = fixture_corpus();
    let file = record_bytes(&corpus, 10);
    let mut g = c.benchmark_group("read_prefix_assemble");
    for group in [1, 5, 10] {
        let prefix = read_prefix(&mut Cursor::new(&file), FidelityRequest::new(group)).unwrap();
        g.throughput(Throughput::Bytes(prefix.bytes_read()));
        g.bench_with_input(BenchmarkId::from_parameter(group), &group, |b, &group| {
            b.iter(|| {
                let p = read_prefix(&mut Cursor::new(&file), FidelityRequest::new(group)).unwrap();
                for i in 0..p.n_images() {
                    criterion::black_box(assemble(&p, i, group).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn decode(c: &mut Criterion) {
    let corpus: Vec<_> = fixture_corpus().into_iter().step_by(16).collect();
    let file = record_bytes(&corpus, 10);
    let prefix = read_prefix(&mut Cursor::new(&file), FidelityRequest::new(10)).unwrap();
    let mut g = c.benchmark_group("decode");
    g.throughput(Throughput::Elements(corpus.len() as u64));
    for group in [1, 3, 5, 10] {
        let streams: Vec<Vec<u8>> = (0..prefix.n_images())
            .map(|i| assemble(&prefix, i, group).unwrap().jpeg_bytes)
            .collect();
        g.bench_with_input(BenchmarkId::from_parameter(group), &streams, |b, streams| {
            b.iter(|| {
                for s in streams {
                    criterion::black_box(JpegDecoder.decode_rgb(s).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn quality(c: &mut Criterion) {
    let corpus = fixture_corpus();
    let file = record_bytes(&corpus[..1], 10);
    let prefix = read_prefix(&mut Cursor::new(&file), FidelityRequest::new(10)).unwrap();
    let full = JpegDecoder.decode_rgb(&corpus[0].0).unwrap();
    let low = JpegDecoder
        .decode_rgb(&assemble(&prefix, 0, 2).unwrap().jpeg_bytes)
        .unwrap();
    c.bench_function("mssim_one_image", |b| b.iter(|| mssim(&full, &low).unwrap()));
}

fn gradient(c: &mut Criterion) {
    let model = GradModel::random(10, 1024, 0.01, 1);
    let xs: Vec<Vec<f64>> = (0..256)
        .map(|i| (0..1024).map(|k| ((i * 31 + k * 7) % 255) as f64 / 255.0).collect())
        .collect();
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let labels: Vec<usize> = (0..256).map(|i| i % 10).collect();
    c.bench_function("loss_and_grad_256x1024", |b| {
        b.iter(|| model.loss_and_grad(&refs, &labels).unwrap())
    });
}

fn simulator(c: &mut Criterion) {
    let mut cfg = SimConfig::new(200e6, vec![20e6, 60e6, 120e6], 1024, 2000.0);
    cfg.n_nodes = 4;
    cfg.size_jitter = 0.1;
    cfg.extent = SimExtent::Records(10_000);
    c.bench_function("simulate_4_nodes_10k_records", |b| {
        b.iter_batched(|| cfg.clone(), |cfg| simulate(&cfg).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, scans, encode, read, decode, quality, gradient, simulator);
criterion_main!(benches);
