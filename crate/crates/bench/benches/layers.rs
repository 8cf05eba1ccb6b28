use arn::graph::{Layer, LayerConfig};
use arn::vision::{perturb_image, tile_image};
use arn::{ArnClassifier, Image, Label, PipelineConfig, TilingSpec};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sparse stroke-like image on the 8-bit pixel grid.
fn synthetic_image(rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::zeros(28, 28);
    let (r0, c0) = (rng.gen_range(4..12), rng.gen_range(4..12));
    for k in 0..14 {
        let r = (r0 + k).min(27);
        let c = (c0 + k * rng.gen_range(0..2)).min(27);
        img.set(r, c, f64::from(rng.gen_range(128u8..=255)) / 255.0);
    }
    img
}

fn layer_scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut group = c.benchmark_group("layer_present");
    for &nodes in &[100usize, 1000] {
        let mut layer = Layer::new(LayerConfig::new(49, 0.9, 2.42)).unwrap();
        for _ in 0..nodes {
            let v: Vec<f64> = (0..49)
                .map(|_| f64::from(rng.gen_range(0u8..=255)) / 255.0)
                .collect();
            let _ = layer.create_node(&v, None);
        }
        let probe: Vec<f64> = (0..49)
            .map(|_| f64::from(rng.gen_range(0u8..=255)) / 255.0)
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(nodes), &probe, |b, p| {
            b.iter(|| layer.present(black_box(&p[..])).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let images: Vec<Image> = (0..100).map(|_| synthetic_image(&mut rng)).collect();
    let labels: Vec<Label> = (0..100).map(|i| Label((i % 10) as u8)).collect();
    let spec = TilingSpec::mnist();

    c.bench_function("tile_image", |b| {
        b.iter(|| tile_image(black_box(&images[0]), &spec).unwrap())
    });
    c.bench_function("perturb_image", |b| {
        b.iter(|| perturb_image(black_box(&images[0]), 10.0).unwrap())
    });

    let mut net = ArnClassifier::new(PipelineConfig::default()).unwrap();
    net.train(&images, &labels).unwrap();
    c.bench_function("classify", |b| {
        b.iter(|| net.predict(black_box(&images[3])).unwrap())
    });
    c.bench_function("train_100", |b| {
        b.iter(|| {
            let mut n = ArnClassifier::new(PipelineConfig::default()).unwrap();
            n.train(black_box(&images), &labels).unwrap()
        })
    });
}

criterion_group!(benches, layer_scan, pipeline);
criterion_main!(benches);
