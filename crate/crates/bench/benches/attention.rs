use attnas_bench::{activations, single_block};
use attnas_core::AttentionKind;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const LENGTHS: [usize; 4] = [64, 128, 256, 512];

fn attention_blocks(c: &mut Criterion) {
    for kind in AttentionKind::ALL {
        let mut group = c.benchmark_group(format!("block/{kind}"));
        group.sample_size(10);
        let model = single_block(kind, *LENGTHS.last().unwrap());
        for n in LENGTHS {
            let x = activations(n, 1);
            group.throughput(Throughput::Elements(n as u64));
            group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| model.block_forward(0, 0, x).unwrap()));
        }
        group.finish();
    }
}

criterion_group!(benches, attention_blocks);
criterion_main!(benches);
