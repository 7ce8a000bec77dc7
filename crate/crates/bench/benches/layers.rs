use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protgo::autodiff::{GruWeights, Graph, ParamStore, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("conv1d_same");
    for k in [3usize, 7, 11] {
        let mut store = ParamStore::<f32>::new();
        let x = store.add("x", random(&mut rng, &[8, 200, 50])).unwrap();
        let w = store.add("w", random(&mut rng, &[k, 50, 64])).unwrap();
        let b = store.add("b", random(&mut rng, &[64])).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new(&store);
                let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv1d_same(xv, wv, bv).unwrap();
                let l = g.sum(y);
                g.backward(l).unwrap()
            })
        });
    }
    group.finish();
}

fn bigru(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (bsz, len, inputs, h) = (8, 100, 48, 32);
    let mut store = ParamStore::<f32>::new();
    let x = store.add("x", random(&mut rng, &[bsz, len, inputs])).unwrap();
    let mut dir = |p: &str| {
        [
            store.add(format!("{p}.w"), random(&mut rng, &[inputs, 3 * h])).unwrap(),
            store.add(format!("{p}.u"), random(&mut rng, &[h, 3 * h])).unwrap(),
            store.add(format!("{p}.b"), random(&mut rng, &[3 * h])).unwrap(),
        ]
    };
    let (f, b) = (dir("f"), dir("b"));
    let mask = vec![1u8; bsz * len];
    c.bench_function("bigru_forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store);
            let xv = g.param(x);
            let fw = GruWeights {
                input: g.param(f[0]),
                recurrent: g.param(f[1]),
                bias: g.param(f[2]),
            };
            let bw = GruWeights {
                input: g.param(b[0]),
                recurrent: g.param(b[1]),
                bias: g.param(b[2]),
            };
            let y = g.bigru(xv, &mask, fw, bw).unwrap();
            let l = g.sum(y);
            g.backward(l).unwrap()
        })
    });
}

criterion_group!(benches, conv, bigru);
criterion_main!(benches);
