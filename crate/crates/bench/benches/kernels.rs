use criterion::{black_box, criterion_group, criterion_main, Criterion};
use factsum::autodiff::{ParamStore, Tape, Tensor};
use factsum::corpus::{generate_corpus, Corpus, CorpusConfig};
use factsum::training::{beam_search, greedy_decode, prepare, train_step, Adam, Sampler, TrainExample};
use factsum::vocab::build_vocab;
use factsum::{ModelConfig, RewardWeights, RuleSet, Summarizer, TrainConfig};

fn setup() -> (Corpus, Summarizer) {
    let corpus = generate_corpus(&CorpusConfig {
        n_reports: 140,
        seed: 3,
        ..CorpusConfig::default()
    })
    .unwrap();
    let vocab = build_vocab(&corpus.train.reports, 1);
    let model = Summarizer::new(ModelConfig::default(), vocab, 3).unwrap();
    (corpus, model)
}

fn lstm_cell(c: &mut Criterion) {
    let (input, hidden) = (64, 128);
    let mut store = ParamStore::new();
    let w = store
        .insert("w", Tensor::new(vec![4 * hidden, input + hidden], vec![0.01; 4 * hidden * (input + hidden)]).unwrap())
        .unwrap();
    let b = store.insert("b", Tensor::vector(vec![0.0; 4 * hidden])).unwrap();
    c.bench_function("lstm_cell forward+backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::vector(vec![0.5; input]));
            let h = tape.input(Tensor::vector(vec![0.1; hidden]));
            let cell = tape.input(Tensor::vector(vec![0.1; hidden]));
            let (w, b) = (tape.param(&store, w), tape.param(&store, b));
            let out = tape.lstm_cell(x, h, cell, w, b).unwrap();
            let s = tape.sum(out);
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn training_steps(c: &mut Criterion) {
    let (corpus, model) = setup();
    let rules = RuleSet::default_rules();
    let tes = prepare(&model, &corpus.train.reports, &rules).unwrap();
    let batch: Vec<&TrainExample> = tes.iter().take(8).collect();
    let config = TrainConfig {
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train_step batch 8");
    group.sample_size(10);
    for (name, weights) in [
        ("nll", RewardWeights::new(0.0, 0.0, 1.0).unwrap()),
        ("self-critical", RewardWeights::default()),
    ] {
        group.bench_function(name, |bench| {
            let mut m = model.clone();
            let mut adam = Adam::new(&m.params);
            let mut step = 0;
            bench.iter(|| {
                step += 1;
                let lr = config.learning_rate;
                black_box(
                    train_step(&mut m, &mut adam, &batch, weights, &rules, &config, lr, step, Sampler::Multinomial)
                        .unwrap(),
                )
            })
        });
    }
    group.finish();
}

fn decoding(c: &mut Criterion) {
    let (corpus, model) = setup();
    let ex = model.example(&corpus.test.reports[0]).unwrap();
    let max_len = model.config.max_decode_len;
    let mut group = c.benchmark_group("decode");
    group.sample_size(10);
    group.bench_function("greedy", |bench| {
        bench.iter(|| black_box(greedy_decode(&model, &ex, max_len).unwrap()))
    });
    group.bench_function("beam 5", |bench| {
        bench.iter(|| black_box(beam_search(&model, &ex, 5, max_len).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, lstm_cell, training_steps, decoding);
criterion_main!(benches);
