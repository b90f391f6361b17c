//! Matcher shapes, an independent straight-line forward pass, and
//! checkpoint round trips.

use ics_core::matcher::{
    AspectSchema, Checkpoint, HybridConfig, HybridModel, Matcher, MatcherError, PairBatch, StudentConfig, StudentModel, WideTeacher,
};
use ics_core::text::{Vocabulary, PAD};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 12] = ["where", "is", "my", "parcel", "refund", "order", "cancel", "return", "shoes", "late", "broken", "address"];

fn vocab() -> Vocabulary {
    Vocabulary::from_tokens(WORDS)
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn small(widths: Vec<usize>, channels: usize, seq_len: usize) -> StudentConfig {
    StudentConfig { kernel_widths: widths, channels, seq_len, embed_dim: 5, mlp_hidden: vec![7, 4], dropout: 0.2, l2: 0.0 }
}

fn param<'a>(m: &'a impl Matcher, name: &str) -> &'a [f64] {
    let p = m.params();
    p.get(p.find(name).unwrap_or_else(|| panic!("no parameter {name}"))).tensor.data()
}

/// Representation of one text written out loop by loop: zero-padded
/// windows starting at every real token, ReLU, then max and mean over the
/// real positions.
fn oracle_encode(m: &StudentModel, prefix: &str, text: &[String]) -> Vec<f64> {
    let c = m.config();
    let (n, d, o) = (c.seq_len, c.embed_dim, c.channels);
    let emb = param(m, &format!("{prefix}.embedding"));
    let mut ids: Vec<usize> = text.iter().map(|t| m.vocab().id(t)).take(n).collect();
    let real = ids.len();
    ids.resize(n, PAD);
    let mut maxes = Vec::new();
    let mut means = Vec::new();
    for &w in &c.kernel_widths {
        let k = param(m, &format!("{prefix}.conv{w}.kernel"));
        let b = param(m, &format!("{prefix}.conv{w}.bias"));
        let mut mx = vec![f64::NEG_INFINITY; o];
        let mut mean = vec![0.0; o];
        for t in 0..real {
            for ch in 0..o {
                let mut acc = b[ch];
                for j in 0..w {
                    if t + j >= n {
                        continue;
                    }
                    for i in 0..d {
                        acc += emb[ids[t + j] * d + i] * k[(j * d + i) * o + ch];
                    }
                }
                let v = acc.max(0.0);
                mx[ch] = mx[ch].max(v);
                mean[ch] += v / real as f64;
            }
        }
        maxes.extend(mx);
        means.extend(mean);
    }
    maxes.extend(means);
    maxes
}

fn dense(x: &[f64], w: &[f64], b: &[f64], relu: bool) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|j| {
            let v = b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + j]).sum::<f64>();
            if relu {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect()
}

fn oracle_features(m: &StudentModel, prefix: &str, u: &[f64], s: &[f64]) -> Vec<f64> {
    let mut x: Vec<f64> = u.to_vec();
    x.extend(s);
    x.extend(u.iter().zip(s).map(|(a, b)| a * b));
    x.extend(u.iter().zip(s).map(|(a, b)| (a - b) * (a - b)));
    for i in 0..m.config().mlp_hidden.len() {
        x = dense(&x, param(m, &format!("{prefix}.mlp.{i}.weight")), param(m, &format!("{prefix}.mlp.{i}.bias")), true);
    }
    x
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn oracle_student(m: &StudentModel, u: &[String], s: &[String]) -> f64 {
    let feats = oracle_features(m, "student", &oracle_encode(m, "student", u), &oracle_encode(m, "student", s));
    sigmoid(dense(&feats, param(m, "student.head.0.weight"), param(m, "student.head.0.bias"), false)[0])
}

fn jitter_biases(m: &mut impl Matcher, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params_mut().iter_mut() {
        if p.name.ends_with("bias") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
}

#[test]
fn student_matches_straight_line_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut m = StudentModel::new(small(vec![1, 2, 3], 4, 6), vocab(), None, &mut rng).unwrap();
    jitter_biases(&mut m, 2);
    let cases = [
        ("where is my parcel", "parcel late"),
        ("cancel my order now please ok thanks", "cancel order"),
        ("unknownword refund", "refund broken shoes"),
        ("return", "return shoes"),
    ];
    for (u, s) in cases {
        let (u, s) = (toks(u), toks(s));
        let got = m.predict(&u, &s).unwrap();
        let want = oracle_student(&m, &u, &s);
        assert!((got - want).abs() < 1e-12, "{u:?}/{s:?}: {got} vs {want}");
        assert!(
            (m.encode(&u).unwrap().iter().zip(oracle_encode(&m, "student", &u)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)) < 1e-12
        );
    }
}

#[test]
fn hybrid_matches_straight_line_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let student = StudentModel::new(small(vec![2, 3], 3, 5), vocab(), None, &mut rng).unwrap();
    let config = HybridConfig { aspect_hidden: vec![6, 5], fusion_hidden: vec![4], ..HybridConfig::default() };
    let mut h = HybridModel::from_student(&student, config, &mut rng).unwrap();
    jitter_biases(&mut h, 3);
    let width = h.config().aspect_schema.width();
    let aspects: Vec<f64> = (0..width).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
    let (u, s) = (toks("where is my refund"), toks("refund late"));

    // copy the hybrid's text path into a plain student to reuse the oracle
    let mut text = StudentModel::new(small(vec![2, 3], 3, 5), vocab(), None, &mut rng).unwrap();
    for p in text.params_mut().iter_mut() {
        p.tensor.data_mut().copy_from_slice(param(&h, &p.name));
    }
    let feats = oracle_features(&text, "student", &oracle_encode(&text, "student", &u), &oracle_encode(&text, "student", &s));
    let mut a = aspects.clone();
    for i in 0..2 {
        a = dense(&a, param(&h, &format!("aspect.{i}.weight")), param(&h, &format!("aspect.{i}.bias")), true);
    }
    let mut z: Vec<f64> = feats;
    z.extend(a);
    assert_eq!(z.len(), h.fusion_input_dim());
    for i in 0..2 {
        z = dense(&z, param(&h, &format!("fusion.{i}.weight")), param(&h, &format!("fusion.{i}.bias")), i == 0);
    }
    let want = sigmoid(z[0]);
    let batch = PairBatch::from_tokens(h.vocab(), h.seq_len(), &[(&u, &s)]).unwrap().with_aspects(aspects);
    let got = h.predict_batch(&batch).unwrap()[0];
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn default_config_dimensions() {
    let c = StudentConfig::default();
    assert_eq!((c.repr_dim(), c.interaction_dim(), c.feature_dim()), (512, 2048, 128));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = StudentModel::new(c, vocab(), None, &mut rng).unwrap();
    assert_eq!(m.encode(&toks("where is my parcel")).unwrap().len(), 512);
    let u = m.encode(&toks("where")).unwrap();
    assert_eq!(m.params().get(m.params().find("student.mlp.0.weight").unwrap()).tensor.shape(), &[2048, 512]);
    assert_eq!(m.interact(&u, &u).unwrap().len(), 128);
}

fn config_strategy() -> impl Strategy<Value = StudentConfig> {
    (prop::collection::btree_set(1usize..6, 1..4), 1usize..6, 6usize..10, 1usize..5, prop::collection::vec(1usize..8, 1..3)).prop_map(
        |(widths, channels, seq_len, embed_dim, mlp_hidden)| StudentConfig {
            kernel_widths: widths.into_iter().collect(),
            channels,
            seq_len,
            embed_dim,
            mlp_hidden,
            dropout: 0.1,
            l2: 0.0,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn representation_and_interaction_widths(config in config_strategy(), seed in 0u64..1000, batch in 1usize..4) {
        let (k, d_o) = (config.kernel_widths.len(), config.channels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = StudentModel::new(config.clone(), vocab(), None, &mut rng).unwrap();
        prop_assert_eq!(m.repr_dim(), 2 * k * d_o);
        prop_assert_eq!(m.interaction_dim(), 8 * k * d_o);
        let u = m.encode(&toks("my order is late")).unwrap();
        prop_assert_eq!(u.len(), 2 * k * d_o);
        let first = m.params().get(m.params().find("student.mlp.0.weight").unwrap()).tensor.shape().to_vec();
        prop_assert_eq!(first, vec![8 * k * d_o, config.mlp_hidden[0]]);
        prop_assert_eq!(m.interact(&u, &u).unwrap().len(), *config.mlp_hidden.last().unwrap());

        let texts: Vec<Vec<String>> = (0..batch).map(|i| toks(&WORDS[i..i + 3].join(" "))).collect();
        let pairs: Vec<(&[String], &[String])> = texts.iter().map(|t| (t.as_slice(), texts[0].as_slice())).collect();
        let p = m.predict_batch(&PairBatch::from_tokens(m.vocab(), m.seq_len(), &pairs).unwrap()).unwrap();
        prop_assert_eq!(p.len(), batch);
        prop_assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn hybrid_fusion_width(config in config_strategy(), aspect_hidden in prop::collection::vec(1usize..6, 1..3), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let student = StudentModel::new(config.clone(), vocab(), None, &mut rng).unwrap();
        let h = HybridModel::from_student(&student, HybridConfig { aspect_hidden: aspect_hidden.clone(), ..HybridConfig::default() }, &mut rng).unwrap();
        prop_assert_eq!(h.fusion_input_dim(), config.mlp_hidden.last().unwrap() + aspect_hidden.last().unwrap());
    }
}

#[test]
fn hybrid_rejects_missing_or_short_aspects() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let student = StudentModel::new(small(vec![2], 2, 4), vocab(), None, &mut rng).unwrap();
    let h = HybridModel::from_student(&student, HybridConfig::default(), &mut rng).unwrap();
    let (u, s) = (toks("refund"), toks("refund late"));
    let batch = PairBatch::from_tokens(h.vocab(), h.seq_len(), &[(&u, &s)]).unwrap();
    assert!(h.predict_batch(&batch).is_err());
    assert!(h.predict_batch(&batch.with_aspects(vec![0.0; 3])).is_err());
    assert_eq!(AspectSchema::default().width(), h.config().aspect_schema.width());
}

#[test]
fn checkpoints_round_trip_and_fail_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let student = StudentModel::new(small(vec![1, 2], 3, 5), vocab(), None, &mut rng).unwrap();
    let (u, s) = (toks("where is my parcel"), toks("parcel late"));

    let path = dir.path().join("s.json");
    student.save(&path).unwrap();
    let back = StudentModel::load(&path, Some(&vocab())).unwrap();
    assert_eq!(back.param_fingerprint(), student.param_fingerprint());
    assert_eq!(back.predict(&u, &s).unwrap().to_bits(), student.predict(&u, &s).unwrap().to_bits());

    let teacher = WideTeacher::new("wide-test".to_string(), small(vec![1, 2, 3], 4, 5), vocab(), None, &mut rng).unwrap();
    teacher.save(&dir.path().join("t.json")).unwrap();
    let t = WideTeacher::load(&dir.path().join("t.json"), None).unwrap();
    assert_eq!(t.model().param_fingerprint(), teacher.model().param_fingerprint());

    let h = HybridModel::from_student(&student, HybridConfig::default(), &mut rng).unwrap();
    h.save(&dir.path().join("h.json")).unwrap();
    assert_eq!(HybridModel::load(&dir.path().join("h.json"), None).unwrap().param_fingerprint(), h.param_fingerprint());

    // wrong kind
    assert!(HybridModel::load(&path, None).is_err());
    assert!(WideTeacher::load(&path, None).is_err());

    // different vocabulary
    let other = Vocabulary::from_tokens(["completely", "different"]);
    assert!(matches!(StudentModel::load(&path, Some(&other)), Err(MatcherError::VocabMismatch { .. })));

    // truncated file
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.json");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(StudentModel::load(&cut, None).is_err());

    // a tensor blob whose length no longer matches its shape
    let mut ckpt = Checkpoint::read(&path).unwrap();
    let half = ckpt.params[0].data.len() / 2;
    ckpt.params[0].data.truncate(half);
    assert!(StudentModel::from_checkpoint(&ckpt, None).is_err());

    // a missing parameter
    let mut ckpt = Checkpoint::read(&path).unwrap();
    ckpt.params.pop();
    assert!(StudentModel::from_checkpoint(&ckpt, None).is_err());
}
