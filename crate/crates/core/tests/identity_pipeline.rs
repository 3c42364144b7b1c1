use nrcid::eval::{generate_synthetic, SyntheticSpec};
use nrcid::identity::{enroll, identify, nrc, ParticipantModel, Registry, TrainingSet};
use nrcid::quantizer::{Codebook, QuantizerSpec};
use nrcid::signal::{segment, FilterSpec, RawRecording};
use nrcid::xafcm::{AlphaMode, ModelParams, XaModel};
use nrcid::Error;

const RATE: f64 = 1000.0;

fn fixture() -> Vec<RawRecording> {
    generate_synthetic(&SyntheticSpec::fixture()).unwrap()
}

fn sessions(data: &[RawRecording], id: &str, names: &[&str]) -> Vec<RawRecording> {
    names
        .iter()
        .map(|s| {
            data.iter()
                .find(|r| r.participant_id == id && r.session_id == *s)
                .unwrap()
                .clone()
        })
        .collect()
}

fn params(k: usize, d: usize) -> ModelParams {
    ModelParams::new(k, d, 17, AlphaMode::Auto).unwrap()
}

fn registry(data: &[RawRecording], p: &ModelParams) -> Registry {
    let filter = FilterSpec::default_at(RATE);
    let ids: Vec<String> = SyntheticSpec::fixture()
        .participants
        .into_iter()
        .map(|g| g.id)
        .collect();
    Registry::new(ids.iter().map(|id| {
        enroll(
            id,
            &sessions(data, id, &["day1", "day2"]),
            p,
            &filter,
            &QuantizerSpec::default(),
        )
        .unwrap()
    }))
    .unwrap()
}

#[test]
fn session_order_does_not_matter_at_order_one() {
    let data = fixture();
    let filter = FilterSpec::default_at(RATE);
    let q = QuantizerSpec::default();
    let fwd = sessions(&data, "P1", &["day1", "day2"]);
    let rev = sessions(&data, "P1", &["day2", "day1"]);
    let a = TrainingSet::prepare("P1", &fwd, &filter, &q).unwrap();
    let b = TrainingSet::prepare("P1", &rev, &filter, &q).unwrap();
    assert_eq!(a.codebook, b.codebook);
    let ma = a.learn(&params(1, 1)).unwrap();
    let mb = b.learn(&params(1, 1)).unwrap();
    assert_eq!(ma.model().counts().sorted(), mb.model().counts().sorted());

    // Brute-force pair counts: adjacent pairs inside each session plus the
    // two junction pairs of the circular concatenation.
    let n1 = a.provenance[0].1;
    let (s1, s2) = a.symbols.as_slice().split_at(n1);
    let mut brute = vec![vec![0u64; 17]; 17];
    for s in [s1, s2] {
        for w in s.windows(2) {
            brute[w[0] as usize][w[1] as usize] += 1;
        }
    }
    brute[*s1.last().unwrap() as usize][s2[0] as usize] += 1;
    brute[*s2.last().unwrap() as usize][s1[0] as usize] += 1;
    for (c, row) in brute.iter().enumerate() {
        for (e, &v) in row.iter().enumerate() {
            assert_eq!(ma.model().count(&[c as u8], &[e as u8]), v);
        }
    }
}

#[test]
fn duplicated_session_keeps_codebook_and_doubles_counts() {
    let data = fixture();
    let filter = FilterSpec::default_at(RATE);
    let q = QuantizerSpec::default();
    let once = sessions(&data, "P2", &["day1"]);
    let twice = [once.clone(), once.clone()].concat();
    let p = params(3, 2);
    let a = enroll("P2", &once, &p, &filter, &q).unwrap();
    let b = enroll("P2", &twice, &p, &filter, &q).unwrap();
    assert_eq!(a.codebook(), b.codebook());
    let ta = a.model().counts().sorted();
    let tb = b.model().counts().sorted();
    assert_eq!(ta.len(), tb.len());
    for ((ca, xa), (cb, xb)) in ta.iter().zip(&tb) {
        assert_eq!(ca, cb);
        assert_eq!(xa.total() * 2, xb.total());
        for &(e, v) in xa.events() {
            assert_eq!(xb.count(e), 2 * v);
        }
    }
}

#[test]
fn constant_signal_is_degenerate() {
    let rec = RawRecording::new("flat", "s1", RATE, vec![3.5; 5000]).unwrap();
    let err = enroll(
        "flat",
        &[rec],
        &params(2, 1),
        &FilterSpec::default_at(RATE),
        &QuantizerSpec::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::DegenerateData(_)), "{err}");
}

#[test]
fn mixed_sample_rates_are_rejected() {
    let a = RawRecording::new(
        "p",
        "s1",
        RATE,
        (0..3000).map(|i| (i as f64 * 0.01).sin()).collect(),
    )
    .unwrap();
    let b = RawRecording::new(
        "p",
        "s2",
        500.0,
        (0..3000).map(|i| (i as f64 * 0.01).sin()).collect(),
    )
    .unwrap();
    let err = enroll(
        "p",
        &[a, b],
        &params(2, 1),
        &FilterSpec::default_at(RATE),
        &QuantizerSpec::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InvalidDataset(_)), "{err}");
}

#[test]
fn own_model_has_the_lowest_mean_nrc() {
    let data = fixture();
    let reg = registry(&data, &params(8, 2));
    let ids: Vec<String> = reg.ids().map(str::to_string).collect();
    for truth in &ids {
        let test = &sessions(&data, truth, &["day3"])[0];
        let segs = segment(&test.samples, 10.0, RATE).unwrap();
        let mean = |m: &ParticipantModel| {
            segs.iter().map(|s| nrc(m, s).unwrap().nrc).sum::<f64>() / segs.len() as f64
        };
        let own = mean(reg.get(truth).unwrap());
        for other in ids.iter().filter(|o| *o != truth) {
            let foreign = mean(reg.get(other).unwrap());
            assert!(own < foreign, "{truth}: own {own} vs {other} {foreign}");
        }
    }
}

#[test]
fn identify_is_pure_and_ranks_every_id() {
    let data = fixture();
    let reg = registry(&data, &params(4, 2));
    let ids: Vec<&str> = reg.ids().collect();
    let test = &sessions(&data, "P3", &["day3"])[0];
    for s in segment(&test.samples, 10.0, RATE).unwrap() {
        let r1 = identify(&reg, s).unwrap();
        let r2 = identify(&reg, s).unwrap();
        assert_eq!(r1, r2);
        let mut ranked: Vec<&str> = r1.scores.iter().map(|(id, _)| id.as_str()).collect();
        assert!(r1.scores.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(r1.predicted, r1.scores[0].0);
        ranked.sort();
        assert_eq!(ranked, ids);
    }
}

#[test]
fn nrc_ignores_amplitude_offset() {
    let data = fixture();
    let reg = registry(&data, &params(4, 2));
    let test = &sessions(&data, "P0", &["day3"])[0];
    let seg = &test.samples[..10_000];
    let shifted: Vec<f64> = seg.iter().map(|v| v + 123.25).collect();
    for m in reg.models() {
        let a = nrc(m, seg).unwrap().nrc;
        let b = nrc(m, &shifted).unwrap().nrc;
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    assert_eq!(
        identify(&reg, seg).unwrap().predicted,
        identify(&reg, &shifted).unwrap().predicted
    );
}

fn hand_built(id: &str, trained_on: Option<&[u8]>) -> ParticipantModel {
    let p = ModelParams::new(2, 1, 4, AlphaMode::Fixed(0.001)).unwrap();
    let mut m = XaModel::new(p).unwrap();
    if let Some(s) = trained_on {
        m.learn(s).unwrap();
    }
    // Levels far apart so identity mapping of derivative values to symbols is
    // easy to control: derivative v in [i - 0.5, i + 0.5) maps to symbol i.
    let cb = Codebook::from_levels(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    ParticipantModel::from_parts(
        id,
        FilterSpec::default_at(RATE),
        QuantizerSpec::with_alphabet(4),
        cb,
        m,
        vec![],
    )
    .unwrap()
}

#[test]
fn trained_model_beats_untrained_on_its_pattern() {
    let pattern: Vec<u8> = [0u8, 1, 2, 3, 2, 1].repeat(100);
    let trained = hand_built("trained", Some(&pattern));
    let blank = hand_built("blank", None);
    let derivs: Vec<f64> = pattern.iter().map(|&s| s as f64).collect();
    assert_eq!(blank.nrc_of_derivatives(&derivs).unwrap().nrc, 1.0);
    assert!(trained.nrc_of_derivatives(&derivs).unwrap().nrc < 0.01);
    let reg = Registry::new([blank, trained]).unwrap();
    assert_eq!(
        reg.identify_derivatives(&derivs).unwrap().predicted,
        "trained"
    );
}

#[test]
fn equal_scores_go_to_the_smallest_id() {
    let reg = Registry::new([
        hand_built("zed", None),
        hand_built("amy", None),
        hand_built("bob", None),
    ])
    .unwrap();
    let r = reg
        .identify_derivatives(&[0.0, 1.0, 2.0, 3.0, 0.0, 1.0])
        .unwrap();
    assert_eq!(r.predicted, "amy");
    let order: Vec<&str> = r.scores.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(order, ["amy", "bob", "zed"]);
}

#[test]
fn single_model_is_always_predicted() {
    let reg = Registry::new([hand_built("only", Some(&[0, 1, 0, 1]))]).unwrap();
    let r = reg
        .identify_derivatives(&[3.0, 3.0, 2.0, 3.0, 3.0])
        .unwrap();
    assert_eq!(r.predicted, "only");
}

#[test]
fn empty_registry_is_an_invalid_state() {
    let reg = Registry::new([]).unwrap();
    assert!(matches!(
        reg.identify(&[0.0; 100]),
        Err(Error::InvalidState(_))
    ));
}

#[test]
fn registry_rejects_mixed_params_and_duplicates() {
    let a = hand_built("a", None);
    assert!(Registry::new([a.clone(), a.clone()]).is_err());
    let other = ParticipantModel::from_parts(
        "b",
        FilterSpec::default_at(RATE),
        QuantizerSpec::with_alphabet(4),
        Codebook::from_levels(vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
        XaModel::new(ModelParams::new(3, 1, 4, AlphaMode::Auto).unwrap()).unwrap(),
        vec![],
    )
    .unwrap();
    assert!(matches!(
        Registry::new([a, other]),
        Err(Error::InvalidState(_))
    ));
}

#[test]
fn model_files_round_trip_and_detect_damage() {
    let data = fixture();
    let reg = registry(&data, &params(3, 2));
    let dir = tempfile::tempdir().unwrap();
    reg.save_dir(dir.path()).unwrap();
    let back = Registry::load_dir(dir.path()).unwrap();
    assert_eq!(
        back.ids().collect::<Vec<_>>(),
        reg.ids().collect::<Vec<_>>()
    );
    for (a, b) in reg.models().zip(back.models()) {
        assert_eq!(a, b);
        assert_eq!(a.to_file_string(), b.to_file_string());
    }

    let text = reg.get("P0").unwrap().to_file_string();
    let damaged = text.replacen("participant_id=P0", "participant_id=P9", 1);
    assert!(ParticipantModel::from_file_str(&damaged).is_err());
    let truncated = &text[..text.len() / 2];
    assert!(ParticipantModel::from_file_str(truncated).is_err());
}

#[test]
fn too_short_segment_is_invalid_input() {
    let data = fixture();
    let reg = registry(&data, &params(8, 2));
    let err = identify(&reg, &data[0].samples[..10]).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
}
