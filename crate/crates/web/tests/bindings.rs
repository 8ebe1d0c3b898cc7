use lte_gru_web::{scene_features_impl, vote_impl, windows_impl};

#[test]
fn vote_normalizes_rows_and_picks_argmax() {
    // two subsequences, one stream, three classes; rows given as raw scores
    let v = vote_impl(&[2.0, 1.0, 1.0, 6.0, 1.0, 1.0], 2, 1, 3, "addpv").unwrap();
    let expect = [(0.5 + 0.75) / 2.0, (0.25 + 0.125) / 2.0, (0.25 + 0.125) / 2.0];
    for (a, b) in v.likelihood().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(v.decision(), 0);

    let mv = vote_impl(&[0.1, 0.9, 0.6, 0.4, 0.2, 0.8], 1, 3, 2, "mv").unwrap();
    assert_eq!(mv.likelihood(), vec![1.0 / 3.0, 2.0 / 3.0]);
}

#[test]
fn vote_rejects_bad_input() {
    assert!(vote_impl(&[1.0, 2.0, 3.0], 2, 1, 2, "mulpv").is_err());
    assert!(vote_impl(&[1.0, -1.0], 1, 1, 2, "mulpv").is_err());
    assert!(vote_impl(&[0.0, 0.0], 1, 1, 2, "mulpv").is_err());
    assert!(vote_impl(&[1.0, 1.0], 1, 1, 2, "median").is_err());
}

#[test]
fn window_layout_pairs() {
    let w = windows_impl(238, 32, 0.0, false).unwrap();
    assert_eq!(w.len(), 16);
    assert_eq!(&w[14..], &[206, 32]);
    let short = windows_impl(238, 32, 0.0, true).unwrap();
    assert_eq!(&short[14..], &[224, 14]);
    assert!(windows_impl(10, 32, 0.0, false).is_err());
}

#[test]
fn feature_map_is_scaled_and_shaped() {
    let m = scene_features_impl(1, 3, 3, 5, "mfcc", true).unwrap();
    assert_eq!(m.cols(), 60);
    assert!(m.rows() > 0);
    let v = m.values();
    assert_eq!(v.len(), m.rows() * m.cols());
    assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    assert!(scene_features_impl(3, 3, 3, 5, "mfcc", false).is_err());
    assert!(scene_features_impl(0, 3, 3, 5, "chroma", false).is_err());
}
