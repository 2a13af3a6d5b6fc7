use iiga::ctc::{
    collapse, ctc_brute_force, ctc_loss, ctc_loss_and_gradient, greedy_decode, AlignmentPath, GlossSequence,
    LogProbMatrix, BLANK,
};
use iiga::numcore::Matrix;
use iiga::Error;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (LogProbMatrix<f64>, GlossSequence)> {
    (1usize..=6, 1usize..=3, 0usize..=3)
        .prop_flat_map(|(t, v, len)| {
            (
                prop::collection::vec(-3.0f64..3.0, t * (v + 1)),
                prop::collection::vec(1..=v, len),
                Just((t, v)),
            )
        })
        .prop_filter_map("infeasible", |(logits, labels, (t, v))| {
            let y = GlossSequence::new(labels).ok()?;
            (y.min_frames() <= t).then(|| {
                let m = Matrix::from_vec(t, v + 1, logits).unwrap();
                (LogProbMatrix::from_logits(&m), y)
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn forward_matches_enumeration((lp, y) in instance()) {
        let brute = ctc_brute_force(&lp, &y).unwrap();
        let fast = (-ctc_loss(&lp, &y).unwrap()).exp();
        prop_assert!((fast - brute).abs() <= 1e-10, "{fast} vs {brute}");
    }

    #[test]
    fn gradient_matches_finite_differences((lp, y) in instance()) {
        let (_, grad) = ctc_loss_and_gradient(&lp, &y).unwrap();
        let eps = 1e-6;
        for t in 0..lp.logp.rows() {
            for k in 0..lp.logp.cols() {
                let bump = |d: f64| {
                    let mut m = lp.logp.clone();
                    m.set(t, k, m.get(t, k) + d);
                    ctc_loss(&LogProbMatrix::new(m), &y).unwrap()
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let a = grad.get(t, k);
                prop_assert!((a - numeric).abs() <= 1e-6 * a.abs().max(1.0), "[{t},{k}] {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn gradient_rows_sum_to_minus_one((lp, y) in instance()) {
        let (_, grad) = ctc_loss_and_gradient(&lp, &y).unwrap();
        for t in 0..grad.rows() {
            let s: f64 = grad.row(t).iter().sum();
            prop_assert!((s + 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn collapse_inverts_blank_interleaving(
        labels in prop::collection::vec(1usize..4, 0..8),
        reps in prop::collection::vec(1usize..4, 17),
    ) {
        // Blank, l1, blank, l2, ..., blank with every symbol repeated.
        let mut path = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            path.extend(std::iter::repeat_n(BLANK, reps[2 * i]));
            path.extend(std::iter::repeat_n(l, reps[2 * i + 1]));
        }
        path.push(BLANK);
        let collapsed = collapse(&AlignmentPath(path));
        prop_assert_eq!(collapsed.labels(), labels.as_slice());
    }
}

#[test]
fn probabilities_over_all_targets_sum_to_one() {
    // Every path collapses to exactly one label sequence.
    let logits: Matrix<f64> = Matrix::from_rows(&[[0.3, -1.0, 0.5], [1.2, 0.1, -0.4], [-0.2, 0.7, 0.0]]).unwrap();
    let lp = LogProbMatrix::from_logits(&logits);
    let mut total = 0.0f64;
    let mut targets = vec![vec![]];
    for len in 1..=3 {
        let mut next = Vec::new();
        for t in targets.iter().filter(|t: &&Vec<usize>| t.len() == len - 1) {
            for g in 1..=2 {
                let mut n = t.clone();
                n.push(g);
                next.push(n);
            }
        }
        targets.extend(next);
    }
    for labels in targets {
        let y = GlossSequence::new(labels).unwrap();
        if y.min_frames() <= 3 {
            total += (-ctc_loss(&lp, &y).unwrap()).exp();
        }
    }
    assert!((total - 1.0).abs() <= 1e-12, "{total}");
}

#[test]
fn infeasible_and_oversized_inputs_are_rejected() {
    let lp = LogProbMatrix::<f64>::from_logits(&Matrix::zeros(2, 3));
    let y = GlossSequence::new(vec![1, 1]).unwrap();
    assert!(matches!(ctc_loss(&lp, &y), Err(Error::Infeasible { .. })));
    let big = LogProbMatrix::<f64>::from_logits(&Matrix::zeros(20, 5));
    assert!(matches!(
        ctc_brute_force(&big, &GlossSequence::new(vec![1]).unwrap()),
        Err(Error::OracleScale { .. })
    ));
}

#[test]
fn greedy_decode_prefers_blank_on_ties() {
    let lp = LogProbMatrix::new(Matrix::from_rows(&[[0.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]).unwrap());
    assert_eq!(greedy_decode(&lp).labels(), &[1]);
}
