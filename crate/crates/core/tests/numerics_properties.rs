use std::rc::Rc;

use gpll_core::numerics::{
    grad_check, segment_softmax, softmax, EdgeIndex, GradCheckConfig, NumericsError, Tape, Tensor,
    Var,
};
use proptest::prelude::*;

/// Reduces any output to a scalar through fixed, irregular weights so every
/// output entry feeds the gradient differently.
fn project(tape: &mut Tape, out: Var) -> Result<Var, NumericsError> {
    let (r, c) = tape.value(out).shape();
    let w = (0..r * c)
        .map(|k| (k as f64 * 1.7 + 0.3).sin() + 0.1)
        .collect();
    let w = tape.constant(Tensor::from_vec(r, c, w)?);
    let m = tape.mul(out, w)?;
    Ok(tape.sum_all(m))
}

fn check<F>(mut params: Vec<Tensor>, f: F) -> Result<(), TestCaseError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    let report = grad_check(
        &mut params,
        |tape, vars| {
            let out = f(tape, vars)?;
            project(tape, out)
        },
        &GradCheckConfig {
            step: 1e-5,
            samples_per_param: 64,
            tolerance: 1e-6,
            seed: 0,
        },
    )
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(report.passed(), "{report:?}");
    Ok(())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(rows, cols, v).unwrap())
}

fn any_matrix() -> impl Strategy<Value = Tensor> {
    (1usize..5, 1usize..5).prop_flat_map(|(r, c)| matrix(r, c))
}

fn edge_index(n_src: usize, n_dst: usize) -> impl Strategy<Value = EdgeIndex> {
    prop::collection::vec((0..n_src, 0..n_dst), 1..10).prop_map(|e| {
        let (s, d) = e.into_iter().unzip();
        EdgeIndex::new(s, d)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_gradient((a, b) in (1usize..5, 1usize..5, 1usize..5)
        .prop_flat_map(|(n, k, m)| (matrix(n, k), matrix(k, m))))
    {
        check(vec![a, b], |t, v| t.matmul(v[0], v[1]))?;
    }

    #[test]
    fn elementwise_gradients((a, b) in (1usize..5, 1usize..5)
        .prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c))))
    {
        check(vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]))?;
        check(vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]))?;
        check(vec![a.clone()], |t, v| Ok(t.scale(v[0], -1.5)))?;
        check(vec![a.clone()], |t, v| Ok(t.sigmoid(v[0])))?;
        check(vec![a.clone()], |t, v| Ok(t.relu(v[0])))?;
        check(vec![a], |t, v| Ok(t.leaky_relu(v[0], 0.2)))?;
    }

    #[test]
    fn broadcast_gradients((a, row, col) in (1usize..5, 1usize..5)
        .prop_flat_map(|(r, c)| (matrix(r, c), matrix(1, c), matrix(r, 1))))
    {
        check(vec![a.clone(), row], |t, v| t.add_row(v[0], v[1]))?;
        check(vec![a.clone(), col], |t, v| t.mul_col(v[0], v[1]))?;
        check(vec![a.clone()], |t, v| Ok(t.row_sum(v[0])))?;
        check(vec![a], |t, v| Ok(t.sum_all(v[0])))?;
    }

    #[test]
    fn concat_gradients((a, b, c) in (1usize..4, 1usize..4, 1usize..4)
        .prop_flat_map(|(r, c1, c2)| (matrix(r, c1), matrix(r, c2), matrix(c2, c1))))
    {
        check(vec![a.clone(), b], |t, v| t.concat_cols(&[v[0], v[1], v[0]]))?;
        check(vec![a, c], |t, v| t.concat_rows(&[v[0], v[1]]))?;
    }

    #[test]
    fn row_index_gradients((a, idx) in (1usize..5, 1usize..4)
        .prop_flat_map(|(n, c)| (matrix(n, c), prop::collection::vec(0..n, 1..8))))
    {
        let n = a.rows();
        let idx: Rc<[usize]> = idx.into();
        let i = idx.clone();
        check(vec![a.clone()], move |t, v| t.gather_rows(v[0], i.clone()))?;
        let scatter = Tensor::from_vec(idx.len(), a.cols(), vec![0.5; idx.len() * a.cols()]).unwrap();
        check(vec![scatter], move |t, v| t.scatter_add_rows(v[0], idx.clone(), n))?;
    }

    #[test]
    fn softmax_gradients((a, mask, seg) in (1usize..5, 1usize..5)
        .prop_flat_map(|(r, c)| (
            matrix(r, c),
            prop::collection::vec(any::<bool>(), r * c),
            prop::collection::vec(0usize..3, r),
        )))
    {
        let mask: Rc<[bool]> = mask.into();
        check(vec![a.clone()], move |t, v| t.masked_row_softmax(v[0], mask.clone()))?;
        let col = Tensor::column(a.data()[..a.rows()].to_vec());
        let seg: Rc<[usize]> = seg.into();
        check(vec![col], move |t, v| t.segment_softmax(v[0], seg.clone()))?;
    }

    #[test]
    fn edge_gradients((feats, right, e) in (1usize..5, 1usize..5, 1usize..4)
        .prop_flat_map(|(ns, nd, c)| (matrix(ns, 2 * c), matrix(nd, c), edge_index(ns, nd))))
    {
        let e = Rc::new(e);
        let nd = right.rows();
        let coef = Tensor::column((0..e.len()).map(|k| 0.3 + 0.1 * k as f64).collect());
        let ee = e.clone();
        check(vec![coef, feats.clone()], move |t, v| t.edge_weighted_sum(v[0], v[1], ee.clone(), nd))?;
        check(vec![feats, right], move |t, v| t.bilinear_edge_scores(v[0], v[1], e.clone(), 2))?;
    }

    #[test]
    fn cross_entropy_gradient((logits, targets) in (1usize..6, 2usize..5)
        .prop_flat_map(|(n, m)| (matrix(n, m), prop::collection::vec(0..m, n))))
    {
        let targets: Rc<[usize]> = targets.into();
        check(vec![logits], move |t, v| t.cross_entropy(v[0], targets.clone()))?;
    }

    #[test]
    fn softmax_rows_are_distributions(a in any_matrix(), mask in prop::collection::vec(any::<bool>(), 16)) {
        let (r, c) = a.shape();
        let mask: Rc<[bool]> = mask[..r * c].into();
        let mut tape = Tape::new();
        let x = tape.constant(a.clone());
        let s = tape.masked_row_softmax(x, mask.clone()).unwrap();
        let s = tape.value(s);
        for i in 0..r {
            let row = s.row(i);
            let keep = &mask[i * c..(i + 1) * c];
            for (p, k) in row.iter().zip(keep) {
                if !k {
                    prop_assert_eq!(*p, 0.0);
                }
            }
            if keep.iter().any(|&k| k) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            prop_assert!((softmax(a.row(i)).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_softmax_sums_per_segment(
        scores in prop::collection::vec(-30.0f64..30.0, 1..20),
        seg_seed in prop::collection::vec(0usize..4, 20),
    ) {
        let seg = &seg_seed[..scores.len()];
        let p = segment_softmax(&scores, seg);
        for s in 0..4 {
            let members: Vec<f64> = p.iter().zip(seg).filter(|(_, &g)| g == s).map(|(&x, _)| x).collect();
            if !members.is_empty() {
                prop_assert!((members.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_pure(a in any_matrix()) {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.param(a.clone());
            let at = tape.constant(a.transpose());
            let s = tape.sigmoid(x);
            let y = tape.matmul(s, at).unwrap();
            let y = tape.leaky_relu(y, 0.2);
            tape.value(y).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
