use catgrad::ars::{pi_conditional_interval, swap_configs, DirichletDraw};
use catgrad::couplings::{sb_coupling_joint, support_check, tree_coupling_joint};
use catgrad::dist::{
    sb_decode_row, score_grad, softmax_probs, CategoricalParams, CategoricalSample, CategoryOrder, ProbTable,
    StickParams, TreeParams,
};
use proptest::prelude::*;

fn logits(k: usize, c: usize) -> impl Strategy<Value = CategoricalParams> {
    proptest::collection::vec(-4.0..4.0f64, k * c)
        .prop_map(move |v| CategoricalParams::new(ndarray::Array2::from_shape_vec((k, c), v).unwrap()).unwrap())
}

fn shaped() -> impl Strategy<Value = CategoricalParams> {
    (1usize..=3, 2usize..=8).prop_flat_map(|(k, c)| logits(k, c))
}

fn simplex_row(c: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01..1.0f64, c).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn score_rows_sum_to_zero(params in shaped(), seed in any::<u64>()) {
        let probs = softmax_probs(&params);
        let z: Vec<usize> = (0..params.dims()).map(|k| (seed as usize >> k) % params.categories()).collect();
        let g = score_grad(&probs, &CategoricalSample(z)).unwrap();
        for row in g.cat.rows() {
            prop_assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn stick_coupling_preserves_marginals(params in shaped(), order in 0usize..3) {
        let order = [CategoryOrder::Ascending, CategoryOrder::Descending, CategoryOrder::Default][order];
        let probs = softmax_probs(&params);
        let joint = sb_coupling_joint(&StickParams::new(&probs, order).unwrap()).unwrap();
        prop_assert!(joint.max_marginal_error(&probs) < 1e-12);
        if order == CategoryOrder::Ascending {
            prop_assert!(support_check(&joint));
        }
    }

    #[test]
    fn tree_coupling_preserves_marginals(k in 1usize..=3, c in prop::sample::select(vec![2usize, 4, 8, 16]), seed in any::<u64>()) {
        let rows: Vec<Vec<f64>> = (0..k).map(|i| (0..c).map(|j| 1.0 + ((seed >> ((i * c + j) % 60)) & 7) as f64).collect()).collect();
        let probs = ProbTable::normalized(ndarray::Array2::from_shape_fn((k, c), |(i, j)| rows[i][j])).unwrap();
        let joint = tree_coupling_joint(&TreeParams::new(&probs).unwrap());
        prop_assert!(joint.max_marginal_error(&probs) < 1e-12);
    }

    #[test]
    fn stick_decode_is_first_break(bits in proptest::collection::vec(0u8..=1, 1..10)) {
        let r = sb_decode_row(&bits);
        prop_assert!(bits[..r.min(bits.len())].iter().all(|&b| b == 0));
        prop_assert!(r == bits.len() || bits[r] == 1);
    }

    #[test]
    fn interval_contains_the_drawn_coordinate(
        (params, row, j, l) in (2usize..=6).prop_flat_map(|c| (logits(1, c), simplex_row(c), 0..c, 1..c))
    ) {
        let c = row.len();
        let l = (j + l) % c;
        let pi = DirichletDraw::from_rows(std::slice::from_ref(&row)).unwrap();
        let state = swap_configs(&pi, &params, j).unwrap();
        let configs = state.configs.row(0).to_vec();
        let (lo, hi) = pi_conditional_interval(&row, &params.logits().row(0).to_vec(), &configs, j, l).unwrap();
        prop_assert!(lo - 1e-12 <= row[j] && row[j] <= hi + 1e-12, "{lo} {} {hi}", row[j]);
    }
}
