use growmerge::kernel::{hungarian_assign, CostMatrix};
use growmerge::metrics::{clustering_accuracy, MetricsLedger};
use growmerge::report::round_report;

fn main() {
    let costs = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).unwrap();
    let best = hungarian_assign(&costs).unwrap();
    assert_eq!(best.row_to_col, vec![1, 0, 2]);
    assert_eq!(best.total_cost, 5.0);

    // the clusters are right up to renaming
    assert_eq!(clustering_accuracy(&[2, 2, 0, 0, 1], &[0, 0, 1, 1, 2]).unwrap(), 1.0);

    let summary = MetricsLedger::from_known(&[0.9, 0.85, 0.80, 0.82]).finalize().unwrap();
    assert_eq!(round_report(summary.m_f), 0.1);
    let better = MetricsLedger::from_known(&[0.7, 0.8]).finalize().unwrap();
    assert_eq!(round_report(better.m_f), -0.1);
}
