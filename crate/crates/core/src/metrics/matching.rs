//! One-to-one matching of predicted and reference events by date.
//!
//! Candidate pairs are those within the tolerance window. Among all
//! matchings the one with the most pairs is chosen, then the smallest total
//! date gap. Any maximum matching can be uncrossed without leaving the
//! window or increasing the total gap, so an order-preserving dynamic
//! programme over the two sorted lists finds the optimum exactly.

use chrono::NaiveDate;
use serde::Serialize;

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EventPair {
    /// Index into the predicted list as given.
    pub pred: usize,
    /// Index into the reference list as given.
    pub reference: usize,
    /// `pred - reference` in days.
    pub gap_days: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Matching {
    pub pairs: Vec<EventPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_ref: Vec<usize>,
}

impl Matching {
    pub fn total_gap(&self) -> i64 {
        self.pairs.iter().map(|p| p.gap_days.abs()).sum()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Start,
    Match,
    SkipPred,
    SkipRef,
}

#[derive(Clone, Copy)]
struct Cell {
    count: u32,
    cost: i64,
    step: Step,
}

impl Cell {
    fn better_than(&self, other: &Cell) -> bool {
        self.count > other.count || (self.count == other.count && self.cost < other.cost)
    }
}

fn sorted_order(dates: &[NaiveDate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dates.len()).collect();
    idx.sort_by_key(|&i| (dates[i], i));
    idx
}

/// Matches predicted to reference event dates.
///
/// Ties between equally good matchings resolve towards pairing the earlier
/// events. Returned indices refer to the input slices.
pub fn match_events(pred: &[NaiveDate], reference: &[NaiveDate], tolerance_days: i64) -> Result<Matching, MetricsError> {
    if tolerance_days < 0 {
        return Err(MetricsError::NegativeTolerance(tolerance_days));
    }
    let p_order = sorted_order(pred);
    let r_order = sorted_order(reference);
    let (n, m) = (pred.len(), reference.len());
    let start = Cell {
        count: 0,
        cost: 0,
        step: Step::Start,
    };
    let mut table = vec![start; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best: Option<Cell> = None;
            let mut consider = |c: Cell| {
                if best.as_ref().is_none_or(|b| c.better_than(b)) {
                    best = Some(c);
                }
            };
            if i > 0 && j > 0 {
                let gap = (pred[p_order[i - 1]] - reference[r_order[j - 1]]).num_days();
                if gap.abs() <= tolerance_days {
                    let prev = table[at(i - 1, j - 1)];
                    consider(Cell {
                        count: prev.count + 1,
                        cost: prev.cost + gap.abs(),
                        step: Step::Match,
                    });
                }
            }
            if i > 0 {
                let prev = table[at(i - 1, j)];
                consider(Cell { step: Step::SkipPred, ..prev });
            }
            if j > 0 {
                let prev = table[at(i, j - 1)];
                consider(Cell { step: Step::SkipRef, ..prev });
            }
            table[at(i, j)] = best.expect("at least one predecessor");
        }
    }

    let mut out = Matching::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        match table[at(i, j)].step {
            Step::Match => {
                let (pi, ri) = (p_order[i - 1], r_order[j - 1]);
                out.pairs.push(EventPair {
                    pred: pi,
                    reference: ri,
                    gap_days: (pred[pi] - reference[ri]).num_days(),
                });
                i -= 1;
                j -= 1;
            }
            Step::SkipPred => {
                out.unmatched_pred.push(p_order[i - 1]);
                i -= 1;
            }
            Step::SkipRef => {
                out.unmatched_ref.push(r_order[j - 1]);
                j -= 1;
            }
            Step::Start => unreachable!("start cell only at origin"),
        }
    }
    out.pairs.reverse();
    out.unmatched_pred.reverse();
    out.unmatched_ref.reverse();
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn identical_single_event() {
        let m = match_events(&[d("2020-01-01")], &[d("2020-01-01")], 0).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert!(m.unmatched_pred.is_empty() && m.unmatched_ref.is_empty());
    }

    #[test]
    fn nearest_reference_within_window() {
        let m = match_events(&[d("2020-01-01")], &[d("2020-01-15"), d("2020-02-20")], 30).unwrap();
        assert_eq!(
            m.pairs,
            vec![EventPair {
                pred: 0,
                reference: 0,
                gap_days: -14
            }]
        );
        assert_eq!(m.unmatched_ref, vec![1]);
    }

    #[test]
    fn surplus_prediction_is_unmatched() {
        let m = match_events(&[d("2020-01-01"), d("2020-01-02")], &[d("2020-01-01")], 30).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].pred, 0);
        assert_eq!(m.unmatched_pred, vec![1]);
    }

    #[test]
    fn nearest_first_greedy_would_lose_a_pair() {
        // Pairing the closest dates (Jan 7, Jan 6) first strands both ends.
        let pred = [d("2020-01-01"), d("2020-01-07")];
        let reference = [d("2020-01-06"), d("2020-01-12")];
        let m = match_events(&pred, &reference, 5).unwrap();
        assert_eq!(m.pairs.len(), 2);
    }

    #[test]
    fn negative_tolerance_rejected() {
        assert!(matches!(match_events(&[], &[], -1), Err(MetricsError::NegativeTolerance(-1))));
    }

    #[test]
    fn unsorted_input_indices_refer_to_input() {
        let pred = [d("2020-03-01"), d("2020-01-01")];
        let reference = [d("2020-01-02")];
        let m = match_events(&pred, &reference, 3).unwrap();
        assert_eq!(m.pairs[0].pred, 1);
        assert_eq!(m.unmatched_pred, vec![0]);
    }

    #[test]
    fn agrees_with_exhaustive_oracle_on_small_grid() {
        let base = d("2020-01-01");
        let day = |k: i64| base + chrono::Duration::days(k);
        for mask in 0u32..(1 << 10) {
            // Two lists of up to 3 events from offsets {0, 2, 4, 7, 9}.
            let offs = [0, 2, 4, 7, 9];
            let pred: Vec<_> = (0..5).filter(|b| mask & (1 << b) != 0).map(|b| day(offs[b])).take(3).collect();
            let reference: Vec<_> = (0..5).filter(|b| mask & (1 << (b + 5)) != 0).map(|b| day(offs[b] + 1)).take(3).collect();
            for tol in 0..4 {
                let m = match_events(&pred, &reference, tol).unwrap();
                assert_eq!((m.pairs.len(), m.total_gap()), oracle::best_matching(&pred, &reference, tol));
            }
        }
    }
}
