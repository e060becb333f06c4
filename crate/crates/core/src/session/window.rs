//! Which pool indices the LLM sees in a given iteration.
//!
//! * No recap / recap: the instances right after the last labeled one, up to
//!   last-labeled + batch size. When that range holds nothing unlabeled but
//!   the pool still has unlabeled instances, the window wraps to the first
//!   `batch_size` unlabeled indices.
//! * Index recap: a frontier that advances by `batch_size` per iteration;
//!   every unlabeled index before the frontier stays selectable.
//!
//! The first iteration is always `0..batch_size`.

use thiserror::Error;

use crate::corpus::Pool;
use crate::promptkit::RecapMode;

use super::SessionHistory;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("pool exhausted: every instance is labeled")]
    Exhausted,
    #[error("batch size must be at least 1")]
    ZeroBatch,
}

pub fn compute_window(
    pool: &Pool,
    history: &SessionHistory,
    batch_size: usize,
    recap_mode: RecapMode,
) -> Result<Vec<usize>, WindowError> {
    window_for(pool.len(), history, batch_size, recap_mode)
}

pub(crate) fn window_for(
    pool_len: usize,
    history: &SessionHistory,
    batch_size: usize,
    recap_mode: RecapMode,
) -> Result<Vec<usize>, WindowError> {
    if batch_size == 0 {
        return Err(WindowError::ZeroBatch);
    }
    if history.labeled.len() >= pool_len {
        return Err(WindowError::Exhausted);
    }
    let unlabeled =
        |range: std::ops::Range<usize>| -> Vec<usize> { range.filter(|i| !history.labeled.contains_key(i)).collect() };

    let window = match recap_mode {
        RecapMode::NoRecap | RecapMode::Recap => {
            let start = history.cursor_last_labeled.map_or(0, |last| last + 1);
            let end = start.saturating_add(batch_size).min(pool_len);
            let window = unlabeled(start.min(pool_len)..end);
            if window.is_empty() {
                unlabeled(0..pool_len).into_iter().take(batch_size).collect()
            } else {
                window
            }
        }
        RecapMode::IndexRecap => {
            let frontier = history.cursor_last_presented.map_or(0, |last| last + 1);
            let end = frontier.saturating_add(batch_size).min(pool_len);
            unlabeled(0..end)
        }
    };
    if window.is_empty() {
        return Err(WindowError::Exhausted);
    }
    Ok(window)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(labeled: &[usize], last_presented: Option<usize>) -> SessionHistory {
        let mut h = SessionHistory::default();
        for &i in labeled {
            h.labeled.insert(i, "x".into());
        }
        h.cursor_last_labeled = labeled.iter().copied().max();
        h.cursor_last_presented = last_presented;
        h
    }

    #[test]
    fn first_window_is_prefix() {
        let w = window_for(1000, &SessionHistory::default(), 200, RecapMode::NoRecap).unwrap();
        assert_eq!(w, (0..200).collect::<Vec<_>>());
        let w = window_for(1000, &SessionHistory::default(), 200, RecapMode::IndexRecap).unwrap();
        assert_eq!(w, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn no_recap_starts_after_last_labeled() {
        let w = window_for(1000, &history(&[3, 49], Some(199)), 200, RecapMode::NoRecap).unwrap();
        assert_eq!(w, (50..250).collect::<Vec<_>>());
    }

    #[test]
    fn window_clipped_at_pool_end() {
        let w = window_for(100, &history(&[90], Some(99)), 200, RecapMode::Recap).unwrap();
        assert_eq!(w, (91..100).collect::<Vec<_>>());
    }

    #[test]
    fn wraps_when_tail_is_labeled() {
        let w = window_for(10, &history(&[2, 9], Some(9)), 3, RecapMode::NoRecap).unwrap();
        assert_eq!(w, vec![0, 1, 3]);
    }

    #[test]
    fn index_recap_advances_frontier() {
        let w = window_for(1000, &history(&[4, 9], Some(199)), 200, RecapMode::IndexRecap).unwrap();
        let expected: Vec<usize> = (0..400).filter(|i| *i != 4 && *i != 9).collect();
        assert_eq!(w, expected);
    }

    #[test]
    fn exhausted_pool() {
        let all: Vec<usize> = (0..5).collect();
        assert_eq!(window_for(5, &history(&all, Some(4)), 2, RecapMode::NoRecap), Err(WindowError::Exhausted));
        assert_eq!(window_for(5, &SessionHistory::default(), 0, RecapMode::NoRecap), Err(WindowError::ZeroBatch));
    }
}
