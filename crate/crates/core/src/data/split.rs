use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Stratified (by segment) random partition into train and test sets.
///
/// The total train size is `round(fraction * n)`, clamped so both sides are
/// non-empty, and is allocated across segments by largest remainder.
pub fn train_test_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Precondition(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::Precondition("need at least 2 observations to split".into()));
    }
    let mut by_segment: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, o) in ds.observations().iter().enumerate() {
        by_segment.entry(o.segment.as_str()).or_default().push(i);
    }
    let total = ((fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut quota: Vec<(usize, f64)> = by_segment
        .values()
        .map(|idx| {
            let exact = total as f64 * idx.len() as f64 / n as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quota.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].1.total_cmp(&quota[a].1).then(a.cmp(&b)));
    for &s in order.iter().take(total - assigned) {
        quota[s].0 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(total);
    let mut test = Vec::with_capacity(n - total);
    for (idx, (k, _)) in by_segment.values().zip(&quota) {
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        train.extend_from_slice(&shuffled[..*k]);
        test.extend_from_slice(&shuffled[*k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}
