use super::SegmentSet;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One leave-one-subject-out fold. Index vectors refer to the source set.
#[derive(Debug, Clone)]
pub struct LosoFold {
    pub test_subject: String,
    pub train: SegmentSet,
    pub val: SegmentSet,
    pub test: SegmentSet,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Splits `pool` (indices into `ds`) so that `round(val_frac * n_class)`
/// segments of each class go to validation. Both halves come back sorted.
pub fn stratified_split(
    ds: &SegmentSet,
    pool: &[usize],
    val_frac: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_frac) {
        return Err(Error::Parameter(format!("validation fraction {val_frac} outside [0, 1)")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in pool {
        by_class[ds.y[i] as usize].push(i);
    }
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for class in by_class.iter_mut() {
        rng.shuffle(class);
        let n_val = (val_frac * class.len() as f64).round() as usize;
        val_idx.extend_from_slice(&class[..n_val]);
        train_idx.extend_from_slice(&class[n_val..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((train_idx, val_idx))
}

/// Holds out `test_subject`; the remaining segments are pooled and a
/// label-stratified `val_frac` share becomes the validation set.
pub fn loso_split(ds: &SegmentSet, test_subject: &str, val_frac: f64, rng: &mut Rng) -> Result<LosoFold> {
    let subjects = ds.subjects();
    if !subjects.iter().any(|s| s == test_subject) {
        return Err(Error::Parameter(format!("unknown subject {test_subject:?}")));
    }
    if subjects.len() < 2 {
        return Err(Error::Parameter("leave-one-subject-out needs at least two subjects".into()));
    }
    let (test_idx, pool): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.subject_ids[i] == test_subject);
    let (train_idx, val_idx) = stratified_split(ds, &pool, val_frac, rng)?;
    Ok(LosoFold {
        test_subject: test_subject.to_string(),
        train: ds.subset(&train_idx),
        val: ds.subset(&val_idx),
        test: ds.subset(&test_idx),
        train_idx,
        val_idx,
        test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(subjects: usize, per: usize) -> SegmentSet {
        let n = subjects * per * 2;
        let ids = (0..n).map(|i| format!("s{}", i / (2 * per))).collect();
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        SegmentSet::new(vec![0.0; n], y, ids, 250, vec!["Cz".into()], 1).unwrap()
    }

    #[test]
    fn partitions_are_disjoint_and_cover() {
        let ds = set(5, 10);
        let f = loso_split(&ds, "s2", 0.2, &mut Rng::new(1)).unwrap();
        assert!(f.test.subject_ids.iter().all(|s| s == "s2"));
        assert!(f.train.subject_ids.iter().chain(&f.val.subject_ids).all(|s| s != "s2"));
        let mut all: Vec<usize> = f.train_idx.iter().chain(&f.val_idx).chain(&f.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        assert_eq!(f.val.class_counts(), [8, 8]);
    }

    #[test]
    fn unknown_subject_rejected() {
        assert!(matches!(loso_split(&set(2, 2), "zz", 0.2, &mut Rng::new(1)), Err(Error::Parameter(_))));
        assert!(loso_split(&set(1, 2), "s0", 0.2, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn seeded_split_replays() {
        let ds = set(4, 7);
        let a = loso_split(&ds, "s0", 0.2, &mut Rng::new(9)).unwrap();
        let b = loso_split(&ds, "s0", 0.2, &mut Rng::new(9)).unwrap();
        assert_eq!(a.val_idx, b.val_idx);
    }
}
