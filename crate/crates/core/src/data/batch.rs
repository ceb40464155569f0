//! Deterministic per-epoch batching with per-epoch caption selection.

use super::{mix_seed, Manifest, Split};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference to one record of the manifest plus the caption chosen for this epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    /// Index into `manifest.records`.
    pub index: usize,
    /// Index into that record's caption list.
    pub caption: usize,
}

/// Batches for one epoch. The shuffle and the caption choices are fixed by
/// `(seed, epoch)`; each epoch covers every record of the split at most once.
pub fn batch_iter(
    manifest: &Manifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    drop_last: bool,
) -> Result<Vec<Vec<SampleRef>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut indices: Vec<usize> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == split)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(Error::Data(format!("split '{}' is empty", split.as_str())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch]));
    indices.shuffle(&mut rng);
    let refs: Vec<SampleRef> = indices
        .into_iter()
        .map(|index| {
            let n_caps = manifest.records[index].captions.len();
            SampleRef {
                index,
                caption: rng.gen_range(0..n_caps),
            }
        })
        .collect();
    let mut batches: Vec<Vec<SampleRef>> = refs.chunks(batch_size).map(<[_]>::to_vec).collect();
    if drop_last {
        batches.retain(|b| b.len() == batch_size);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ChangeType, Record};
    use std::path::PathBuf;

    fn manifest(n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| Record {
                id: format!("r{i}"),
                before: String::new(),
                after: String::new(),
                captions: vec!["a change".into(), "some change".into()],
                change_type: ChangeType::Color,
                split: Split::Train,
            })
            .collect();
        Manifest {
            root: PathBuf::new(),
            records,
        }
    }

    #[test]
    fn drop_last_yields_full_batches_only() {
        let m = manifest(100);
        let batches = batch_iter(&m, Split::Train, 16, 1, 0, true).unwrap();
        assert_eq!(batches.len(), 6);
        assert!(batches.iter().all(|b| b.len() == 16));
    }

    #[test]
    fn keep_last_yields_remainder_batch() {
        let m = manifest(100);
        let batches = batch_iter(&m, Split::Train, 16, 1, 0, false).unwrap();
        assert_eq!(batches.len(), 7);
        assert_eq!(batches.last().unwrap().len(), 4);
    }

    #[test]
    fn same_seed_and_epoch_reproduce_order() {
        let m = manifest(50);
        let a = batch_iter(&m, Split::Train, 8, 9, 3, true).unwrap();
        let b = batch_iter(&m, Split::Train, 8, 9, 3, true).unwrap();
        assert_eq!(a, b);
        let c = batch_iter(&m, Split::Train, 8, 9, 4, true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn epoch_covers_each_record_once() {
        let m = manifest(33);
        let batches = batch_iter(&m, Split::Train, 8, 2, 0, false).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().map(|s| s.index).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..33).collect::<Vec<_>>());
    }

    #[test]
    fn empty_split_errors() {
        let m = manifest(4);
        assert!(batch_iter(&m, Split::Test, 4, 0, 0, false).is_err());
    }
}
