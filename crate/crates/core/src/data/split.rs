//! Seed-deterministic stratified train/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::Split;
use crate::data::synth::Dataset;
use crate::error::{Error, Result};

/// Assign a split tag per sample, stratified by label: within each label
/// group, a seeded shuffle picks `round(test_fraction * group)` test samples.
pub fn split_tags(labels: &[u8], test_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = vec![Split::Train; labels.len()];
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        for &i in members.iter().take(n_test) {
            tags[i] = Split::Test;
        }
    }
    let n_test = tags.iter().filter(|&&t| t == Split::Test).count();
    if n_test == 0 || n_test == labels.len() {
        return Err(Error::Config(format!(
            "split leaves an empty side ({n_test} of {} in test)",
            labels.len()
        )));
    }
    Ok(tags)
}

/// Partition a dataset into disjoint train/test subsets.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let tags = split_tags(&dataset.labels(), test_fraction, seed)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (sample, tag) in dataset.samples.iter().zip(&tags) {
        match tag {
            Split::Train => train.push(sample.clone()),
            Split::Test => test.push(sample.clone()),
        }
    }
    Ok((
        Dataset { vocab: dataset.vocab, samples: train },
        Dataset { vocab: dataset.vocab, samples: test },
    ))
}

/// Select the samples carrying `tag` according to a manifest order.
pub fn select_split(dataset: &Dataset, tags: &[Split], tag: Split) -> Dataset {
    let samples = dataset
        .samples
        .iter()
        .zip(tags)
        .filter(|(_, &t)| t == tag)
        .map(|(s, _)| s.clone())
        .collect();
    Dataset { vocab: dataset.vocab, samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, SynthSpec};

    #[test]
    fn stratified_counts_hold() {
        let ds = generate(&SynthSpec { n_samples: 100, ..SynthSpec::default() }).unwrap();
        let (train, test) = split(&ds, 0.2, 5).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let (tn, tp) = test.label_counts();
        assert!(tn.abs_diff(tp) <= 1, "test labels {tn}/{tp}");
    }

    #[test]
    fn split_is_deterministic() {
        let ds = generate(&SynthSpec { n_samples: 50, ..SynthSpec::default() }).unwrap();
        let a = split_tags(&ds.labels(), 0.25, 9).unwrap();
        let b = split_tags(&ds.labels(), 0.25, 9).unwrap();
        assert_eq!(a, b);
        let c = split_tags(&ds.labels(), 0.25, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_partition_the_dataset() {
        let ds = generate(&SynthSpec { n_samples: 30, ..SynthSpec::default() }).unwrap();
        let (train, test) = split(&ds, 1.0 / 3.0, 2).unwrap();
        assert_eq!(train.len() + test.len(), ds.len());
        // Every original sample appears exactly once across both sides.
        let mut seen = 0;
        for s in ds.samples.iter() {
            let in_train = train.samples.iter().filter(|t| *t == s).count();
            let in_test = test.samples.iter().filter(|t| *t == s).count();
            assert_eq!(in_train + in_test, 1);
            seen += 1;
        }
        assert_eq!(seen, 30);
    }

    #[test]
    fn degenerate_fractions_are_rejected() {
        let labels = vec![0u8, 1, 0, 1];
        assert!(split_tags(&labels, 0.0, 1).is_err());
        assert!(split_tags(&labels, 1.0, 1).is_err());
        // A fraction that rounds to zero test samples is rejected too.
        assert!(split_tags(&labels, 0.01, 1).is_err());
    }
}
