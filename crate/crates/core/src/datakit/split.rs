use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Domain, Split};
use crate::error::{Error, Result};

/// Labels `floor(ratio · N)` samples train and the rest val, chosen by a
/// seeded uniform shuffle. Sample order is left untouched.
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::validation(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n = manifest.len();
    if n == 0 {
        return Err(Error::EmptyDataset("cannot split a manifest with no samples".into()));
    }
    // the epsilon absorbs representation error, e.g. 0.8 · 5290
    let n_train = ((ratio * n as f64) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for s in &mut out.samples {
        s.split = Some(Split::Val);
    }
    for &i in &order[..n_train] {
        out.samples[i].split = Some(Split::Train);
    }
    Ok(out)
}

/// Appends generated samples to a real manifest. Generated samples are
/// re-tagged `FAKE` and forced into the training split.
pub fn merge_with_deepfakes(real: &DatasetManifest, fake: &DatasetManifest) -> Result<DatasetManifest> {
    let ids: HashSet<&str> = real.samples.iter().map(|s| s.id.as_str()).collect();
    if let Some(clash) = fake.samples.iter().find(|s| ids.contains(s.id.as_str())) {
        return Err(Error::validation(format!(
            "deepfake id `{}` collides with a real sample",
            clash.id
        )));
    }
    let labelled = real.has_splits();
    let mut out = real.clone();
    out.samples.extend(fake.samples.iter().cloned().map(|mut s| {
        s.domain = Domain::Fake;
        s.split = if labelled || fake.has_splits() {
            Some(Split::Train)
        } else {
            None
        };
        s
    }));
    if labelled {
        for s in &mut out.samples {
            s.split.get_or_insert(Split::Train);
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::manifest::SampleRef;
    use std::path::PathBuf;

    fn manifest(n: usize, prefix: &str) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| SampleRef {
                    id: format!("{prefix}{i}"),
                    image_path: PathBuf::from(format!("{i}.png")),
                    mask_path: None,
                    domain: Domain::Mr,
                    source: "s".into(),
                    split: None,
                    fidelity: None,
                })
                .collect(),
        )
    }

    fn count(m: &DatasetManifest, split: Split) -> usize {
        m.samples.iter().filter(|s| s.split == Some(split)).count()
    }

    #[test]
    fn full_corpus_split_counts() {
        let m = split_dataset(&manifest(5290, "r"), 0.8, 1).unwrap();
        assert_eq!(count(&m, Split::Train), 4232);
        assert_eq!(count(&m, Split::Val), 1058);
    }

    #[test]
    fn ten_samples_split_eight_two() {
        let m = split_dataset(&manifest(10, "r"), 0.8, 3).unwrap();
        assert_eq!((count(&m, Split::Train), count(&m, Split::Val)), (8, 2));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let a = split_dataset(&manifest(50, "r"), 0.8, 9).unwrap();
        let b = split_dataset(&manifest(50, "r"), 0.8, 9).unwrap();
        let c = split_dataset(&manifest(50, "r"), 0.8, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_dataset(&manifest(0, "r"), 0.8, 1),
            Err(Error::EmptyDataset(_))
        ));
        assert!(split_dataset(&manifest(3, "r"), 1.0, 1).is_err());
        assert!(split_dataset(&manifest(3, "r"), 0.0, 1).is_err());
    }

    #[test]
    fn merge_counts_and_fake_placement() {
        let real = split_dataset(&manifest(5290, "r"), 0.8, 1).unwrap();
        let merged = merge_with_deepfakes(&real, &manifest(174, "FAKE_")).unwrap();
        assert_eq!(merged.len(), 5464);
        assert!(merged
            .subset(Split::Val)
            .samples
            .iter()
            .all(|s| s.domain != Domain::Fake));
        assert_eq!(merged.domain_counts()[&Domain::Fake], 174);
        assert_eq!(&merged.samples[..5290], &real.samples[..]);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let real = split_dataset(&manifest(12, "r"), 0.5, 1).unwrap();
        assert_eq!(
            merge_with_deepfakes(&real, &DatasetManifest::new(vec![])).unwrap(),
            real
        );
    }

    #[test]
    fn merge_rejects_collisions() {
        assert!(merge_with_deepfakes(&manifest(3, "r"), &manifest(1, "r")).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_partitions(n in 1usize..200, ratio in 0.01f64..0.99, seed in proptest::prelude::any::<u64>()) {
            let m = split_dataset(&manifest(n, "r"), ratio, seed).unwrap();
            let train = count(&m, Split::Train);
            let val = count(&m, Split::Val);
            proptest::prop_assert_eq!(train + val, n);
            proptest::prop_assert_eq!(train, ((ratio * n as f64) + 1e-9).floor() as usize);
        }
    }
}
