use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotatedSentence, Corpus};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// train / validation / test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.70, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {:?} must be positive and sum to 1",
                self.ratios
            )));
        }
        Ok(())
    }

    /// Train, validation and test sizes for `n` sentences: train and
    /// validation are rounded, test takes the remainder, and each part keeps
    /// at least one sentence.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        if n < 3 {
            return Err(Error::Input(format!("cannot split {n} sentences three ways")));
        }
        let v = ((n as f64 * self.ratios[1]).round() as usize).max(1);
        let t = ((n as f64 * self.ratios[0]).round() as usize).clamp(1, n - v - 1);
        Ok([t, v, n - t - v])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<AnnotatedSentence>,
    pub val: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

impl Split {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Generator seed for a (corpus name, seed) pair.
pub fn split_key(corpus_name: &str, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(corpus_name.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.finalize().into()
}

/// Shuffle sentences under a generator keyed by corpus name and seed, then
/// slice contiguously.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<Split> {
    let [t, v, _] = spec.sizes(corpus.len())?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha20Rng::from_seed(split_key(&corpus.name.to_string(), spec.seed));
    order.shuffle(&mut rng);
    let pick = |ix: &[usize]| ix.iter().map(|&i| corpus.sentences[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..t]),
        val: pick(&order[t..t + v]),
        test: pick(&order[t + v..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusName, CueKind};
    use std::collections::HashSet;

    fn corpus(n: usize) -> Corpus {
        let s = (0..n)
            .map(|i| AnnotatedSentence::unannotated(format!("s{i}"), vec!["w".into()]))
            .collect();
        Corpus::new(CorpusName::BF, CueKind::Speculation, s).unwrap()
    }

    #[test]
    fn hundred_is_exact() {
        assert_eq!(split(&corpus(100), &SplitSpec::default()).unwrap().sizes(), [70, 15, 15]);
    }

    #[test]
    fn sizes_within_one_of_ratio() {
        let spec = SplitSpec::default();
        for n in 4..400 {
            let s = spec.sizes(n).unwrap();
            assert_eq!(s.iter().sum::<usize>(), n);
            for (k, r) in spec.ratios.iter().enumerate() {
                assert!((s[k] as f64 - n as f64 * r).abs() <= 1.0, "n={n} {s:?}");
            }
        }
    }

    #[test]
    fn deterministic_disjoint_exhaustive() {
        let c = corpus(101);
        let a = split(&c, &SplitSpec { seed: 5, ..Default::default() }).unwrap();
        let b = split(&c, &SplitSpec { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        let ids: HashSet<&str> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .map(|s| s.sentence_id.as_str())
            .collect();
        assert_eq!(ids.len(), 101);
        let other = split(&c, &SplitSpec { seed: 6, ..Default::default() }).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn too_small_or_bad_ratios() {
        assert!(split(&corpus(2), &SplitSpec::default()).is_err());
        let bad = SplitSpec { ratios: [0.5, 0.5, 0.0], seed: 0 };
        assert!(bad.validate().is_err());
    }
}
