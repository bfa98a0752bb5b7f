use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{label_oracle, Example, Variant, NUM_DIGITS};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub variant: Variant,
    pub seq_len: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
    /// Permits a sequence length other than the variant's reference length.
    #[serde(default)]
    pub allow_custom_len: bool,
}

impl DatasetSpec {
    /// Reference sizes: 100k / 10k / 10k at the variant's default length.
    pub fn reference(variant: Variant, seed: u64) -> Self {
        DatasetSpec {
            variant,
            seq_len: variant.default_len(),
            train: 100_000,
            dev: 10_000,
            test: 10_000,
            seed,
            allow_custom_len: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.dev == 0 || self.test == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        if self.seq_len != self.variant.default_len() && !self.allow_custom_len {
            return Err(Error::Config(format!(
                "{} task uses T={}; pass an explicit override for T={}",
                self.variant.name(),
                self.variant.default_len(),
                self.seq_len
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("sequences need at least two tokens".into()));
        }
        // The pointer is a digit, so it must be able to land inside the sequence
        // and, for the double task, some inner pointer must satisfy x' < x_{T-1}.
        let min_len = match self.variant {
            Variant::Single => 2,
            Variant::Double => 3,
        };
        if self.seq_len < min_len {
            return Err(Error::Config(format!("T={} is too short", self.seq_len)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

fn sample_example<R: Rng>(rng: &mut R, variant: Variant, len: usize) -> Example {
    // Whole-sequence rejection: the label rule decides validity, so
    // positions the rule never inspects stay exactly uniform.
    let max_token = NUM_DIGITS.min(len);
    loop {
        let mut tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..NUM_DIGITS)).collect();
        // a pointer past the end of a short sequence is resampled in place
        if tokens[len - 1] >= max_token {
            tokens[len - 1] = rng.gen_range(0..max_token);
        }
        if let Ok(label) = label_oracle(&tokens, variant) {
            return Example { tokens, label };
        }
    }
}

fn sample_split(spec: &DatasetSpec, split: &str, count: usize) -> Vec<Example> {
    let mut rng = rng::stream(spec.seed, &format!("data.{split}"));
    (0..count)
        .map(|_| sample_example(&mut rng, spec.variant, spec.seq_len))
        .collect()
}

/// Generates the three splits, each from its own seeded stream.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset {
        spec: spec.clone(),
        train: sample_split(spec, "train", spec.train),
        dev: sample_split(spec, "dev", spec.dev),
        test: sample_split(spec, "test", spec.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant, n: usize) -> DatasetSpec {
        DatasetSpec {
            train: n,
            dev: 10,
            test: 10,
            ..DatasetSpec::reference(variant, 11)
        }
    }

    #[test]
    fn labels_agree_with_oracle() {
        for variant in [Variant::Single, Variant::Double] {
            let ds = generate(&small(variant, 1000)).unwrap();
            for ex in ds.train.iter().chain(&ds.dev).chain(&ds.test) {
                assert_eq!(label_oracle(&ex.tokens, variant), Ok(ex.label));
                assert_eq!(ex.len(), variant.default_len());
            }
        }
    }

    #[test]
    fn double_variant_respects_pointer_order() {
        let ds = generate(&small(Variant::Double, 1000)).unwrap();
        for ex in &ds.train {
            let outer = ex.tokens[ex.len() - 1];
            assert!(ex.tokens[outer] < outer);
        }
    }

    #[test]
    fn same_spec_same_data_and_splits_differ() {
        let spec = small(Variant::Single, 50);
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_ne!(a.dev, a.test);
        let other = generate(&DatasetSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn nonstandard_length_needs_override() {
        let spec = DatasetSpec {
            seq_len: 6,
            ..small(Variant::Single, 5)
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
        let ds = generate(&DatasetSpec { allow_custom_len: true, ..spec }).unwrap();
        assert!(ds.train.iter().all(|e| e.len() == 6 && e.tokens[5] < 6));
    }

    #[test]
    fn zero_sized_split_is_rejected() {
        let spec = DatasetSpec { dev: 0, ..small(Variant::Single, 5) };
        assert!(generate(&spec).is_err());
    }
}
