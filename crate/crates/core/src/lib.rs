//! Cross-linguistic sound-symbolism analysis toolkit: IPA segmentation,
//! bag-of-segment features, genealogy-aware evaluation folds, interpretable
//! baseline classifiers, significance tests, and a synthetic-lexicon lab
//! for end-to-end verification.

pub mod baselines;
pub mod corpus;
pub mod features;
pub mod stats;
pub mod synthlab;
pub mod tokenizer;
pub mod typology;
