//! End-to-end checks of the leave-one-language-out harness against
//! synthetic lexicons with known ground truth.

use phonosym_core::baselines::{run_loo_bins, HarnessConfig, ModelKind};
use phonosym_core::corpus::SizeLabel;
use phonosym_core::features::{featurize, AblationFilter, SegmentVocabulary};
use phonosym_core::synthlab::{expected_accuracy, generate, SynthConfig};
use phonosym_core::tokenizer::TokenizerRules;
use phonosym_core::typology::{bin_tertiles, Bin, DistanceMatrix, DistanceMeasure, LengthNorm, TertileBinning};

fn binnings_for(
    swadesh: &[phonosym_core::typology::SwadeshList],
    rules: &TokenizerRules,
) -> Vec<TertileBinning> {
    let matrix = DistanceMatrix::compute(swadesh, DistanceMeasure::Ldn, rules, LengthNorm::MaxLen).unwrap();
    matrix
        .languages
        .iter()
        .map(|lang| bin_tertiles(lang, &matrix).unwrap())
        .collect()
}

#[test]
fn planted_bias_recovered_in_all_bins() {
    let rules = TokenizerRules::default();
    let cfg = SynthConfig {
        families: 3,
        languages_per_family: 3,
        bias: 0.8,
        family_signature: 0.3,
        seed: 41,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let binnings = binnings_for(&out.swadesh, &rules);
    for kind in [ModelKind::Logistic, ModelKind::Tree] {
        let outcome = run_loo_bins(&out.lexicon, &binnings, kind, &HarnessConfig::default(), &rules).unwrap();
        for bin in Bin::ALL {
            let mean = outcome.table.bin_mean(bin);
            assert!(
                mean >= 0.70,
                "{} mean accuracy in {} is {:.3}, expected >= 0.70",
                kind.name(),
                bin.name(),
                mean
            );
        }
    }
}

#[test]
fn null_bias_stays_at_chance() {
    let rules = TokenizerRules::default();
    let cfg = SynthConfig {
        families: 3,
        languages_per_family: 3,
        bias: 0.0,
        family_signature: 0.3,
        seed: 42,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let binnings = binnings_for(&out.swadesh, &rules);
    for kind in [ModelKind::Logistic, ModelKind::Tree] {
        let outcome = run_loo_bins(&out.lexicon, &binnings, kind, &HarnessConfig::default(), &rules).unwrap();
        for bin in Bin::ALL {
            let mean = outcome.table.bin_mean(bin);
            assert!(
                (mean - 0.5).abs() <= 0.05,
                "{} null mean in {} is {:.3}, expected 0.50 +/- 0.05",
                kind.name(),
                bin.name(),
                mean
            );
        }
    }
}

#[test]
fn family_structure_recovered_from_swadesh() {
    let rules = TokenizerRules::default();
    let mut hits = 0usize;
    let mut total = 0usize;
    for seed in 0..10u64 {
        let cfg = SynthConfig {
            families: 3,
            languages_per_family: 3,
            family_signature: 0.8,
            seed: 100 + seed,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let binnings = binnings_for(&out.swadesh, &rules);
        for binning in &binnings {
            let family = &out.lexicon.families[&binning.target];
            let siblings: Vec<&String> = out
                .lexicon
                .families
                .iter()
                .filter(|(lang, fam)| *fam == family && *lang != &binning.target)
                .map(|(lang, _)| lang)
                .collect();
            total += 1;
            if siblings
                .iter()
                .all(|s| binning.most_similar.contains(s))
            {
                hits += 1;
            }
        }
    }
    let frac = hits as f64 / total as f64;
    assert!(frac >= 0.9, "siblings grouped in most_similar only {frac:.2} of the time");
}

#[test]
fn classifier_accuracy_converges_to_bayes() {
    let rules = TokenizerRules::default();
    let base = SynthConfig {
        families: 1,
        languages_per_family: 1,
        words_per_language: 500,
        bias: 0.5,
        family_signature: 0.0,
        seed: 7,
        ..SynthConfig::default()
    };
    let bayes = expected_accuracy(&base).unwrap();

    let train = generate(&base).unwrap();
    let test = generate(&SynthConfig { seed: 8, ..base.clone() }).unwrap();

    let train_refs: Vec<&_> = train.lexicon.entries.iter().collect();
    let vocab = SegmentVocabulary::build(train_refs.iter().copied(), &rules).unwrap();
    let fx = |e: &phonosym_core::corpus::WordEntry| {
        featurize(e, &vocab, &AblationFilter::None, &rules)
            .counts
            .iter()
            .map(|&c| c as f64)
            .collect::<Vec<f64>>()
    };
    let x: Vec<Vec<f64>> = train.lexicon.entries.iter().map(|e| fx(e)).collect();
    let y: Vec<SizeLabel> = train.lexicon.entries.iter().map(|e| e.size_label).collect();
    let model = phonosym_core::baselines::train_logistic(
        &x,
        &y,
        &phonosym_core::baselines::LogisticConfig::default(),
    )
    .unwrap();
    let correct = test
        .lexicon
        .entries
        .iter()
        .filter(|e| model.predict(&fx(e)) == e.size_label)
        .count();
    let acc = correct as f64 / test.lexicon.entries.len() as f64;
    assert!(
        (acc - bayes).abs() <= 0.05,
        "test accuracy {acc:.3} vs bayes {bayes:.3}"
    );
}

#[test]
fn filters_commute_with_featurization() {
    // filtering the vocabulary then counting == counting then zeroing the
    // filtered columns
    let rules = TokenizerRules::default();
    let cfg = SynthConfig {
        families: 2,
        languages_per_family: 2,
        words_per_language: 10,
        bias: 0.4,
        seed: 17,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let refs: Vec<&_> = out.lexicon.entries.iter().collect();
    let vocab = SegmentVocabulary::build(refs.iter().copied(), &rules).unwrap();
    let sets = phonosym_core::features::default_segment_sets(&rules);
    let filter = AblationFilter::NasalsOnly(sets.nasals.clone());

    // filtered vocabulary: only segments the filter retains
    let retained: Vec<String> = vocab
        .segments()
        .iter()
        .filter(|s| {
            let toks = phonosym_core::tokenizer::tokenize(s, &rules).unwrap();
            filter.retains(&toks[0], &rules)
        })
        .cloned()
        .collect();
    let fvocab = SegmentVocabulary::from_segments(retained);

    for e in &out.lexicon.entries {
        let full = featurize(e, &vocab, &filter, &rules);
        let filt = featurize(e, &fvocab, &AblationFilter::None, &rules);
        for (seg, col) in fvocab.segments().iter().zip(0..) {
            let full_col = vocab.column(seg).unwrap();
            assert_eq!(full.counts[full_col], filt.counts[col], "segment {seg}");
        }
        // all non-retained columns must be zero in the filtered featurization
        for (seg, col) in vocab.segments().iter().zip(0..) {
            if fvocab.column(seg).is_none() {
                assert_eq!(full.counts[col], 0, "segment {seg} should be filtered");
            }
        }
    }
}
