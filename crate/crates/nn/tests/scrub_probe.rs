// temporary probe: adversarial suite dynamics on confound vs signal data
use phonosym_core::synthlab::{generate, SynthConfig};
use phonosym_core::tokenizer::TokenizerRules;
use phonosym_core::typology::{bin_tertiles, DistanceMatrix, DistanceMeasure, LengthNorm};
use phonosym_nn::encoder::{EncoderConfig, TransformerEncoder};
use phonosym_nn::mlm::{mlm_pretrain, PretrainConfig};
use phonosym_nn::optim::AdamConfig;
use phonosym_nn::scrubber::{evaluate_suite, Condition, SuiteConfig};
use phonosym_nn::vocab::TokenVocab;
use std::time::Instant;

#[test]
fn probe_suite() {
    let rules = TokenizerRules::default();
    for (name, bias, confound) in [("confound", 0.0, 0.8), ("signal", 0.8, 0.0)] {
        let t0 = Instant::now();
        let synth = generate(&SynthConfig {
            families: 9,
            languages_per_family: 3,
            words_per_language: 30,
            bias,
            confound,
            family_signature: 0.8,
            pretrain_words: 6000,
            seed: 77,
            ..SynthConfig::default()
        })
        .unwrap();
        let vocab = TokenVocab::build(&synth.pretrain, &rules).unwrap();
        let enc = TransformerEncoder::new(
            EncoderConfig { vocab_size: vocab.len(), ..EncoderConfig::default() },
            3,
        )
        .unwrap();
        let cfg = PretrainConfig {
            epochs: 2,
            batch_size: 32,
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            seed: 5,
            ..PretrainConfig::default()
        };
        let (frozen, stats) = mlm_pretrain(enc, &synth.pretrain, &vocab, &rules, &cfg).unwrap();
        println!("[{name}] mlm {:.2}->{:.2} in {:.0}s", stats.initial_loss, stats.final_loss, t0.elapsed().as_secs_f64());

        let matrix = DistanceMatrix::compute(&synth.swadesh, DistanceMeasure::Ldn, &rules, LengthNorm::MaxLen).unwrap();
        let binnings: Vec<_> = matrix.languages.iter().map(|l| bin_tertiles(l, &matrix).unwrap()).collect();
        let t1 = Instant::now();
        let report = evaluate_suite(
            &synth.lexicon,
            &binnings,
            &frozen,
            &vocab,
            &rules,
            &SuiteConfig { runs: 3, seed: 11, ..SuiteConfig::default() },
        )
        .unwrap();
        for s in &report.summaries {
            println!(
                "[{name}] {}: test_size {:.3}, train_bin {:.3}",
                s.condition.name(),
                s.mean_test_size_acc,
                s.mean_train_bin_acc
            );
        }
        let _ = Condition::Adversarial;
        println!("[{name}] suite took {:.0}s; suppressed01 {} / suppressed05 {}; not_testable {}",
            t1.elapsed().as_secs_f64(), report.suppressed_bin01.len(), report.suppressed_bin05.len(), report.not_testable.len());
    }
}
