#![allow(dead_code)]

use feeder_core::config::{ForecasterSpec, PretrainConfig};
use feeder_core::ingest::{generate_synthetic, split, DateRange, IdSet, PartitionedDataset, SplitSpec, SyntheticSpec, SyntheticStyle};
use feeder_core::types::HorizonSpec;
use feeder_learn::pretrain::{pretrain, pretrain_corpus};
use feeder_learn::Forecaster;

pub fn tiny_spec() -> ForecasterSpec {
    ForecasterSpec {
        patch_size: 6,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ff_dim: 32,
    }
}

pub fn tiny_pretrain() -> PretrainConfig {
    PretrainConfig {
        corpus: SyntheticSpec {
            n_buildings: 8,
            n_days: 150,
            seed: 99,
            style: SyntheticStyle::Generic,
            first_id: 10_001,
            ..SyntheticSpec::default()
        },
        epochs: 3,
        batch_size: 32,
        lr: 3e-3,
        stride: 24,
        seed: 0,
    }
}

/// Tiny forecaster pretrained on a small generic corpus.
pub fn pretrained() -> Forecaster {
    let h = HorizonSpec::default();
    let cfg = tiny_pretrain();
    let (train, val) = pretrain_corpus(&cfg, &h).unwrap();
    let mut f = Forecaster::new(&tiny_spec(), &h, cfg.seed).unwrap();
    pretrain(&mut f, &train, &val, &cfg).unwrap();
    f
}

/// 18 residential buildings over 90 days: 1-10 fine-tune, 11-14 surrogate
/// validation, 15-18 evaluation; 40/20/30 days of train/val/test.
pub fn small_world() -> PartitionedDataset {
    let ymd = |m, d| chrono::NaiveDate::from_ymd_opt(2010, m, d).unwrap();
    let spec = SplitSpec {
        train: DateRange::new(ymd(7, 1), ymd(8, 9)),
        val: DateRange::new(ymd(8, 10), ymd(8, 29)),
        test: DateRange::new(ymd(8, 30), ymd(9, 28)),
        finetune_buildings: IdSet::range(1, 10),
        surrogate_val_buildings: IdSet::range(11, 14),
        eval_buildings: IdSet::range(15, 18),
    };
    split(generate_synthetic(18, 90, 7).unwrap(), &spec, &HorizonSpec::default()).unwrap()
}
