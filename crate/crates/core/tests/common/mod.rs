#![allow(dead_code)]

use std::sync::OnceLock;

use jala_core::config::Config;
use jala_core::motion::{train_tokenizer, Tokenizer};
use jala_core::training::{init_model, tokenizer_corpus, Layout, Model, Prepared};
use jala_core::world::{make_splits, Splits};

pub struct Fixture {
    pub config: Config,
    pub splits: Splits,
    pub tokenizer: Tokenizer,
    pub layout: Layout,
    /// Four lab episodes followed by four wild ones.
    pub episodes: Vec<Prepared>,
}

pub const TINY: [&str; 22] = [
    "world.lab_train=24",
    "world.lab_eval=4",
    "world.wild_train=12",
    "world.wild_eval=4",
    "world.robot_train=4",
    "world.robot_eval=4",
    "world.wild_label_fraction=0.5",
    "tokenizer.entries=16",
    "tokenizer.epochs=2",
    "tokenizer.min_chunks=10",
    "backbone.layers=2",
    "backbone.d_model=8",
    "perceiver.width=8",
    "perceiver.mlp_hidden=8",
    "flow.blocks=1",
    "flow.width=8",
    "decode.step_fraction=0.25",
    "decode.runs=1",
    "pretrain.total_steps=30",
    "pretrain.batch_size=4",
    "posttrain.total_steps=20",
    "posttrain.batch_size=4",
];

pub fn tiny_config(extra: &[&str]) -> Config {
    let overrides: Vec<String> = TINY.iter().chain(extra).map(|s| s.to_string()).collect();
    Config::from_json_with_overrides("{}", &overrides).unwrap()
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let config = tiny_config(&[]);
        let splits = make_splits(&config.world).unwrap();
        let tokenizer = train_tokenizer(&tokenizer_corpus(&splits, &config.world).unwrap(), &config.tokenizer).unwrap().0;
        let layout = Layout::new(&config.world, &tokenizer);
        let mut episodes = layout.prepare_all(&splits.lab_train[..4], &tokenizer).unwrap();
        episodes.extend(layout.prepare_all(&splits.wild_train[..4], &tokenizer).unwrap());
        Fixture { config, splits, tokenizer, layout, episodes }
    })
}

pub fn model(seed: u64) -> Model {
    let f = fixture();
    init_model(&f.config, &f.layout, seed).unwrap()
}

pub fn labeled(i: usize) -> &'static Prepared {
    let eps: Vec<&Prepared> = fixture().episodes.iter().filter(|p| p.labeled).collect();
    eps[i % eps.len()]
}

pub fn unlabeled(i: usize) -> &'static Prepared {
    let eps: Vec<&Prepared> = fixture().episodes.iter().filter(|p| !p.labeled).collect();
    eps[i % eps.len()]
}
