//! Shared setup for the benchmarks: the default model sizes on a small world.

use jala_core::config::Config;
use jala_core::motion::{train_tokenizer, Tokenizer};
use jala_core::training::{init_model, tokenizer_corpus, Layout, Model, Prepared};
use jala_core::world::{make_splits, Splits};

pub struct Setup {
    pub config: Config,
    pub splits: Splits,
    pub tokenizer: Tokenizer,
    pub layout: Layout,
    pub model: Model,
    pub lab: Vec<Prepared>,
    pub robot: Vec<Prepared>,
}

pub fn setup() -> Setup {
    let overrides: Vec<String> = [
        "world.lab_train=200",
        "world.lab_eval=8",
        "world.wild_train=100",
        "world.wild_eval=8",
        "world.robot_train=16",
        "world.robot_eval=8",
        "tokenizer.min_chunks=100",
        "tokenizer.epochs=4",
    ]
    .map(String::from)
    .to_vec();
    let config = Config::from_json_with_overrides("{}", &overrides).expect("bench config");
    let splits = make_splits(&config.world).expect("splits");
    let corpus = tokenizer_corpus(&splits, &config.world).expect("corpus");
    let tokenizer = train_tokenizer(&corpus, &config.tokenizer).expect("tokenizer").0;
    let layout = Layout::new(&config.world, &tokenizer);
    let model = init_model(&config, &layout, 1).expect("model");
    let lab = layout.prepare_all(&splits.lab_eval, &tokenizer).expect("lab episodes");
    let robot = layout.prepare_all(&splits.robot_train, &tokenizer).expect("robot episodes");
    Setup { config, splits, tokenizer, layout, model, lab, robot }
}
