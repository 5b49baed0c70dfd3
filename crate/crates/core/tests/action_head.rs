use std::path::Path;

use jala_core::config::{BackboneInit, Config};
use jala_core::motion::train_tokenizer;
use jala_core::training::{action_mse, tokenizer_corpus, Layout, Posttrainer};
use jala_core::world::make_splits;

#[test]
fn post_training_cuts_held_out_action_error_tenfold() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json");
    let mut cfg = Config::load(&path, &[]).unwrap();
    cfg.posttrain.init = BackboneInit::Random;
    let splits = make_splits(&cfg.world).unwrap();
    let tok = train_tokenizer(&tokenizer_corpus(&splits, &cfg.world).unwrap(), &cfg.tokenizer).unwrap().0;
    let eval = Layout::new(&cfg.world, &tok).prepare_all(&splits.robot_eval, &tok).unwrap();
    let mut t = Posttrainer::new(&cfg, &tok, &splits, None).unwrap();
    let before = action_mse(&t.state.model, &t.state.flow, &eval, cfg.eval.seed, 1).unwrap();
    t.run(|_| {}).unwrap();
    let after = action_mse(&t.state.model, &t.state.flow, &eval, cfg.eval.seed, 1).unwrap();
    eprintln!("held-out action mse {before:.4} untrained, {after:.4} trained");
    assert!(after * 10.0 <= before, "{before} vs {after}");
}
