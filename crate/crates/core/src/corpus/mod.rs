//! Dialog data model, vocabulary and the JSON-lines corpus format.

pub mod dialog;
pub mod vocab;

pub use dialog::{
    join, load_corpus, make_state, make_turn_input, parse_corpus, save_corpus, split_state,
    state_summary, tokenize, Dialog, DialogTurn, Goal, Mask, Module, Source, Tokens, TurnInput,
    TurnPrediction,
};
pub use vocab::Vocab;
