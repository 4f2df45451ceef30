//! Evaluation: retrieval metrics, matching and search protocols, and the
//! synthetic corpora they run on.

mod metrics;
mod protocol;
mod report;
mod synth;

pub use metrics::{mrr, pr_auc, recall_at_k, ScoredPair, ScoredPool};
pub use protocol::{
    match_protocol, search_pools, search_protocol, EvalItem, EvalPool, MatchResult, SearchRow,
    OVERALL_TASK,
};
pub use report::{plot_series, search_records, search_table};
pub use synth::{
    random_function, synth_corpus, synth_obfuscate, CorpusSpec, ObfMode, SynthSpec, ORIGINAL_TAG,
};
