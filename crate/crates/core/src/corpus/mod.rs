//! Review ingestion, vocabulary, filtering, preference pairs and synthetic corpora.

pub mod dataset;
pub mod synth;
pub mod text;
pub mod vocab;

pub use dataset::{
    attributes_of, build_preference_pairs, recursive_filter, Dataset, Interaction, Split,
};
pub use synth::{synthesize_corpus, synthesize_explanations, SentimentLevel, SynthSpec};
pub use text::{
    extract_explanations, parse_reviews, split_sentences, tokenize, Explanation, ExtractSummary,
    Lexicon, RatingScale, RawReview,
};
pub use vocab::{build_vocabulary, Vocabulary, BOS, EOS, PAD, UNK};
