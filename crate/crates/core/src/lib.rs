//! Bilinear relation composition over word embeddings.
//!
//! A word pair `(h, t)` is mapped to `r(h, t) = hᵀAt + Ph + Qt`. The crate
//! loads and standardizes embeddings ([`embedding`]), composes relation
//! vectors ([`compose`]), fits the operator ([`training`]), scores it on
//! analogy benchmarks ([`evaluation`]) and checks the expected-loss
//! analysis by simulation ([`theorem_lab`]).

pub mod compose;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod theorem_lab;
pub mod training;

pub use error::{Error, Result};

// The guide's code samples compile and run as doctests.
macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub struct $name;
        )*
    };
}

book_chapters! {
    BookIntro => "intro.md",
    BookEmbeddings => "embeddings.md",
    BookCorrelation => "correlation.md",
    BookComposition => "composition.md",
    BookTraining => "training.md",
    BookEvaluation => "evaluation.md",
    BookMonteCarlo => "monte-carlo.md",
    BookCli => "cli.md",
}
