//! Writes a seeded synthetic corpus as JSONL files.
//!
//! cargo run -p prefagg-core --example synthetic_corpus -- <dir> [seed]

use std::path::PathBuf;

use prefagg_core::corpus::write_corpus;
use prefagg_core::synthetic::{synthetic_corpus, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: synthetic_corpus <dir> [seed]")?);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let corpus = synthetic_corpus(&SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    })?;
    let paths = write_corpus(&corpus, &dir)?;
    println!("{}", paths.survey.display());
    println!("{}", paths.conversations.display());
    for p in [&paths.embeddings, &paths.topics].into_iter().flatten() {
        println!("{}", p.display());
    }
    Ok(())
}
