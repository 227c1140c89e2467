//! Regenerate the shipped tiny-instance corpus:
//! `cargo run --example gen_corpus -- <seed> <count> > corpus/tiny.txt`

use cvar_safety::oracle::{generate_corpus, write_corpus, GeneratorLimits};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().map_or(2024, |s| s.parse().expect("seed"));
    let count = args.get(1).map_or(60, |s| s.parse().expect("count"));
    print!(
        "{}",
        write_corpus(&generate_corpus(seed, count, GeneratorLimits::default()))
    );
}
