//! Runs the answer parser over model responses, one per line on stdin, or
//! over a few built-in samples.
//!
//!     printf '(C) jumps\nThe answer is D.\n' | cargo run --example parse_answers

use std::io::{BufRead, IsTerminal};

use gridqa::letter::letters_in_play;
use gridqa::scoring::parse_letter;

fn main() -> anyhow::Result<()> {
    let options: Vec<String> = [
        "the man jumps",
        "to get the ball",
        "because it is raining",
        "wave",
        "walk away",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let stdin = std::io::stdin();
    let lines: Vec<String> = if stdin.is_terminal() {
        [
            "B",
            "(C) the man jumps",
            "The answer is D.",
            "to get the ball",
            "no idea",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    } else {
        stdin.lock().lines().collect::<Result<_, _>>()?
    };
    let play = letters_in_play(options.len());
    for raw in lines {
        match parse_letter(&raw, &play, &options) {
            Ok(letter) => println!("{letter}  <- {raw:?}"),
            Err(e) => println!("?  <- {e}"),
        }
    }
    Ok(())
}
