mod common;

use gridqa::letter::{letters_in_play, OptionLetter};
use gridqa::scoring::parse_letter;
use proptest::prelude::*;
use serde::Deserialize;

const OPTIONS: [&str; 5] = [
    "the man jumps",
    "to get the ball",
    "because it is raining",
    "wave at the camera",
    "walk away",
];

#[derive(Deserialize)]
struct Case {
    raw: String,
    options: usize,
    expect: Option<OptionLetter>,
    rule: Option<u8>,
}

fn options(count: usize) -> Vec<String> {
    OPTIONS[..count].iter().map(|s| s.to_string()).collect()
}

#[test]
fn fixture_responses_parse_per_precedence() {
    let text = std::fs::read_to_string(common::fixtures().join("parser_cases.json")).unwrap();
    let cases: Vec<Case> = serde_json::from_str(&text).unwrap();
    assert!(cases.len() >= 20);
    for rule in 1..=3 {
        assert!(cases.iter().any(|c| c.rule == Some(rule)), "no fixture for rule {rule}");
    }
    let mut deviations = Vec::new();
    for c in &cases {
        let got = parse_letter(&c.raw, &letters_in_play(c.options), &options(c.options)).ok();
        if got != c.expect {
            deviations.push(format!("{:?}: expected {:?}, got {:?}", c.raw, c.expect, got));
        }
    }
    assert!(deviations.is_empty(), "{}", deviations.join("\n"));
}

#[test]
fn first_character_beats_option_text() {
    // rule 1 wins even though the rest names option B's text
    let got = parse_letter("A to get the ball", &letters_in_play(5), &options(5)).unwrap();
    assert_eq!(got.as_char(), 'A');
}

#[test]
fn equality_beats_containment() {
    let opts = vec!["walk".to_string(), "walk away".to_string()];
    let got = parse_letter("walk away", &letters_in_play(2), &opts).unwrap();
    assert_eq!(got.as_char(), 'B');
}

proptest! {
    #[test]
    fn result_is_always_a_letter_in_play(raw in "\\PC{0,40}", count in 2usize..=5) {
        let play = letters_in_play(count);
        let opts = options(count);
        let first = parse_letter(&raw, &play, &opts);
        prop_assert_eq!(&first, &parse_letter(&raw, &play, &opts));
        if let Ok(l) = first {
            prop_assert!(play.contains(&l));
        }
    }

    #[test]
    fn bare_letter_round_trips(idx in 0usize..5, tail in prop::sample::select(vec!["", ".", ")", ":", " text"])) {
        let letter = OptionLetter::from_index(idx).unwrap();
        let raw = format!("{letter}{tail}");
        prop_assert_eq!(parse_letter(&raw, &letters_in_play(5), &options(5)), Ok(letter));
    }
}
