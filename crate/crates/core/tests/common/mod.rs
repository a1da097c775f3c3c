#![allow(dead_code)]

use std::collections::BTreeMap;

use prefagg_core::corpus::{Conversation, ConversationType, Interaction, Participant, Response};
use prefagg_core::scoring::{Battle, Outcome};

pub fn participant(id: &str, gender: &str) -> Participant {
    let mut p = Participant::new(id);
    p.gender = gender.to_string();
    p
}

/// A conversation whose opener carries the given (model, score) pairs.
pub fn conversation(cid: &str, user: &str, kind: ConversationType, opener: &[(&str, f64)]) -> Conversation {
    Conversation {
        conversation_id: cid.into(),
        user_id: user.into(),
        conversation_type: kind,
        turns: vec![Interaction {
            interaction_id: format!("{cid}-0"),
            turn_index: 0,
            user_prompt: format!("prompt of {cid}"),
            responses: opener
                .iter()
                .enumerate()
                .map(|(i, (m, s))| Response {
                    utterance_id: format!("{cid}-0-{i}"),
                    model_name: m.to_string(),
                    model_provider: None,
                    response_text: format!("response from {m}"),
                    score: *s,
                    chosen: None,
                    within_turn_id: None,
                })
                .collect(),
        }],
        open_feedback: String::new(),
        performance_attributes: BTreeMap::new(),
        choice_attributes: BTreeMap::new(),
        included_in_balanced_subset: None,
        extra: Default::default(),
    }
}

pub fn battle(a: &str, b: &str, outcome: Outcome) -> Battle {
    Battle {
        model_a: a.into(),
        model_b: b.into(),
        outcome,
        user_id: "u".into(),
        conversation_id: "c".into(),
        turn: 0,
        score_a: 0.0,
        score_b: 0.0,
    }
}

/// Battles drawn from a Bradley-Terry model with the given log-strengths.
/// Each battle is a tie with probability `tie_rate`.
pub fn bradley_terry(strength: &[f64], n: usize, tie_rate: f64, rng: &mut impl rand::Rng) -> Vec<Battle> {
    let m = strength.len();
    (0..n)
        .map(|k| {
            let i = rng.random_range(0..m);
            let mut j = rng.random_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            let p = 1.0 / (1.0 + (strength[j] - strength[i]).exp());
            let u: f64 = rng.random();
            let outcome = if u < tie_rate {
                Outcome::Tie
            } else if u < tie_rate + (1.0 - tie_rate) * p {
                Outcome::WinA
            } else {
                Outcome::WinB
            };
            let mut b = battle(&format!("m{i}"), &format!("m{j}"), outcome);
            b.user_id = format!("u{}", k % 50);
            b
        })
        .collect()
}
