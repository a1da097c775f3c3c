use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Conversation, Corpus, CorpusPaths, Participant};
use crate::error::{Error, Result};

/// Writes the corpus back out as JSONL files that [`super::load_corpus`]
/// reads into an equal corpus.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<CorpusPaths> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = CorpusPaths::new(dir.join("survey.jsonl"), dir.join("conversations.jsonl"));
    write_lines(&paths.survey, corpus.participants().iter().map(participant_json))?;
    write_lines(
        &paths.conversations,
        corpus.conversations().iter().map(conversation_json),
    )?;
    if let Some(meta) = corpus.metadata() {
        let path = dir.join("metadata.jsonl");
        write_lines(
            &path,
            meta.iter()
                .map(|m| serde_json::to_value(m).expect("metadata serializes")),
        )?;
        paths.metadata = Some(path);
    }
    if let Some(emb) = corpus.embeddings() {
        let path = dir.join("embeddings.jsonl");
        write_lines(
            &path,
            emb.keys
                .iter()
                .zip(&emb.vectors)
                .map(|(k, v)| json!({"key": k, "vector": v})),
        )?;
        paths.embeddings = Some(path);
    }
    if let Some(topics) = corpus.topics() {
        let path = dir.join("topics.jsonl");
        write_lines(
            &path,
            topics.assignments.iter().map(|(cid, &t)| {
                let name = topics.names.get(&t);
                json!({"conversation_id": cid, "topic_id": t, "topic_name": name})
            }),
        )?;
        paths.topics = Some(path);
    }
    Ok(paths)
}

fn write_lines(path: &Path, rows: impl Iterator<Item = Value>) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn participant_json(p: &Participant) -> Value {
    let mut obj = Map::new();
    obj.insert("user_id".into(), json!(p.user_id));
    obj.insert("gender".into(), json!(p.gender));
    obj.insert("age".into(), json!(p.age_bucket));
    obj.insert("ethnicity".into(), json!(p.ethnicity_group));
    obj.insert("religion".into(), json!(p.religion_group));
    obj.insert("region".into(), json!(p.region));
    obj.insert("birth_country".into(), json!(p.birth_country));
    obj.insert("reside_country".into(), json!(p.reside_country));
    if let Some(locale) = &p.study_locale {
        obj.insert("study_locale".into(), json!(locale));
    }
    obj.insert("stated_prefs".into(), json!(p.stated_prefs));
    let flags = [
        ("included_in_balanced_subset", p.included_in_balanced_subset),
        ("included_in_UK_REP", p.census_uk),
        ("included_in_US_REP", p.census_us),
    ];
    for (key, flag) in flags {
        if let Some(b) = flag {
            obj.insert(key.into(), json!(b));
        }
    }
    for (k, v) in &p.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

fn conversation_json(c: &Conversation) -> Value {
    let mut history = Vec::new();
    for turn in &c.turns {
        history.push(json!({
            "turn": turn.turn_index,
            "role": "user",
            "content": turn.user_prompt,
            "interaction_id": turn.interaction_id,
        }));
        for r in &turn.responses {
            let mut entry = Map::new();
            entry.insert("turn".into(), json!(turn.turn_index));
            entry.insert("role".into(), json!("model"));
            entry.insert("content".into(), json!(r.response_text));
            entry.insert("model_name".into(), json!(r.model_name));
            entry.insert("model_provider".into(), json!(r.model_provider));
            entry.insert("score".into(), json!(r.score));
            entry.insert("if_chosen".into(), json!(r.chosen));
            entry.insert("within_turn_id".into(), json!(r.within_turn_id));
            entry.insert("utterance_id".into(), json!(r.utterance_id));
            history.push(Value::Object(entry));
        }
    }
    let mut obj = Map::new();
    obj.insert("conversation_id".into(), json!(c.conversation_id));
    obj.insert("user_id".into(), json!(c.user_id));
    obj.insert("conversation_type".into(), json!(c.conversation_type.label()));
    obj.insert("conversation_history".into(), Value::Array(history));
    obj.insert("open_feedback".into(), json!(c.open_feedback));
    obj.insert("performance_attributes".into(), json!(c.performance_attributes));
    obj.insert("choice_attributes".into(), json!(c.choice_attributes));
    if let Some(b) = c.included_in_balanced_subset {
        obj.insert("included_in_balanced_subset".into(), json!(b));
    }
    for (k, v) in &c.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}
