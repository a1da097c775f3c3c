use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prefagg_core::corpus::{write_corpus, Conversation, ConversationType, Corpus, Interaction, Participant, Response};
use prefagg_core::synthetic::{synthetic_corpus, SyntheticSpec};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prefagg"));
    c.env_remove("PREFAGG_SEED");
    c
}

struct Fixture {
    dir: tempfile::TempDir,
    args: Vec<String>,
}

impl Fixture {
    fn from_corpus(corpus: &Corpus) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(corpus, &dir.path().join("corpus")).unwrap();
        let mut args = vec![
            "--survey".to_string(),
            paths.survey.display().to_string(),
            "--conversations".to_string(),
            paths.conversations.display().to_string(),
        ];
        for (flag, p) in [("--embeddings", &paths.embeddings), ("--topics", &paths.topics)] {
            if let Some(p) = p {
                args.push(flag.into());
                args.push(p.display().to_string());
            }
        }
        Fixture { dir, args }
    }

    fn synthetic() -> Fixture {
        Fixture::from_corpus(
            &synthetic_corpus(&SyntheticSpec {
                participants: 40,
                ..SyntheticSpec::default()
            })
            .unwrap(),
        )
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &[&str], extra: &[&str]) -> Output {
        bin().args(command).args(&self.args).args(extra).output().unwrap()
    }
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn validate_reports_counts() {
    let fx = Fixture::synthetic();
    let v = stdout_json(&fx.run(&["validate"], &[]));
    assert_eq!(v["tool"], "prefagg");
    assert_eq!(v["command"], "validate");
    assert_eq!(v["result"]["participants"], 40);
    assert_eq!(v["result"]["conversations"], 240);
    assert_eq!(v["result"]["utterances"], 240 * 6);
    assert_eq!(v["corpus_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn rank_is_byte_identical_across_runs_and_thread_counts() {
    let fx = Fixture::synthetic();
    let flags = ["--method", "rank_centrality", "--alpha", "1", "--tie-threshold", "5", "--subset", "balanced"];
    let a = fx.out("a");
    let b = fx.out("b");
    let run = |dir: &Path, threads: &str| {
        let mut extra = flags.to_vec();
        extra.extend(["--format", "json,csv", "--threads", threads, "--out", dir.to_str().unwrap()]);
        assert!(fx.run(&["rank"], &extra).status.success());
    };
    run(&a, "1");
    run(&b, "4");
    for f in ["rank.json", "rank.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let v: Value = serde_json::from_slice(&read(&a.join("rank.json"))).unwrap();
    assert_eq!(v["config"]["subset"], "balanced");
    assert_eq!(v["result"]["models"][0]["name"], "model-00");
    let csv = String::from_utf8(read(&a.join("rank.csv"))).unwrap();
    assert!(csv.starts_with("# prefagg "));
}

#[test]
fn bootstrap_is_deterministic() {
    let fx = Fixture::synthetic();
    let extra = ["--replications", "50", "--sample-size", "20", "--seed", "3"];
    let a = fx.run(&["bootstrap"], &extra);
    let b = fx.run(&["bootstrap"], &extra);
    assert_eq!(stdout_json(&a), stdout_json(&b));
    assert_eq!(a.stdout, b.stdout);
}

fn one_response_corpus() -> Corpus {
    let conv = Conversation {
        conversation_id: "c1".into(),
        user_id: "u1".into(),
        conversation_type: ConversationType::Unguided,
        turns: vec![Interaction {
            interaction_id: "c1-0".into(),
            turn_index: 0,
            user_prompt: "hello".into(),
            responses: vec![Response {
                utterance_id: "c1-0-0".into(),
                model_name: "solo".into(),
                model_provider: None,
                response_text: "hi".into(),
                score: 50.0,
                chosen: None,
                within_turn_id: None,
            }],
        }],
        open_feedback: String::new(),
        performance_attributes: BTreeMap::new(),
        choice_attributes: BTreeMap::new(),
        included_in_balanced_subset: None,
        extra: Default::default(),
    };
    Corpus::new(vec![Participant::new("u1")], vec![conv]).unwrap()
}

#[test]
fn rank_without_battles_exits_one_and_writes_nothing() {
    let fx = Fixture::from_corpus(&one_response_corpus());
    let out = fx.out("out");
    let o = fx.run(&["rank"], &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no battles"));
    assert!(!out.join("rank.json").exists());
}

#[test]
fn argument_errors_exit_two() {
    let fx = Fixture::synthetic();
    assert_eq!(fx.run(&["rank"], &["--no-such-flag"]).status.code(), Some(2));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
    assert_eq!(fx.run(&["rank"], &["--method", "borda"]).status.code(), Some(2));
    assert_eq!(fx.run(&["rank"], &["--alpha", "-1"]).status.code(), Some(2));
    assert_eq!(bin().arg("rank").output().unwrap().status.code(), Some(2));
}

#[test]
fn malformed_input_exits_one() {
    let fx = Fixture::synthetic();
    let bad = fx.out("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    let o = bin()
        .args(["validate", "--survey", bad.to_str().unwrap(), "--conversations", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_layering() {
    let fx = Fixture::synthetic();
    let cfg = fx.out("run.toml");
    std::fs::write(&cfg, "seed = 11\nmethod = \"elo_mle\"\n").unwrap();
    let seed_of = |o: Output| stdout_json(&o)["config"]["seed"].as_u64().unwrap();
    let with_config = ["--config", cfg.to_str().unwrap()];
    assert_eq!(seed_of(fx.run(&["validate"], &with_config)), 11);
    let env = bin()
        .env("PREFAGG_SEED", "22")
        .arg("validate")
        .args(&fx.args)
        .args(with_config)
        .output()
        .unwrap();
    assert_eq!(seed_of(env), 22);
    let flag = bin()
        .env("PREFAGG_SEED", "22")
        .arg("validate")
        .args(&fx.args)
        .args(with_config)
        .args(["--seed", "33"])
        .output()
        .unwrap();
    assert_eq!(seed_of(flag), 33);
    let v = stdout_json(&fx.run(&["rank"], &with_config));
    assert_eq!(v["result"]["method"], "elo_mle");
}

#[test]
fn exported_battles_rank_like_the_corpus() {
    let fx = Fixture::synthetic();
    let out = fx.out("b");
    let o = fx.run(&["battles"], &["--format", "json,csv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let from_corpus = stdout_json(&fx.run(&["rank"], &[]));
    for file in ["battles.csv", "battles.jsonl"] {
        let path = out.join(file);
        let o = bin().args(["rank", "--battles", path.to_str().unwrap()]).output().unwrap();
        let v = stdout_json(&o);
        assert_eq!(v["result"]["models"], from_corpus["result"]["models"], "{file}");
    }
}

#[test]
fn compare_reports_kendall_tau() {
    let fx = Fixture::synthetic();
    let v = stdout_json(&fx.run(&["compare"], &["--methods", "rank_centrality,elo_mle,avg_win_rate"]));
    let agreement = v["result"]["agreement"].as_array().unwrap();
    assert_eq!(agreement.len(), 3);
    for a in agreement {
        let tau = a["tau"].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&tau));
    }
}

#[test]
fn analysis_commands_succeed_on_synthetic_corpus() {
    let fx = Fixture::synthetic();
    for cmd in [
        vec!["describe"],
        vec!["groups", "--group-by", "conversation_type"],
        vec!["topics"],
        vec!["neighbourhoods"],
        vec!["entropy", "--mc-draws", "200"],
        vec!["fieldsites"],
        vec!["welfare", "--replications", "100", "--sample-size", "10"],
        vec!["textfeat"],
    ] {
        let o = fx.run(&cmd, &[]);
        let v = stdout_json(&o);
        assert_eq!(v["command"], cmd[0]);
    }
}

#[test]
fn welfare_choice_values_are_probabilities() {
    let fx = Fixture::synthetic();
    let v = stdout_json(&fx.run(&["welfare"], &["--replications", "100", "--sample-size", "10", "--regions", "us"]));
    let schemes = v["result"]["schemes"].as_array().unwrap();
    assert_eq!(schemes[0]["group"], "rep");
    for s in schemes {
        let rho: f64 = s["rho"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
        assert!((rho - 1.0).abs() < 1e-9);
        let max = s["max_population_welfare"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&max));
    }
}
