use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use prefagg_core::aggregate::{battle_leaderboard, kendall_tau, leaderboard, KendallTau, Leaderboard, Method};
use prefagg_core::corpus::{
    describe as describe_attr, filter_balanced, hash_files, load_corpus, type_counts, Attribute, BalanceMode, Corpus,
    CorpusPaths, EmbeddingTable, FrequencyTable,
};
use prefagg_core::demostats::{over_representation, topic_regression, RegressionSpec};
use prefagg_core::neighborhood::{
    field_sites, intersectional_entropy, local_neighbourhoods, prune, summarize_entropy, EntropyConfig,
    EntropySimulator,
};
use prefagg_core::resample::{
    bootstrap_leaderboard, even_pair_comparison, group_leaderboards, GroupKey, GroupOptions, SamplePlan, SampleUnit,
};
use prefagg_core::scoring::{extract_battles, rated_interactions, Battle, Outcome};
use prefagg_core::textfeat::{opener_features, refusal_choice, score_regression, Lexicon, FEATURES};
use prefagg_core::welfare::{
    fosd, impute_missing, induced_distribution, subpopulation, welfare_distribution, welfare_matrix, Dominance,
    Group, ImputeStrategy, Measure, Region,
};

use crate::battles_io::{battles_csv, battles_jsonl, read_battles};
use crate::output::{num, opt, Artifact, Table};
use crate::settings::{Format, RunConfig, Subset};
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse<T: std::str::FromStr<Err = prefagg_core::Error>>(flag: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e| usage(format!("{flag}: {e}")))
}

fn corpus_paths(cfg: &RunConfig) -> Result<CorpusPaths> {
    let (Some(survey), Some(conversations)) = (&cfg.survey, &cfg.conversations) else {
        return Err(usage("--survey and --conversations are required"));
    };
    Ok(CorpusPaths {
        survey: survey.clone(),
        conversations: conversations.clone(),
        utterances: cfg.utterances.clone(),
        metadata: cfg.metadata.clone(),
        embeddings: cfg.embeddings.clone(),
        topics: cfg.topics.clone(),
    })
}

fn apply_subset(corpus: Corpus, subset: Subset, seed: u64) -> Result<Corpus> {
    let census = |flag: fn(&prefagg_core::corpus::Participant) -> Option<bool>, name: &str| -> Result<Corpus> {
        if corpus.participants().iter().all(|p| flag(p).is_none()) {
            bail!("--subset {name}: the survey carries no {name} flags");
        }
        Ok(corpus.restrict(|p| flag(p) == Some(true), |_| true))
    };
    match subset {
        Subset::All => Ok(corpus),
        Subset::Balanced => Ok(filter_balanced(&corpus, BalanceMode::Auto, seed)),
        Subset::CensusUk => census(|p| p.census_uk, "census_uk"),
        Subset::CensusUs => census(|p| p.census_us, "census_us"),
    }
}

/// Loads the corpus, applies the subset and returns it with its input hash.
fn load(cfg: &RunConfig) -> Result<(Corpus, String)> {
    let paths = corpus_paths(cfg)?;
    let hash = paths.content_hash()?;
    let corpus = load_corpus(&paths)?;
    Ok((apply_subset(corpus, cfg.subset, cfg.seed)?, hash))
}

/// Battles from `--battles` when given, else extracted from the corpus.
fn load_battles(cfg: &RunConfig) -> Result<(Vec<Battle>, String)> {
    match &cfg.battles {
        Some(path) => Ok((read_battles(path)?, hash_files(&[("battles", path.as_path())])?)),
        None => {
            let (corpus, hash) = load(cfg)?;
            Ok((extract_battles(&corpus, cfg.tie_threshold, cfg.turns)?, hash))
        }
    }
}

fn leaderboard_table(name: &str, boards: &[&Leaderboard]) -> Table {
    let mut t = Table::new(
        name,
        &["method", "model", "score", "rank", "n_battles", "n_unique_raters", "ci_lo", "ci_hi"],
    );
    for b in boards {
        for s in &b.models {
            t.push(vec![
                b.method.name().into(),
                s.name.clone(),
                num(s.score),
                num(s.rank),
                s.n_battles.to_string(),
                s.n_unique_raters.to_string(),
                opt(s.ci.map(|c| c.0)),
                opt(s.ci.map(|c| c.1)),
            ]);
        }
    }
    t
}

#[derive(Serialize)]
struct ValidateReport {
    participants: usize,
    conversations: usize,
    interactions: usize,
    utterances: usize,
    models: usize,
    conversation_types: BTreeMap<String, usize>,
    balanced_participants: usize,
    balanced_conversations: usize,
    balanced_source: &'static str,
    sidecars: BTreeMap<&'static str, bool>,
}

pub fn validate(cfg: &RunConfig) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    let counts = corpus.counts();
    let mut types: BTreeMap<String, usize> = BTreeMap::new();
    for c in corpus.conversations() {
        *types.entry(c.conversation_type.label().to_string()).or_default() += 1;
    }
    let flagged = corpus
        .conversations()
        .iter()
        .any(|c| c.included_in_balanced_subset.is_some());
    let balanced = filter_balanced(&corpus, BalanceMode::Auto, cfg.seed);
    let report = ValidateReport {
        participants: counts.participants,
        conversations: counts.conversations,
        interactions: counts.interactions,
        utterances: counts.utterances,
        models: corpus.models().len(),
        conversation_types: types,
        balanced_participants: type_counts(&balanced).len(),
        balanced_conversations: balanced.conversations().len(),
        balanced_source: if flagged { "flag" } else { "recomputed" },
        sidecars: BTreeMap::from([
            ("metadata", corpus.metadata().is_some()),
            ("embeddings", corpus.embeddings().is_some()),
            ("topics", corpus.topics().is_some()),
        ]),
    };
    let mut t = Table::new("validate", &["quantity", "count"]);
    for (k, v) in [
        ("participants", report.participants),
        ("conversations", report.conversations),
        ("interactions", report.interactions),
        ("utterances", report.utterances),
        ("models", report.models),
        ("balanced_participants", report.balanced_participants),
        ("balanced_conversations", report.balanced_conversations),
    ] {
        t.push(vec![k.into(), v.to_string()]);
    }
    Ok(Artifact::new("validate", hash, &report)?.with_table(t))
}

pub fn describe(cfg: &RunConfig) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    let attrs: Vec<Attribute> = match &cfg.group_by {
        Some(g) => vec![parse("--group-by", g)?],
        None => Attribute::ALL.to_vec(),
    };
    let tables: Vec<FrequencyTable> = attrs.into_iter().map(|a| describe_attr(&corpus, a)).collect();
    let mut t = Table::new("describe", &["attribute", "group", "count", "percent"]);
    for ft in &tables {
        for r in &ft.rows {
            t.push(vec![ft.attribute.name().into(), r.group.clone(), r.count.to_string(), num(r.percent)]);
        }
    }
    Ok(Artifact::new("describe", hash, &tables)?.with_table(t))
}

pub fn battles(cfg: &RunConfig) -> Result<Artifact> {
    let (battles, hash) = load_battles(cfg)?;
    let mut per_model: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &battles {
        *per_model.entry(&b.model_a).or_default() += 1;
        *per_model.entry(&b.model_b).or_default() += 1;
    }
    let summary = json!({
        "battles": battles.len(),
        "ties": battles.iter().filter(|b| b.outcome == Outcome::Tie).count(),
        "per_model": per_model,
    });
    let mut artifact = Artifact::new("battles", hash, &summary)?;
    if cfg.out.is_some() {
        if cfg.wants(Format::Json) {
            artifact.files.push(("battles.jsonl".into(), battles_jsonl(&battles)?));
        }
        if cfg.wants(Format::Csv) {
            artifact.files.push(("battles.csv".into(), battles_csv(&battles)?));
        }
    } else {
        // Without an output directory the battle list itself is the result.
        artifact.result = serde_json::to_value(&battles)?;
    }
    Ok(artifact)
}

fn rank_with(cfg: &RunConfig, method: Method) -> Result<(Leaderboard, String)> {
    let params = cfg.params();
    match &cfg.battles {
        Some(path) => Ok((
            battle_leaderboard(&read_battles(path)?, method, &params)?,
            hash_files(&[("battles", path.as_path())])?,
        )),
        None => {
            let (corpus, hash) = load(cfg)?;
            let its = rated_interactions(&corpus, cfg.turns);
            Ok((leaderboard(&its, method, &params)?, hash))
        }
    }
}

pub fn rank(cfg: &RunConfig) -> Result<Artifact> {
    let (board, hash) = rank_with(cfg, cfg.method)?;
    let table = leaderboard_table("rank", &[&board]);
    Ok(Artifact::new("rank", hash, &board)?.with_table(table))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Unit {
    Participant,
    Battle,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// What each replication resamples
    #[arg(long, value_enum, default_value = "participant")]
    unit: Unit,
    /// Draw with replacement instead of without
    #[arg(long)]
    with_replacement: bool,
}

pub fn bootstrap(cfg: &RunConfig, args: &BootstrapArgs) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    let mut plan = SamplePlan::new(cfg.sample_size, cfg.replications, cfg.seed);
    plan.unit = match args.unit {
        Unit::Participant => SampleUnit::Participant,
        Unit::Battle => SampleUnit::Battle,
    };
    plan.with_replacement = args.with_replacement;
    let result = bootstrap_leaderboard(&corpus, &plan, cfg.method, &cfg.params())?;
    if result.n_failed() > 0 {
        log::warn!("{} of {} replications failed", result.n_failed(), plan.replications);
    }
    let mut t = Table::new(
        "bootstrap",
        &["model", "n_present", "lo", "median", "hi", "first_place_share"],
    );
    for m in &result.models {
        t.push(vec![
            m.name.clone(),
            m.n_present.to_string(),
            num(m.lo),
            num(m.median),
            num(m.hi),
            num(result.first_place_share(&m.name)),
        ]);
    }
    Ok(Artifact::new("bootstrap", hash, &result)?.with_table(t))
}

#[derive(Debug, Args)]
pub struct GroupsArgs {
    /// Groups with fewer participants are reported but not ranked
    #[arg(long, default_value_t = 1)]
    min_group_size: usize,
    /// Recompute the balanced subset before grouping
    #[arg(long)]
    rebalance: bool,
}

pub fn groups(cfg: &RunConfig, args: &GroupsArgs) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    let key: GroupKey = parse("--group-by", cfg.group_by.as_deref().unwrap_or("gender"))?;
    let options = GroupOptions {
        min_group_size: args.min_group_size,
        rebalance_seed: args.rebalance.then_some(cfg.seed),
    };
    let report = group_leaderboards(&corpus, key, cfg.method, &cfg.params(), &options)?;
    let mut t = Table::new("groups", &["group", "n_participants", "model", "score", "rank", "rank_delta"]);
    for g in &report.groups {
        for s in &g.leaderboard.models {
            t.push(vec![
                g.group.clone(),
                g.n_participants.to_string(),
                s.name.clone(),
                num(s.score),
                num(s.rank),
                opt(g.rank_delta.get(&s.name).copied()),
            ]);
        }
    }
    Ok(Artifact::new("groups", hash, &report)?.with_table(t))
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Methods whose leaderboards are compared pairwise
    #[arg(long, value_delimiter = ',', default_value = "rank_centrality,elo_mle")]
    methods: Vec<String>,
    /// Second battle list for an even-pair comparison against the first
    #[arg(long)]
    against: Option<PathBuf>,
    /// Battles drawn per shared model pair and replication
    #[arg(long, default_value_t = 20)]
    slots_per_pair: usize,
}

#[derive(Serialize)]
struct Agreement {
    a: Method,
    b: Method,
    #[serde(flatten)]
    tau: KendallTau,
}

pub fn compare(cfg: &RunConfig, args: &CompareArgs) -> Result<Artifact> {
    if let Some(other) = &args.against {
        let (a, hash_a) = load_battles(cfg)?;
        let b = read_battles(other)?;
        let hash = hash_files(&[("battles_b", other.as_path())])?;
        let result = even_pair_comparison(&a, &b, args.slots_per_pair, cfg.replications, cfg.seed, cfg.alpha)?;
        let mut t = Table::new("compare", &["model", "a_lo", "a_hi", "b_lo", "b_hi", "flagged"]);
        for (ia, ib) in result.a.iter().zip(&result.b) {
            t.push(vec![
                ia.name.clone(),
                num(ia.lo),
                num(ia.hi),
                num(ib.lo),
                num(ib.hi),
                result.flagged.contains(&ia.name).to_string(),
            ]);
        }
        return Ok(Artifact::new("compare", format!("{hash_a}+{hash}"), &result)?.with_table(t));
    }
    let methods: Vec<Method> = args
        .methods
        .iter()
        .map(|m| parse("--methods", m))
        .collect::<Result<_>>()?;
    if methods.len() < 2 {
        return Err(usage("--methods needs at least two methods"));
    }
    let mut hash = String::new();
    let mut boards = Vec::new();
    for &m in &methods {
        let (board, h) = rank_with(cfg, m)?;
        hash = h;
        boards.push(board);
    }
    let mut agreements = Vec::new();
    for i in 0..boards.len() {
        for j in i + 1..boards.len() {
            agreements.push(Agreement {
                a: boards[i].method,
                b: boards[j].method,
                tau: kendall_tau(&boards[i], &boards[j])?,
            });
        }
    }
    let mut t = Table::new("compare", &["method_a", "method_b", "tau", "p_value", "n"]);
    for a in &agreements {
        t.push(vec![
            a.a.name().into(),
            a.b.name().into(),
            num(a.tau.tau),
            num(a.tau.p_value),
            a.tau.n.to_string(),
        ]);
    }
    let refs: Vec<&Leaderboard> = boards.iter().collect();
    let result = json!({"leaderboards": boards, "agreement": agreements});
    Ok(Artifact::new("compare", hash, &result)?
        .with_table(t)
        .with_table(leaderboard_table("compare_leaderboards", &refs)))
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    /// Skip the per-topic regressions
    #[arg(long)]
    no_regression: bool,
}

pub fn topics(cfg: &RunConfig, args: &TopicsArgs) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    if corpus.topics().is_none() {
        return Err(usage("topics needs --topics"));
    }
    let attrs: Vec<Attribute> = match &cfg.group_by {
        Some(g) => vec![parse("--group-by", g)?],
        None => vec![
            Attribute::Gender,
            Attribute::Age,
            Attribute::Ethnicity,
            Attribute::Religion,
            Attribute::Region,
        ],
    };
    let tables = attrs
        .into_iter()
        .map(|a| over_representation(&corpus, a))
        .collect::<prefagg_core::Result<Vec<_>>>()?;
    let mut t = Table::new(
        "topics",
        &["attribute", "group", "topic", "topic_name", "n_group_topic", "n_topic", "base_rate", "factor"],
    );
    for table in &tables {
        for c in &table.cells {
            t.push(vec![
                table.attribute.name().into(),
                c.group.clone(),
                c.topic.to_string(),
                c.topic_name.clone(),
                c.n_group_topic.to_string(),
                c.n_topic.to_string(),
                num(c.base_rate),
                opt(c.factor),
            ]);
        }
    }
    let regression = if args.no_regression {
        None
    } else {
        Some(topic_regression(&corpus, &RegressionSpec::default())?)
    };
    let mut artifact = Artifact::new(
        "topics",
        hash,
        &json!({"over_representation": tables, "regression": regression}),
    )?
    .with_table(t);
    if let Some(report) = &regression {
        let mut r = Table::new(
            "topic_regression",
            &["topic", "block", "group", "estimate", "se", "p", "sig99", "reported"],
        );
        for tr in &report.topics {
            for c in &tr.coefficients {
                r.push(vec![
                    tr.topic.to_string(),
                    c.block.clone(),
                    c.group.clone(),
                    num(c.estimate),
                    num(c.se),
                    num(c.p),
                    c.sig99.to_string(),
                    c.reported.to_string(),
                ]);
            }
        }
        artifact = artifact.with_table(r);
    }
    Ok(artifact)
}

/// Splits the corpus embeddings into prompt vectors (conversation or
/// interaction keys) and response vectors (utterance keys).
fn split_embeddings(corpus: &Corpus) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let Some(emb) = corpus.embeddings() else {
        return Err(usage("this command needs --embeddings"));
    };
    let prompts = emb.retain(|k| corpus.utterance(k).is_none());
    let responses = emb.retain(|k| corpus.utterance(k).is_some());
    Ok((prompts, responses))
}

#[derive(Debug, Args)]
pub struct NeighbourhoodArgs {
    /// Keep singletons and single-author neighbourhoods
    #[arg(long)]
    keep_all: bool,
}

pub fn neighbourhoods(cfg: &RunConfig, args: &NeighbourhoodArgs) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    let (prompts, _) = split_embeddings(&corpus)?;
    let mut nbs = local_neighbourhoods(&prompts, cfg.tau_cos, Some(&corpus))?;
    let total = nbs.len();
    if !args.keep_all {
        nbs = prune(nbs);
    }
    let mut t = Table::new("neighbourhoods", &["id", "k", "members", "authors"]);
    for n in &nbs {
        t.push(vec![n.id.to_string(), n.k().to_string(), n.members.join(";"), n.authors.join(";")]);
    }
    let result = json!({"tau": cfg.tau_cos, "prompts": prompts.len(), "components": total, "neighbourhoods": nbs});
    Ok(Artifact::new("neighbourhoods", hash, &result)?.with_table(t))
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    /// Demographic attributes entering the entropy sum
    #[arg(long, value_delimiter = ',', default_value = "gender,age,ethnicity,religion,region")]
    attributes: Vec<String>,
    /// Monte Carlo draws per neighbourhood size
    #[arg(long, default_value_t = 10_000)]
    mc_draws: usize,
}

pub fn entropy(cfg: &RunConfig, args: &EntropyArgs) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    let attrs: Vec<Attribute> = args
        .attributes
        .iter()
        .map(|a| parse("--attributes", a))
        .collect::<Result<_>>()?;
    let (prompts, _) = split_embeddings(&corpus)?;
    let nbs = prune(local_neighbourhoods(&prompts, cfg.tau_cos, Some(&corpus))?);
    let mut config = EntropyConfig::new(attrs, cfg.seed);
    config.mc_draws = args.mc_draws;
    let sim = EntropySimulator::for_corpus(&corpus, config)?;
    let reports = nbs
        .iter()
        .map(|n| intersectional_entropy(n, &corpus, &sim))
        .collect::<prefagg_core::Result<Vec<_>>>()?;
    let mut t = Table::new("entropy", &["neighbourhood", "k", "total", "band_lo", "band_hi", "above", "below"]);
    for r in &reports {
        t.push(vec![
            r.neighbourhood_id.to_string(),
            r.k.to_string(),
            num(r.total),
            num(r.band.0),
            num(r.band.1),
            r.above_band.to_string(),
            r.below_band.to_string(),
        ]);
    }
    let result = json!({"tau": cfg.tau_cos, "summary": summarize_entropy(&reports), "neighbourhoods": reports});
    Ok(Artifact::new("entropy", hash, &result)?.with_table(t))
}

pub fn fieldsites(cfg: &RunConfig) -> Result<Artifact> {
    let (corpus, hash) = load(cfg)?;
    let (prompts, responses) = split_embeddings(&corpus)?;
    let report = field_sites(&corpus, &prompts, &responses, cfg.tau_cos)?;
    let mut t = Table::new(
        "fieldsites",
        &["site", "prompt_neighbourhood", "size", "score_range", "n_participants", "n_models", "n_providers"],
    );
    for s in &report.sites {
        t.push(vec![
            s.id.to_string(),
            s.prompt_neighbourhood.to_string(),
            s.members.len().to_string(),
            num(s.score_range),
            s.n_participants.to_string(),
            s.n_models.to_string(),
            s.n_providers.to_string(),
        ]);
    }
    Ok(Artifact::new("fieldsites", hash, &report)?.with_table(t))
}

#[derive(Debug, Args)]
pub struct WelfareArgs {
    /// rating or choice
    #[arg(long, default_value = "choice")]
    measure: String,
    /// Regions whose representative samples define the population
    #[arg(long, value_delimiter = ',', default_value = "us,uk")]
    regions: Vec<String>,
    /// Sampling schemes, each drawing from one group of the region
    #[arg(long, value_delimiter = ',', default_value = "rep,male,non-male,white,non-white,below-45,above-45")]
    groups: Vec<String>,
    /// none or model_mean
    #[arg(long, default_value = "none")]
    impute: String,
}

#[derive(Serialize)]
struct Scheme {
    region: Region,
    group: Group,
    n_members: usize,
    withheld: usize,
    /// Mean welfare per model over the scheme's own population.
    population_welfare: BTreeMap<String, Option<f64>>,
    max_population_welfare: Option<f64>,
    rho: BTreeMap<String, f64>,
    failures: usize,
    /// Welfare of the region's representative sample under this scheme.
    mean: f64,
    q05: f64,
    median: f64,
    q95: f64,
    excluded_mass: f64,
    /// Dominance of this scheme's welfare distribution over the rep scheme's.
    versus_rep: Option<Dominance>,
}

pub fn welfare(cfg: &RunConfig, args: &WelfareArgs) -> Result<Artifact> {
    let measure: Measure = parse("--measure", &args.measure)?;
    let impute: ImputeStrategy = parse("--impute", &args.impute)?;
    let regions: Vec<Region> = args.regions.iter().map(|r| parse("--regions", r)).collect::<Result<_>>()?;
    let groups: Vec<Group> = args.groups.iter().map(|g| parse("--groups", g)).collect::<Result<_>>()?;
    let (corpus, hash) = load(cfg)?;
    let matrix = impute_missing(&welfare_matrix(&corpus, measure, cfg.seed), impute);
    let mut schemes = Vec::new();
    let mut t = Table::new("welfare", &["region", "group", "n_members", "max_population_welfare", "mean", "q05", "median", "q95"]);
    for &region in &regions {
        let rep_rows = matrix.rows(&subpopulation(&corpus, region, Group::Rep).members);
        if rep_rows.is_empty() {
            log::warn!("no {region:?} participants; skipping region");
            continue;
        }
        let mut rep_points = None;
        for &group in std::iter::once(&Group::Rep).chain(groups.iter().filter(|g| **g != Group::Rep)) {
            let sub = subpopulation(&corpus, region, group);
            let rows = matrix.rows(&sub.members);
            if rows.is_empty() {
                log::warn!("{region:?}/{group}: empty subpopulation");
                continue;
            }
            let induced = induced_distribution(&matrix, &rows, cfg.sample_size, cfg.replications, cfg.seed)?;
            let dist = welfare_distribution(&induced.rho, &matrix, &rep_rows)?;
            let own = matrix.column_means(&rows);
            let points = dist.points();
            let versus_rep = rep_points.as_ref().map(|rp: &Vec<(f64, f64)>| fosd(&points, rp));
            if group == Group::Rep {
                rep_points = Some(points);
            }
            let scheme = Scheme {
                region,
                group,
                n_members: sub.members.len(),
                withheld: sub.withheld,
                max_population_welfare: own.iter().flatten().copied().reduce(f64::max),
                population_welfare: matrix.models.iter().cloned().zip(own).collect(),
                rho: matrix.models.iter().cloned().zip(induced.rho.iter().copied()).collect(),
                failures: induced.failures,
                mean: dist.mean,
                q05: dist.q05,
                median: dist.median,
                q95: dist.q95,
                excluded_mass: dist.excluded_mass,
                versus_rep,
            };
            if groups.contains(&group) {
                t.push(vec![
                    format!("{region:?}").to_lowercase(),
                    group.name().into(),
                    scheme.n_members.to_string(),
                    opt(scheme.max_population_welfare),
                    num(scheme.mean),
                    num(scheme.q05),
                    num(scheme.median),
                    num(scheme.q95),
                ]);
                schemes.push(scheme);
            }
        }
    }
    let result = json!({"measure": measure, "impute": args.impute, "schemes": schemes});
    Ok(Artifact::new("welfare", hash, &result)?.with_table(t))
}

#[derive(Debug, Args)]
pub struct TextfeatArgs {
    /// Phrase lexicon replacing the bundled one
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

pub fn textfeat(cfg: &RunConfig, args: &TextfeatArgs) -> Result<Artifact> {
    let lexicon = match &args.lexicon {
        Some(p) => Lexicon::from_file(p).with_context(|| format!("loading lexicon {}", p.display()))?,
        None => Lexicon::builtin(),
    };
    let (corpus, hash) = load(cfg)?;
    let rows = opener_features(&corpus, &lexicon);
    let fit = score_regression(&rows)?;
    let refusal = refusal_choice(&corpus, &lexicon, cfg.seed);
    let mut t = Table::new("textfeat", &["term", "estimate", "se", "p"]);
    for (i, name) in fit.names.iter().enumerate() {
        t.push(vec![name.clone(), num(fit.beta[i]), num(fit.se[i]), num(fit.p[i])]);
    }
    let mut features = Table::new("textfeat_rows", &[&["utterance_id", "model"][..], &FEATURES, &["score"]].concat());
    for r in &rows {
        let mut row = vec![r.utterance_id.clone(), r.model.clone()];
        row.extend(r.values().iter().map(|v| num(*v)));
        row.push(num(r.score));
        features.push(row);
    }
    let result = json!({
        "lexicon_version": lexicon.version,
        "rows": rows.len(),
        "regression": fit,
        "refusal_choice": refusal,
    });
    Ok(Artifact::new("textfeat", hash, &result)?.with_table(t).with_table(features))
}
