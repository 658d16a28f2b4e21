//! Thread ingestion, sampling, annotation-target construction and dataset
//! descriptive statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::runner::GoldRecord;

pub const DEFAULT_MAX_POSTS: usize = 500;
pub const DEFAULT_ACTIVITY_CAP: u64 = 10_000;
pub const DEFAULT_MAX_THREADS: usize = 40;

const PLACEHOLDER_BODIES: [&str; 2] = ["[deleted]", "[removed]"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: String,
    #[serde(default)]
    pub author_id: String,
    pub body: String,
    /// 1-based index within the thread. Assigned from source order when absent.
    #[serde(default)]
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub subreddit: String,
    pub post_id: String,
    /// Author of the submission; drives the activity exclusion.
    #[serde(default)]
    pub author_id: String,
    pub title: String,
    pub submission_text: String,
    #[serde(default)]
    pub comments: Vec<Comment>,
    /// UTC seconds.
    #[serde(default)]
    pub created_at: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThreadStore {
    pub threads: Vec<Thread>,
    /// Lines that failed to parse or violated a thread invariant.
    pub skipped: usize,
}

impl ThreadStore {
    pub fn len(&self) -> usize {
        self.threads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threads.is_empty()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.threads)
    }
}

/// Tolerant JSONL ingestion: malformed lines are skipped and counted.
pub fn ingest_dump(path: impl AsRef<Path>) -> Result<ThreadStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store = ThreadStore::default();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_thread(&line) {
            Ok(thread) if seen.insert(thread.post_id.clone()) => store.threads.push(thread),
            Ok(thread) => {
                warn!("{}:{}: duplicate post_id {}, skipped", path.display(), lineno + 1, thread.post_id);
                store.skipped += 1;
            }
            Err(e) => {
                warn!("{}:{}: {e}, skipped", path.display(), lineno + 1);
                store.skipped += 1;
            }
        }
    }
    Ok(store)
}

fn parse_thread(line: &str) -> Result<Thread> {
    let mut thread: Thread = serde_json::from_str(line)?;
    for (i, c) in thread.comments.iter_mut().enumerate() {
        if c.position == 0 {
            c.position = i + 1;
        } else if c.position != i + 1 {
            return Err(Error::InvalidInput(format!(
                "comment {} has position {} but is at index {}",
                c.comment_id,
                c.position,
                i + 1
            )));
        }
    }
    if thread.post_id.is_empty() {
        return Err(Error::InvalidInput("empty post_id".into()));
    }
    Ok(thread)
}

/// Contribution counts keyed by (author, subreddit).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivityTable {
    counts: HashMap<(String, String), u64>,
}

impl ActivityTable {
    pub fn insert(&mut self, author: impl Into<String>, subreddit: impl Into<String>, count: u64) {
        self.counts.insert((author.into(), subreddit.into()), count);
    }

    pub fn count(&self, author: &str, subreddit: &str) -> u64 {
        self.counts.get(&(author.to_string(), subreddit.to_string())).copied().unwrap_or(0)
    }

    /// Largest count the author has in any single subreddit.
    pub fn max_count(&self, author: &str) -> u64 {
        self.counts
            .iter()
            .filter(|((a, _), _)| a == author)
            .map(|(_, c)| *c)
            .max()
            .unwrap_or(0)
    }

    /// Delimited `author_id,subreddit,count` rows (comma or tab), header optional.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let delim = if text.lines().next().is_some_and(|l| l.contains('\t')) { b'\t' } else { b',' };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .delimiter(delim)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut table = ActivityTable::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::InvalidInput(format!("activity row {} has {} fields", i + 1, rec.len())));
            }
            let count = match rec[2].parse::<u64>() {
                Ok(c) => c,
                Err(_) if i == 0 => continue, // header row
                Err(_) => return Err(Error::InvalidInput(format!("activity row {}: bad count `{}`", i + 1, &rec[2]))),
            };
            table.insert(&rec[0], &rec[1], count);
        }
        Ok(table)
    }
}

fn by_subreddit(threads: &[Thread]) -> BTreeMap<&str, Vec<&Thread>> {
    let mut groups: BTreeMap<&str, Vec<&Thread>> = BTreeMap::new();
    for t in threads {
        groups.entry(t.subreddit.as_str()).or_default().push(t);
    }
    groups
}

/// Per-subreddit uniform sample of at most `max_posts_per_subreddit` threads,
/// after removing threads whose author exceeds `activity_cap` contributions
/// in any single subreddit.
pub fn sample_threads(
    store: &ThreadStore,
    activity: &ActivityTable,
    max_posts_per_subreddit: usize,
    activity_cap: u64,
    seed: u64,
) -> Result<ThreadStore> {
    if max_posts_per_subreddit == 0 {
        return Err(Error::InvalidInput("max_posts_per_subreddit must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (subreddit, threads) in by_subreddit(&store.threads) {
        let mut eligible: Vec<&Thread> = threads
            .into_iter()
            .filter(|t| activity.max_count(&t.author_id) <= activity_cap)
            .collect();
        let mut rng = rng::scoped(seed, &format!("sample/{subreddit}"));
        let take = eligible.len().min(max_posts_per_subreddit);
        let (chosen, _) = eligible.partial_shuffle(&mut rng, take);
        out.extend(chosen.iter().map(|t| (*t).clone()));
    }
    Ok(ThreadStore { threads: out, skipped: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetPosition {
    First,
    Second,
}

impl TargetPosition {
    pub fn index(self) -> usize {
        match self {
            TargetPosition::First => 1,
            TargetPosition::Second => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTarget {
    pub target_id: String,
    pub thread_ref: String,
    #[serde(default)]
    pub subreddit: String,
    pub target_position: TargetPosition,
    pub title: String,
    pub submission_text: String,
    /// Body of the first comment when it is context (target is the second comment).
    #[serde(default)]
    pub first_comment: Option<String>,
    pub context_text: String,
    pub target_text: String,
}

impl AnnotationTarget {
    pub fn new(
        target_id: impl Into<String>,
        thread_ref: impl Into<String>,
        title: impl Into<String>,
        submission_text: impl Into<String>,
        first_comment: Option<String>,
        target_text: impl Into<String>,
    ) -> Self {
        let title = title.into();
        let submission_text = submission_text.into();
        let position = if first_comment.is_some() { TargetPosition::Second } else { TargetPosition::First };
        let context_text = assemble_context(&title, &submission_text, first_comment.as_deref());
        AnnotationTarget {
            target_id: target_id.into(),
            thread_ref: thread_ref.into(),
            subreddit: String::new(),
            target_position: position,
            title,
            submission_text,
            first_comment,
            context_text,
            target_text: target_text.into(),
        }
    }
}

fn assemble_context(title: &str, submission: &str, first_comment: Option<&str>) -> String {
    let mut parts = vec![title, submission];
    parts.extend(first_comment);
    parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join("\n\n")
}

fn usable_body(body: &str) -> bool {
    let b = body.trim();
    !b.is_empty() && !PLACEHOLDER_BODIES.contains(&b)
}

/// Samples up to `max_per_subreddit` threads per subreddit and picks the first
/// or second comment of each as the annotation target.
pub fn build_targets(store: &ThreadStore, max_per_subreddit: usize, seed: u64) -> Vec<AnnotationTarget> {
    let mut out = Vec::new();
    for (subreddit, threads) in by_subreddit(&store.threads) {
        let mut rng = rng::scoped(seed, &format!("targets/{subreddit}"));
        let mut candidates: Vec<&Thread> = Vec::with_capacity(threads.len());
        for t in threads {
            if t.comments.is_empty() {
                warn!("thread {} has no comments, excluded", t.post_id);
            } else {
                candidates.push(t);
            }
        }
        candidates.shuffle(&mut rng);
        let mut taken = 0;
        for t in candidates {
            if taken == max_per_subreddit {
                break;
            }
            let position = if t.comments.len() >= 2 && rng.gen_bool(0.5) {
                TargetPosition::Second
            } else {
                TargetPosition::First
            };
            let target = &t.comments[position.index() - 1];
            let first_ok = position == TargetPosition::First || usable_body(&t.comments[0].body);
            if !usable_body(&target.body) || !first_ok {
                warn!("thread {} dropped: deleted or empty comment at the chosen position", t.post_id);
                continue;
            }
            let first_comment = (position == TargetPosition::Second).then(|| t.comments[0].body.clone());
            let mut at = AnnotationTarget::new(
                format!("{}-c{}", t.post_id, position.index()),
                &t.post_id,
                &t.title,
                &t.submission_text,
                first_comment,
                &target.body,
            );
            at.subreddit = subreddit.to_string();
            out.push(at);
            taken += 1;
        }
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Strict JSONL reader: any malformed line is an error naming the line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn read_targets(path: impl AsRef<Path>) -> Result<Vec<AnnotationTarget>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("statistics of an empty sample".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Summary { mean, std: var.sqrt(), max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub unique_labels: Summary,
    pub context_words: Summary,
    pub context_sentences: Summary,
    pub target_words: Summary,
    pub target_sentences: Summary,
}

/// Whitespace-separated word count.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Segments ending in `.`, `!`, `?` or a newline that contain at least one
/// alphanumeric character.
pub fn count_sentences(text: &str) -> usize {
    text.split(['.', '!', '?', '\n'])
        .filter(|seg| seg.chars().any(char::is_alphanumeric))
        .count()
}

/// Unique labels are counted over the union of both annotators' label sets.
pub fn describe(dataset: &[GoldRecord]) -> Result<DescriptiveStats> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("describe needs a non-empty dataset".into()));
    }
    let col = |f: &dyn Fn(&GoldRecord) -> usize| -> Vec<f64> { dataset.iter().map(|r| f(r) as f64).collect() };
    Ok(DescriptiveStats {
        unique_labels: Summary::of(&col(&|r| r.labels_a.union(&r.labels_b).count()))?,
        context_words: Summary::of(&col(&|r| count_words(&r.target.context_text)))?,
        context_sentences: Summary::of(&col(&|r| count_sentences(&r.target.context_text)))?,
        target_words: Summary::of(&col(&|r| count_words(&r.target.target_text)))?,
        target_sentences: Summary::of(&col(&|r| count_sentences(&r.target.target_text)))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{Coarse, CoarseClass};
    use std::collections::BTreeSet;

    fn thread(sub: &str, id: &str, author: &str, n_comments: usize) -> Thread {
        Thread {
            subreddit: sub.into(),
            post_id: id.into(),
            author_id: author.into(),
            title: format!("title {id}"),
            submission_text: format!("submission {id}"),
            comments: (0..n_comments)
                .map(|i| Comment {
                    comment_id: format!("{id}_{i}"),
                    author_id: "c".into(),
                    body: format!("comment {i} of {id}"),
                    position: i + 1,
                })
                .collect(),
            created_at: 0,
        }
    }

    fn store(threads: Vec<Thread>) -> ThreadStore {
        ThreadStore { threads, skipped: 0 }
    }

    fn jsonl_file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_counts_valid_and_skipped() {
        let good: Vec<String> =
            (0..3).map(|i| serde_json::to_string(&thread("r/a", &format!("p{i}"), "u", 2)).unwrap()).collect();
        let f = jsonl_file(&good);
        let s = ingest_dump(f.path()).unwrap();
        assert_eq!((s.len(), s.skipped), (3, 0));

        let mixed = vec![good[0].clone(), "{not json".to_string(), good[1].clone()];
        let f = jsonl_file(&mixed);
        let s = ingest_dump(f.path()).unwrap();
        assert_eq!((s.len(), s.skipped), (2, 1));

        let f = jsonl_file(&[]);
        let s = ingest_dump(f.path()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.skipped, 0);

        assert!(matches!(ingest_dump("/definitely/not/here.jsonl"), Err(Error::Io { .. })));
    }

    #[test]
    fn ingest_assigns_and_checks_positions() {
        let line = r#"{"subreddit":"r/a","post_id":"x","title":"","submission_text":"","comments":[{"comment_id":"c1","body":"hi"},{"comment_id":"c2","body":"yo"}]}"#;
        let bad = r#"{"subreddit":"r/a","post_id":"y","title":"","submission_text":"","comments":[{"comment_id":"c1","body":"hi","position":2}]}"#;
        let f = jsonl_file(&[line.to_string(), bad.to_string()]);
        let s = ingest_dump(f.path()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.skipped, 1);
        assert_eq!(s.threads[0].comments[1].position, 2);
    }

    #[test]
    fn sampling_caps_and_uptos() {
        let mut threads: Vec<Thread> = (0..700).map(|i| thread("r/big", &format!("b{i}"), "u", 1)).collect();
        threads.extend((0..12).map(|i| thread("r/small", &format!("s{i}"), "u", 1)));
        let s = sample_threads(&store(threads), &ActivityTable::default(), 500, 10_000, 42).unwrap();
        let big = s.threads.iter().filter(|t| t.subreddit == "r/big").count();
        let small = s.threads.iter().filter(|t| t.subreddit == "r/small").count();
        assert_eq!((big, small), (500, 12));
    }

    #[test]
    fn sampling_excludes_hyperactive_authors() {
        let threads = vec![thread("r/a", "p1", "heavy", 1), thread("r/a", "p2", "light", 1)];
        let mut act = ActivityTable::default();
        act.insert("heavy", "r/other", 10_001);
        act.insert("light", "r/a", 10_000);
        let s = sample_threads(&store(threads), &act, 500, 10_000, 1).unwrap();
        let ids: Vec<_> = s.threads.iter().map(|t| t.post_id.as_str()).collect();
        assert_eq!(ids, ["p2"]);
    }

    #[test]
    fn sampling_rejects_zero_cap() {
        assert!(sample_threads(&ThreadStore::default(), &ActivityTable::default(), 0, 1, 1).is_err());
    }

    #[test]
    fn activity_parsing() {
        let t = ActivityTable::parse("author_id,subreddit,count\nu1,r/a,12\nu1,r/b,20000\n").unwrap();
        assert_eq!(t.count("u1", "r/a"), 12);
        assert_eq!(t.max_count("u1"), 20000);
        let t = ActivityTable::parse("u2\tr/x\t5\n").unwrap();
        assert_eq!(t.count("u2", "r/x"), 5);
        assert!(ActivityTable::parse("u1,r/a,12\nu2,r/a,lots\n").is_err());
    }

    #[test]
    fn single_comment_threads_target_first() {
        let s = store((0..30).map(|i| thread("r/a", &format!("p{i}"), "u", 1)).collect());
        let targets = build_targets(&s, 40, 3);
        assert_eq!(targets.len(), 30);
        for t in &targets {
            assert_eq!(t.target_position, TargetPosition::First);
            assert_eq!(t.context_text, format!("{}\n\n{}", t.title, t.submission_text));
            assert!(t.first_comment.is_none());
        }
    }

    #[test]
    fn second_comment_context_includes_first() {
        let s = store((0..40).map(|i| thread("r/a", &format!("p{i}"), "u", 2)).collect());
        let targets = build_targets(&s, 40, 9);
        let second: Vec<_> = targets.iter().filter(|t| t.target_position == TargetPosition::Second).collect();
        assert!(!second.is_empty() && second.len() < 40);
        for t in second {
            let first = format!("comment 0 of {}", t.thread_ref);
            assert_eq!(t.context_text.matches(&first).count(), 1);
            assert_eq!(t.target_text, format!("comment 1 of {}", t.thread_ref));
        }
    }

    #[test]
    fn zero_comment_and_deleted_threads_excluded() {
        let mut deleted = thread("r/a", "del", "u", 1);
        deleted.comments[0].body = "[deleted]".into();
        let s = store(vec![thread("r/a", "none", "u", 0), deleted, thread("r/a", "ok", "u", 1)]);
        let targets = build_targets(&s, 40, 1);
        assert_eq!(targets.len(), 1);
        assert_eq!(targets[0].thread_ref, "ok");
    }

    #[test]
    fn forty_eight_subreddits_yield_over_1400_targets() {
        let mut threads = Vec::new();
        for s in 0..48 {
            for i in 0..45 {
                threads.push(thread(&format!("r/s{s}"), &format!("s{s}p{i}"), "u", 2));
            }
        }
        let targets = build_targets(&store(threads), 40, 5);
        assert_eq!(targets.len(), 48 * 40);
    }

    fn record(context_words: usize, labels: &[&str]) -> GoldRecord {
        let ctx = vec!["word"; context_words].join(" ");
        let set: BTreeSet<String> = labels.iter().map(|s| s.to_string()).collect();
        GoldRecord {
            target: AnnotationTarget::new("t", "p", ctx, "", None, "A target. Two sentences!"),
            labels_a: set.clone(),
            labels_b: set.clone(),
            agreed: set,
            coarse: CoarseClass::plain(Coarse::IH),
            codebook_version: 1,
        }
    }

    #[test]
    fn describe_examples() {
        let one = describe(&[record(10, &["APB", "SO"])]).unwrap();
        assert_eq!(one.unique_labels.mean, 2.0);
        assert_eq!(one.unique_labels.std, 0.0);
        assert_eq!(one.target_sentences.mean, 2.0);

        let two = describe(&[record(10, &[]), record(20, &[])]).unwrap();
        assert_eq!(two.context_words.mean, 15.0);
        assert_eq!(two.context_words.std, 5.0);
        assert_eq!(two.context_words.max, 20.0);

        assert!(describe(&[]).is_err());
    }

    #[test]
    fn sentence_and_word_rules() {
        assert_eq!(count_words("  a b\tc\n d "), 4);
        assert_eq!(count_sentences("One. Two! Three?\nFour"), 4);
        assert_eq!(count_sentences("..."), 0);
        assert_eq!(count_sentences(""), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_store() -> impl Strategy<Value = ThreadStore> {
            proptest::collection::vec((0usize..4, 0usize..4), 0..60).prop_map(|spec| {
                store(
                    spec.into_iter()
                        .enumerate()
                        .map(|(i, (sub, n))| thread(&format!("r/{sub}"), &format!("p{i}"), "u", n))
                        .collect(),
                )
            })
        }

        proptest! {
            #[test]
            fn sampling_is_deterministic_and_capped(s in arb_store(), cap in 1usize..10, seed in any::<u64>()) {
                let a = sample_threads(&s, &ActivityTable::default(), cap, 10_000, seed).unwrap();
                let b = sample_threads(&s, &ActivityTable::default(), cap, 10_000, seed).unwrap();
                prop_assert_eq!(&a, &b);
                for (sub, group) in by_subreddit(&s.threads) {
                    let got = a.threads.iter().filter(|t| t.subreddit == sub).count();
                    prop_assert!(got <= cap && got <= group.len());
                    prop_assert_eq!(got, cap.min(group.len()));
                }
            }

            #[test]
            fn targets_respect_context_invariant(s in arb_store(), cap in 1usize..10, seed in any::<u64>()) {
                let a = build_targets(&s, cap, seed);
                prop_assert_eq!(&a, &build_targets(&s, cap, seed));
                for t in &a {
                    let thread = s.threads.iter().find(|th| th.post_id == t.thread_ref).unwrap();
                    let first = &thread.comments[0].body;
                    match t.target_position {
                        TargetPosition::First => prop_assert!(!t.context_text.contains(first.as_str())),
                        TargetPosition::Second => prop_assert_eq!(t.context_text.matches(first.as_str()).count(), 1),
                    }
                    prop_assert_eq!(&t.target_text, &thread.comments[t.target_position.index() - 1].body);
                }
            }

            #[test]
            fn describe_is_permutation_invariant(words in proptest::collection::vec(0usize..50, 1..12), rot in 0usize..12) {
                let recs: Vec<GoldRecord> = words.iter().map(|w| record(*w, &["APB"])).collect();
                let mut rotated = recs.clone();
                rotated.rotate_left(rot % recs.len());
                let a = describe(&recs).unwrap();
                let b = describe(&rotated).unwrap();
                prop_assert!((a.context_words.mean - b.context_words.mean).abs() < 1e-9);
                prop_assert!((a.context_words.std - b.context_words.std).abs() < 1e-9);
                prop_assert_eq!(a.context_words.max, b.context_words.max);
            }
        }
    }
}
