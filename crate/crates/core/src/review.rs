//! Blinded human review of text-annotation pairs.
//!
//! Pairs from every annotator are pooled and shuffled per session, and only
//! [`PairPayload`] ever leaves the store: the annotator tag stays
//! server-side. Sessions and judgments are persisted as append-only JSON
//! lines (`sessions.jsonl`, `judgments.jsonl`) and replayed on open, so a
//! restarted store resumes every session at its cursor.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{render_annotation, AnnotationSet, AnnotatorKind};
use crate::corpus::Utterance;
use crate::digest::FieldHasher;
use crate::error::{Error, Result};
use crate::metrics::human_score;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Acceptable,
    Unacceptable,
    /// Recorded skip; excluded from the score denominator.
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub session_id: String,
    pub pair_id: String,
    pub evaluator_id: String,
    pub verdict: Verdict,
    pub judged_at_ms: u64,
}

/// A pair as held by the server, annotator included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewPair {
    pub pair_id: String,
    pub utterance_id: String,
    pub language: String,
    pub text: String,
    pub annotated: String,
    pub annotator: AnnotatorKind,
}

/// What an evaluator gets to see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPayload {
    pub pair_id: String,
    pub text: String,
    pub annotated: String,
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub evaluator_id: String,
    pub seed: u64,
    pub pair_ids: Vec<String>,
    pub cursor: usize,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextPair {
    Pair(PairPayload),
    Done { judged: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub judged: usize,
    pub total: usize,
    pub acceptable: usize,
    pub unacceptable: usize,
    pub abstained: usize,
    /// `None` until at least one non-abstaining verdict exists.
    pub human_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub pair_id: String,
    pub cursor: usize,
    pub total: usize,
}

/// Every reviewable pair, keyed by an opaque id.
#[derive(Debug, Clone, Default)]
pub struct PairPool {
    pairs: BTreeMap<String, ReviewPair>,
}

fn pair_id(annotator: &AnnotatorKind, utterance_id: &str) -> String {
    let h = FieldHasher::new("review-pair/v1")
        .str(&annotator.tag())
        .str(utterance_id)
        .finish_hex();
    format!("p-{}", &h[..12])
}

impl PairPool {
    pub fn from_sets(corpus: &[Utterance], sets: &[AnnotationSet]) -> Result<Self> {
        let index: HashMap<&str, &Utterance> = corpus.iter().map(|u| (u.id(), u)).collect();
        let mut pairs = BTreeMap::new();
        for set in sets {
            for (uid, labels) in &set.entries {
                let u = index.get(uid.as_str()).ok_or_else(|| {
                    Error::validation(format!("annotated utterance {uid} is not in the corpus"))
                })?;
                let pair = ReviewPair {
                    pair_id: pair_id(&set.annotator, uid),
                    utterance_id: uid.clone(),
                    language: u.language().to_owned(),
                    text: u.text().to_owned(),
                    annotated: render_annotation(u, labels)?,
                    annotator: set.annotator.clone(),
                };
                pairs.insert(pair.pair_id.clone(), pair);
            }
        }
        Ok(PairPool { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ReviewPair> {
        self.pairs.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReviewPair> {
        self.pairs.values()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFilter {
    pub annotator: Option<String>,
    pub language: Option<String>,
    pub config_digest: Option<String>,
    pub evaluator: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreGrouping {
    #[default]
    Annotator,
    Evaluator,
    AnnotatorEvaluator,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGroup {
    pub group: String,
    pub acceptable: usize,
    pub unacceptable: usize,
    pub abstained: usize,
    pub human_score: f64,
}

struct State {
    sessions: BTreeMap<String, ReviewSession>,
    judgments: Vec<Judgment>,
    judged: HashSet<(String, String)>,
    sessions_log: File,
    judgments_log: File,
}

pub struct ReviewStore {
    pool: PairPool,
    dir: PathBuf,
    state: Mutex<State>,
}

const SESSIONS_FILE: &str = "sessions.jsonl";
const JUDGMENTS_FILE: &str = "judgments.jsonl";

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads a judgment journal written by [`ReviewStore`].
pub fn read_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    read_lines(path.as_ref())
}

fn append_line(file: &mut File, path: &Path, value: &impl Serialize) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    file.write_all(&line)
        .and_then(|_| file.sync_data())
        .map_err(|e| Error::io(path, e))
}

impl ReviewStore {
    /// Opens (or creates) the journal in `dir` and replays it.
    pub fn open(pool: PairPool, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let sessions_path = dir.join(SESSIONS_FILE);
        let judgments_path = dir.join(JUDGMENTS_FILE);

        let mut sessions = BTreeMap::new();
        for s in read_lines::<ReviewSession>(&sessions_path)? {
            if let Some(missing) = s.pair_ids.iter().find(|p| pool.get(p).is_none()) {
                return Err(Error::validation(format!(
                    "session {} references pair {missing} that is not in the pool",
                    s.session_id
                )));
            }
            sessions.insert(s.session_id.clone(), s);
        }
        let judgments: Vec<Judgment> = read_lines(&judgments_path)?;
        let mut judged = HashSet::new();
        for j in &judgments {
            judged.insert((j.pair_id.clone(), j.evaluator_id.clone()));
            if let Some(s) = sessions.get_mut(&j.session_id) {
                s.cursor += 1;
            }
        }

        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))
        };
        Ok(ReviewStore {
            pool,
            state: Mutex::new(State {
                sessions,
                judgments,
                judged,
                sessions_log: open(&sessions_path)?,
                judgments_log: open(&judgments_path)?,
            }),
            dir,
        })
    }

    pub fn pool(&self) -> &PairPool {
        &self.pool
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join(JUDGMENTS_FILE)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("review state lock")
    }

    /// Pools every pair the evaluator has not judged yet and shuffles them
    /// with `seed`.
    pub fn create_session(&self, evaluator_id: &str, seed: u64) -> Result<ReviewSession> {
        if self.pool.is_empty() {
            return Err(Error::validation("no pairs to review"));
        }
        if evaluator_id.trim().is_empty() {
            return Err(Error::validation("evaluator id is empty"));
        }
        let mut state = self.lock();
        let mut pair_ids: Vec<String> = self
            .pool
            .pairs
            .keys()
            .filter(|p| !state.judged.contains(&((*p).clone(), evaluator_id.to_owned())))
            .cloned()
            .collect();
        pair_ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ordinal = state.sessions.len() as u64;
        let session_id = format!(
            "s-{}",
            &FieldHasher::new("review-session/v1")
                .str(evaluator_id)
                .u64(seed)
                .u64(ordinal)
                .finish_hex()[..12]
        );
        let session = ReviewSession {
            session_id: session_id.clone(),
            evaluator_id: evaluator_id.to_owned(),
            seed,
            pair_ids,
            cursor: 0,
            created_at_ms: now_ms(),
        };
        let path = self.dir.join(SESSIONS_FILE);
        append_line(&mut state.sessions_log, &path, &session)?;
        state.sessions.insert(session_id, session.clone());
        Ok(session)
    }

    pub fn session(&self, session_id: &str) -> Result<ReviewSession> {
        self.lock()
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {session_id}")))
    }

    pub fn next_pair(&self, session_id: &str) -> Result<NextPair> {
        let s = self.session(session_id)?;
        let total = s.pair_ids.len();
        Ok(match s.pair_ids.get(s.cursor) {
            None => NextPair::Done {
                judged: s.cursor,
                total,
            },
            Some(id) => {
                let p = self.pool.get(id).expect("session pairs are in the pool");
                NextPair::Pair(PairPayload {
                    pair_id: p.pair_id.clone(),
                    text: p.text.clone(),
                    annotated: p.annotated.clone(),
                    position: s.cursor,
                    total,
                })
            }
        })
    }

    /// Appends the judgment to the journal, then advances the cursor.
    pub fn submit_judgment(&self, session_id: &str, pair_id: &str, verdict: Verdict) -> Result<Ack> {
        let mut state = self.lock();
        let s = state
            .sessions
            .get(session_id)
            .ok_or_else(|| Error::NotFound(format!("session {session_id}")))?;
        let key = (pair_id.to_owned(), s.evaluator_id.clone());
        if state.judged.contains(&key) {
            return Err(Error::Conflict(format!(
                "pair {pair_id} already judged by {}",
                s.evaluator_id
            )));
        }
        match s.pair_ids.get(s.cursor) {
            Some(current) if current == pair_id => {}
            Some(current) => {
                return Err(Error::validation(format!(
                    "pair {pair_id} is not the current pair ({current})"
                )))
            }
            None => return Err(Error::Conflict(format!("session {session_id} is complete"))),
        }
        let judgment = Judgment {
            session_id: session_id.to_owned(),
            pair_id: pair_id.to_owned(),
            evaluator_id: s.evaluator_id.clone(),
            verdict,
            judged_at_ms: now_ms(),
        };
        let path = self.dir.join(JUDGMENTS_FILE);
        append_line(&mut state.judgments_log, &path, &judgment)?;
        state.judged.insert(key);
        state.judgments.push(judgment);
        let s = state.sessions.get_mut(session_id).expect("session exists");
        s.cursor += 1;
        Ok(Ack {
            session_id: session_id.to_owned(),
            pair_id: pair_id.to_owned(),
            cursor: s.cursor,
            total: s.pair_ids.len(),
        })
    }

    /// Counts for one session, without annotator identities.
    pub fn session_summary(&self, session_id: &str) -> Result<SessionSummary> {
        let s = self.session(session_id)?;
        let js: Vec<Judgment> = self
            .lock()
            .judgments
            .iter()
            .filter(|j| j.session_id == session_id)
            .cloned()
            .collect();
        let count = |v| js.iter().filter(|j| j.verdict == v).count();
        Ok(SessionSummary {
            session_id: s.session_id,
            judged: s.cursor,
            total: s.pair_ids.len(),
            acceptable: count(Verdict::Acceptable),
            unacceptable: count(Verdict::Unacceptable),
            abstained: count(Verdict::Abstain),
            human_score: human_score::<f64>(&js).ok(),
        })
    }

    pub fn judgments(&self) -> Vec<Judgment> {
        self.lock().judgments.clone()
    }

    pub fn score_report(&self, filter: &ScoreFilter, grouping: ScoreGrouping) -> Result<Vec<ScoreGroup>> {
        score_judgments(&self.pool, &self.judgments(), filter, grouping)
    }
}

/// Groups judgments by the server-side annotator (or evaluator) and scores
/// each group.
pub fn score_judgments(
    pool: &PairPool,
    judgments: &[Judgment],
    filter: &ScoreFilter,
    grouping: ScoreGrouping,
) -> Result<Vec<ScoreGroup>> {
    let mut groups: BTreeMap<String, Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        let Some(pair) = pool.get(&j.pair_id) else {
            continue;
        };
        let tag = pair.annotator.tag();
        let keep = filter.annotator.as_ref().is_none_or(|a| *a == tag)
            && filter.language.as_ref().is_none_or(|l| *l == pair.language)
            && filter
                .config_digest
                .as_ref()
                .is_none_or(|d| pair.annotator.config_digest() == Some(d.as_str()))
            && filter.evaluator.as_ref().is_none_or(|e| *e == j.evaluator_id);
        if !keep {
            continue;
        }
        let key = match grouping {
            ScoreGrouping::Annotator => tag,
            ScoreGrouping::Evaluator => j.evaluator_id.clone(),
            ScoreGrouping::AnnotatorEvaluator => format!("{tag}|{}", j.evaluator_id),
            ScoreGrouping::Pooled => "all".to_owned(),
        };
        groups.entry(key).or_default().push(j.clone());
    }
    if groups.is_empty() {
        return Err(Error::validation("no judgments match the filter"));
    }
    groups
        .into_iter()
        .map(|(group, js)| {
            let count = |v| js.iter().filter(|j| j.verdict == v).count();
            Ok(ScoreGroup {
                acceptable: count(Verdict::Acceptable),
                unacceptable: count(Verdict::Unacceptable),
                abstained: count(Verdict::Abstain),
                human_score: human_score::<f64>(&js)?,
                group,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{BreakLabel, LabelSequence};

    fn fixture(n: usize) -> (Vec<Utterance>, Vec<AnnotationSet>) {
        let corpus: Vec<Utterance> = (0..n)
            .map(|i| Utterance::new(format!("u{i}"), "en", format!("word{i} more, text."), None).unwrap())
            .collect();
        let kinds = [
            AnnotatorKind::HumanAudio,
            AnnotatorKind::HumanText,
            AnnotatorKind::llm("cafe0123").unwrap(),
        ];
        let sets = kinds
            .into_iter()
            .map(|k| {
                let mut s = AnnotationSet::new(k);
                for u in &corpus {
                    let l = LabelSequence::new(vec![BreakLabel::AP, BreakLabel::IP, BreakLabel::SB]).unwrap();
                    s.insert(u.id(), l).unwrap();
                }
                s
            })
            .collect();
        (corpus, sets)
    }

    fn store(dir: &Path, n: usize) -> ReviewStore {
        let (c, s) = fixture(n);
        ReviewStore::open(PairPool::from_sets(&c, &s).unwrap(), dir).unwrap()
    }

    #[test]
    fn session_pools_and_shuffles() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path(), 10);
        let a = st.create_session("eva", 5).unwrap();
        assert_eq!(a.pair_ids.len(), 30);
        let sorted: Vec<_> = st.pool().pairs.keys().cloned().collect();
        assert_ne!(a.pair_ids, sorted);
        let b = st.create_session("bob", 5).unwrap();
        assert_eq!(a.pair_ids, b.pair_ids);
        assert_ne!(a.session_id, b.session_id);
    }

    #[test]
    fn payload_is_blinded() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path(), 4);
        let s = st.create_session("eva", 1).unwrap();
        for _ in 0..s.pair_ids.len() {
            let NextPair::Pair(p) = st.next_pair(&s.session_id).unwrap() else {
                panic!("expected a pair")
            };
            let json = serde_json::to_string(&p).unwrap();
            for tag in ["H-A", "H-T", "llm:", "cafe0123"] {
                assert!(!json.contains(tag), "{json}");
            }
            st.submit_judgment(&s.session_id, &p.pair_id, Verdict::Acceptable).unwrap();
        }
        assert_eq!(
            st.next_pair(&s.session_id).unwrap(),
            NextPair::Done { judged: 12, total: 12 }
        );
        let summary = st.session_summary(&s.session_id).unwrap();
        assert_eq!(summary.human_score, Some(100.0));
        assert_eq!(summary.judged, 12);
    }

    #[test]
    fn submission_rules() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path(), 2);
        let s = st.create_session("eva", 1).unwrap();
        assert!(matches!(st.next_pair("nope"), Err(Error::NotFound(_))));
        let first = s.pair_ids[0].clone();
        let second = s.pair_ids[1].clone();
        assert!(matches!(
            st.submit_judgment(&s.session_id, &second, Verdict::Acceptable),
            Err(Error::Validation(_))
        ));
        let ack = st.submit_judgment(&s.session_id, &first, Verdict::Acceptable).unwrap();
        assert_eq!(ack.cursor, 1);
        assert!(matches!(
            st.submit_judgment(&s.session_id, &first, Verdict::Unacceptable),
            Err(Error::Conflict(_))
        ));
    }

    #[test]
    fn restart_resumes_at_cursor() {
        let dir = tempfile::tempdir().unwrap();
        let sid;
        {
            let st = store(dir.path(), 3);
            let s = st.create_session("eva", 9).unwrap();
            sid = s.session_id.clone();
            for p in &s.pair_ids[..3] {
                st.submit_judgment(&sid, p, Verdict::Unacceptable).unwrap();
            }
        }
        let st = store(dir.path(), 3);
        let s = st.session(&sid).unwrap();
        assert_eq!(s.cursor, 3);
        let NextPair::Pair(p) = st.next_pair(&sid).unwrap() else {
            panic!()
        };
        assert_eq!(p.pair_id, s.pair_ids[3]);
        assert_eq!(st.judgments().len(), 3);
    }

    #[test]
    fn scores_per_annotator_match_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let st = store(dir.path(), 10);
        let s = st.create_session("eva", 2).unwrap();
        for pid in &s.pair_ids {
            let kind = st.pool().get(pid).unwrap().annotator.clone();
            let verdict = match kind {
                AnnotatorKind::HumanText => Verdict::Acceptable,
                AnnotatorKind::HumanAudio => {
                    let digit = pid.as_bytes()[pid.len() - 1];
                    if digit % 2 == 0 { Verdict::Acceptable } else { Verdict::Unacceptable }
                }
                AnnotatorKind::Llm { .. } => Verdict::Unacceptable,
            };
            st.submit_judgment(&s.session_id, pid, verdict).unwrap();
        }
        let report = st.score_report(&ScoreFilter::default(), ScoreGrouping::Annotator).unwrap();
        let by: HashMap<_, _> = report.iter().map(|g| (g.group.as_str(), g)).collect();
        assert_eq!(by["H-T"].human_score, 100.0);
        assert_eq!(by["llm:cafe0123"].human_score, 0.0);
        let ha = by["H-A"];
        assert_eq!(ha.acceptable + ha.unacceptable, 10);
        assert_eq!(ha.human_score, 10.0 * ha.acceptable as f64);

        // Recompute from the raw journal file.
        let raw: Vec<Judgment> = read_lines(&st.journal_path()).unwrap();
        let again = score_judgments(st.pool(), &raw, &ScoreFilter::default(), ScoreGrouping::Annotator).unwrap();
        assert_eq!(report, again);

        let only_llm = ScoreFilter {
            config_digest: Some("cafe0123".into()),
            ..Default::default()
        };
        let r = st.score_report(&only_llm, ScoreGrouping::Annotator).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].group, "llm:cafe0123");

        let none = ScoreFilter {
            language: Some("fr".into()),
            ..Default::default()
        };
        assert!(st.score_report(&none, ScoreGrouping::Pooled).is_err());
    }

    #[test]
    fn empty_pool_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let st = ReviewStore::open(PairPool::default(), dir.path()).unwrap();
        assert!(st.create_session("eva", 1).is_err());
    }
}
