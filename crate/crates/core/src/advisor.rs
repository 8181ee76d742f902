//! Decision oracles for successor selection and backtracking.
//!
//! The planner asks an [`Advisor`] two kinds of question: which of several
//! simulated successors to follow, and which tree node to resume from after
//! a node has failed for good. Replies are validated by the caller.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::sim::ViolationKind;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const API_KEY_ENV: &str = "KDTAMP_API_KEY";
pub const PROMPT_VERSION: &str = "kdtamp-advisor/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    SelectSuccessor,
    SelectBacktrack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub label: String,
    #[serde(skip)]
    pub png: Vec<u8>,
}

/// One simulated successor offered to the advisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub action: String,
    /// Steps to the nearest goal in the discrete state graph.
    pub distance_to_goal: Option<u32>,
    /// Objects the settle step moved.
    pub displaced: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub action: String,
    pub violation: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorQuery {
    pub kind: QueryKind,
    /// Domain and problem text.
    pub description: String,
    pub goal_description: String,
    pub current_node: usize,
    pub images: Vec<LabeledImage>,
    pub candidates: Vec<Candidate>,
    pub tree_json: Option<String>,
    pub feedback: Vec<Feedback>,
    /// Node ids a backtrack reply may name.
    pub options: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvisorReply {
    pub choice: usize,
    pub rationale: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AdvisorError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("advisor timed out")]
    Timeout,
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("no backtrack candidate left")]
    NoCandidate,
}

pub trait Advisor {
    fn name(&self) -> String;

    /// Whether queries should carry rendered views.
    fn wants_images(&self) -> bool {
        false
    }

    fn advise(&mut self, query: &AdvisorQuery) -> Result<AdvisorReply, AdvisorError>;
}

/// Lowest graph distance, then fewest displaced objects, then lowest index.
pub fn heuristic_select_successor(query: &AdvisorQuery) -> AdvisorReply {
    let best = query
        .candidates
        .iter()
        .min_by_key(|c| (c.distance_to_goal.unwrap_or(u32::MAX), c.displaced, c.index))
        .map(|c| c.index)
        .unwrap_or(0);
    AdvisorReply { choice: best, rationale: "closest to the goal in the state graph".into() }
}

#[derive(Deserialize)]
struct TreeView {
    nodes: Vec<TreeNodeView>,
}

#[derive(Deserialize)]
struct TreeNodeView {
    id: usize,
    status: String,
    parent: Option<usize>,
}

/// First open node of the tree in breadth-first order, falling back to the
/// first node that is not exhausted.
pub fn heuristic_select_backtrack(query: &AdvisorQuery) -> Result<AdvisorReply, AdvisorError> {
    let text = query.tree_json.as_deref().ok_or(AdvisorError::NoCandidate)?;
    let tree: TreeView = serde_json::from_str(text).map_err(|e| AdvisorError::Malformed(e.to_string()))?;
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut status = BTreeMap::new();
    let mut roots = Vec::new();
    for n in &tree.nodes {
        status.insert(n.id, n.status.as_str());
        match n.parent {
            Some(p) => children.entry(p).or_default().push(n.id),
            None => roots.push(n.id),
        }
    }
    let mut order = Vec::new();
    let mut queue: VecDeque<usize> = roots.into_iter().collect();
    while let Some(id) = queue.pop_front() {
        order.push(id);
        if let Some(c) = children.get_mut(&id) {
            c.sort_unstable();
            queue.extend(c.iter().copied());
        }
    }
    let pick = order
        .iter()
        .find(|id| status[id] == "open")
        .or_else(|| order.iter().find(|id| status[id] != "exhausted"))
        .ok_or(AdvisorError::NoCandidate)?;
    Ok(AdvisorReply { choice: *pick, rationale: "first unvisited node in breadth-first order".into() })
}

pub struct HeuristicAdvisor;

impl Advisor for HeuristicAdvisor {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn advise(&mut self, query: &AdvisorQuery) -> Result<AdvisorReply, AdvisorError> {
        match query.kind {
            QueryKind::SelectSuccessor => Ok(heuristic_select_successor(query)),
            QueryKind::SelectBacktrack => heuristic_select_backtrack(query),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Choice(usize),
    Heuristic(HeuristicTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicTag {
    Heuristic,
}

/// Replies from two fixed queues, one per query kind. An exhausted queue or
/// a `"heuristic"` entry defers to the heuristic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub successor: Vec<ScriptStep>,
    #[serde(default)]
    pub backtrack: Vec<ScriptStep>,
}

#[derive(Debug, Default)]
pub struct ScriptedAdvisor {
    successor: VecDeque<ScriptStep>,
    backtrack: VecDeque<ScriptStep>,
    pub log: Vec<AdvisorQuery>,
}

impl ScriptedAdvisor {
    pub fn new(script: Script) -> ScriptedAdvisor {
        ScriptedAdvisor { successor: script.successor.into(), backtrack: script.backtrack.into(), log: Vec::new() }
    }

    pub fn from_json(text: &str) -> Result<ScriptedAdvisor, serde_json::Error> {
        Ok(ScriptedAdvisor::new(serde_json::from_str(text)?))
    }

    pub fn queries(&self, kind: QueryKind) -> impl Iterator<Item = &AdvisorQuery> {
        self.log.iter().filter(move |q| q.kind == kind)
    }
}

impl Advisor for ScriptedAdvisor {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn advise(&mut self, query: &AdvisorQuery) -> Result<AdvisorReply, AdvisorError> {
        self.log.push(query.clone());
        let queue = match query.kind {
            QueryKind::SelectSuccessor => &mut self.successor,
            QueryKind::SelectBacktrack => &mut self.backtrack,
        };
        match queue.pop_front() {
            Some(ScriptStep::Choice(c)) => Ok(AdvisorReply { choice: c, rationale: "scripted".into() }),
            _ => HeuristicAdvisor.advise(query),
        }
    }
}

/// Sends a JSON body and returns the response body.
pub trait Transport: Send {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration) -> Result<String, AdvisorError>;
}

impl<T: Transport + Sync + ?Sized> Transport for std::sync::Arc<T> {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration) -> Result<String, AdvisorError> {
        (**self).post_json(url, headers, body, timeout)
    }
}

pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration) -> Result<String, AdvisorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AdvisorError::Transport(e.to_string()))?;
        let mut req = client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(k, v);
        }
        let classify = |e: reqwest::Error| if e.is_timeout() { AdvisorError::Timeout } else { AdvisorError::Transport(e.to_string()) };
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(AdvisorError::Transport(format!("http {status}: {text}")));
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub request: Value,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub interactions: Vec<Interaction>,
}

enum CassetteMode {
    Replay { next: usize },
    Record { inner: Box<dyn Transport>, path: PathBuf },
}

/// Replays recorded responses in order, or records a live transport to disk.
/// Requests seen are kept for inspection.
pub struct CassetteTransport {
    state: Mutex<(CassetteMode, Cassette, Vec<Value>)>,
}

impl CassetteTransport {
    pub fn replay(cassette: Cassette) -> CassetteTransport {
        CassetteTransport { state: Mutex::new((CassetteMode::Replay { next: 0 }, cassette, Vec::new())) }
    }

    pub fn record(inner: Box<dyn Transport>, path: PathBuf) -> CassetteTransport {
        CassetteTransport { state: Mutex::new((CassetteMode::Record { inner, path }, Cassette::default(), Vec::new())) }
    }

    pub fn requests(&self) -> Vec<Value> {
        self.state.lock().expect("cassette lock").2.clone()
    }
}

impl Transport for CassetteTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration) -> Result<String, AdvisorError> {
        let mut guard = self.state.lock().expect("cassette lock");
        let (mode, cassette, seen) = &mut *guard;
        seen.push(body.clone());
        match mode {
            CassetteMode::Replay { next } => {
                let i = *next;
                *next += 1;
                cassette
                    .interactions
                    .get(i)
                    .map(|x| x.response.clone())
                    .ok_or_else(|| AdvisorError::Transport(format!("cassette has no interaction {i}")))
            }
            CassetteMode::Record { inner, path } => {
                let response = inner.post_json(url, headers, body, timeout)?;
                cassette.interactions.push(Interaction { request: body.clone(), response: response.clone() });
                let text = serde_json::to_string_pretty(cassette).map_err(|e| AdvisorError::Transport(e.to_string()))?;
                fs::write(path, text).map_err(|e| AdvisorError::Transport(e.to_string()))?;
                Ok(response)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: &str) -> RemoteConfig {
        RemoteConfig {
            endpoint: endpoint.to_string(),
            model: std::env::var("KDTAMP_MODEL").unwrap_or_else(|_| DEFAULT_MODEL.to_string()),
            api_key_env: API_KEY_ENV.to_string(),
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

const SYSTEM_PROMPT: &str = "You guide a task-and-motion planner for a single arm working on a tabletop. \
The planner proposes symbolic actions from a PDDL domain and checks each one in simulation. \
You answer one question at a time and end your answer with a single line `CHOICE: <id>`.";

fn successor_text(q: &AdvisorQuery) -> String {
    let mut s = format!("Goal: {}\nCurrent node: {}\n\nCandidate successors (all feasible in simulation):\n", q.goal_description, q.current_node);
    for c in &q.candidates {
        let d = c.distance_to_goal.map_or("unknown".to_string(), |d| d.to_string());
        s += &format!("- {}: {} (symbolic steps to goal: {d}, objects displaced: {})\n", c.index, c.action, c.displaced);
    }
    s += "\nThe images show the current node, then each candidate, from the front, top, left and right.\n";
    s += "Pick the candidate most likely to lead to the goal. Reply with a short rationale and the line `CHOICE: <candidate index>`.";
    s
}

fn backtrack_text(q: &AdvisorQuery) -> String {
    let mut s = format!("Goal: {}\nFailed node: {}\n\nConstraint violations at the failed node:\n", q.goal_description, q.current_node);
    for f in &q.feedback {
        s += &format!("- {}: {}\n", f.action, f.violation);
    }
    s += "\nSearch tree as JSON:\n```json\n";
    s += q.tree_json.as_deref().unwrap_or("{}");
    s += "\n```\n\nThe images show the failed node from the front, top, left and right.\n";
    s += &format!(
        "Choose the node to resume the search from, for example one that allows clearing or repositioning other objects first. Valid node ids: {}.\n",
        q.options.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ")
    );
    s += "Reply with a short rationale and the line `CHOICE: <node id>`.";
    s
}

/// Chat-completions request body for `query`.
pub fn build_request(model: &str, query: &AdvisorQuery) -> Value {
    let text = match query.kind {
        QueryKind::SelectSuccessor => successor_text(query),
        QueryKind::SelectBacktrack => backtrack_text(query),
    };
    let mut content = vec![json!({"type": "text", "text": text})];
    for img in &query.images {
        content.push(json!({"type": "text", "text": img.label}));
        let data = base64::engine::general_purpose::STANDARD.encode(&img.png);
        content.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{data}")}}));
    }
    json!({
        "model": model,
        "temperature": 0.0,
        "messages": [
            {"role": "system", "content": format!("{SYSTEM_PROMPT}\n\n{}", query.description)},
            {"role": "user", "content": content},
        ],
        "metadata": {"prompt_version": PROMPT_VERSION},
    })
}

/// Exactly one `CHOICE: <id>` line; everything else is the rationale.
pub fn parse_choice(text: &str) -> Result<AdvisorReply, AdvisorError> {
    let mut choice = None;
    let mut rationale = Vec::new();
    for line in text.lines() {
        match line.trim().strip_prefix("CHOICE:") {
            Some(rest) => {
                let id = rest.trim().parse::<usize>().map_err(|_| AdvisorError::Malformed(format!("bad choice line `{}`", line.trim())))?;
                if choice.replace(id).is_some() {
                    return Err(AdvisorError::Malformed("more than one choice line".into()));
                }
            }
            None => rationale.push(line),
        }
    }
    let choice = choice.ok_or_else(|| AdvisorError::Malformed("no choice line".into()))?;
    Ok(AdvisorReply { choice, rationale: rationale.join("\n").trim().to_string() })
}

/// Message content of a chat-completions response.
pub fn response_content(body: &str) -> Result<String, AdvisorError> {
    let v: Value = serde_json::from_str(body).map_err(|e| AdvisorError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AdvisorError::Malformed("response has no message content".into()))
}

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct RemoteAdvisor {
    pub config: RemoteConfig,
    transport: Box<dyn Transport>,
    /// Requests and replies are written here when set.
    pub log_dir: Option<PathBuf>,
    calls: usize,
}

impl RemoteAdvisor {
    pub fn new(config: RemoteConfig, transport: Box<dyn Transport>) -> RemoteAdvisor {
        RemoteAdvisor { config, transport, log_dir: None, calls: 0 }
    }

    pub fn http(endpoint: &str) -> RemoteAdvisor {
        RemoteAdvisor::new(RemoteConfig::new(endpoint), Box::new(HttpTransport))
    }

    fn log(&self, name: &str, text: &str) {
        if let Some(dir) = &self.log_dir {
            let dir = dir.join("advisor");
            if let Err(e) = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join(name), text)) {
                log::warn!("cannot write advisor log {name}: {e}");
            }
        }
    }
}

impl Advisor for RemoteAdvisor {
    fn name(&self) -> String {
        "remote".into()
    }

    fn wants_images(&self) -> bool {
        true
    }

    fn advise(&mut self, query: &AdvisorQuery) -> Result<AdvisorReply, AdvisorError> {
        self.calls += 1;
        let n = self.calls;
        let body = build_request(&self.config.model, query);
        self.log(&format!("{n:03}_request.json"), &serde_json::to_string_pretty(&body).unwrap_or_default());
        let mut headers = Vec::new();
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let result = self
            .transport
            .post_json(&self.config.endpoint, &headers, &body, self.config.timeout)
            .and_then(|r| response_content(&r))
            .and_then(|c| {
                self.log(&format!("{n:03}_reply.txt"), &c);
                parse_choice(&c)
            });
        if let Err(e) = &result {
            self.log(&format!("{n:03}_error.txt"), &e.to_string());
        }
        result
    }
}
