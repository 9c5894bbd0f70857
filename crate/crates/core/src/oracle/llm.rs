use std::path::PathBuf;
use std::time::Duration;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    describe_samples, render_function, FailureHint, Oracle, OracleError, RankingResult,
};
use crate::envkit::{TaskId, Trajectory};
use crate::reward::RewardTemplate;

const RANK_PROMPT: &str = include_str!("../../prompts/rank.txt");
const FAILURE_PROMPT: &str = include_str!("../../prompts/failure.txt");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Additional attempts after a failed or unparsable response.
    pub retries: usize,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Directory with `rank.txt` and `failure.txt` overriding the built-in
    /// prompts.
    pub prompt_dir: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            api_key_env: "OPENAI_API_KEY".into(),
            retries: 2,
            timeout_secs: 120,
            max_in_flight: 4,
            prompt_dir: None,
        }
    }
}

/// Chat-completion client that asks a language model to rank samples and
/// analyze failures.
#[derive(Debug)]
pub struct LlmOracle {
    config: LlmConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    rank_prompt: String,
    failure_prompt: String,
}

impl LlmOracle {
    pub fn new(config: LlmConfig) -> Result<Self, OracleError> {
        let api_key = std::env::var(&config.api_key_env).ok();
        let (rank_prompt, failure_prompt) = match &config.prompt_dir {
            Some(dir) => {
                let read = |name: &str| {
                    std::fs::read_to_string(dir.join(name))
                        .map_err(|e| OracleError::Config(format!("{}: {e}", dir.join(name).display())))
                };
                (read("rank.txt")?, read("failure.txt")?)
            }
            None => (RANK_PROMPT.to_string(), FAILURE_PROMPT.to_string()),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| OracleError::Config(e.to_string()))?;
        Ok(Self {
            config,
            client,
            api_key,
            rank_prompt,
            failure_prompt,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn rank_prompt(&self, trajs: &[Trajectory], task: TaskId, template: &RewardTemplate) -> String {
        fill(&self.rank_prompt, trajs, task, template)
    }

    pub fn failure_prompt(&self, trajs: &[Trajectory], task: TaskId, template: &RewardTemplate) -> String {
        fill(&self.failure_prompt, trajs, task, template)
    }

    /// Sends one user message and returns the reply text.
    pub fn complete(&self, prompt: &str) -> Result<String, OracleError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| OracleError::Http(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| OracleError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(OracleError::Http(format!("status {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| OracleError::Parse {
            reason: format!("response is not JSON: {e}"),
            raw: text.clone(),
        })?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| OracleError::Parse {
                reason: "missing choices[0].message.content".into(),
                raw: text,
            })
    }

    /// Asks `prompt` and parses the reply, retrying on transport or parse
    /// failures.
    fn ask<T>(&self, prompt: &str, parse: impl Fn(&str) -> Result<T, OracleError>) -> Result<T, OracleError> {
        let mut last = None;
        for attempt in 0..=self.config.retries {
            match self.complete(prompt).and_then(|r| parse(&r)) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("oracle attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Completes several prompts with at most `max_in_flight` requests at a
    /// time. Results keep the order of `prompts`.
    pub fn complete_many(&self, prompts: &[String]) -> Vec<Result<String, OracleError>> {
        let cap = self.config.max_in_flight.max(1);
        let mut out = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(cap) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|p| s.spawn(move || self.complete(p))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(OracleError::Http("worker panicked".into()))))
                    .collect()
            });
            out.extend(results);
        }
        out
    }
}

fn fill(prompt: &str, trajs: &[Trajectory], task: TaskId, template: &RewardTemplate) -> String {
    prompt
        .replace("<function definition>", &render_function(template))
        .replace("<samples>", &describe_samples(trajs, template))
        .replace("<skill>", task.skill())
}

impl Oracle for LlmOracle {
    fn rank(
        &self,
        trajs: &[Trajectory],
        task: TaskId,
        template: &RewardTemplate,
    ) -> Result<RankingResult, OracleError> {
        if trajs.len() < 2 {
            return Err(OracleError::TooFew(trajs.len()));
        }
        let prompt = self.rank_prompt(trajs, task, template);
        self.ask(&prompt, |r| parse_ranking(r, trajs.len()))
    }

    fn analyze_failure(
        &self,
        trajs: &[Trajectory],
        template: &RewardTemplate,
        task: TaskId,
    ) -> Result<FailureHint, OracleError> {
        let prompt = self.failure_prompt(trajs, task, template);
        self.ask(&prompt, |r| {
            let hint = parse_failure_hint(r)?;
            hint.validate(template).map_err(|e| OracleError::Parse {
                reason: e.to_string(),
                raw: r.to_string(),
            })?;
            Ok(hint)
        })
    }
}

/// Parses the last `[..], [..]` line of a ranking reply: the successful
/// samples, then one representative per cluster from best to worst.
pub fn parse_ranking(reply: &str, n: usize) -> Result<RankingResult, OracleError> {
    let re = Regex::new(r"^\s*\[([\d\s,]*)\]\s*,\s*\[([\d\s,]*)\]\s*\.?\s*$").expect("valid regex");
    let err = |reason: &str| OracleError::Parse {
        reason: reason.to_string(),
        raw: reply.to_string(),
    };
    let caps = reply
        .lines()
        .rev()
        .find_map(|l| re.captures(l))
        .ok_or_else(|| err("no `[..], [..]` result line"))?;
    let list = |s: &str| -> Result<Vec<usize>, OracleError> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map_err(|_| err("bad index")))
            .collect()
    };
    let result = RankingResult {
        successes: list(&caps[1])?,
        clusters: list(&caps[2])?.into_iter().map(|i| vec![i]).collect(),
    };
    result.validate(n).map_err(|e| err(&e.to_string()))?;
    Ok(result)
}

/// Parses the last `{...}` dictionary of a failure-analysis reply.
pub fn parse_failure_hint(reply: &str) -> Result<FailureHint, OracleError> {
    let err = |reason: String| OracleError::Parse {
        reason,
        raw: reply.to_string(),
    };
    let end = reply.rfind('}').ok_or_else(|| err("no dictionary in reply".into()))?;
    let start = reply[..end].rfind('{').ok_or_else(|| err("no dictionary in reply".into()))?;
    let text = reply[start..=end].replace('\'', "\"");
    let map: IndexMap<String, f64> =
        serde_json::from_str(&text).map_err(|e| err(format!("bad dictionary: {e}")))?;
    if map.is_empty() {
        return Err(err("empty dictionary".into()));
    }
    Ok(FailureHint(map))
}
