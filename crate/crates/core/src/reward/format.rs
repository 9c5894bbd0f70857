use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::template::{ParamRange, RewardTemplate, RewardTerm};
use super::TemplateError;
use crate::envkit::TaskId;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateDoc {
    name: String,
    params: IndexMap<String, f64>,
    ranges: IndexMap<String, ParamRange>,
    terms: Vec<RewardTerm>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

/// Parses and validates a template document.
pub fn parse_template(text: &str) -> Result<RewardTemplate, TemplateError> {
    let doc: TemplateDoc = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        TemplateError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    RewardTemplate::new(doc.name, doc.terms, doc.params, doc.ranges)
}

pub fn serialize_template(template: &RewardTemplate) -> Result<String, TemplateError> {
    let doc = TemplateDoc {
        name: template.name().to_string(),
        params: template.params().clone(),
        ranges: template.ranges().clone(),
        terms: template.terms().to_vec(),
    };
    toml::to_string(&doc).map_err(|e| TemplateError::Serialize(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemplateVariant {
    /// The dense, oracle-proposed template.
    Proposed,
    /// The ground-truth binary success reward.
    Sparse,
}

const TOUCH: &str = include_str!("../../templates/touch.tmpl");
const GRASP: &str = include_str!("../../templates/grasp.tmpl");
const PUSH: &str = include_str!("../../templates/push.tmpl");
const TOUCH_SPARSE: &str = include_str!("../../templates/touch_sparse.tmpl");
const GRASP_SPARSE: &str = include_str!("../../templates/grasp_sparse.tmpl");
const PUSH_SPARSE: &str = include_str!("../../templates/push_sparse.tmpl");

/// Source text of a shipped template.
pub fn builtin_text(task: TaskId, variant: TemplateVariant) -> &'static str {
    match (task, variant) {
        (TaskId::Touch, TemplateVariant::Proposed) => TOUCH,
        (TaskId::Grasp, TemplateVariant::Proposed) => GRASP,
        (TaskId::Push, TemplateVariant::Proposed) => PUSH,
        (TaskId::Touch, TemplateVariant::Sparse) => TOUCH_SPARSE,
        (TaskId::Grasp, TemplateVariant::Sparse) => GRASP_SPARSE,
        (TaskId::Push, TemplateVariant::Sparse) => PUSH_SPARSE,
    }
}

/// A shipped template at its initial parameters.
pub fn builtin(task: TaskId, variant: TemplateVariant) -> RewardTemplate {
    parse_template(builtin_text(task, variant)).expect("shipped templates are valid")
}
