use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::features::{Feature, RewardFeatures};
use super::TemplateError;

/// Closed interval a parameter may take. Either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn unbounded() -> Self {
        Self::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.max(self.min).min(self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

impl From<[f64; 2]> for ParamRange {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<ParamRange> for [f64; 2] {
    fn from(r: ParamRange) -> Self {
        [r.min, r.max]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    /// `sign * w * max(0, feature - offset)`
    WeightedDistance,
    /// `+w` when the comparison holds.
    ThresholdBonus,
    /// `-w` when the comparison holds.
    ThresholdPenalty,
    /// `sign * w` when a flag feature is set.
    ConditionalConstant,
    /// `w` (typically negative) when the collision flag is set.
    CollisionPenalty,
}

impl TermKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::WeightedDistance => "weighted-distance",
            TermKind::ThresholdBonus => "threshold-bonus",
            TermKind::ThresholdPenalty => "threshold-penalty",
            TermKind::ConditionalConstant => "conditional-constant",
            TermKind::CollisionPenalty => "collision-penalty",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparison {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
            Comparison::Lt => "<",
            Comparison::Le => "<=",
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Gt => value > threshold,
            Comparison::Ge => value >= threshold,
            Comparison::Lt => value < threshold,
            Comparison::Le => value <= threshold,
        }
    }
}

/// One additive component of a reward template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTerm {
    pub kind: TermKind,
    pub feature: Feature,
    pub param: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_param: Option<String>,
    /// Fixed structural threshold, used when no `aux_param` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    pub sign: Sign,
}

impl RewardTerm {
    pub fn weighted_distance(feature: Feature, param: &str, sign: Sign) -> Self {
        Self {
            kind: TermKind::WeightedDistance,
            feature,
            param: param.to_string(),
            aux_param: None,
            threshold: None,
            compare: None,
            offset: None,
            sign,
        }
    }

    pub fn flag(kind: TermKind, feature: Feature, param: &str, sign: Sign) -> Self {
        Self {
            kind,
            feature,
            param: param.to_string(),
            aux_param: None,
            threshold: None,
            compare: None,
            offset: None,
            sign,
        }
    }

    /// True for terms that only ever subtract from the reward.
    pub fn is_penalty(&self) -> bool {
        match self.kind {
            TermKind::ThresholdPenalty | TermKind::CollisionPenalty => true,
            TermKind::WeightedDistance => false,
            TermKind::ThresholdBonus | TermKind::ConditionalConstant => self.sign == Sign::Minus,
        }
    }

    fn validate(&self, index: usize) -> Result<(), TemplateError> {
        let bad = |reason: &str| TemplateError::InvalidTerm {
            index,
            reason: reason.to_string(),
        };
        match self.kind {
            TermKind::WeightedDistance => {
                if self.aux_param.is_some() || self.threshold.is_some() || self.compare.is_some() {
                    return Err(bad("weighted-distance takes a single parameter and no threshold"));
                }
                if self.feature.is_flag() {
                    return Err(bad("weighted-distance needs a continuous feature"));
                }
            }
            TermKind::ThresholdBonus | TermKind::ThresholdPenalty => {
                match (&self.aux_param, self.threshold) {
                    (Some(_), None) | (None, Some(_)) => {}
                    _ => {
                        return Err(bad(
                            "threshold terms need exactly one of `aux_param` or `threshold`",
                        ))
                    }
                }
                if self.compare.is_none() {
                    return Err(bad("threshold terms need `compare`"));
                }
                if self.offset.is_some() {
                    return Err(bad("`offset` only applies to weighted-distance"));
                }
                let want = if self.kind == TermKind::ThresholdBonus {
                    Sign::Plus
                } else {
                    Sign::Minus
                };
                if self.sign != want {
                    return Err(bad("threshold-bonus must be `+`, threshold-penalty must be `-`"));
                }
            }
            TermKind::ConditionalConstant | TermKind::CollisionPenalty => {
                if self.aux_param.is_some()
                    || self.threshold.is_some()
                    || self.compare.is_some()
                    || self.offset.is_some()
                {
                    return Err(bad("flag terms take a single parameter"));
                }
                if !self.feature.is_flag() {
                    return Err(bad("flag terms need a 0/1 feature"));
                }
            }
        }
        if let Some(o) = self.offset {
            if !o.is_finite() {
                return Err(bad("offset must be finite"));
            }
        }
        Ok(())
    }
}

/// Contribution of a single term. Shared by every evaluation path so that
/// all of them agree bit for bit.
#[inline]
fn contribution(
    kind: TermKind,
    sign: Sign,
    value: f64,
    threshold: f64,
    compare: Option<Comparison>,
    offset: f64,
    x: f64,
) -> f64 {
    match kind {
        TermKind::WeightedDistance => sign.factor() * value * (x - offset).max(0.0),
        TermKind::ThresholdBonus | TermKind::ThresholdPenalty => {
            // validated: compare is present
            if compare.map_or(false, |c| c.holds(x, threshold)) {
                sign.factor() * value
            } else {
                0.0
            }
        }
        TermKind::ConditionalConstant | TermKind::CollisionPenalty => {
            if x >= 0.5 {
                sign.factor() * value
            } else {
                0.0
            }
        }
    }
}

/// A parametric reward: ordered terms plus named parameters with ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTemplate {
    name: String,
    terms: Vec<RewardTerm>,
    params: IndexMap<String, f64>,
    ranges: IndexMap<String, ParamRange>,
}

impl RewardTemplate {
    /// Builds a template and checks every invariant.
    pub fn new(
        name: impl Into<String>,
        terms: Vec<RewardTerm>,
        params: IndexMap<String, f64>,
        ranges: IndexMap<String, ParamRange>,
    ) -> Result<Self, TemplateError> {
        let t = Self {
            name: name.into(),
            terms,
            params,
            ranges,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        for (index, term) in self.terms.iter().enumerate() {
            term.validate(index)?;
            for p in std::iter::once(&term.param).chain(term.aux_param.iter()) {
                if !self.params.contains_key(p) {
                    return Err(TemplateError::UndeclaredParam {
                        term: index,
                        name: p.clone(),
                    });
                }
            }
        }
        for (name, &value) in &self.params {
            let range = self
                .ranges
                .get(name)
                .ok_or_else(|| TemplateError::MissingRange(name.clone()))?;
            if range.min.is_nan() || range.max.is_nan() || range.min > range.max {
                return Err(TemplateError::InvalidRange(name.clone()));
            }
            if !value.is_finite() || !range.contains(value) {
                return Err(TemplateError::OutOfRange {
                    name: name.clone(),
                    value,
                    min: range.min,
                    max: range.max,
                });
            }
        }
        if let Some(extra) = self.ranges.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(TemplateError::UnknownParam(extra.clone()));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn terms(&self) -> &[RewardTerm] {
        &self.terms
    }

    pub fn params(&self) -> &IndexMap<String, f64> {
        &self.params
    }

    pub fn ranges(&self) -> &IndexMap<String, ParamRange> {
        &self.ranges
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn range(&self, name: &str) -> Option<ParamRange> {
        self.ranges.get(name).copied()
    }

    /// Parameter names in declaration order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Parameter values in declaration order.
    pub fn values(&self) -> Vec<f64> {
        self.params.values().copied().collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Features referenced by any term, in term order, without duplicates.
    pub fn referenced_features(&self) -> Vec<Feature> {
        let mut out = Vec::new();
        for t in &self.terms {
            if !out.contains(&t.feature) {
                out.push(t.feature);
            }
        }
        out
    }

    pub fn check_features(&self, features: &RewardFeatures) -> Result<(), TemplateError> {
        match self.terms.iter().find(|t| !features.contains(t.feature)) {
            Some(t) => Err(TemplateError::MissingFeature(t.feature)),
            None => Ok(()),
        }
    }

    /// Sum of all terms under the current parameters.
    ///
    /// Panics if `features` lacks a referenced feature; use
    /// [`check_features`](Self::check_features) first for untrusted input.
    pub fn evaluate(&self, features: &RewardFeatures) -> f64 {
        let mut total = 0.0;
        for term in &self.terms {
            let x = features
                .get(term.feature)
                .unwrap_or_else(|| panic!("missing reward feature `{}`", term.feature));
            let value = self.params[&term.param];
            let threshold = match &term.aux_param {
                Some(aux) => self.params[aux],
                None => term.threshold.unwrap_or(0.0),
            };
            total += contribution(
                term.kind,
                term.sign,
                value,
                threshold,
                term.compare,
                term.offset.unwrap_or(0.0),
                x,
            );
        }
        total
    }

    /// Returns a copy with the given parameters replaced, each clipped into
    /// its range.
    pub fn set_params<'a, I>(&self, new: I) -> Result<RewardTemplate, TemplateError>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let mut out = self.clone();
        for (name, value) in new {
            let range = self
                .ranges
                .get(name)
                .ok_or_else(|| TemplateError::UnknownParam(name.to_string()))?;
            if value.is_nan() {
                return Err(TemplateError::OutOfRange {
                    name: name.to_string(),
                    value,
                    min: range.min,
                    max: range.max,
                });
            }
            out.params[name] = range.clip(value);
        }
        Ok(out)
    }

    /// Returns a copy with all parameters replaced, in declaration order.
    pub fn with_values(&self, values: &[f64]) -> Result<RewardTemplate, TemplateError> {
        assert_eq!(values.len(), self.params.len(), "parameter vector length");
        let names: Vec<String> = self.params.keys().cloned().collect();
        self.set_params(names.iter().map(String::as_str).zip(values.iter().copied()))
    }

    /// Index-based form used by inner loops that evaluate many parameter
    /// vectors against the same features.
    pub fn compile(&self) -> CompiledTemplate {
        let index = |name: &str| self.params.get_index_of(name).expect("validated");
        let terms = self
            .terms
            .iter()
            .map(|t| CompiledTerm {
                kind: t.kind,
                sign: t.sign,
                feature: t.feature,
                param: index(&t.param),
                threshold: match &t.aux_param {
                    Some(aux) => Threshold::Param(index(aux)),
                    None => Threshold::Const(t.threshold.unwrap_or(0.0)),
                },
                compare: t.compare,
                offset: t.offset.unwrap_or(0.0),
            })
            .collect();
        CompiledTemplate {
            terms,
            num_params: self.params.len(),
        }
    }
}

impl fmt::Display for RewardTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Copy, Debug)]
enum Threshold {
    Param(usize),
    Const(f64),
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    kind: TermKind,
    sign: Sign,
    feature: Feature,
    param: usize,
    threshold: Threshold,
    compare: Option<Comparison>,
    offset: f64,
}

/// A template whose parameters are addressed by position.
#[derive(Clone, Debug)]
pub struct CompiledTemplate {
    terms: Vec<CompiledTerm>,
    num_params: usize,
}

impl CompiledTemplate {
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Same arithmetic as [`RewardTemplate::evaluate`] with `theta` in
    /// declaration order.
    pub fn evaluate(&self, theta: &[f64], features: &RewardFeatures) -> f64 {
        debug_assert_eq!(theta.len(), self.num_params);
        let mut total = 0.0;
        for t in &self.terms {
            let x = features
                .get(t.feature)
                .unwrap_or_else(|| panic!("missing reward feature `{}`", t.feature));
            let threshold = match t.threshold {
                Threshold::Param(i) => theta[i],
                Threshold::Const(c) => c,
            };
            total += contribution(t.kind, t.sign, theta[t.param], threshold, t.compare, t.offset, x);
        }
        total
    }

    /// Sum of `sign * max(0, feature - offset)` for each weighted-distance
    /// term, per parameter. This is the derivative of the reward with
    /// respect to each linear weight.
    pub fn linear_coefficients(&self, features: &RewardFeatures) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params];
        for t in &self.terms {
            if t.kind == TermKind::WeightedDistance {
                let x = features.get(t.feature).unwrap_or(0.0);
                out[t.param] += t.sign.factor() * (x - t.offset).max(0.0);
            }
        }
        out
    }

    /// Parameters that only appear as weighted-distance weights, so the
    /// reward is linear in them.
    pub fn linear_params(&self) -> Vec<usize> {
        (0..self.num_params)
            .filter(|&i| {
                let mut used = false;
                for t in &self.terms {
                    let as_threshold = matches!(t.threshold, Threshold::Param(j) if j == i);
                    if as_threshold || (t.param == i && t.kind != TermKind::WeightedDistance) {
                        return false;
                    }
                    used |= t.param == i;
                }
                used
            })
            .collect()
    }
}
