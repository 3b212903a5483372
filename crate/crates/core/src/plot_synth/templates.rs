use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::dataset::QAItem;
use super::spec::{PlotKind, PlotSpec};
use super::SynthError;

/// Identifier of the closed question vocabulary. Stored in every manifest.
pub const TEMPLATE_SET_ID: &str = "plotvqa-yesno-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Structure,
    DataRetrieval,
    Reasoning,
    /// Only produced when ingesting external questions that match no
    /// known template.
    Unknown,
}

impl Category {
    pub const KNOWN: [Category; 3] = [Category::Structure, Category::DataRetrieval, Category::Reasoning];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Structure => "structure",
            Category::DataRetrieval => "data_retrieval",
            Category::Reasoning => "reasoning",
            Category::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    No,
    Yes,
}

impl Answer {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Answer::Yes
        } else {
            Answer::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Answer::Yes
    }

    /// Class index used by the models: no = 0, yes = 1.
    pub fn index(self) -> usize {
        match self {
            Answer::No => 0,
            Answer::Yes => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Answer::No => "no",
            Answer::Yes => "yes",
        }
    }

    /// Lenient parse used for external data: trims and ignores case.
    pub fn normalize(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(Answer::Yes),
            "no" => Some(Answer::No),
            _ => None,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Answer {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Answer::normalize(s).ok_or_else(|| SynthError::InvalidArgument(format!("not a yes/no answer: {s:?}")))
    }
}

/// Named slots a template may bind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Series,
    SeriesB,
    CatA,
    CatB,
    K,
}

/// Slot bindings. Entity slots are indices into the plot's series or
/// categories; `k` is a literal count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slots {
    pub series: Option<usize>,
    pub series_b: Option<usize>,
    pub cat_a: Option<usize>,
    pub cat_b: Option<usize>,
    pub k: Option<usize>,
}

impl Slots {
    fn get(&self, slot: Slot) -> Option<usize> {
        match slot {
            Slot::Series => self.series,
            Slot::SeriesB => self.series_b,
            Slot::CatA => self.cat_a,
            Slot::CatB => self.cat_b,
            Slot::K => self.k,
        }
    }

    fn set(&mut self, slot: Slot, v: usize) {
        match slot {
            Slot::Series => self.series = Some(v),
            Slot::SeriesB => self.series_b = Some(v),
            Slot::CatA => self.cat_a = Some(v),
            Slot::CatB => self.cat_b = Some(v),
            Slot::K => self.k = Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    ElementCountEqLegend,
    LegendCountEqK,
    CategoryCountGtK,
    LessThanAt,
    GreaterThanAt,
    SeriesLessThanSeries,
    MonotonicIncrease,
    MonotonicDecrease,
    AlwaysGreater,
    MaxAt,
}

/// One question template: a text pattern with `{placeholder}`s, its
/// category, and the rule the oracle applies.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: &'static str,
    pub category: Category,
    pub pattern: &'static str,
    rule: Rule,
}

impl Template {
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for (name, slot) in [
            ("{series}", Slot::Series),
            ("{series_b}", Slot::SeriesB),
            ("{cat_a}", Slot::CatA),
            ("{cat_b}", Slot::CatB),
            ("{k}", Slot::K),
        ] {
            if self.pattern.contains(name) {
                out.push(slot);
            }
        }
        out
    }

    /// Reason the template cannot be hosted by `spec`, if any.
    pub fn inapplicable_reason(&self, spec: &PlotSpec) -> Option<String> {
        let slots = self.slots();
        if slots.contains(&Slot::SeriesB) && spec.n_series() < 2 {
            return Some("needs two series".into());
        }
        if slots.contains(&Slot::CatB) && spec.n_categories() < 2 {
            return Some("needs two categories".into());
        }
        None
    }

    fn sample_slots(&self, spec: &PlotSpec, rng: &mut ChaCha8Rng) -> Slots {
        let mut slots = Slots::default();
        let n_series = spec.n_series();
        let n_cat = spec.n_categories();
        for slot in self.slots() {
            let v = match slot {
                Slot::Series => rng.random_range(0..n_series),
                Slot::SeriesB => {
                    let a = slots.series.unwrap_or(0);
                    (a + rng.random_range(1..n_series)) % n_series
                }
                Slot::CatA => rng.random_range(0..n_cat),
                Slot::CatB => {
                    let a = slots.cat_a.unwrap_or(0);
                    (a + rng.random_range(1..n_cat)) % n_cat
                }
                Slot::K => match self.rule {
                    Rule::LegendCountEqK => {
                        if rng.random_bool(0.5) {
                            spec.legend_labels.len()
                        } else {
                            let others: Vec<usize> = (1..=4).filter(|&k| k != spec.legend_labels.len()).collect();
                            *others.choose(rng).expect("non-empty")
                        }
                    }
                    _ => rng.random_range(1..=7),
                },
            };
            slots.set(slot, v);
        }
        slots
    }

    /// Fills the pattern with the spec's names.
    pub fn render(&self, spec: &PlotSpec, slots: &Slots) -> Result<String, SynthError> {
        let mut text = self.pattern.to_string();
        for (name, value) in fixed_placeholders(spec) {
            text = text.replace(name, &value);
        }
        for slot in self.slots() {
            let v = slot_value(self, spec, slots, slot)?;
            let s = match slot {
                Slot::Series | Slot::SeriesB => spec.series[v].name.clone(),
                Slot::CatA | Slot::CatB => spec.x_categories[v].clone(),
                Slot::K => v.to_string(),
            };
            text = text.replace(placeholder(slot), &s);
        }
        Ok(text)
    }

    /// Recovers slot bindings from question text produced by
    /// [`render`](Self::render) for the same spec.
    pub fn parse(&self, spec: &PlotSpec, question: &str) -> Option<Slots> {
        let mut re = String::from("^");
        let mut rest = self.pattern;
        let fixed = fixed_placeholders(spec);
        let mut order = Vec::new();
        while let Some(start) = rest.find('{') {
            re.push_str(&regex::escape(&rest[..start]));
            let end = start + rest[start..].find('}')? + 1;
            let name = &rest[start..end];
            if let Some((_, v)) = fixed.iter().find(|(n, _)| *n == name) {
                re.push_str(&regex::escape(v));
            } else {
                let slot = [Slot::Series, Slot::SeriesB, Slot::CatA, Slot::CatB, Slot::K]
                    .into_iter()
                    .find(|s| placeholder(*s) == name)?;
                let alternatives = match slot {
                    Slot::Series | Slot::SeriesB => alternation(spec.series.iter().map(|s| s.name.as_str())),
                    Slot::CatA | Slot::CatB => alternation(spec.x_categories.iter().map(String::as_str)),
                    Slot::K => r"\d+".to_string(),
                };
                re.push_str(&format!("({alternatives})"));
                order.push(slot);
            }
            rest = &rest[end..];
        }
        re.push_str(&regex::escape(rest));
        re.push('$');
        let caps = Regex::new(&re).ok()?.captures(question)?;
        let mut slots = Slots::default();
        for (i, slot) in order.iter().enumerate() {
            let text = caps.get(i + 1)?.as_str();
            let v = match slot {
                Slot::Series | Slot::SeriesB => spec.series.iter().position(|s| s.name == text)?,
                Slot::CatA | Slot::CatB => spec.x_categories.iter().position(|c| c == text)?,
                Slot::K => text.parse().ok()?,
            };
            slots.set(*slot, v);
        }
        Some(slots)
    }

    /// Spec-independent matcher: every placeholder becomes a lazy wildcard.
    /// Case-insensitive.
    pub fn generic_regex(&self) -> Regex {
        let mut re = String::from("(?i)^");
        let mut rest = self.pattern;
        while let Some(start) = rest.find('{') {
            re.push_str(&regex::escape(&rest[..start]));
            let end = start + rest[start..].find('}').expect("balanced braces") + 1;
            re.push_str("(.+?)");
            rest = &rest[end..];
        }
        re.push_str(&regex::escape(rest));
        re.push('$');
        Regex::new(&re).expect("template regex")
    }
}

fn alternation<'a>(names: impl Iterator<Item = &'a str>) -> String {
    let mut names: Vec<&str> = names.collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    names.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|")
}

fn placeholder(slot: Slot) -> &'static str {
    match slot {
        Slot::Series => "{series}",
        Slot::SeriesB => "{series_b}",
        Slot::CatA => "{cat_a}",
        Slot::CatB => "{cat_b}",
        Slot::K => "{k}",
    }
}

fn pluralize(word: &str) -> String {
    if let Some(stem) = word.strip_suffix('y') {
        if !stem.ends_with(['a', 'e', 'i', 'o', 'u']) {
            return format!("{stem}ies");
        }
    }
    format!("{word}s")
}

fn fixed_placeholders(spec: &PlotSpec) -> [(&'static str, String); 3] {
    [
        ("{elements}", spec.kind.element_noun().to_string()),
        ("{y_label}", spec.y_label.to_lowercase()),
        ("{x_plural}", pluralize(&spec.x_label.to_lowercase())),
    ]
}

fn slot_value(t: &Template, spec: &PlotSpec, slots: &Slots, slot: Slot) -> Result<usize, SynthError> {
    let unbound = || SynthError::UnboundSlot {
        template_id: t.id.to_string(),
        slot: placeholder(slot).trim_matches(['{', '}']).to_string(),
    };
    let v = slots.get(slot).ok_or_else(unbound)?;
    let in_range = match slot {
        Slot::Series | Slot::SeriesB => v < spec.n_series(),
        Slot::CatA | Slot::CatB => v < spec.n_categories(),
        Slot::K => true,
    };
    if in_range {
        Ok(v)
    } else {
        Err(unbound())
    }
}

/// The versioned, closed set of templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub id: String,
    pub templates: Vec<Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        use Category::*;
        use Rule::*;
        let t = |id, category, pattern, rule| Template {
            id,
            category,
            pattern,
            rule,
        };
        Self {
            id: TEMPLATE_SET_ID.to_string(),
            templates: vec![
                t(
                    "structure.element_count_eq_legend",
                    Structure,
                    "Is the number of {elements} equal to the number of legend labels?",
                    ElementCountEqLegend,
                ),
                t(
                    "structure.legend_count_eq_k",
                    Structure,
                    "Does the legend have exactly {k} labels?",
                    LegendCountEqK,
                ),
                t(
                    "structure.category_count_gt_k",
                    Structure,
                    "Does the x-axis have more than {k} tick labels?",
                    CategoryCountGtK,
                ),
                t(
                    "data_retrieval.less_than_at",
                    DataRetrieval,
                    "Is the {y_label} of {series} in {cat_a} less than that in {cat_b}?",
                    LessThanAt,
                ),
                t(
                    "data_retrieval.greater_than_at",
                    DataRetrieval,
                    "Is the {y_label} of {series} in {cat_a} greater than that in {cat_b}?",
                    GreaterThanAt,
                ),
                t(
                    "data_retrieval.series_less_than_series",
                    DataRetrieval,
                    "In {cat_a}, is the {y_label} of {series} less than that of {series_b}?",
                    SeriesLessThanSeries,
                ),
                t(
                    "reasoning.monotonic_increase",
                    Reasoning,
                    "Does the {y_label} of {series} monotonically increase over the {x_plural}?",
                    MonotonicIncrease,
                ),
                t(
                    "reasoning.monotonic_decrease",
                    Reasoning,
                    "Does the {y_label} of {series} monotonically decrease over the {x_plural}?",
                    MonotonicDecrease,
                ),
                t(
                    "reasoning.always_greater",
                    Reasoning,
                    "Is the {y_label} of {series} greater than that of {series_b} in all {x_plural}?",
                    AlwaysGreater,
                ),
                t(
                    "reasoning.max_at",
                    Reasoning,
                    "Is the {y_label} of {series} highest in {cat_a}?",
                    MaxAt,
                ),
            ],
        }
    }
}

impl TemplateSet {
    pub fn get(&self, id: &str) -> Result<&Template, SynthError> {
        self.templates
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| SynthError::UnknownTemplate(id.to_string()))
    }

    /// Subset of templates by id, keeping the set id.
    pub fn subset(&self, ids: &[&str]) -> Result<TemplateSet, SynthError> {
        let templates = ids.iter().map(|id| self.get(id).cloned()).collect::<Result<_, _>>()?;
        Ok(TemplateSet {
            id: self.id.clone(),
            templates,
        })
    }

    /// First template whose generic form matches `question`.
    pub fn match_generic(&self, question: &str) -> Option<&Template> {
        let q = question.trim();
        self.templates.iter().find(|t| t.generic_regex().is_match(q))
    }
}

/// Evaluates a templated question exactly against the spec's data.
///
/// Comparisons are strict: equal values answer "no" to both "less than"
/// and "greater than", and any tie breaks monotonicity.
pub fn oracle_answer(spec: &PlotSpec, template_id: &str, slots: &Slots) -> Result<Answer, SynthError> {
    oracle_answer_in(&TemplateSet::default(), spec, template_id, slots)
}

pub fn oracle_answer_in(
    set: &TemplateSet,
    spec: &PlotSpec,
    template_id: &str,
    slots: &Slots,
) -> Result<Answer, SynthError> {
    let t = set.get(template_id)?;
    let get = |slot| slot_value(t, spec, slots, slot);
    let values = |s: usize| &spec.series[s].values;
    let yes = match t.rule {
        Rule::ElementCountEqLegend => {
            let elements = match spec.kind {
                PlotKind::Bar => spec.n_series() * spec.n_categories(),
                PlotKind::Line | PlotKind::Dotline => spec.n_series(),
            };
            elements == spec.legend_labels.len()
        }
        Rule::LegendCountEqK => spec.legend_labels.len() == get(Slot::K)?,
        Rule::CategoryCountGtK => spec.n_categories() > get(Slot::K)?,
        Rule::LessThanAt => {
            let v = values(get(Slot::Series)?);
            v[get(Slot::CatA)?] < v[get(Slot::CatB)?]
        }
        Rule::GreaterThanAt => {
            let v = values(get(Slot::Series)?);
            v[get(Slot::CatA)?] > v[get(Slot::CatB)?]
        }
        Rule::SeriesLessThanSeries => {
            let c = get(Slot::CatA)?;
            values(get(Slot::Series)?)[c] < values(get(Slot::SeriesB)?)[c]
        }
        Rule::MonotonicIncrease => values(get(Slot::Series)?).windows(2).all(|w| w[0] < w[1]),
        Rule::MonotonicDecrease => values(get(Slot::Series)?).windows(2).all(|w| w[0] > w[1]),
        Rule::AlwaysGreater => {
            let (a, b) = (values(get(Slot::Series)?), values(get(Slot::SeriesB)?));
            a.iter().zip(b).all(|(x, y)| x > y)
        }
        Rule::MaxAt => {
            let v = values(get(Slot::Series)?);
            let c = get(Slot::CatA)?;
            v.iter().enumerate().all(|(i, &x)| i == c || v[c] > x)
        }
    };
    Ok(Answer::from_bool(yes))
}

/// A template that could not be instantiated on a plot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub plot_id: String,
    pub template_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct GeneratedQuestions {
    pub items: Vec<QAItem>,
    pub skipped: Vec<SkipRecord>,
}

/// Instantiates every template once on `spec`, answering each with the
/// oracle. Inapplicable templates are recorded in the skip log.
pub fn generate_questions(
    spec: &PlotSpec,
    templates: &TemplateSet,
    rng_seed: u64,
) -> Result<GeneratedQuestions, SynthError> {
    if templates.templates.is_empty() {
        return Err(SynthError::InvalidArgument("template set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = GeneratedQuestions::default();
    for t in &templates.templates {
        if let Some(reason) = t.inapplicable_reason(spec) {
            out.skipped.push(SkipRecord {
                plot_id: spec.plot_id.clone(),
                template_id: t.id.to_string(),
                reason,
            });
            continue;
        }
        let slots = t.sample_slots(spec, &mut rng);
        let question = t.render(spec, &slots)?;
        let answer = oracle_answer_in(templates, spec, t.id, &slots)?;
        out.items.push(QAItem {
            qa_id: format!("{}-q{:02}", spec.plot_id, out.items.len()),
            plot_id: spec.plot_id.clone(),
            question,
            template_id: t.id.to_string(),
            category: t.category,
            answer,
        });
    }
    Ok(out)
}
