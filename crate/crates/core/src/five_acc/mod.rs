//! The FiVE-Acc protocol: question construction from edit records, VLM
//! answer parsing and judging, and per-type / overall aggregation into the
//! YN / MC / union / intersection accuracies whose mean is FiVE-Acc.

pub mod vlm;

use crate::bench::{EditRecord, EditType};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub use vlm::{parse_multi_choice, parse_yes_no, HttpVlm, MockVlm, VlmClient, VlmQuestion};

/// The two yes/no questions and the two-option multiple-choice question for
/// one edit record. `options` keeps the randomized presentation order;
/// `target_option` indexes the target object within it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub yn_source: String,
    pub yn_target: String,
    pub mc: String,
    pub options: [String; 2],
    pub target_option: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

/// Parsed answers for one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub yn_source_ans: YesNo,
    pub yn_target_ans: YesNo,
    /// Index into `QuestionSet::options`.
    pub mc_ans: usize,
    /// Answer origin: "mock" or an endpoint id.
    pub provenance: String,
}

/// Per-item success flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemJudgment {
    pub yn_ok: bool,
    pub mc_ok: bool,
    pub union_ok: bool,
    pub inter_ok: bool,
}

/// Build the deterministic question set for a record. The multiple-choice
/// option order is randomized by the seeded generator and recorded.
pub fn build_questions(record: &EditRecord, seed: u64) -> Result<QuestionSet> {
    let src = record.source_object.trim();
    let tgt = record.target_object.trim();
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Config(format!(
            "record {} is missing object words",
            record.id
        )));
    }
    if src.eq_ignore_ascii_case(tgt) {
        return Err(Error::Config(format!(
            "record {}: source and target objects must differ",
            record.id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::util::fnv1a(record.id.as_bytes()));
    let target_first: bool = rng.random();
    let (options, target_option) = if target_first {
        ([tgt.to_string(), src.to_string()], 0)
    } else {
        ([src.to_string(), tgt.to_string()], 1)
    };
    Ok(QuestionSet {
        yn_source: format!("Is there a {src} in the video? Answer Yes or No."),
        yn_target: format!("Is there a {tgt} in the video? Answer Yes or No."),
        mc: format!(
            "Which object is present in the video? (A) {} (B) {}. Answer A or B.",
            options[0], options[1]
        ),
        options,
        target_option,
    })
}

/// Judge one item: the yes/no check passes only if the source object is
/// absent and the target present; multiple choice passes if the target
/// option was selected; union and intersection combine the two.
pub fn judge_item(ans: &AnswerRecord, questions: &QuestionSet) -> ItemJudgment {
    let yn_ok = ans.yn_source_ans == YesNo::No && ans.yn_target_ans == YesNo::Yes;
    let mc_ok = ans.mc_ans == questions.target_option;
    ItemJudgment {
        yn_ok,
        mc_ok,
        union_ok: yn_ok || mc_ok,
        inter_ok: yn_ok && mc_ok,
    }
}

/// The four accuracies (percent) plus their mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub yn: f64,
    pub mc: f64,
    pub union: f64,
    pub inter: f64,
    pub five_acc: f64,
}

/// FiVE-Acc is the arithmetic mean of the four component accuracies.
pub fn five_acc_mean(yn: f64, mc: f64, union: f64, inter: f64) -> f64 {
    (yn + mc + union + inter) / 4.0
}

impl AccuracyRow {
    fn from_components(yn: f64, mc: f64, union: f64, inter: f64) -> Self {
        AccuracyRow {
            yn,
            mc,
            union,
            inter,
            five_acc: five_acc_mean(yn, mc, union, inter),
        }
    }
}

/// One evaluated item as it appears in the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub edit_id: String,
    pub edit_type: EditType,
    /// `None` when the VLM answer was unparseable; the item is excluded
    /// from both numerator and denominator.
    pub judgment: Option<ItemJudgment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-type and overall FiVE accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_type: BTreeMap<EditType, AccuracyRow>,
    pub overall: AccuracyRow,
    pub valid_items: usize,
    pub invalid_items: usize,
    pub items: Vec<ItemOutcome>,
}

/// Aggregate judged items: per edit type each accuracy is `100 * mean(flag)`
/// over that type's valid items; the overall accuracies are unweighted means
/// over the types present; FiVE-Acc is the mean of the four overall numbers.
pub fn aggregate(items: Vec<ItemOutcome>) -> Result<AccuracyReport> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut groups: BTreeMap<EditType, Vec<ItemJudgment>> = BTreeMap::new();
    let mut invalid = 0usize;
    for item in &items {
        match item.judgment {
            Some(j) => groups.entry(item.edit_type).or_default().push(j),
            None => invalid += 1,
        }
    }
    let mut per_type = BTreeMap::new();
    for (ty, judgments) in &groups {
        let n = judgments.len() as f64;
        let pct = |f: fn(&ItemJudgment) -> bool| {
            100.0 * judgments.iter().filter(|j| f(j)).count() as f64 / n
        };
        per_type.insert(
            *ty,
            AccuracyRow::from_components(
                pct(|j| j.yn_ok),
                pct(|j| j.mc_ok),
                pct(|j| j.union_ok),
                pct(|j| j.inter_ok),
            ),
        );
    }
    if per_type.is_empty() {
        return Err(Error::Metric("no valid items to aggregate".into()));
    }
    let k = per_type.len() as f64;
    let mean_over_types = |f: fn(&AccuracyRow) -> f64| per_type.values().map(f).sum::<f64>() / k;
    let overall = AccuracyRow::from_components(
        mean_over_types(|r| r.yn),
        mean_over_types(|r| r.mc),
        mean_over_types(|r| r.union),
        mean_over_types(|r| r.inter),
    );
    let valid = items.len() - invalid;
    Ok(AccuracyReport {
        per_type,
        overall,
        valid_items: valid,
        invalid_items: invalid,
        items,
    })
}
