//! Prompt rendering for training pairs and inference.
//!
//! Every prompt carries at most one worked example: the retrieved training
//! text followed by its gold annotation, then the input text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::model::{canonicalize_answer, AnnotationFormat, Arity, INVALID_KEY};
use crate::retrieval::{RetrievalError, VectorIndex};

pub const TRIPLET_INSTRUCTION: &str = "你是中文仇恨言论分析助手。请从输入文本中抽取所有仇恨言论三元组，\
格式为：评论对象 | 论点 | 目标群体。评论对象不明确时写 NULL；目标群体取值为 Region、Racism、Sexism、LGBTQ、others 之一，\
不含仇恨时写 non-hate。多个三元组之间用 [SEP] 分隔，最后以 [END] 结尾。";

pub const QUADRUPLET_INSTRUCTION: &str = "你是中文仇恨言论分析助手。请从输入文本中抽取所有仇恨言论四元组，\
格式为：评论对象 | 论点 | 目标群体 | 是否仇恨。评论对象不明确时写 NULL；目标群体取值为 Region、Racism、Sexism、LGBTQ、others 之一，\
不含仇恨时写 non-hate；是否仇恨取 hate 或 non-hate。多个四元组之间用 [SEP] 分隔，最后以 [END] 结尾。";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{field}` must contain `{{{placeholder}}}` exactly once (found {count})")]
    Placeholder {
        field: &'static str,
        placeholder: &'static str,
        count: usize,
    },
    #[error("sample {id}: gold annotation does not parse as a {arity}")]
    BadCompletion { id: u64, arity: Arity },
    #[error("retrieved id {0} is not in the example corpus")]
    UnknownExample(u64),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub instruction: String,
    /// User turn; must contain `{example}` and `{input}` once each.
    pub layout: String,
    /// Must contain `{text}` and `{output}` once each.
    pub example_layout: String,
    /// Used when example answers are left out; must contain `{text}` once.
    pub example_layout_no_answer: String,
}

impl PromptTemplate {
    pub fn for_arity(arity: Arity) -> Self {
        let instruction = match arity {
            Arity::Triplet => TRIPLET_INSTRUCTION,
            Arity::Quadruplet => QUADRUPLET_INSTRUCTION,
        };
        Self {
            instruction: instruction.to_string(),
            layout: "{example}输入：{input}\n输出：".to_string(),
            example_layout: "示例输入：{text}\n示例输出：{output}\n\n".to_string(),
            example_layout_no_answer: "示例输入：{text}\n\n".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let checks: [(&'static str, &str, &'static str); 5] = [
            ("layout", &self.layout, "example"),
            ("layout", &self.layout, "input"),
            ("example_layout", &self.example_layout, "text"),
            ("example_layout", &self.example_layout, "output"),
            ("example_layout_no_answer", &self.example_layout_no_answer, "text"),
        ];
        for (field, text, placeholder) in checks {
            let count = text.matches(&format!("{{{placeholder}}}")).count();
            if count != 1 {
                return Err(PromptError::Placeholder {
                    field,
                    placeholder,
                    count,
                });
            }
        }
        Ok(())
    }

    /// Renders the user turn. `example` is `(text, gold)`; `None` yields the
    /// zero-shot form.
    pub fn render_user(&self, example: Option<(&str, Option<&str>)>, input: &str) -> String {
        let example_block = match example {
            None => String::new(),
            Some((text, Some(output))) => fill(&self.example_layout, &[("text", text), ("output", output)]),
            Some((text, None)) => fill(&self.example_layout_no_answer, &[("text", text)]),
        };
        fill(&self.layout, &[("example", &example_block), ("input", input)])
    }

    pub fn render(&self, example: Option<(&str, Option<&str>)>, input: &str) -> String {
        format!("{}\n\n{}", self.instruction, self.render_user(example, input))
    }
}

/// Single-pass placeholder substitution; values are inserted verbatim and
/// never rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in values {
            let token_len = name.len() + 2;
            if tail.len() >= token_len
                && tail.as_bytes()[token_len - 1] == b'}'
                && &tail[1..token_len - 1] == *name
            {
                out.push_str(value);
                rest = &tail[token_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub prompt: String,
    pub completion: String,
    #[serde(skip)]
    pub example_id: Option<u64>,
}

/// Layout accepted by common instruction-tuning frameworks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferencePrompt {
    pub text: String,
    pub example_id: Option<u64>,
}

/// Renders prompts against a fixed example corpus.
#[derive(Debug, Clone)]
pub struct PromptBuilder<'a> {
    pub template: &'a PromptTemplate,
    pub format: &'a AnnotationFormat,
    pub arity: Arity,
    pub include_example_answer: bool,
    corpus: HashMap<u64, &'a Sample>,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(
        template: &'a PromptTemplate,
        format: &'a AnnotationFormat,
        arity: Arity,
        corpus: &'a [Sample],
    ) -> Result<Self, PromptError> {
        template.validate()?;
        Ok(Self {
            template,
            format,
            arity,
            include_example_answer: true,
            corpus: corpus.iter().map(|s| (s.id, s)).collect(),
        })
    }

    pub fn with_example_answers(mut self, include: bool) -> Self {
        self.include_example_answer = include;
        self
    }

    fn example(&self, id: u64, with_answer: bool) -> Result<(&'a str, Option<&'a str>), PromptError> {
        let s = self.corpus.get(&id).ok_or(PromptError::UnknownExample(id))?;
        Ok((s.content.as_str(), with_answer.then_some(s.output.as_str())))
    }

    fn canonical_completion(&self, sample: &Sample) -> Result<String, PromptError> {
        let c = canonicalize_answer(&sample.output, self.arity, self.format);
        if c == INVALID_KEY {
            return Err(PromptError::BadCompletion {
                id: sample.id,
                arity: self.arity,
            });
        }
        Ok(c)
    }

    /// One pair per sample: the nearest other sample is the example, the
    /// sample's own gold annotation is the completion.
    pub fn build_training_pairs(
        &self,
        index: &VectorIndex,
        dataset: &[Sample],
    ) -> Result<Vec<TrainingPair>, PromptError> {
        dataset
            .iter()
            .map(|sample| {
                let query = index
                    .vector_for(sample.id)
                    .ok_or(RetrievalError::MissingVector(sample.id))?;
                let hit = index.retrieve(query, 1, Some(sample.id))?[0];
                let example = self.example(hit.sample_id, true)?;
                Ok(TrainingPair {
                    prompt: self.template.render(Some(example), &sample.content),
                    completion: self.canonical_completion(sample)?,
                    example_id: Some(hit.sample_id),
                })
            })
            .collect()
    }

    /// `k` prompts for one input, prompt `i` carrying the `i`-th nearest
    /// training example. With `use_retrieval == false` all `k` prompts are the
    /// identical zero-shot rendering.
    pub fn build_inference_prompts(
        &self,
        index: &VectorIndex,
        input: &str,
        embedding: &[f32],
        k: usize,
        use_retrieval: bool,
    ) -> Result<Vec<InferencePrompt>, PromptError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK.into());
        }
        if !use_retrieval {
            let text = self.template.render(None, input);
            return Ok(vec![
                InferencePrompt {
                    text,
                    example_id: None
                };
                k
            ]);
        }
        index
            .retrieve(embedding, k, None)?
            .into_iter()
            .map(|hit| {
                let example = self.example(hit.sample_id, self.include_example_answer)?;
                Ok(InferencePrompt {
                    text: self.template.render(Some(example), input),
                    example_id: Some(hit.sample_id),
                })
            })
            .collect()
    }
}

pub fn to_instruction_record(pair: &TrainingPair, template: &PromptTemplate) -> InstructionRecord {
    let prefix = format!("{}\n\n", template.instruction);
    InstructionRecord {
        instruction: template.instruction.clone(),
        input: pair.prompt.strip_prefix(&prefix).unwrap_or(&pair.prompt).to_string(),
        output: pair.completion.clone(),
    }
}
