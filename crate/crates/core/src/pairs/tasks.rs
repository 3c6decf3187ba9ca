//! Built-in task definitions and their instructions.

use super::PairingStrategyId;
use crate::model::{TaskSpec, TextFormat};

/// Fine-grained classification tasks, all built with class-description pairs.
pub const FINE_GRAINED_TASKS: [&str; 6] = ["cars", "cub", "dogs", "pets", "flowers", "food"];

/// Every task name known to [`builtin_task`].
pub const BUILTIN_TASKS: [&str; 13] = [
    "llava",
    "wiki",
    "recipe",
    "textvqa",
    "tdiuc",
    "chartqa",
    "infographics",
    "cars",
    "cub",
    "dogs",
    "pets",
    "flowers",
    "food",
];

pub const LLAVA_INSTRUCTION: &str = "You are given an image and a series of Question and Answer. Your task is to judge whether the image is relevant to these Questions and Answer. Here are several important instructions:
- Do not simply confirm the the object exists in image.
- Think about whether there is visual evidence supports or unrelated or contradicts the question and answer.
- In the textual question and answer, look for attributes such as color, size, shape, location, etc. And evaluate if the image matches these attributes.
- In the textual question and answer, look for context or settings of how the object is shown (background, neighboring objects, usage scenarios, etc.), and evaluate if the image shows the context.
- Use only the clear visual information that can be directly seen from image to determine the relevancy to question and answers.
- IMPORTANT: do not reason with your own knowledge or additional hallucination or guessing to determine relevancy.
- IMPORTANT: do not say 'yes' if certain aspects cannot be determined visually, Look very careful at the image!
- IMPORTANT: do not say 'yes' if answering requires knowledge beyond the image.
- Only say 'yes' if the image shows direct and obvious matching visual clues that supports the textual question and answer.
- If there are multiple question and answer, only say 'yes' if the image is relevant to all question and answer.
- If image is only related to the object and does not match the attributes, you should say 'no'.";

pub const TEXTVQA_INSTRUCTION: &str = "You are given an image and a pair of question and answer. Your task is to judge whether the image is relevant to the question and answer. Here are several important instructions:
- The question focuses on text understanding. The image may be coherent or incoherent to this question.
- The answer includes an explanation to justify itself. It contains important details about a true relevant image.
- In the text, look for descriptions about objects, characters, colors, spatial relationships. Check whether these descriptions match the image.
- In the image, recognize existing characters such as digits, english letters, before making a judgement.
- Use only the clear visual information that can be directly seen from image to determine the relevancy to text.
- IMPORTANT: do not reason with additional hallucination or guessing to determine relevancy.
- IMPORTANT: do not say 'yes' if certain aspects cannot be determined visually, Look very careful at the image!
- Only say 'yes' if the image shows direct and obvious matching visual clues that supports the text.
- If image contradicts with answer regarding the question, you should say 'no'.
- The answer must be a single word of 'Yes' or 'No'.";

pub const CARS_INSTRUCTION: &str = "You are given a car image and a short description about a specific car model. Your task is to judge whether the image is relevant to the text. Here are several important instructions:
- Carefully look at details in the image, such as car shape, decoration, color, number of doors, wheel sizes.
- The image may look similar to the described car model, but not exactly match it.
- Use your own knowledge to distinguish any visual differences between the image and the car description.
- Only say 'yes' if the image shows exactly the same fine-grained attributes as the description. Otherwise, say 'no'.
- The answer must be a single word of 'yes' or 'no'.";

const ANSWER_RULE: &str = "- The answer must be a single word of 'Yes' or 'No'.";

fn generic_instruction(subject: &str, rules: &[&str]) -> String {
    let mut s = format!(
        "You are given an image and {subject}. Your task is to judge whether the image is relevant to the text. Here are several important instructions:"
    );
    for rule in rules {
        s.push_str("\n- ");
        s.push_str(rule);
    }
    s.push('\n');
    s.push_str(ANSWER_RULE);
    s
}

fn eval_instruction(name: &str) -> String {
    match name {
        "llava" => LLAVA_INSTRUCTION.to_string(),
        "textvqa" => TEXTVQA_INSTRUCTION.to_string(),
        "cars" => CARS_INSTRUCTION.to_string(),
        "wiki" => generic_instruction(
            "a paragraph from an encyclopedia article",
            &[
                "The paragraph may describe the same topic as the image but focus on different details.",
                "Only say 'yes' if the image illustrates what this specific paragraph describes.",
            ],
        ),
        "recipe" => generic_instruction(
            "the ingredients step of a recipe",
            &[
                "Decide whether the listed ingredients are needed to make the food in the image.",
                "Say 'no' if the food shown could not be made from these ingredients.",
            ],
        ),
        "tdiuc" | "infographics" | "chartqa" => generic_instruction(
            "one or more questions with answers",
            &[
                "Check whether the image supports every question and answer.",
                "Read any text, numbers or chart values in the image before deciding.",
                "Say 'no' if the image contradicts any answer.",
            ],
        ),
        other => generic_instruction(
            &format!("a description of a fine-grained {other} class"),
            &[
                "Compare the distinguishing visual attributes in the description with the image.",
                "Only say 'yes' if the image matches the exact class described, not just a similar one.",
            ],
        ),
    }
}

fn train_pool(name: &str) -> Vec<String> {
    vec![
        format!(
            "Decide if the image matches the text for the {name} task. Reply with Yes or No."
        ),
        format!(
            "Look at the image and read the text carefully. Answer Yes when the image is relevant to the text under the {name} task definition, otherwise answer No."
        ),
    ]
}

/// Built-in definition of a named task, or `None` for unknown names.
pub fn builtin_task(name: &str) -> Option<TaskSpec> {
    let strategy = PairingStrategyId::for_task(name)?;
    let text_format = match strategy {
        PairingStrategyId::SameCategoryImageSwap => TextFormat::Conversations,
        PairingStrategyId::SiblingFieldMismatch => TextFormat::PlainParagraph,
        PairingStrategyId::ChoiceListNegatives => TextFormat::IngredientsDescription,
        PairingStrategyId::SimilarImageSwap | PairingStrategyId::SimilarTextSwap => TextFormat::QaWithReasoning,
        PairingStrategyId::CrossClassDescription => TextFormat::CategoryDescription,
    };
    Some(TaskSpec {
        name: name.to_string(),
        strategy,
        eval_instruction: eval_instruction(name),
        train_instruction_pool: train_pool(name),
        text_format,
    })
}

/// Task whose definition applies to `task`, stripping a hold-out `_ho` suffix.
pub fn base_task_name(task: &str) -> &str {
    task.strip_suffix("_ho").unwrap_or(task)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_is_valid() {
        for name in BUILTIN_TASKS {
            let spec = builtin_task(name).unwrap();
            spec.validate().unwrap();
            assert!(spec.eval_instruction.contains("'yes'") || spec.eval_instruction.contains("'Yes'"));
        }
        assert!(builtin_task("nope").is_none());
    }

    #[test]
    fn strategy_mapping() {
        use PairingStrategyId::*;
        let expect = [
            ("llava", SameCategoryImageSwap),
            ("wiki", SiblingFieldMismatch),
            ("recipe", ChoiceListNegatives),
            ("textvqa", SimilarImageSwap),
            ("chartqa", SimilarImageSwap),
            ("tdiuc", SimilarTextSwap),
            ("infographics", SimilarTextSwap),
            ("fine-grained", CrossClassDescription),
            ("cars", CrossClassDescription),
        ];
        for (task, strategy) in expect {
            assert_eq!(PairingStrategyId::for_task(task), Some(strategy), "{task}");
        }
    }

    #[test]
    fn holdout_suffix() {
        assert_eq!(base_task_name("llava_ho"), "llava");
        assert_eq!(base_task_name("wiki"), "wiki");
    }
}
