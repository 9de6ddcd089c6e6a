//! Prompt templates shipped with the crate.
//!
//! Templates are plain text with `{name}` slots. `fill` substitutes known
//! slots in a single pass, so braces that are part of JSON examples inside the
//! templates survive untouched and substituted values are never re-scanned.

pub const PLANNER: &str = include_str!("../assets/prompts/planner.txt");
pub const REFLECTOR: &str = include_str!("../assets/prompts/reflector.txt");
pub const SUBTITLE: &str = include_str!("../assets/prompts/subtitle.txt");
pub const PERCEPTION: &str = include_str!("../assets/prompts/perception.txt");
pub const GROUNDING: &str = include_str!("../assets/prompts/grounding.txt");
pub const SCORING: &str = include_str!("../assets/prompts/scoring.txt");
pub const FINAL_ANSWER: &str = include_str!("../assets/prompts/answer.txt");

/// Replaces each `{name}` present in `values` with its replacement text.
/// Unknown slots and free-standing braces are left as-is.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        let (before, after_open) = rest.split_at(open);
        out.push_str(before);
        if let Some(close) = after_open.find('}') {
            let name = &after_open[1..close];
            for (key, value) in values {
                if *key == name {
                    out.push_str(value);
                    rest = &after_open[close + 1..];
                    continue 'outer;
                }
            }
        }
        out.push('{');
        rest = &after_open[1..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_substitutes_known_slots_only() {
        let t = "Q: {question} J: {\"a\": 1} D: {duration} X: {unknown}";
        let got = fill(t, &[("question", "what?"), ("duration", "01:00:00")]);
        assert_eq!(got, "Q: what? J: {\"a\": 1} D: 01:00:00 X: {unknown}");
    }

    #[test]
    fn fill_does_not_rescan_substituted_values() {
        let got = fill("{a} {b}", &[("a", "{b}"), ("b", "two")]);
        assert_eq!(got, "{b} two");
    }

    #[test]
    fn templates_declare_their_slots() {
        for (template, slots) in [
            (PLANNER, vec!["{question}", "{duration}", "{history_str}"]),
            (REFLECTOR, vec!["{history}", "{question}", "{proposed_answer}"]),
            (SUBTITLE, vec!["{question}", "{subtitles}"]),
            (PERCEPTION, vec!["{instruct}"]),
            (GROUNDING, vec!["{question}", "{duration}"]),
            (SCORING, vec!["{question}", "{scoring_instruction}"]),
            (FINAL_ANSWER, vec!["{question}", "{duration}", "{history_str}"]),
        ] {
            for slot in slots {
                assert!(template.contains(slot), "missing slot {slot}");
            }
        }
    }

    #[test]
    fn templates_keep_their_identifying_phrases() {
        assert!(PLANNER.contains("Call Agents in json format"));
        assert!(REFLECTOR.contains("respond strictly in the following JSON"));
        assert!(GROUNDING.contains("Tool Selection based on Question Type"));
        assert!(PERCEPTION.contains("Call only one tool at a time"));
        assert!(SUBTITLE.contains("relevant_subtitle_info"));
        assert!(SCORING.contains("Relevance score from 1 to 4"));
    }
}
