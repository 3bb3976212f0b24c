//! Prompt templates and rendering. Templates are versioned byte-for-byte
//! resources: any edit must bump [`TEMPLATE_VERSION`] so downstream score
//! comparisons know the prompt changed.

use crate::backend::BackendError;
use crate::domain::{JobPosting, MemberContext, LISTWISE_ARITY};

pub const TEMPLATE_VERSION: u32 = 1;

/// Instruction prompt for the synopsis actor. Asks for a compact free-text
/// member representation built from the four context sources.
pub const ACTOR_PROMPT_TEMPLATE: &str = "<|im_start|>system
You are an assistant that writes a member summary for a job marketplace.

You will receive several sources of information about one member: profile attributes, professional content they have written, their recent job search actions, and their recent search queries.

Output Instructions:
- Write a concise 2 to 3 sentence summary that serves as a member representation.
- Capture the member's background, interests, career goals, and inferred intent.
- Write a single paragraph with no headings, lists, or blank lines.
<|im_end|>
<|im_start|>user
Input:
- Profile Attributes:
{profile_attributes}

- Professional Content:
{professional_content}

- Job Search Actions:
{job_search_actions}

- Search Queries:
{search_queries}
<|im_end|>";

/// Apply-prediction prompt for the reward model: strict one-word yes/no.
pub const POINTWISE_REWARD_TEMPLATE: &str = "<|im_start|>system
You are an assistant tasked with predicting whether a member would apply to a specific job posting, based solely on the member's summary.

The member summary may include high-level information such as background, interests, career goals, or inferred intent. Use this summary to evaluate the relevance and appeal of the job posting to the member.

Interpretation Guidelines:
- apply: High interest or strong alignment with the member's background and intent.
- not apply: Low interest or weak alignment with the member's background and intent.

Output Instructions:
- Output EXACTLY ONE WORD: yes if the member would apply, no otherwise.
- Do NOT include any explanations, formatting, or punctuation.
- Your output must be strictly yes or no
<|im_end|>
<|im_start|>user
Input:
- Member Summary:
{member_summary}

- Job Posting:
{job_description}
<|im_end|>";

/// Ranking prompt for the reward model: order five postings by interest and
/// answer with a bracketed index list.
pub const LISTWISE_REWARD_TEMPLATE: &str = "<|im_start|>system
You are an assistant tasked with ranking a list of 5 new job postings based on how much interest a member would have in each job, based on their provided member summary.

The member summary may include high-level information such as background, interests, career goals, or inferred intent. Use this summary to rank the job postings from most to least relevant.

Interpret the member's interest based on the following signals:
- Jobs that are most relevant and strongly aligned with the member's goals should be ranked at the top.
- Jobs that are moderately interesting should be ranked in the middle.
- Jobs that are least relevant or poorly aligned should be ranked at the bottom.

Output Instructions:
- The final answer in the following format: [job_index_0, job_index_1, job_index_2, job_index_3, job_index_4]
- The job indices must be integers corresponding to the input list, ordered from most to least relevant.
- The list must include all job indices from the input, with no duplicates and no missing values.
- Do not include any additional explanation or text outside the required format.
<|im_end|>
<|im_start|>user
Input:
- Member Summary:
{member_summary}

- 5 New Job Postings:
{job_descriptions}
<|im_end|>";

/// Single-pass placeholder substitution. The template is scanned once left
/// to right; `{key}` spans matching a provided key are replaced and the
/// substituted values are never rescanned, so template-like braces inside
/// values pass through literally.
pub fn render_template(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        if let Some(close) = tail.find('}') {
            let key = &tail[..close];
            for (name, value) in substitutions {
                if *name == key {
                    out.push_str(&rest[..open]);
                    out.push_str(value);
                    rest = &tail[close + 1..];
                    continue 'outer;
                }
            }
        }
        // Not a known placeholder: keep the brace and move past it.
        out.push_str(&rest[..=open]);
        rest = &rest[open + 1..];
    }
    out.push_str(rest);
    out
}

/// One-line surface form used wherever a posting is shown to a model.
pub fn format_job_posting(job: &JobPosting) -> String {
    format!("This is a {} position at {}. {}", job.title, job.company, job.description)
}

fn format_job_action(action: &crate::domain::JobAction) -> String {
    format!(
        "{} on \"{}\" at {}",
        match action.action {
            crate::domain::ActionLabel::Apply => "applied",
            crate::domain::ActionLabel::View => "viewed",
            crate::domain::ActionLabel::Skip => "skipped",
        },
        action.job.title,
        action.job.company
    )
}

/// Render the actor prompt from a member's context sources. Empty sources
/// render as "(none)" so the section structure stays fixed.
pub fn render_actor_prompt(context: &MemberContext) -> Result<String, BackendError> {
    if !context.has_content() {
        return Err(BackendError::EmptyPrompt("member context has no content".into()));
    }
    let or_none = |s: &str| {
        if s.trim().is_empty() {
            "(none)".to_string()
        } else {
            s.to_string()
        }
    };
    let actions = if context.job_search_actions.is_empty() {
        "(none)".to_string()
    } else {
        context
            .job_search_actions
            .iter()
            .map(format_job_action)
            .collect::<Vec<_>>()
            .join("\n")
    };
    let queries = if context.search_queries.is_empty() {
        "(none)".to_string()
    } else {
        context.search_queries.join(", ")
    };
    Ok(render_template(
        ACTOR_PROMPT_TEMPLATE,
        &[
            ("profile_attributes", &or_none(&context.profile_attributes)),
            ("professional_content", &or_none(&context.professional_content)),
            ("job_search_actions", &actions),
            ("search_queries", &queries),
        ],
    ))
}

/// Render the yes/no apply-prediction prompt.
pub fn render_pointwise_prompt(summary: &str, job: &JobPosting) -> Result<String, BackendError> {
    if summary.trim().is_empty() {
        return Err(BackendError::EmptyPrompt("summary is empty".into()));
    }
    Ok(render_template(
        POINTWISE_REWARD_TEMPLATE,
        &[("member_summary", summary), ("job_description", &format_job_posting(job))],
    ))
}

/// Render the five-job ranking prompt with jobs numbered in input order.
pub fn render_listwise_prompt(summary: &str, jobs: &[JobPosting]) -> Result<String, BackendError> {
    if summary.trim().is_empty() {
        return Err(BackendError::EmptyPrompt("summary is empty".into()));
    }
    if jobs.len() != LISTWISE_ARITY {
        return Err(BackendError::WrongArity { expected: LISTWISE_ARITY, got: jobs.len() });
    }
    let block = jobs
        .iter()
        .enumerate()
        .map(|(i, job)| format!("Job {i}: {}", format_job_posting(job)))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(render_template(
        LISTWISE_REWARD_TEMPLATE,
        &[("member_summary", summary), ("job_descriptions", &block)],
    ))
}

/// Split a rendered prompt into (role, content) chat messages. Text outside
/// any marker pair becomes a user message, so plain prompts still work.
pub fn split_chat_blocks(prompt: &str) -> Vec<(String, String)> {
    const OPEN: &str = "<|im_start|>";
    const CLOSE: &str = "<|im_end|>";
    if !prompt.contains(OPEN) {
        return vec![("user".to_string(), prompt.to_string())];
    }
    let mut messages = Vec::new();
    let mut rest = prompt;
    while let Some(start) = rest.find(OPEN) {
        let after = &rest[start + OPEN.len()..];
        let Some(role_end) = after.find('\n') else { break };
        let role = after[..role_end].trim().to_string();
        let body = &after[role_end + 1..];
        let (content, next) = match body.find(CLOSE) {
            Some(end) => (&body[..end], &body[end + CLOSE.len()..]),
            None => (body, ""),
        };
        messages.push((role, content.trim_end_matches('\n').to_string()));
        rest = next;
    }
    messages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionLabel, JobAction};

    fn job(title: &str, company: &str, description: &str) -> JobPosting {
        JobPosting {
            job_id: "j-1".into(),
            title: title.into(),
            company: company.into(),
            description: description.into(),
        }
    }

    fn sample_jobs() -> Vec<JobPosting> {
        (0..5)
            .map(|i| job(&format!("Role {i}"), &format!("Company {i}"), "Builds things."))
            .collect()
    }

    #[test]
    fn pointwise_prompt_substitutes_both_blocks() {
        let p = render_pointwise_prompt(
            "The member is seeking roles in product management.",
            &job("Product Operations Manager", "Initech", "Owns product ops."),
        )
        .unwrap();
        assert!(p.starts_with("<|im_start|>system"));
        assert!(p.contains("Output EXACTLY ONE WORD"));
        assert!(p.contains("The member is seeking roles in product management."));
        assert!(p.contains("This is a Product Operations Manager position at Initech. Owns product ops."));
        assert!(!p.contains("{member_summary}"));
        assert!(!p.contains("{job_description}"));
        // Pure function: identical bytes on repeat.
        let again = render_pointwise_prompt(
            "The member is seeking roles in product management.",
            &job("Product Operations Manager", "Initech", "Owns product ops."),
        )
        .unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn empty_summary_is_rejected() {
        let err = render_pointwise_prompt("   ", &job("A", "B", "C")).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn braces_in_values_pass_through_without_recursion() {
        let p = render_pointwise_prompt(
            "Summary with {job_description} and {braces} inside.",
            &job("Role", "Co", "Desc"),
        )
        .unwrap();
        // The injected placeholder text survives as literal bytes exactly once.
        assert!(p.contains("Summary with {job_description} and {braces} inside."));
        let job_line_count = p.matches("This is a Role position at Co.").count();
        assert_eq!(job_line_count, 1);
    }

    #[test]
    fn listwise_prompt_numbers_jobs_in_input_order() {
        let jobs = sample_jobs();
        let p = render_listwise_prompt("A summary.", &jobs).unwrap();
        for i in 0..5 {
            assert!(p.contains(&format!("Job {i}: This is a Role {i} position at Company {i}.")));
        }
        let pos: Vec<usize> = (0..5).map(|i| p.find(&format!("Job {i}:")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn listwise_prompt_rejects_wrong_arity() {
        let jobs = sample_jobs()[..4].to_vec();
        let err = render_listwise_prompt("A summary.", &jobs).unwrap_err();
        assert!(matches!(err, BackendError::WrongArity { expected: 5, got: 4 }));
    }

    #[test]
    fn permuting_jobs_changes_only_the_job_block() {
        let jobs = sample_jobs();
        let mut permuted = jobs.clone();
        permuted.swap(0, 4);
        let a = render_listwise_prompt("A summary.", &jobs).unwrap();
        let b = render_listwise_prompt("A summary.", &permuted).unwrap();
        assert_ne!(a, b);
        let strip = |s: &str| {
            s.lines().filter(|l| !l.starts_with("Job ")).collect::<Vec<_>>().join("\n")
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn actor_prompt_renders_all_sources() {
        let context = MemberContext {
            member_id: "member-000001".into(),
            profile_attributes: "Senior engineer in Denver".into(),
            professional_content: "Writes about distributed systems".into(),
            job_search_actions: vec![JobAction {
                job: job("Staff Engineer", "Initech", "Platform work."),
                action: ActionLabel::Apply,
                timestamp: 1,
            }],
            search_queries: vec!["staff engineer".into(), "platform".into()],
        };
        let p = render_actor_prompt(&context).unwrap();
        assert!(p.contains("Senior engineer in Denver"));
        assert!(p.contains("applied on \"Staff Engineer\" at Initech"));
        assert!(p.contains("staff engineer, platform"));
        assert!(p.contains("2 to 3 sentence summary"));
    }

    #[test]
    fn actor_prompt_requires_some_content() {
        let context = MemberContext {
            member_id: "member-000001".into(),
            profile_attributes: "  ".into(),
            professional_content: String::new(),
            job_search_actions: vec![],
            search_queries: vec![],
        };
        assert!(render_actor_prompt(&context).is_err());
    }

    #[test]
    fn chat_blocks_split_roles() {
        let p = render_pointwise_prompt("Summary.", &job("A", "B", "C")).unwrap();
        let blocks = split_chat_blocks(&p);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].0, "system");
        assert_eq!(blocks[1].0, "user");
        assert!(blocks[0].1.contains("strictly yes or no"));
        assert!(blocks[1].1.contains("Summary."));
        assert!(!blocks[1].1.contains("<|im_start|>"));

        let plain = split_chat_blocks("just text");
        assert_eq!(plain, vec![("user".to_string(), "just text".to_string())]);
    }
}
