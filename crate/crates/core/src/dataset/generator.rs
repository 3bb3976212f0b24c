//! Synthetic engagement-log generator. Members are assigned personas that
//! correlate their profile text, their search queries and their apply
//! propensity on matching job families, so a learner that actually reads the
//! context has signal to find. Every member's stream is keyed by
//! (seed, member index): members are independent and the output order is
//! stable, so generation could be farmed out without changing results.

use super::{GeneratorConfig, MemberLog};
use crate::domain::{ActionLabel, EngagementEvent, JobAction, JobPosting, MemberContext};
use crate::policy::mix_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Epoch base for synthetic timestamps; keeps every timestamp positive.
pub const BASE_TIMESTAMP: i64 = 1_700_000_000;

/// Multiplier on apply probability when a job matches the member's persona.
const MATCH_APPLY_BOOST: f64 = 2.5;
/// Multiplier on apply probability when it doesn't.
const MISMATCH_APPLY_DAMP: f64 = 0.4;
/// Probability that a generated job comes from the member's own family.
const MATCH_JOB_RATE: f64 = 0.6;

pub struct PersonaFamily {
    pub stem: &'static str,
    pub skills: [&'static str; 3],
    pub query: &'static str,
}

pub const PERSONA_FAMILIES: [PersonaFamily; 8] = [
    PersonaFamily {
        stem: "Software Engineer",
        skills: ["distributed systems", "Rust", "code review"],
        query: "software engineer remote",
    },
    PersonaFamily {
        stem: "Data Scientist",
        skills: ["statistics", "Python", "experimentation"],
        query: "data scientist",
    },
    PersonaFamily {
        stem: "Product Manager",
        skills: ["roadmaps", "user research", "stakeholder alignment"],
        query: "product manager",
    },
    PersonaFamily {
        stem: "Registered Nurse",
        skills: ["patient care", "triage", "charting"],
        query: "nursing jobs near me",
    },
    PersonaFamily {
        stem: "Accountant",
        skills: ["GAAP", "reconciliation", "forecasting"],
        query: "senior accountant",
    },
    PersonaFamily {
        stem: "Sales Representative",
        skills: ["pipeline management", "negotiation", "CRM"],
        query: "sales rep b2b",
    },
    PersonaFamily {
        stem: "UX Designer",
        skills: ["prototyping", "usability testing", "design systems"],
        query: "ux designer",
    },
    PersonaFamily {
        stem: "Mechanical Engineer",
        skills: ["CAD", "tolerance analysis", "manufacturing"],
        query: "mechanical engineer",
    },
];

const LEVELS: [&str; 5] = ["Junior", "Senior", "Staff", "Lead", "Principal"];
const COMPANIES: [&str; 8] =
    ["Acme Corp", "Globex", "Initech", "Umbrella Labs", "Stark Industries", "Wayne Enterprises", "Hooli", "Vandelay"];
const CITIES: [&str; 6] = ["Denver", "Austin", "Seattle", "Raleigh", "Chicago", "Boston"];

fn member_id(index: usize) -> String {
    format!("member-{index:06}")
}

fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Build the persona-flavored free-text sources, padding professional
/// content with themed sentences until the combined sources approach the
/// configured token scale.
fn build_context_text(
    family: &PersonaFamily,
    city: &str,
    years: u32,
    token_target: usize,
) -> (String, String) {
    let profile = format!(
        "{stem} based in {city}. {years} years of experience. Skills: {s0}, {s1}, {s2}.",
        stem = family.stem,
        city = city,
        years = years,
        s0 = family.skills[0],
        s1 = family.skills[1],
        s2 = family.skills[2],
    );
    let seed_sentences = [
        format!("Recently posted about {} and its impact on day-to-day {} work.", family.skills[0], family.stem.to_lowercase()),
        format!("Shared an article on {} best practices.", family.skills[1]),
        format!("Commented on a discussion about {} hiring trends.", family.stem.to_lowercase()),
        format!("Wrote a short note on learning {} fundamentals.", family.skills[2]),
    ];
    let mut content = String::new();
    let mut i = 0usize;
    while whitespace_tokens(&profile) + whitespace_tokens(&content) < token_target {
        if !content.is_empty() {
            content.push(' ');
        }
        content.push_str(&seed_sentences[i % seed_sentences.len()]);
        i += 1;
        if i > 400 {
            break; // guard against absurd targets
        }
    }
    if content.is_empty() {
        content = seed_sentences[0].clone();
    }
    (profile, content)
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn sample_action(rng: &mut ChaCha8Rng, config: &GeneratorConfig, matches_persona: bool) -> ActionLabel {
    let boost = if matches_persona { MATCH_APPLY_BOOST } else { MISMATCH_APPLY_DAMP };
    let apply_w = config.apply_prob * boost;
    let total = apply_w + config.view_prob + config.skip_prob;
    let u: f64 = rng.gen::<f64>() * total;
    if u < apply_w {
        ActionLabel::Apply
    } else if u < apply_w + config.view_prob {
        ActionLabel::View
    } else {
        ActionLabel::Skip
    }
}

/// Generate the full log for one member. Deterministic in (seed, index).
pub fn generate_member(config: &GeneratorConfig, index: usize) -> MemberLog {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, index as u64));
    let persona_index = index % config.persona_count.min(PERSONA_FAMILIES.len());
    let family = &PERSONA_FAMILIES[persona_index];
    let city = pick(&mut rng, &CITIES);
    let years = rng.gen_range(1..25);
    let (profile, content) = build_context_text(family, city, years, config.context_token_target);

    let job_count = rng.gen_range(config.jobs_per_member.0..=config.jobs_per_member.1);
    let window_secs = (config.observation_days + config.validation_days) as i64 * 86_400;
    let mut offsets: Vec<i64> = (0..job_count).map(|_| rng.gen_range(0..window_secs)).collect();
    offsets.sort_unstable();

    let id = member_id(index);
    let mut events = Vec::with_capacity(job_count);
    for (k, offset) in offsets.into_iter().enumerate() {
        let matches_persona = rng.gen::<f64>() < MATCH_JOB_RATE;
        let job_family = if matches_persona {
            family
        } else {
            let other = (persona_index + rng.gen_range(1..PERSONA_FAMILIES.len()))
                % PERSONA_FAMILIES.len();
            &PERSONA_FAMILIES[other]
        };
        let job = JobPosting {
            job_id: format!("{id}-job-{k:03}"),
            title: format!("{} {}", pick(&mut rng, &LEVELS), job_family.stem),
            company: (*pick(&mut rng, &COMPANIES)).to_string(),
            description: format!(
                "{} role focused on {} and {}. Collaborate across teams and own delivery end to end.",
                job_family.stem, job_family.skills[0], job_family.skills[1]
            ),
        };
        let action = sample_action(&mut rng, config, matches_persona);
        events.push(EngagementEvent {
            member_id: id.clone(),
            job,
            action,
            timestamp: BASE_TIMESTAMP + offset,
        });
    }

    let context = MemberContext {
        member_id: id,
        profile_attributes: profile,
        professional_content: content,
        job_search_actions: events
            .iter()
            .map(|e| JobAction { job: e.job.clone(), action: e.action, timestamp: e.timestamp })
            .collect(),
        search_queries: vec![family.query.to_string()],
    };

    MemberLog { context, events, persona_stem: family.stem.to_string() }
}

/// Generate all members in stable member-id order.
pub fn generate_logs(config: &GeneratorConfig) -> Result<Vec<MemberLog>, super::DatasetError> {
    config.validate()?;
    Ok((0..config.member_count).map(|i| generate_member(config, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_ordered() {
        let config = GeneratorConfig { member_count: 40, ..GeneratorConfig::default() };
        let a = generate_logs(&config).unwrap();
        let b = generate_logs(&config).unwrap();
        assert_eq!(a.len(), 40);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.context, y.context);
            assert_eq!(x.events, y.events);
        }
        let ids: Vec<&str> = a.iter().map(|m| m.context.member_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn per_member_streams_are_independent_of_member_count() {
        let small = GeneratorConfig { member_count: 5, ..GeneratorConfig::default() };
        let large = GeneratorConfig { member_count: 50, ..GeneratorConfig::default() };
        let a = generate_logs(&small).unwrap();
        let b = generate_logs(&large).unwrap();
        for i in 0..5 {
            assert_eq!(a[i].events, b[i].events);
        }
    }

    #[test]
    fn events_are_sorted_positive_and_in_window() {
        let config = GeneratorConfig { member_count: 30, ..GeneratorConfig::default() };
        let window = (config.observation_days + config.validation_days) as i64 * 86_400;
        for member in generate_logs(&config).unwrap() {
            assert!(member.context.actions_sorted());
            for e in &member.events {
                assert!(e.timestamp > 0);
                assert!(e.timestamp >= BASE_TIMESTAMP && e.timestamp < BASE_TIMESTAMP + window);
                assert!(e.job.is_well_formed());
            }
            assert!(member.context.has_content());
        }
    }

    #[test]
    fn apply_bias_toward_persona_matching_titles() {
        // Over >= 10k events, the apply rate on jobs whose title matches the
        // member's persona must exceed the overall apply rate by more than
        // three standard errors.
        let config = GeneratorConfig { member_count: 1200, ..GeneratorConfig::default() };
        let logs = generate_logs(&config).unwrap();
        let mut match_events = 0usize;
        let mut match_applies = 0usize;
        let mut total_events = 0usize;
        let mut total_applies = 0usize;
        for member in &logs {
            for e in &member.events {
                total_events += 1;
                let applied = e.action == ActionLabel::Apply;
                total_applies += applied as usize;
                if e.job.title.contains(&member.persona_stem) {
                    match_events += 1;
                    match_applies += applied as usize;
                }
            }
        }
        assert!(total_events >= 10_000, "only {total_events} events");
        let overall = total_applies as f64 / total_events as f64;
        let matched = match_applies as f64 / match_events as f64;
        let se = (matched * (1.0 - matched) / match_events as f64).sqrt();
        assert!(
            matched - overall > 3.0 * se,
            "matched {matched} vs overall {overall} (se {se})"
        );
    }

    #[test]
    fn context_token_scale_knob_is_respected() {
        let small = GeneratorConfig { member_count: 3, ..GeneratorConfig::default() };
        let large = GeneratorConfig {
            member_count: 3,
            context_token_target: 2000,
            ..GeneratorConfig::default()
        };
        let count = |m: &MemberLog| {
            m.context.profile_attributes.split_whitespace().count()
                + m.context.professional_content.split_whitespace().count()
        };
        let a = generate_logs(&small).unwrap();
        let b = generate_logs(&large).unwrap();
        for (s, l) in a.iter().zip(&b) {
            assert!(count(l) >= 2000);
            assert!(count(s) < count(l));
        }
    }
}
