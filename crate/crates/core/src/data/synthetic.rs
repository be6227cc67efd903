//! Templated mismatch-detection task.
//!
//! Each event in a context is described by two sentences: a quantity
//! sentence `the <event> <name> caused <quantity> in damage .` and, in a
//! separately shuffled block later on, a unit sentence
//! `the losses of <name> were counted in <unit> of dollars .`. Filler
//! sentences are interleaved. The question asks which event caused a given
//! quantity and unit. It is answerable when one name carries both; for an
//! unanswerable question exactly one of the two was changed from the target
//! event, to a value stated for another event. Every question word therefore
//! occurs in the context, and spotting the mismatch means linking the
//! quantity and the unit through the name across the gap between the two
//! sentences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::example::Example;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_examples: usize,
    pub answerable_ratio: f64,
    pub facts_per_example: usize,
    pub rng_seed: u64,
    pub names: Vec<String>,
    pub events: Vec<String>,
    pub quantities: Vec<String>,
    pub units: Vec<String>,
    pub fillers: Vec<String>,
}

const FILLER_PROB: f64 = 0.3;

fn words<'a>(list: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    list.into_iter().map(str::to_string).collect()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_examples: 1000,
            answerable_ratio: 0.5,
            facts_per_example: 4,
            rng_seed: 17,
            names: words([
                "katrina", "andrew", "sandy", "harvey", "irma", "maria", "ike", "wilma", "rita", "floyd", "hugo",
                "camille", "agnes", "betsy", "diane", "carol", "hazel", "donna", "gloria", "fran", "opal", "iris",
                "dean", "frances",
            ]),
            events: words([
                "hurricane",
                "flood",
                "storm",
                "wildfire",
                "earthquake",
                "blizzard",
                "tornado",
                "drought",
            ]),
            quantities: words(["2", "5", "8", "12", "20", "35", "50", "75", "90", "150"]),
            units: words(["thousand", "million", "billion", "trillion"]),
            fillers: vec![
                "officials said recovery would take years .".into(),
                "the region was declared a disaster area .".into(),
                "insurers reported record numbers of claims .".into(),
                "residents were evacuated before landfall .".into(),
                "power was restored within two weeks .".into(),
            ],
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.answerable_ratio) {
            return Err(Error::Config(format!(
                "answerable_ratio {} not in [0, 1]",
                self.answerable_ratio
            )));
        }
        if self.names.is_empty() || self.events.is_empty() || self.quantities.is_empty() || self.units.is_empty() {
            return Err(Error::Config("synthetic pools must be non-empty".into()));
        }
        if self.facts_per_example == 0 || self.names.len() < self.facts_per_example {
            return Err(Error::Config(format!(
                "need 1..={} facts per example, got {}",
                self.names.len(),
                self.facts_per_example
            )));
        }
        if self.quantities.len() < 2 || self.units.len() < 2 {
            return Err(Error::Config(
                "need at least two quantities and two units to mutate".into(),
            ));
        }
        if self.quantities.len() * self.units.len() <= self.facts_per_example {
            return Err(Error::Config(
                "too few (quantity, unit) pairs for distinct facts".into(),
            ));
        }
        Ok(())
    }

    pub fn num_answerable(&self) -> usize {
        (self.answerable_ratio * self.num_examples as f64).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Fact {
    event: usize,
    name: usize,
    quantity: usize,
    unit: usize,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<Example>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut flags = vec![false; config.num_examples];
    flags[..config.num_answerable()].iter_mut().for_each(|f| *f = true);
    flags.shuffle(&mut rng);
    Ok(flags
        .iter()
        .enumerate()
        .map(|(i, &answerable)| generate_one(config, &mut rng, format!("syn-{}-{i}", config.rng_seed), answerable))
        .collect())
}

fn generate_one(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng, id: String, answerable: bool) -> Example {
    let (nq, nu) = (cfg.quantities.len(), cfg.units.len());
    let k = cfg.facts_per_example;
    let names: Vec<usize> = rand::seq::index::sample(rng, cfg.names.len(), k).into_vec();
    let target = Fact {
        event: rng.gen_range(0..cfg.events.len()),
        name: names[0],
        quantity: rng.gen_range(0..nq),
        unit: rng.gen_range(0..nu),
    };
    let mut facts = vec![target];
    for (d, &name) in names[1..].iter().enumerate() {
        // The first distractors share the target's quantity, its unit, and
        // neither, so every question word occurs in the context for both
        // answerable and mutated questions.
        let all_q: Vec<usize> = (0..nq).collect();
        let all_u: Vec<usize> = (0..nu).collect();
        let others = |all: &[usize], skip: &[usize]| all.iter().copied().filter(|v| !skip.contains(v)).collect();
        let (qs, us): (Vec<usize>, Vec<usize>) = match d {
            0 => (vec![target.quantity], others(&all_u, &[target.unit])),
            1 => (others(&all_q, &[target.quantity]), vec![target.unit]),
            2 => (
                others(&all_q, &[target.quantity, facts[2].quantity]),
                others(&all_u, &[target.unit, facts[1].unit]),
            ),
            _ => (all_q, all_u),
        };
        let free = |qs: &[usize], us: &[usize]| -> Vec<(usize, usize)> {
            qs.iter()
                .flat_map(|&q| us.iter().map(move |&u| (q, u)))
                .filter(|&(q, u)| facts.iter().all(|f| (f.quantity, f.unit) != (q, u)))
                .collect()
        };
        let mut pool = free(&qs, &us);
        if pool.is_empty() {
            pool = free(&(0..nq).collect::<Vec<_>>(), &(0..nu).collect::<Vec<_>>());
        }
        let &(quantity, unit) = pool.choose(rng).expect("validated pools leave a free pair");
        facts.push(Fact {
            event: rng.gen_range(0..cfg.events.len()),
            name,
            quantity,
            unit,
        });
    }
    facts.shuffle(rng);

    let (q_quantity, q_unit) = if answerable {
        (target.quantity, target.unit)
    } else {
        mutate(cfg, rng, &facts, target)
    };

    let mut sentences: Vec<(Option<Fact>, Vec<String>)> = Vec::new();
    let mut units_block: Vec<Vec<String>> = Vec::new();
    for fact in &facts {
        let quantity_sentence = format!(
            "the {} {} caused {} in damage .",
            cfg.events[fact.event], cfg.names[fact.name], cfg.quantities[fact.quantity]
        );
        sentences.push((Some(*fact), words(quantity_sentence.split_whitespace())));
        let unit_sentence = format!(
            "the losses of {} were counted in {} of dollars .",
            cfg.names[fact.name], cfg.units[fact.unit]
        );
        units_block.push(words(unit_sentence.split_whitespace()));
    }
    units_block.shuffle(rng);
    sentences.extend(units_block.into_iter().map(|w| (None, w)));

    let mut context: Vec<String> = Vec::new();
    let mut target_span = (0, 0);
    for (fact, sentence) in sentences {
        if !cfg.fillers.is_empty() && rng.gen_bool(FILLER_PROB) {
            let filler = cfg.fillers.choose(rng).expect("non-empty");
            context.extend(words(filler.split_whitespace()));
        }
        if fact == Some(target) {
            target_span = (context.len() + 1, context.len() + 2);
        }
        context.extend(sentence);
    }
    let question = format!(
        "what caused {} {} dollars in damage ?",
        cfg.quantities[q_quantity], cfg.units[q_unit]
    );
    Example {
        id,
        question_tokens: question.split_whitespace().map(str::to_string).collect(),
        raw_context_tokens: context.clone(),
        context_tokens: context,
        answer_span: answerable.then_some(target_span),
        plausible_span: Some(target_span),
        is_answerable: answerable,
    }
}

/// Changes either the quantity or the unit of `target` so that no fact
/// matches. A value stated for another event is used whenever either side
/// offers one.
fn mutate(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng, facts: &[Fact], target: Fact) -> (usize, usize) {
    let taken = |q: usize, u: usize| facts.iter().any(|f| (f.quantity, f.unit) == (q, u));
    let side = |unit_side: bool| -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let candidates: Vec<(usize, usize)> = if unit_side {
            (0..cfg.units.len())
                .filter(|&u| u != target.unit && !taken(target.quantity, u))
                .map(|u| (target.quantity, u))
                .collect()
        } else {
            (0..cfg.quantities.len())
                .filter(|&q| q != target.quantity && !taken(q, target.unit))
                .map(|q| (q, target.unit))
                .collect()
        };
        let in_context = candidates
            .iter()
            .copied()
            .filter(|&(q, u)| {
                facts
                    .iter()
                    .any(|f| if unit_side { f.unit == u } else { f.quantity == q })
            })
            .collect();
        (in_context, candidates)
    };
    let first = rng.gen_bool(0.5);
    let (a_in, a_all) = side(first);
    let (b_in, b_all) = side(!first);
    let pool = [a_in, b_in, a_all, b_all]
        .into_iter()
        .find(|p| !p.is_empty())
        .expect("validated pools always leave a free (quantity, unit) pair");
    *pool.choose(rng).expect("non-empty")
}
