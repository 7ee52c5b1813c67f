//! Planning module: task decomposition, plan generation (single- and
//! multi-path, rule-based or model-driven), plan selection, and feedback
//! handling.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_inline_calls, Args};
use crate::model::{ModelPort, ModelRequest};

pub type Atom = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanningError {
    #[error("model returned an empty decomposition")]
    MalformedDecomposition,
    #[error("no plan reaches the goal within depth {0}")]
    NoPlanFound(usize),
    #[error("no model candidate parsed to a usable plan")]
    MalformedPlan,
    #[error("plan set is empty")]
    EmptyPlanSet,
    #[error("operator {0} adds and deletes the same atom")]
    InvalidOperator(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub goal_text: String,
    #[serde(default)]
    pub domain_tags: BTreeSet<String>,
    #[serde(default)]
    pub facts: BTreeSet<Atom>,
    #[serde(default)]
    pub goal_atoms: BTreeSet<Atom>,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, goal_text: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            goal_text: goal_text.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub subtask_id: String,
    pub parent: String,
    pub ordinal: usize,
    pub goal_text: String,
    pub depends_on: Vec<String>,
}

impl Subtask {
    fn new(task: &TaskSpec, ordinal: usize, goal_text: &str) -> Self {
        let depends_on = if ordinal == 0 {
            Vec::new()
        } else {
            vec![subtask_id(&task.task_id, ordinal - 1)]
        };
        Self {
            subtask_id: subtask_id(&task.task_id, ordinal),
            parent: task.task_id.clone(),
            ordinal,
            goal_text: goal_text.to_string(),
            depends_on,
        }
    }
}

fn subtask_id(task_id: &str, ordinal: usize) -> String {
    format!("{task_id}.s{ordinal}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOp {
    ToolCall,
    ModelCall,
    MemoryOp,
    Emit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub op: StepOp,
    pub target: String,
    #[serde(default)]
    pub args: Args,
    /// Operator this step came from, for rule-based plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub plan_id: String,
    pub subtask_id: String,
    pub steps: Vec<Step>,
    pub cost: f64,
}

impl Plan {
    pub fn new(plan_id: impl Into<String>, subtask_id: impl Into<String>, steps: Vec<Step>) -> Self {
        let cost = steps.len() as f64;
        Self {
            plan_id: plan_id.into(),
            subtask_id: subtask_id.into(),
            steps,
            cost,
        }
    }

    pub fn operator_names(&self) -> Vec<&str> {
        self.steps.iter().filter_map(|s| s.operator.as_deref()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operator {
    pub name: String,
    #[serde(default)]
    pub preconditions: BTreeSet<Atom>,
    #[serde(default)]
    pub add_effects: BTreeSet<Atom>,
    #[serde(default)]
    pub del_effects: BTreeSet<Atom>,
    /// Tool that carries this operator out when a plan is executed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Args::is_empty")]
    pub args: Args,
}

impl Operator {
    pub fn new<P, A, D>(name: impl Into<String>, pre: P, add: A, del: D) -> Self
    where
        P: IntoIterator,
        P::Item: Into<Atom>,
        A: IntoIterator,
        A::Item: Into<Atom>,
        D: IntoIterator,
        D::Item: Into<Atom>,
    {
        Self {
            name: name.into(),
            preconditions: pre.into_iter().map(Into::into).collect(),
            add_effects: add.into_iter().map(Into::into).collect(),
            del_effects: del.into_iter().map(Into::into).collect(),
            tool: None,
            args: Args::new(),
        }
    }

    pub fn validate(&self) -> Result<(), PlanningError> {
        if self.add_effects.is_disjoint(&self.del_effects) {
            Ok(())
        } else {
            Err(PlanningError::InvalidOperator(self.name.clone()))
        }
    }

    pub fn applicable(&self, state: &BTreeSet<Atom>) -> bool {
        self.preconditions.is_subset(state)
    }

    pub fn apply(&self, state: &BTreeSet<Atom>) -> BTreeSet<Atom> {
        state
            .difference(&self.del_effects)
            .chain(self.add_effects.iter())
            .cloned()
            .collect()
    }

    fn to_step(&self) -> Step {
        match &self.tool {
            Some(tool) => Step {
                op: StepOp::ToolCall,
                target: tool.clone(),
                args: self.args.clone(),
                operator: Some(self.name.clone()),
            },
            None => Step {
                op: StepOp::Emit,
                target: "operator".into(),
                args: self.args.clone(),
                operator: Some(self.name.clone()),
            },
        }
    }
}

/// Applies a named operator sequence from `facts`; `None` if some operator is
/// unknown or not applicable when reached.
pub fn replay(
    facts: &BTreeSet<Atom>,
    operators: &[Operator],
    names: &[&str],
) -> Option<BTreeSet<Atom>> {
    let mut state = facts.clone();
    for name in names {
        let op = operators.iter().find(|o| o.name == *name)?;
        if !op.applicable(&state) {
            return None;
        }
        state = op.apply(&state);
    }
    Some(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionMode {
    Iterative,
    NonIterative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decomposition {
    All(Vec<Subtask>),
    Next(Subtask),
    Done,
}

pub const DONE_MARKER: &str = "DONE";

pub fn decomposition_prompt(
    task: &TaskSpec,
    mode: DecompositionMode,
    prior: &[(String, String)],
) -> String {
    match mode {
        DecompositionMode::NonIterative => format!("DECOMPOSE: {}", task.goal_text),
        DecompositionMode::Iterative => {
            let mut p = format!("DECOMPOSE-NEXT: {}", task.goal_text);
            for (id, result) in prior {
                p.push_str(&format!("\nDONE {id}: {result}"));
            }
            p
        }
    }
}

/// Splits the model's reply into subtasks, one per nonempty line. Iterative
/// mode yields the next subtask (ordinal = number of prior outcomes) or the
/// done marker.
pub fn decompose(
    task: &TaskSpec,
    mode: DecompositionMode,
    prior_outcomes: &[(String, String)],
    model: &dyn ModelPort,
) -> Result<Decomposition, PlanningError> {
    let prompt = decomposition_prompt(task, mode, prior_outcomes);
    let reply = model.complete(&ModelRequest::new(prompt));
    let lines: Vec<&str> = reply
        .first()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    match mode {
        DecompositionMode::NonIterative => {
            if lines.is_empty() {
                return Err(PlanningError::MalformedDecomposition);
            }
            Ok(Decomposition::All(
                lines
                    .iter()
                    .enumerate()
                    .map(|(i, l)| Subtask::new(task, i, l))
                    .collect(),
            ))
        }
        DecompositionMode::Iterative => match lines.first() {
            None => Ok(Decomposition::Done),
            Some(l) if *l == DONE_MARKER => Ok(Decomposition::Done),
            Some(l) => Ok(Decomposition::Next(Subtask::new(task, prior_outcomes.len(), l))),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum Strategy {
    SinglePath,
    MultiPath(usize),
}

impl Strategy {
    fn budget(self) -> usize {
        match self {
            Strategy::SinglePath => 1,
            Strategy::MultiPath(k) => k.max(2),
        }
    }
}

/// Finite precondition/effect domain for the rule-based technique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDomain {
    pub facts: BTreeSet<Atom>,
    pub goal: BTreeSet<Atom>,
    pub operators: Vec<Operator>,
    pub max_depth: usize,
}

pub enum Technique<'a> {
    RuleBased(&'a RuleDomain),
    LmPowered,
}

/// Reserved inline-call targets that map to non-tool steps.
pub const MEMORY_TARGET: &str = "memory";
pub const MODEL_TARGET: &str = "llm";

pub fn plan_prompt(subtask: &Subtask, inventory: &BTreeSet<String>) -> String {
    let tools: Vec<&str> = inventory.iter().map(String::as_str).collect();
    format!("PLAN: {}\nTOOLS: {}", subtask.goal_text, tools.join(","))
}

/// Converts one model candidate into steps. `None` when it has no calls or
/// calls a tool outside `inventory`.
pub fn parse_plan_candidate(text: &str, inventory: &BTreeSet<String>) -> Option<Vec<Step>> {
    let calls = parse_inline_calls(text);
    if calls.is_empty() {
        return None;
    }
    calls
        .into_iter()
        .map(|c| {
            let op = match c.tool_id.as_str() {
                MEMORY_TARGET => StepOp::MemoryOp,
                MODEL_TARGET => StepOp::ModelCall,
                t if inventory.contains(t) => StepOp::ToolCall,
                _ => return None,
            };
            Some(Step {
                op,
                target: c.tool_id,
                args: c.args,
                operator: None,
            })
        })
        .collect()
}

pub fn generate_plans(
    subtask: &Subtask,
    strategy: Strategy,
    technique: Technique<'_>,
    inventory: &BTreeSet<String>,
    model: &dyn ModelPort,
) -> Result<Vec<Plan>, PlanningError> {
    let k = strategy.budget();
    let plan_id = |i: usize| format!("{}.p{i}", subtask.subtask_id);
    match technique {
        Technique::RuleBased(domain) => {
            let sequences = match strategy {
                Strategy::SinglePath => {
                    vec![shortest_sequence(&domain.facts, &domain.operators, &domain.goal, domain.max_depth)
                        .ok_or(PlanningError::NoPlanFound(domain.max_depth))?]
                }
                Strategy::MultiPath(_) => {
                    let seqs = enumerate_sequences(
                        &domain.facts,
                        &domain.operators,
                        &domain.goal,
                        domain.max_depth,
                        k,
                    );
                    if seqs.is_empty() {
                        return Err(PlanningError::NoPlanFound(domain.max_depth));
                    }
                    seqs
                }
            };
            Ok(sequences
                .iter()
                .enumerate()
                .map(|(i, seq)| {
                    Plan::new(
                        plan_id(i),
                        &subtask.subtask_id,
                        seq.iter().map(|&o| domain.operators[o].to_step()).collect(),
                    )
                })
                .collect())
        }
        Technique::LmPowered => {
            let reply = model
                .complete(&ModelRequest::new(plan_prompt(subtask, inventory)).with_candidates(k));
            let mut seen: Vec<Vec<Step>> = Vec::new();
            for candidate in &reply.candidates {
                if let Some(steps) = parse_plan_candidate(candidate, inventory) {
                    if !seen.contains(&steps) {
                        seen.push(steps);
                    }
                }
                if seen.len() == k {
                    break;
                }
            }
            if seen.is_empty() {
                return Err(PlanningError::MalformedPlan);
            }
            Ok(seen
                .into_iter()
                .enumerate()
                .map(|(i, steps)| Plan::new(plan_id(i), &subtask.subtask_id, steps))
                .collect())
        }
    }
}

/// Default evaluator: cheaper plans score higher.
pub fn negative_cost(plan: &Plan) -> f64 {
    -plan.cost
}

/// Highest-scoring plan; ties go to the lexicographically smallest plan id.
pub fn select_plan<F>(plans: &[Plan], evaluator: F) -> Result<&Plan, PlanningError>
where
    F: Fn(&Plan) -> f64,
{
    plans
        .iter()
        .map(|p| (evaluator(p), p))
        .max_by(|(sa, pa), (sb, pb)| sa.total_cmp(sb).then_with(|| pb.plan_id.cmp(&pa.plan_id)))
        .map(|(_, p)| p)
        .ok_or(PlanningError::EmptyPlanSet)
}

/// Breadth-first shortest operator sequence (as indices into `operators`).
/// Among equal-length sequences the one first in operator declaration order
/// wins.
pub fn shortest_sequence(
    facts: &BTreeSet<Atom>,
    operators: &[Operator],
    goal: &BTreeSet<Atom>,
    max_depth: usize,
) -> Option<Vec<usize>> {
    let mut visited: HashSet<BTreeSet<Atom>> = HashSet::new();
    let mut queue: VecDeque<(BTreeSet<Atom>, Vec<usize>)> = VecDeque::new();
    visited.insert(facts.clone());
    queue.push_back((facts.clone(), Vec::new()));
    while let Some((state, path)) = queue.pop_front() {
        if goal.is_subset(&state) {
            return Some(path);
        }
        if path.len() >= max_depth {
            continue;
        }
        for (i, op) in operators.iter().enumerate() {
            if !op.applicable(&state) {
                continue;
            }
            let next = op.apply(&state);
            if visited.insert(next.clone()) {
                let mut p = path.clone();
                p.push(i);
                queue.push_back((next, p));
            }
        }
    }
    None
}

/// Up to `k` goal-reaching sequences in breadth-first order (shorter first,
/// then declaration order). Paths stop at the goal and never revisit a state
/// already on the same path.
pub fn enumerate_sequences(
    facts: &BTreeSet<Atom>,
    operators: &[Operator],
    goal: &BTreeSet<Atom>,
    max_depth: usize,
    k: usize,
) -> Vec<Vec<usize>> {
    let mut found = Vec::new();
    let mut queue: VecDeque<(Vec<BTreeSet<Atom>>, Vec<usize>)> = VecDeque::new();
    queue.push_back((vec![facts.clone()], Vec::new()));
    while let Some((states, path)) = queue.pop_front() {
        let state = states.last().expect("path states are nonempty");
        if goal.is_subset(state) {
            found.push(path);
            if found.len() == k {
                break;
            }
            continue;
        }
        if path.len() >= max_depth {
            continue;
        }
        for (i, op) in operators.iter().enumerate() {
            if !op.applicable(state) {
                continue;
            }
            let next = op.apply(state);
            if states.contains(&next) {
                continue;
            }
            let mut s = states.clone();
            s.push(next);
            let mut p = path.clone();
            p.push(i);
            queue.push_back((s, p));
        }
    }
    found
}

pub fn rule_based_plan(
    facts: &BTreeSet<Atom>,
    operators: &[Operator],
    goal: &BTreeSet<Atom>,
    max_depth: usize,
) -> Result<Plan, PlanningError> {
    for op in operators {
        op.validate()?;
    }
    let seq = shortest_sequence(facts, operators, goal, max_depth)
        .ok_or(PlanningError::NoPlanFound(max_depth))?;
    Ok(Plan::new(
        "rule.p0",
        "rule",
        seq.iter().map(|&i| operators[i].to_step()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Human,
    Tool,
    Sibling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub source: FeedbackSource,
    pub content: String,
    #[serde(default)]
    pub rating: Option<f64>,
}

impl Feedback {
    pub fn tool(content: impl Into<String>) -> Self {
        Self {
            source: FeedbackSource::Tool,
            content: content.into(),
            rating: None,
        }
    }

    pub fn human(content: impl Into<String>, rating: Option<f64>) -> Self {
        Self {
            source: FeedbackSource::Human,
            content: content.into(),
            rating,
        }
    }

    pub fn sibling(content: impl Into<String>) -> Self {
        Self {
            source: FeedbackSource::Sibling,
            content: content.into(),
            rating: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Revision {
    Retry,
    Proceed,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub failure_lexicon: Vec<String>,
    pub abort_lexicon: Vec<String>,
    pub retry_below: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            failure_lexicon: vec!["error".into(), "exception".into(), "fail".into()],
            abort_lexicon: vec!["ABORT".into()],
            retry_below: 0.5,
        }
    }
}

/// Maps feedback on the last result of `subtask` to a revision hint.
pub fn incorporate_feedback(
    _subtask: &Subtask,
    _last_result: &str,
    feedback: &Feedback,
    config: &FeedbackConfig,
) -> Revision {
    if feedback.source == FeedbackSource::Human
        && config
            .abort_lexicon
            .iter()
            .any(|t| feedback.content.contains(t.as_str()))
    {
        return Revision::Abort;
    }
    if feedback.rating.is_some_and(|r| r < config.retry_below) {
        return Revision::Retry;
    }
    let lowered = feedback.content.to_lowercase();
    if feedback.source == FeedbackSource::Tool
        && config
            .failure_lexicon
            .iter()
            .any(|t| lowered.contains(&t.to_lowercase()))
    {
        return Revision::Retry;
    }
    Revision::Proceed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptRule, ScriptedModel};

    const NONE: [&str; 0] = [];

    fn atoms(xs: &[&str]) -> BTreeSet<Atom> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn task() -> TaskSpec {
        TaskSpec::new("t1", "do the thing")
    }

    #[test]
    fn non_iterative_splits_lines() {
        let model = ScriptedModel::new(vec![ScriptRule::new("d", "DECOMPOSE:", ["step A\nstep B"])]);
        let Decomposition::All(subs) =
            decompose(&task(), DecompositionMode::NonIterative, &[], &model).unwrap()
        else {
            panic!("expected full decomposition")
        };
        assert_eq!(subs.len(), 2);
        assert_eq!((subs[0].ordinal, subs[1].ordinal), (0, 1));
        assert_eq!(subs[1].depends_on, vec![subs[0].subtask_id.clone()]);
    }

    #[test]
    fn iterative_two_call_script() {
        let model = ScriptedModel::new(vec![
            ScriptRule::new("done", "A done", [DONE_MARKER]),
            ScriptRule::new("next", "DECOMPOSE-NEXT:", ["step A"]),
        ]);
        let first = decompose(&task(), DecompositionMode::Iterative, &[], &model).unwrap();
        let Decomposition::Next(sub) = first else {
            panic!("expected a subtask")
        };
        assert_eq!(sub.ordinal, 0);
        assert_eq!(sub.goal_text, "step A");
        let prior = vec![(sub.subtask_id.clone(), "A done".to_string())];
        let second = decompose(&task(), DecompositionMode::Iterative, &prior, &model).unwrap();
        assert_eq!(second, Decomposition::Done);
    }

    #[test]
    fn empty_decomposition_rejected() {
        let model = ScriptedModel::new(vec![ScriptRule::new("d", "DECOMPOSE:", [""])]);
        assert_eq!(
            decompose(&task(), DecompositionMode::NonIterative, &[], &model),
            Err(PlanningError::MalformedDecomposition)
        );
    }

    fn sub() -> Subtask {
        Subtask::new(&task(), 0, "compute")
    }

    #[test]
    fn lm_single_path_parses_call() {
        let model = ScriptedModel::new(vec![ScriptRule::new(
            "p",
            "PLAN:",
            [r#"[CALL calc(expr="2+2")]"#],
        )]);
        let inv = atoms(&["calc"]);
        let plans =
            generate_plans(&sub(), Strategy::SinglePath, Technique::LmPowered, &inv, &model).unwrap();
        assert_eq!(plans.len(), 1);
        let step = &plans[0].steps[0];
        assert_eq!(step.op, StepOp::ToolCall);
        assert_eq!(step.target, "calc");
        assert_eq!(step.args["expr"], "2+2");
        assert_eq!(plans[0].cost, 1.0);
    }

    #[test]
    fn lm_candidates_outside_inventory_dropped() {
        let model = ScriptedModel::new(vec![ScriptRule::new(
            "p",
            "PLAN:",
            [r#"[CALL translate(text="hi")]"#, r#"[CALL calc(expr="1")]"#, "no calls"],
        )]);
        let inv = atoms(&["calc"]);
        let plans =
            generate_plans(&sub(), Strategy::MultiPath(3), Technique::LmPowered, &inv, &model).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].steps[0].target, "calc");
        let none = ScriptedModel::new(vec![ScriptRule::new("p", "PLAN:", ["just words"])]);
        assert_eq!(
            generate_plans(&sub(), Strategy::SinglePath, Technique::LmPowered, &inv, &none),
            Err(PlanningError::MalformedPlan)
        );
    }

    #[test]
    fn rule_based_multi_path_fewer_than_k() {
        // exactly two goal-reaching sequences: [a] and [b]
        let domain = RuleDomain {
            facts: atoms(&["s"]),
            goal: atoms(&["g"]),
            operators: vec![
                Operator::new("a", ["s"], ["g"], ["s"]),
                Operator::new("b", ["s"], ["g", "x"], ["s"]),
            ],
            max_depth: 4,
        };
        let plans = generate_plans(
            &sub(),
            Strategy::MultiPath(3),
            Technique::RuleBased(&domain),
            &BTreeSet::new(),
            &ScriptedModel::default(),
        )
        .unwrap();
        assert_eq!(plans.len(), 2);
        assert_eq!(plans[0].operator_names(), vec!["a"]);
        assert_eq!(plans[1].operator_names(), vec!["b"]);
    }

    #[test]
    fn goal_already_satisfied() {
        let plan = rule_based_plan(&atoms(&["a", "b"]), &[], &atoms(&["a"]), 3).unwrap();
        assert!(plan.steps.is_empty());
        assert_eq!(plan.cost, 0.0);
    }

    #[test]
    fn one_step_domain() {
        let ops = vec![Operator::new("o1", ["a"], ["b"], NONE)];
        let plan = rule_based_plan(&atoms(&["a"]), &ops, &atoms(&["b"]), 3).unwrap();
        assert_eq!(plan.operator_names(), vec!["o1"]);
    }

    #[test]
    fn unreachable_goal() {
        let ops = vec![Operator::new("o1", ["a"], ["b"], NONE)];
        assert_eq!(
            rule_based_plan(&atoms(&["a"]), &ops, &atoms(&["z"]), 3),
            Err(PlanningError::NoPlanFound(3))
        );
    }

    #[test]
    fn contradictory_operator_rejected() {
        let ops = vec![Operator::new("bad", NONE, ["a"], ["a"])];
        assert_eq!(
            rule_based_plan(&atoms(&[]), &ops, &atoms(&["a"]), 2),
            Err(PlanningError::InvalidOperator("bad".into()))
        );
    }

    #[test]
    fn ties_prefer_declaration_order() {
        // both o2 and o1 reach g in one step; o1 is declared second
        let ops = vec![
            Operator::new("o2", NONE, ["g"], NONE),
            Operator::new("o1", NONE, ["g"], NONE),
        ];
        let plan = rule_based_plan(&atoms(&[]), &ops, &atoms(&["g"]), 2).unwrap();
        assert_eq!(plan.operator_names(), vec!["o2"]);
    }

    fn plan(id: &str, cost: usize) -> Plan {
        let step = Step {
            op: StepOp::Emit,
            target: "x".into(),
            args: Args::new(),
            operator: None,
        };
        Plan::new(id, "s", vec![step; cost])
    }

    #[test]
    fn select_min_cost() {
        let plans = vec![plan("p0", 3), plan("p1", 1), plan("p2", 2)];
        assert_eq!(select_plan(&plans, negative_cost).unwrap().plan_id, "p1");
    }

    #[test]
    fn select_tie_smallest_id() {
        let plans = vec![plan("p-b", 2), plan("p-a", 2)];
        assert_eq!(select_plan(&plans, negative_cost).unwrap().plan_id, "p-a");
        assert_eq!(select_plan(&[], negative_cost), Err(PlanningError::EmptyPlanSet));
    }

    #[test]
    fn feedback_mapping() {
        let cfg = FeedbackConfig::default();
        let s = sub();
        assert_eq!(
            incorporate_feedback(&s, "", &Feedback::tool("error: division by zero"), &cfg),
            Revision::Retry
        );
        assert_eq!(
            incorporate_feedback(&s, "", &Feedback::human("good", Some(0.9)), &cfg),
            Revision::Proceed
        );
        assert_eq!(
            incorporate_feedback(&s, "", &Feedback::human("ABORT", None), &cfg),
            Revision::Abort
        );
        assert_eq!(
            incorporate_feedback(&s, "", &Feedback::human("meh", Some(0.2)), &cfg),
            Revision::Retry
        );
        assert_eq!(
            incorporate_feedback(&s, "", &Feedback::sibling("all fine"), &cfg),
            Revision::Proceed
        );
        assert_eq!(
            incorporate_feedback(&s, "", &Feedback::tool("4"), &cfg),
            Revision::Proceed
        );
    }
}
