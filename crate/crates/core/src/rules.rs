//! Propositional Horn rules with stratified negation-as-failure.
//!
//! Rule text, one rule per line, `#` starts a comment:
//!
//! ```text
//! resonance_high & amplitude_strong => signal_class_a @class_a
//! pump_shift & !valve_normal => anomaly
//! ```
//!
//! Rules without an `@id` are numbered `r1, r2, …` by position.
//! [`infer`] runs semi-naive forward chaining stratum by stratum and records
//! every firing in a [`ProofTrace`] that [`replay`] can check independently.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::EdgeRef;
use petgraph::Direction;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symbolic::{is_identifier, Predicate, SymbolSet};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub name: String,
    pub negated: bool,
}

impl Literal {
    pub fn pos(name: &str) -> Self {
        Literal {
            name: name.to_owned(),
            negated: false,
        }
    }

    pub fn neg(name: &str) -> Self {
        Literal {
            name: name.to_owned(),
            negated: true,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        f.write_str(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HornRule {
    pub id: String,
    pub body: Vec<Literal>,
    pub head: String,
}

impl HornRule {
    pub fn new(id: &str, body: Vec<Literal>, head: &str) -> Result<Self> {
        let rule = HornRule {
            id: id.to_owned(),
            body,
            head: head.to_owned(),
        };
        rule.validate()?;
        Ok(rule)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("rule `{}`: {msg}", self.id)));
        if !is_identifier(&self.id) {
            return bad("id is not an identifier".into());
        }
        if !is_identifier(&self.head) {
            return bad(format!("head `{}` is not an identifier", self.head));
        }
        if self.body.is_empty() {
            return bad("body is empty".into());
        }
        let mut seen = HashSet::new();
        for lit in &self.body {
            if !is_identifier(&lit.name) {
                return bad(format!("`{}` is not an identifier", lit.name));
            }
            if !seen.insert(lit) {
                return bad(format!("duplicate body literal `{lit}`"));
            }
        }
        Ok(())
    }

    pub fn positive(&self) -> impl Iterator<Item = &str> {
        self.body.iter().filter(|l| !l.negated).map(|l| l.name.as_str())
    }

    pub fn negative(&self) -> impl Iterator<Item = &str> {
        self.body.iter().filter(|l| l.negated).map(|l| l.name.as_str())
    }
}

impl fmt::Display for HornRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, lit) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{lit}")?;
        }
        write!(f, " => {} @{}", self.head, self.id)
    }
}

/// Rules plus their stratum assignment. Construction fails on unstratified
/// negation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<HornRule>,
    strata: Vec<usize>,
}

impl RuleSet {
    pub fn new(rules: Vec<HornRule>) -> Result<Self> {
        let mut ids = HashSet::new();
        for r in &rules {
            r.validate()?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate rule id `{}`", r.id)));
            }
        }
        let strata = stratify(&rules)?;
        Ok(RuleSet { rules, strata })
    }

    pub fn empty() -> Self {
        RuleSet {
            rules: Vec::new(),
            strata: Vec::new(),
        }
    }

    pub fn rules(&self) -> &[HornRule] {
        &self.rules
    }

    /// Stratum of each rule, parallel to [`RuleSet::rules`].
    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&HornRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Every predicate mentioned in a head or body.
    pub fn predicates(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .flat_map(|r| r.body.iter().map(|l| l.name.as_str()).chain([r.head.as_str()]))
            .collect()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        parse_rules(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Assigns each rule the stratum of its head: a negative dependency moves
/// the head at least one stratum above the negated predicate.
fn stratify(rules: &[HornRule]) -> Result<Vec<usize>> {
    let mut graph: DiGraph<&str, bool> = DiGraph::new();
    let mut nodes: HashMap<&str, NodeIndex> = HashMap::new();
    let mut edges = Vec::new();
    for r in rules {
        let h = *nodes.entry(&r.head).or_insert_with(|| graph.add_node(&r.head));
        for lit in &r.body {
            let b = *nodes.entry(&lit.name).or_insert_with(|| graph.add_node(&lit.name));
            edges.push((b, h, lit.negated));
        }
    }
    for &(b, h, neg) in &edges {
        graph.add_edge(b, h, neg);
    }

    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; graph.node_count()];
    for (c, scc) in sccs.iter().enumerate() {
        for &n in scc {
            component[n.index()] = c;
        }
    }
    for &(b, h, neg) in &edges {
        if neg && component[b.index()] == component[h.index()] {
            return Err(Error::Unstratified {
                cycle: negative_cycle(&graph, h, b),
            });
        }
    }

    // tarjan_scc yields components in reverse topological order.
    let mut level = vec![0usize; sccs.len()];
    for c in (0..sccs.len()).rev() {
        for &n in &sccs[c] {
            for e in graph.edges_directed(n, Direction::Incoming) {
                let src = component[e.source().index()];
                if src != c {
                    level[c] = level[c].max(level[src] + usize::from(*e.weight()));
                }
            }
        }
    }
    Ok(rules
        .iter()
        .map(|r| level[component[nodes[r.head.as_str()].index()]])
        .collect())
}

/// `from → … → to → from`, where `to → from` is the negative edge.
fn negative_cycle(graph: &DiGraph<&str, bool>, from: NodeIndex, to: NodeIndex) -> Vec<String> {
    let mut prev: HashMap<NodeIndex, NodeIndex> = HashMap::new();
    let mut queue = VecDeque::from([from]);
    let mut seen = HashSet::from([from]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            break;
        }
        for m in graph.neighbors(n) {
            if seen.insert(m) {
                prev.insert(m, n);
                queue.push_back(m);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[&cur];
        path.push(cur);
    }
    path.reverse();
    path.push(from);
    path.into_iter().map(|n| graph[n].to_owned()).collect()
}

struct Lexer<'a> {
    line: usize,
    text: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            line: self.line,
            column: self.text[..self.pos].chars().count() + 1,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.text[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let len = rest
            .char_indices()
            .find(|&(i, c)| !(c == '_' || c.is_ascii_alphabetic() || (i > 0 && c.is_ascii_digit())))
            .map_or(rest.len(), |(i, _)| i);
        if len == 0 {
            return self.err("expected an identifier");
        }
        self.pos += len;
        Ok(&rest[..len])
    }
}

/// Parses rule text and stratifies it.
pub fn parse_rules(text: &str) -> Result<RuleSet> {
    let mut rules: Vec<HornRule> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let mut lx = Lexer {
            line: lineno + 1,
            text: line,
            pos: 0,
        };
        if lx.at_end() {
            continue;
        }
        let mut body = Vec::new();
        loop {
            let negated = lx.eat("!");
            let name = lx.ident()?;
            let lit = Literal {
                name: name.to_owned(),
                negated,
            };
            if body.contains(&lit) {
                return lx.err(format!("duplicate body literal `{lit}`"));
            }
            body.push(lit);
            if lx.eat("&") {
                continue;
            }
            if lx.eat("=>") {
                break;
            }
            return lx.err("expected `&` or `=>`");
        }
        let head = lx.ident()?.to_owned();
        let id = if lx.eat("@") {
            lx.ident()?.to_owned()
        } else {
            format!("r{}", rules.len() + 1)
        };
        if !lx.at_end() {
            return lx.err("unexpected trailing input");
        }
        if rules.iter().any(|r| r.id == id) {
            lx.pos = 0;
            return lx.err(format!("duplicate rule id `{id}`"));
        }
        rules.push(HornRule { id, body, head });
    }
    RuleSet::new(rules)
}

/// One rule firing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub rule_id: String,
    pub head: String,
    /// Positive body facts, all present when the rule fired.
    pub body_pos: Vec<String>,
    /// Negated body facts, all checked absent.
    pub body_neg_checked: Vec<String>,
}

/// Firings in derivation order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProofTrace {
    pub steps: Vec<ProofStep>,
}

impl ProofTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub derived: SymbolSet,
    pub trace: ProofTrace,
}

/// Semi-naive forward chaining to fixpoint, one stratum at a time.
///
/// Within a stratum, each round visits rules in order and fires those whose
/// head is new and whose body holds against the facts known at the start of
/// the round. After the first round a rule is only revisited when one of its
/// positive body predicates appeared in the previous round.
pub fn infer(rs: &RuleSet, facts: &SymbolSet) -> Result<Inference> {
    let mut known: BTreeSet<String> = facts.iter().map(|p| p.name().to_owned()).collect();
    let mut trace = ProofTrace::default();
    let top = rs.strata.iter().copied().max();

    for stratum in 0..=top.unwrap_or(0) {
        let rules: Vec<&HornRule> = rs
            .rules
            .iter()
            .zip(&rs.strata)
            .filter(|(_, &s)| s == stratum)
            .map(|(r, _)| r)
            .collect();
        let mut delta: Option<BTreeSet<String>> = None;
        loop {
            let mut fresh: BTreeSet<String> = BTreeSet::new();
            for r in &rules {
                if known.contains(&r.head) || fresh.contains(&r.head) {
                    continue;
                }
                if let Some(d) = &delta {
                    if !r.positive().any(|p| d.contains(p)) {
                        continue;
                    }
                }
                let holds = r.positive().all(|p| known.contains(p))
                    && r.negative().all(|n| !known.contains(n));
                if holds {
                    fresh.insert(r.head.clone());
                    trace.steps.push(ProofStep {
                        rule_id: r.id.clone(),
                        head: r.head.clone(),
                        body_pos: r.positive().map(str::to_owned).collect(),
                        body_neg_checked: r.negative().map(str::to_owned).collect(),
                    });
                }
            }
            if fresh.is_empty() {
                break;
            }
            known.extend(fresh.iter().cloned());
            delta = Some(fresh);
        }
    }

    let mut derived = facts.clone();
    for step in &trace.steps {
        derived.insert(Predicate::new(step.head.clone())?);
    }
    Ok(Inference { derived, trace })
}

/// Re-derives the fact set from `facts` by following `trace`, checking each
/// firing against the rule it names. True iff every step is justified, no
/// negated fact is ever derived, and the result equals [`infer`]'s.
pub fn replay(trace: &ProofTrace, facts: &SymbolSet, rs: &RuleSet) -> bool {
    let mut known: BTreeSet<String> = facts.iter().map(|p| p.name().to_owned()).collect();
    let mut negated_checks: Vec<&str> = Vec::new();
    for step in &trace.steps {
        let Some(rule) = rs.get(&step.rule_id) else {
            return false;
        };
        let justified = rule.head == step.head
            && rule.positive().eq(step.body_pos.iter().map(String::as_str))
            && rule.negative().eq(step.body_neg_checked.iter().map(String::as_str))
            && !known.contains(&step.head)
            && step.body_pos.iter().all(|p| known.contains(p))
            && step.body_neg_checked.iter().all(|n| !known.contains(n));
        if !justified {
            return false;
        }
        negated_checks.extend(step.body_neg_checked.iter().map(String::as_str));
        known.insert(step.head.clone());
    }
    if negated_checks.iter().any(|n| known.contains(*n)) {
        return false;
    }
    match infer(rs, facts) {
        Ok(inf) => inf.derived.names().into_iter().eq(known.iter().map(String::as_str)),
        Err(_) => false,
    }
}
