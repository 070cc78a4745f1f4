//! Call-graph construction and context-enriched function slices.
//!
//! A slice is a function plus everything needed to read it in isolation:
//! the file's pragmas, the state variables and events it touches, and the
//! bodies of the same-contract functions it reaches within `d_max` calls.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::SliceError;
use crate::lexer;
use crate::source::{EventDecl, FunctionKind, FunctionUnit, SourceUnit, StateVarDecl};

pub const DEFAULT_D_MAX: usize = 3;

/// Maximum number of call hops followed when assembling context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthBound {
    pub d_max: usize,
}

impl Default for DepthBound {
    fn default() -> Self {
        Self { d_max: DEFAULT_D_MAX }
    }
}

impl DepthBound {
    pub fn new(d_max: usize) -> Self {
        Self { d_max }
    }
}

/// Same-contract call relation. Overloads share one node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    /// Callees per caller in order of first occurrence.
    adjacency: BTreeMap<String, Vec<String>>,
}

impl CallGraph {
    pub fn callees(&self, caller: &str) -> &[String] {
        self.adjacency.get(caller).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn add_node(&mut self, name: &str) {
        self.nodes.insert(name.to_string());
    }

    pub fn add_edge(&mut self, caller: &str, callee: &str) {
        self.add_node(caller);
        self.add_node(callee);
        if self.edges.insert((caller.to_string(), callee.to_string())) {
            self.adjacency
                .entry(caller.to_string())
                .or_default()
                .push(callee.to_string());
        }
    }
}

/// Names `f` calls (`g(` in its body, not a member call) or invokes as a
/// modifier in its header, restricted to `known`, in first-occurrence order.
fn calls_of(f: &FunctionUnit, known: &HashSet<&str>, modifiers: &HashSet<&str>) -> Vec<String> {
    let lexed = lexer::lex(&f.body_text);
    let blank = lexed.blanked.as_str();
    let (header, body) = blank.split_at(f.block_offset);
    let mut out: Vec<String> = Vec::new();
    let mut push = |name: &str| {
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    };
    // Skip the declaring keyword and the function's own name.
    let header_ids = lexer::identifiers(header);
    let params_at = header.find('(').unwrap_or(header.len());
    for id in header_ids.iter().filter(|id| id.start > params_at) {
        if modifiers.contains(id.text) && !id.after_dot {
            push(id.text);
        }
    }
    for id in lexer::identifiers(body) {
        if id.before_paren && !id.after_dot && !lexer::is_reserved(id.text) && known.contains(id.text) {
            push(id.text);
        }
    }
    out
}

pub fn build_call_graph(unit: &SourceUnit) -> CallGraph {
    let known: HashSet<&str> = unit.functions.iter().map(|f| f.name.as_str()).collect();
    let modifiers: HashSet<&str> = unit
        .functions
        .iter()
        .filter(|f| f.kind == FunctionKind::Modifier)
        .map(|f| f.name.as_str())
        .collect();
    let mut graph = CallGraph::default();
    for f in &unit.functions {
        graph.add_node(&f.name);
    }
    for f in &unit.functions {
        for callee in calls_of(f, &known, &modifiers) {
            graph.add_edge(&f.name, &callee);
        }
    }
    graph
}

/// Functions reachable from `root` in at most `bound.d_max` hops, breadth
/// first, each listed once at its shallowest depth. The root itself is never
/// listed, even when a cycle leads back to it.
pub fn dependency_closure(
    graph: &CallGraph,
    root: &str,
    bound: DepthBound,
) -> Result<Vec<String>, SliceError> {
    if !graph.nodes.contains(root) {
        return Err(SliceError::UnknownRoot(root.to_string()));
    }
    let mut seen: HashSet<&str> = HashSet::from([root]);
    let mut order = Vec::new();
    let mut queue = VecDeque::from([(root, 0usize)]);
    while let Some((node, depth)) = queue.pop_front() {
        if depth == bound.d_max {
            continue;
        }
        for callee in graph.callees(node) {
            if seen.insert(callee.as_str()) {
                order.push(callee.clone());
                queue.push_back((callee.as_str(), depth + 1));
            }
        }
    }
    Ok(order)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMetadata {
    pub source_file: String,
    pub contract_name: String,
    pub swc_types: BTreeSet<String>,
    pub called_functions: Vec<String>,
    pub referenced_state_vars: Vec<String>,
    pub triggered_events: Vec<String>,
}

/// A function with its assembled context; the unit of embedding, retrieval
/// and verification. One JSON line per slice is the corpus format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSlice {
    pub main_function: FunctionUnit,
    pub pragmas: Vec<String>,
    pub relevant_state_vars: Vec<StateVarDecl>,
    pub relevant_events: Vec<EventDecl>,
    pub dependency_functions: Vec<FunctionUnit>,
    pub assembled_text: String,
    pub metadata: SliceMetadata,
}

impl ContextSlice {
    /// Stable identifier: `<file>:<contract>.<function>:L<start>`.
    pub fn slice_id(&self) -> String {
        format!(
            "{}:{}.{}:L{}",
            self.metadata.source_file,
            self.metadata.contract_name,
            self.main_function.name,
            self.main_function.start_line
        )
    }
}

static EMIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bemit\s+([A-Za-z_$][\w$]*)").unwrap());

/// Slice the first function called `target`.
pub fn assemble_slice(
    unit: &SourceUnit,
    target: &str,
    bound: DepthBound,
) -> Result<ContextSlice, SliceError> {
    let graph = build_call_graph(unit);
    let index = unit
        .functions
        .iter()
        .position(|f| f.name == target)
        .ok_or_else(|| SliceError::UnknownFunction(target.to_string()))?;
    assemble_with_graph(unit, &graph, index, bound)
}

/// Slice `unit.functions[index]`, reusing a prebuilt call graph.
pub fn assemble_with_graph(
    unit: &SourceUnit,
    graph: &CallGraph,
    index: usize,
    bound: DepthBound,
) -> Result<ContextSlice, SliceError> {
    let main = unit
        .functions
        .get(index)
        .ok_or_else(|| SliceError::UnknownFunction(format!("#{index}")))?;
    let dep_names = dependency_closure(graph, &main.name, bound)?;
    let dependency_functions: Vec<FunctionUnit> = dep_names
        .iter()
        .flat_map(|name| unit.functions.iter().filter(move |f| &f.name == name))
        .cloned()
        .collect();

    let mut idents: HashSet<String> = HashSet::new();
    let mut emitted: HashSet<String> = HashSet::new();
    for f in std::iter::once(main).chain(&dependency_functions) {
        let blank = lexer::lex(&f.body_text).blanked;
        idents.extend(lexer::identifiers(&blank).iter().map(|i| i.text.to_string()));
        emitted.extend(EMIT_RE.captures_iter(&blank).map(|c| c[1].to_string()));
    }
    let relevant_state_vars: Vec<StateVarDecl> = unit
        .state_vars
        .iter()
        .filter(|v| idents.contains(&v.name))
        .cloned()
        .collect();
    let relevant_events: Vec<EventDecl> = unit
        .events
        .iter()
        .filter(|e| emitted.contains(&e.name))
        .cloned()
        .collect();

    let mut sections: Vec<String> = Vec::new();
    if !unit.pragmas.is_empty() {
        sections.push(unit.pragmas.join("\n"));
    }
    if !relevant_state_vars.is_empty() {
        sections.push(join_texts(relevant_state_vars.iter().map(|v| v.full_text.as_str())));
    }
    if !relevant_events.is_empty() {
        sections.push(join_texts(relevant_events.iter().map(|e| e.full_text.as_str())));
    }
    sections.push(main.body_text.clone());
    sections.extend(dependency_functions.iter().map(|f| f.body_text.clone()));
    let assembled_text = sections.join("\n\n");

    let swc_types = std::iter::once(main)
        .chain(&dependency_functions)
        .flat_map(|f| f.swc_tags.iter().cloned())
        .collect();
    let metadata = SliceMetadata {
        source_file: unit.file_name.clone(),
        contract_name: unit.contract_name.clone(),
        swc_types,
        called_functions: dependency_functions.iter().map(|f| f.name.clone()).collect(),
        referenced_state_vars: relevant_state_vars.iter().map(|v| v.name.clone()).collect(),
        triggered_events: relevant_events.iter().map(|e| e.name.clone()).collect(),
    };
    Ok(ContextSlice {
        main_function: main.clone(),
        pragmas: unit.pragmas.clone(),
        relevant_state_vars,
        relevant_events,
        dependency_functions,
        assembled_text,
        metadata,
    })
}

fn join_texts<'a>(texts: impl Iterator<Item = &'a str>) -> String {
    texts.map(str::trim).collect::<Vec<_>>().join("\n")
}

/// One slice per function; with `filter_annotated`, only SWC-tagged ones.
pub fn build_corpus(units: &[SourceUnit], bound: DepthBound, filter_annotated: bool) -> Vec<ContextSlice> {
    let mut out = Vec::new();
    for unit in units {
        let graph = build_call_graph(unit);
        for (i, f) in unit.functions.iter().enumerate() {
            if filter_annotated && f.swc_tags.is_empty() {
                continue;
            }
            // Every function of the unit is a graph node, so this cannot fail.
            if let Ok(slice) = assemble_with_graph(unit, &graph, i, bound) {
                out.push(slice);
            }
        }
    }
    out
}

/// Serialize slices as JSON Lines.
pub fn corpus_to_jsonl(slices: &[ContextSlice]) -> String {
    let mut out = String::new();
    for s in slices {
        out.push_str(&serde_json::to_string(s).expect("slice serializes"));
        out.push('\n');
    }
    out
}

pub fn corpus_from_jsonl(text: &str) -> Result<Vec<ContextSlice>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
