//! Lexical Solidity parsing: contracts, pragmas, state variables, events and
//! function-like members with exact line spans, plus SWC annotation tagging.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::lexer::{self, is_reserved, Lexed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    Function,
    Constructor,
    Fallback,
    Receive,
    Modifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
    Unspecified,
}

/// A function, constructor, fallback, receive or modifier with a body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionUnit {
    pub name: String,
    pub kind: FunctionKind,
    pub visibility: Visibility,
    pub start_line: usize,
    pub end_line: usize,
    /// Declaration through the closing brace, verbatim.
    pub body_text: String,
    /// Byte offset of the body's opening `{` within `body_text`.
    pub block_offset: usize,
    pub doc_comment: Option<String>,
    pub swc_tags: BTreeSet<String>,
}

impl FunctionUnit {
    /// Text before the opening brace (`function f(uint a) public onlyOwner`).
    pub fn signature(&self) -> &str {
        self.body_text[..self.block_offset].trim_end()
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start_line <= end && start <= self.end_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateVarDecl {
    pub name: String,
    pub declared_type: String,
    pub decl_line: usize,
    pub full_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDecl {
    pub name: String,
    pub decl_line: usize,
    pub full_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwcAnnotation {
    pub swc_id: String,
    pub start_line: usize,
    pub end_line: usize,
    pub comment_line: usize,
}

/// One parsed contract (or library/interface) of a source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub file_name: String,
    pub contract_name: String,
    /// `contract`, `library`, `interface` or `abstract contract`.
    pub contract_kind: String,
    /// Raw text of the `is ...` clause, unresolved.
    pub inherits: Vec<String>,
    pub pragmas: Vec<String>,
    pub state_vars: Vec<StateVarDecl>,
    pub events: Vec<EventDecl>,
    pub functions: Vec<FunctionUnit>,
    pub raw_lines: Vec<String>,
}

impl SourceUnit {
    pub fn function(&self, name: &str) -> Option<&FunctionUnit> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Source lines `start..=end` (1-based, clamped to the file) joined by `\n`.
    pub fn lines(&self, start: usize, end: usize) -> Option<String> {
        if start == 0 || start > end || end > self.raw_lines.len() {
            return None;
        }
        Some(self.raw_lines[start - 1..end].join("\n"))
    }
}

/// Result of [`tag_functions`]: annotations that touched no function are kept
/// aside rather than dropped.
#[derive(Debug, Clone)]
pub struct Tagged {
    pub unit: SourceUnit,
    pub orphaned: Vec<SwcAnnotation>,
}

static CONTRACT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(abstract\s+contract|contract|library|interface)\s+([A-Za-z_$][\w$]*)([^{;]*)\{")
        .unwrap()
});
static PRAGMA_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bpragma\b[^;]*;").unwrap());
static ANNOTATION_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"//\s*(SWC-[0-9]{1,3})\s*:\s*L\s*([0-9]+)(?:\s*-\s*L?\s*([0-9]+))?").unwrap()
});
static SWC_ID_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^SWC-[0-9]{1,3}$").unwrap());

pub fn is_swc_id(s: &str) -> bool {
    SWC_ID_RE.is_match(s)
}

/// Parse the first contract of `source`.
pub fn parse_source(source: &str, file_name: &str) -> Result<SourceUnit, ParseError> {
    parse_all(source, file_name)?
        .into_iter()
        .next()
        .ok_or(ParseError::EmptySource)
}

/// Parse the contract called `contract` in `source`.
pub fn parse_contract(
    source: &str,
    file_name: &str,
    contract: &str,
) -> Result<SourceUnit, ParseError> {
    parse_all(source, file_name)?
        .into_iter()
        .find(|u| u.contract_name == contract)
        .ok_or_else(|| ParseError::UnknownContract(contract.to_string()))
}

/// Parse every contract, library and interface declared in `source`, in
/// source order.
pub fn parse_all(source: &str, file_name: &str) -> Result<Vec<SourceUnit>, ParseError> {
    let lexed = lexer::lex(source);
    check_balance(&lexed)?;
    let raw_lines: Vec<String> = source.lines().map(str::to_string).collect();
    let blank = lexed.blanked.as_str();

    let mut units = Vec::new();
    let mut contract_spans = Vec::new();
    let mut search_from = 0;
    while let Some(caps) = CONTRACT_RE.captures_at(blank, search_from) {
        let whole = caps.get(0).unwrap();
        let open = whole.end() - 1;
        let close = lexer::matching_brace(blank, open).ok_or(ParseError::UnbalancedBraces {
            line: lexed.line_of(open),
        })?;
        let kind = caps[1].split_whitespace().collect::<Vec<_>>().join(" ");
        let inherits = parse_inherits(&caps[3]);
        let mut unit = SourceUnit {
            file_name: file_name.to_string(),
            contract_name: caps[2].to_string(),
            contract_kind: kind,
            inherits,
            pragmas: Vec::new(),
            state_vars: Vec::new(),
            events: Vec::new(),
            functions: Vec::new(),
            raw_lines: raw_lines.clone(),
        };
        parse_members(source, &lexed, open + 1, close, &mut unit);
        units.push(unit);
        contract_spans.push((whole.start(), close));
        search_from = close + 1;
    }
    if units.is_empty() {
        return Err(ParseError::EmptySource);
    }

    let pragmas: Vec<String> = PRAGMA_RE
        .find_iter(blank)
        .filter(|m| !contract_spans.iter().any(|&(s, e)| m.start() > s && m.start() < e))
        .map(|m| source[m.start()..m.end()].to_string())
        .collect();
    for unit in &mut units {
        unit.pragmas = pragmas.clone();
    }
    Ok(units)
}

fn check_balance(lexed: &Lexed) -> Result<(), ParseError> {
    let mut depth = 0i64;
    let mut last_open = 0;
    for (i, b) in lexed.blanked.bytes().enumerate() {
        match b {
            b'{' => {
                depth += 1;
                last_open = i;
            }
            b'}' => {
                depth -= 1;
                if depth < 0 {
                    return Err(ParseError::UnbalancedBraces {
                        line: lexed.line_of(i),
                    });
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(ParseError::UnbalancedBraces {
            line: lexed.line_of(last_open),
        });
    }
    Ok(())
}

fn parse_inherits(clause: &str) -> Vec<String> {
    let clause = clause.trim();
    let Some(rest) = clause.strip_prefix("is") else {
        return Vec::new();
    };
    let mut parts = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in rest.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        parts.push(cur.trim().to_string());
    }
    parts
}

/// Walk the top level of a contract body, splitting it into `;`-terminated
/// items and `{...}` block items.
fn parse_members(source: &str, lexed: &Lexed, body_start: usize, body_end: usize, unit: &mut SourceUnit) {
    let blank = lexed.blanked.as_bytes();
    let mut item_start: Option<usize> = None;
    let mut i = body_start;
    while i < body_end {
        let b = blank[i];
        if item_start.is_none() {
            if b.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            item_start = Some(i);
        }
        let start = item_start.unwrap();
        match b {
            b';' => {
                classify_statement(source, lexed, start, i + 1, unit);
                item_start = None;
            }
            b'{' => {
                let close = lexer::matching_brace(&lexed.blanked, i).unwrap_or(body_end - 1);
                // `mapping(...)` and similar never contain braces, so a brace
                // here always opens a member body (function, struct, enum...).
                classify_block(source, lexed, start, i, close, unit);
                item_start = None;
                i = close + 1;
                continue;
            }
            _ => {}
        }
        i += 1;
    }
}

fn first_word(header: &str) -> &str {
    header
        .split(|c: char| !lexer::is_ident_char(c))
        .find(|w| !w.is_empty())
        .unwrap_or("")
}

fn classify_statement(source: &str, lexed: &Lexed, start: usize, end: usize, unit: &mut SourceUnit) {
    let header = &lexed.blanked[start..end];
    let line = lexed.line_of(start);
    let full_text = source[start..end].to_string();
    match first_word(header) {
        "event" => {
            if let Some(name) = name_after(header, "event") {
                unit.events.push(EventDecl {
                    name,
                    decl_line: line,
                    full_text,
                });
            }
        }
        "function" | "modifier" | "constructor" | "fallback" | "receive" | "using" | "error"
        | "import" | "pragma" | "struct" | "enum" | "type" => {}
        _ => {
            if let Some((name, declared_type)) = state_var_name(header) {
                unit.state_vars.push(StateVarDecl {
                    name,
                    declared_type,
                    decl_line: line,
                    full_text,
                });
            }
        }
    }
}

fn name_after(header: &str, keyword: &str) -> Option<String> {
    let ids = lexer::identifiers(header);
    let pos = ids.iter().position(|id| id.text == keyword)?;
    ids.get(pos + 1)
        .filter(|id| !is_reserved(id.text))
        .map(|id| id.text.to_string())
}

const STATE_VAR_ATTRS: &[&str] = &[
    "public", "private", "internal", "external", "constant", "immutable", "override",
    "transient",
];

/// `(name, type)` of a state variable declaration, in blanked text.
fn state_var_name(header: &str) -> Option<(String, String)> {
    let decl = header.trim_end_matches(';');
    let decl = match decl.find('=') {
        // `=>` in a mapping type is not an initializer.
        Some(_) => split_initializer(decl),
        None => decl,
    };
    let ids = lexer::identifiers(decl);
    let name = ids.iter().rev().find(|id| !STATE_VAR_ATTRS.contains(&id.text))?;
    if is_reserved(name.text) || name.start == 0 && ids.len() == 1 {
        return None;
    }
    let declared_type = decl[..name.start].split_whitespace().collect::<Vec<_>>().join(" ");
    let declared_type = strip_trailing_attrs(&declared_type);
    if declared_type.is_empty() {
        return None;
    }
    Some((name.text.to_string(), declared_type))
}

fn split_initializer(decl: &str) -> &str {
    let bytes = decl.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'=' && bytes.get(i + 1) != Some(&b'>') && (i == 0 || bytes[i - 1] != b'=') {
            return &decl[..i];
        }
    }
    decl
}

fn strip_trailing_attrs(ty: &str) -> String {
    let mut words: Vec<&str> = ty.split(' ').collect();
    while words.last().is_some_and(|w| STATE_VAR_ATTRS.contains(w)) {
        words.pop();
    }
    words.join(" ")
}

fn classify_block(
    source: &str,
    lexed: &Lexed,
    start: usize,
    open: usize,
    close: usize,
    unit: &mut SourceUnit,
) {
    let header = &lexed.blanked[start..open];
    let (kind, name) = match first_word(header) {
        "function" => match name_after(header, "function") {
            Some(n) => (FunctionKind::Function, n),
            None => (FunctionKind::Fallback, "fallback".to_string()),
        },
        "constructor" => (FunctionKind::Constructor, "constructor".to_string()),
        "fallback" => (FunctionKind::Fallback, "fallback".to_string()),
        "receive" => (FunctionKind::Receive, "receive".to_string()),
        "modifier" => match name_after(header, "modifier") {
            Some(n) => (FunctionKind::Modifier, n),
            None => return,
        },
        _ => return,
    };
    let start_line = lexed.line_of(start);
    unit.functions.push(FunctionUnit {
        name,
        kind,
        visibility: visibility_of(header),
        start_line,
        end_line: lexed.line_of(close),
        body_text: source[start..=close].to_string(),
        block_offset: open - start,
        doc_comment: doc_comment_before(source, lexed, start_line),
        swc_tags: BTreeSet::new(),
    });
}

fn visibility_of(header: &str) -> Visibility {
    for id in lexer::identifiers(header) {
        match id.text {
            "public" => return Visibility::Public,
            "external" => return Visibility::External,
            "internal" => return Visibility::Internal,
            "private" => return Visibility::Private,
            _ => {}
        }
    }
    Visibility::Unspecified
}

/// Comment-only lines directly above `line`, stopping at code or a blank line.
fn doc_comment_before(source: &str, lexed: &Lexed, line: usize) -> Option<String> {
    let line_text = |l: usize| -> (&str, &str) {
        let s = lexed.line_starts[l - 1];
        let e = lexed
            .line_starts
            .get(l)
            .map(|&e| e - 1)
            .unwrap_or(source.len());
        (&source[s..e], &lexed.blanked[s..e])
    };
    let mut first = line;
    while first > 1 {
        let (raw, blank) = line_text(first - 1);
        if blank.trim().is_empty() && !raw.trim().is_empty() {
            first -= 1;
        } else {
            break;
        }
    }
    if first == line {
        return None;
    }
    let lines: Vec<&str> = (first..line).map(|l| line_text(l).0.trim_end_matches('\r')).collect();
    Some(lines.join("\n"))
}

/// Every `// SWC-<id>: L<start>(-<end>)?` comment in source order.
pub fn extract_annotations(source: &str) -> Vec<SwcAnnotation> {
    let lexed = lexer::lex(source);
    let mut out = Vec::new();
    for c in lexed.comments.iter().filter(|c| !c.block) {
        let text = &source[c.start..c.end];
        for caps in ANNOTATION_RE.captures_iter(text) {
            let Ok(start) = caps[2].parse::<usize>() else { continue };
            let end = match caps.get(3) {
                Some(m) => match m.as_str().parse::<usize>() {
                    Ok(e) => e,
                    Err(_) => continue,
                },
                None => start,
            };
            if end < start {
                continue;
            }
            out.push(SwcAnnotation {
                swc_id: caps[1].to_string(),
                start_line: start,
                end_line: end,
                comment_line: c.start_line,
            });
        }
    }
    out
}

/// Attach each annotation's SWC id to every function whose line span
/// intersects it.
pub fn tag_functions(mut unit: SourceUnit, annotations: &[SwcAnnotation]) -> Tagged {
    let mut orphaned = Vec::new();
    for ann in annotations {
        let mut hit = false;
        for f in &mut unit.functions {
            if f.overlaps(ann.start_line, ann.end_line) {
                f.swc_tags.insert(ann.swc_id.clone());
                hit = true;
            }
        }
        if !hit {
            orphaned.push(ann.clone());
        }
    }
    Tagged { unit, orphaned }
}

/// Parse every contract in `source` and tag its functions with the file's
/// annotations. Annotations are file-wide, so one landing in contract A is an
/// orphan for contract B; only annotations matching no contract are returned.
pub fn parse_and_tag(source: &str, file_name: &str) -> Result<(Vec<SourceUnit>, Vec<SwcAnnotation>), ParseError> {
    let annotations = extract_annotations(source);
    let units = parse_all(source, file_name)?;
    let mut hit = vec![false; annotations.len()];
    let tagged = units
        .into_iter()
        .map(|u| {
            let t = tag_functions(u, &annotations);
            for (i, a) in annotations.iter().enumerate() {
                if !t.orphaned.contains(a) {
                    hit[i] = true;
                }
            }
            t.unit
        })
        .collect();
    let orphaned = annotations
        .into_iter()
        .zip(hit)
        .filter(|(_, h)| !h)
        .map(|(a, _)| a)
        .collect();
    Ok((tagged, orphaned))
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FunctionKind::Function => "function",
            FunctionKind::Constructor => "constructor",
            FunctionKind::Fallback => "fallback",
            FunctionKind::Receive => "receive",
            FunctionKind::Modifier => "modifier",
        };
        f.write_str(s)
    }
}
