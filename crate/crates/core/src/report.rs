//! JSON audit reports.
//!
//! Each finding becomes a [`ReportItem`] whose keys are capitalized exactly as
//! consumers expect (`ID`, `Title`, `Type`, `CodeBlock`, `Location`,
//! `RiskScore`, `Reason`, `Suggestions`). Items carry their function's risk
//! score. A [`ContractReport`] wraps the items of every function with
//! provenance and the contract-wide maximum risk. The shape is pinned by
//! [`REPORT_SCHEMA`].

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::slicer::ContextSlice;
use crate::verifier::{FunctionAudit, LayerFinding, LayerId};

/// JSON schema (draft 2020-12) of [`ContractReport`].
pub const REPORT_SCHEMA: &str = include_str!("../schema/audit-report.schema.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportItem {
    #[serde(rename = "ID")]
    pub id: String,
    #[serde(rename = "Title")]
    pub title: String,
    #[serde(rename = "Type")]
    pub kind: String,
    #[serde(rename = "CodeBlock")]
    pub code_block: String,
    #[serde(rename = "Location")]
    pub location: Location,
    #[serde(rename = "RiskScore")]
    pub risk_score: f64,
    #[serde(rename = "Reason")]
    pub reason: String,
    #[serde(rename = "Suggestions")]
    pub suggestions: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSummary {
    pub function_name: String,
    pub start_line: usize,
    pub end_line: usize,
    pub layer_severity: BTreeMap<LayerId, f64>,
    pub risk_score: f64,
    pub finding_count: usize,
    /// Entry ids of the exemplars shown to the verifier, in rank order.
    pub retrieved: Vec<String>,
    pub errors: Vec<String>,
}

impl From<&FunctionAudit> for FunctionSummary {
    fn from(a: &FunctionAudit) -> Self {
        Self {
            function_name: a.function_name.clone(),
            start_line: a.start_line,
            end_line: a.end_line,
            layer_severity: a.layer_severity.clone(),
            risk_score: a.risk_score,
            finding_count: a.findings.len(),
            retrieved: a.retrieved.iter().map(|r| r.entry_id.clone()).collect(),
            errors: a.errors.iter().map(|e| format!("{}: {}", e.stage, e.message)).collect(),
        }
    }
}

/// Items and summary of one audited function.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionReport {
    pub summary: FunctionSummary,
    pub items: Vec<ReportItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub contract_name: String,
    pub source_file: String,
    pub generated_at: String,
    pub items: Vec<ReportItem>,
    pub function_audits: Vec<FunctionSummary>,
    pub max_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractMeta {
    pub contract_name: String,
    pub source_file: String,
    pub generated_at: String,
}

const REMEDIATIONS: &[(&str, &str)] = &[
    ("SWC-100", "Declare an explicit visibility for every function."),
    ("SWC-101", "Use checked arithmetic (Solidity >=0.8) or a vetted safe-math library."),
    ("SWC-102", "Compile with a recent, supported compiler release."),
    ("SWC-103", "Pin the pragma to the exact compiler version used for testing."),
    ("SWC-104", "Check the return value of low-level calls and handle failure."),
    ("SWC-105", "Restrict withdrawals to authorized accounts."),
    ("SWC-106", "Guard selfdestruct behind strict access control or remove it."),
    ("SWC-107", "Apply checks-effects-interactions and add a reentrancy guard."),
    ("SWC-108", "Declare an explicit visibility for state variables."),
    ("SWC-109", "Initialize storage pointers explicitly."),
    ("SWC-110", "Use require for input validation; reserve assert for invariants."),
    ("SWC-111", "Replace deprecated builtins with their current equivalents."),
    ("SWC-112", "Only delegatecall trusted, fixed implementation addresses."),
    ("SWC-113", "Isolate external calls so one failure cannot block others (pull payments)."),
    ("SWC-114", "Protect order-sensitive operations with commit-reveal or slippage bounds."),
    ("SWC-115", "Authorize with msg.sender instead of tx.origin."),
    ("SWC-116", "Do not rely on block timestamps for critical logic."),
    ("SWC-117", "Bind signatures to a nonce and reject malleable forms."),
    ("SWC-118", "Use the constructor keyword for constructors."),
    ("SWC-119", "Rename variables that shadow state or inherited declarations."),
    ("SWC-120", "Use a verifiable randomness source instead of chain attributes."),
    ("SWC-121", "Include a nonce and the contract address in signed messages."),
    ("SWC-122", "Verify signatures with ecrecover against the expected signer."),
    ("SWC-123", "Validate preconditions on caller-supplied input."),
    ("SWC-124", "Prevent callers from writing to arbitrary storage slots."),
    ("SWC-125", "Order base contracts from most general to most derived."),
    ("SWC-126", "Check remaining gas before forwarding calls in relayers."),
    ("SWC-127", "Avoid function-type variables that callers can overwrite."),
    ("SWC-128", "Bound loops over caller-growable collections."),
    ("SWC-129", "Fix the typo in the compound assignment operator."),
    ("SWC-130", "Strip right-to-left override characters from source text."),
    ("SWC-131", "Remove unused variables."),
    ("SWC-132", "Do not assume an exact ether balance."),
    ("SWC-133", "Use abi.encode instead of abi.encodePacked with variable-length arguments."),
    ("SWC-134", "Do not hardcode gas amounts for calls."),
    ("SWC-135", "Remove statements without effect."),
    ("SWC-136", "Do not store secrets on chain, even in private variables."),
];

/// Templated remediation for an SWC id.
pub fn remediation(swc_id: &str) -> Option<&'static str> {
    REMEDIATIONS.iter().find(|(id, _)| *id == swc_id).map(|(_, text)| *text)
}

fn suggestion_for(finding: &LayerFinding) -> String {
    if let Some(s) = finding.suggestions.as_deref().filter(|s| !s.trim().is_empty()) {
        return s.to_string();
    }
    if let Some(s) = finding.swc_id.as_deref().and_then(remediation) {
        return s.to_string();
    }
    "Review the flagged code and restructure it to follow established Solidity practice.".to_string()
}

/// One item per finding. `raw_lines` are the lines of the audited file; a
/// finding whose location falls outside the file falls back to the whole
/// function, as does one without a location.
pub fn render_function_report(audit: &FunctionAudit, slice: &ContextSlice, raw_lines: &[String]) -> Vec<ReportItem> {
    let f = &slice.main_function;
    audit
        .findings
        .iter()
        .enumerate()
        .map(|(i, finding)| {
            let located = finding
                .code_location
                .filter(|l| l.start_line >= 1 && l.start_line <= l.end_line && l.end_line <= raw_lines.len());
            let (start_line, end_line, code_block) = match located {
                Some(l) => (l.start_line, l.end_line, raw_lines[l.start_line - 1..l.end_line].join("\n")),
                None => (f.start_line, f.end_line, f.body_text.clone()),
            };
            ReportItem {
                id: format!("{}.{}.{}", slice.metadata.contract_name, f.name, i + 1),
                title: finding.title.clone(),
                kind: finding
                    .swc_id
                    .clone()
                    .or_else(|| finding.category.clone())
                    .unwrap_or_else(|| "Unclassified".to_string()),
                code_block,
                location: Location {
                    file: slice.metadata.source_file.clone(),
                    start_line,
                    end_line,
                },
                risk_score: audit.risk_score,
                reason: finding.reason.clone(),
                suggestions: suggestion_for(finding),
            }
        })
        .collect()
}

fn item_order(a: &ReportItem, b: &ReportItem) -> Ordering {
    b.risk_score
        .total_cmp(&a.risk_score)
        .then_with(|| a.id.cmp(&b.id))
        .then_with(|| a.location.start_line.cmp(&b.location.start_line))
}

pub fn aggregate_reports(function_reports: Vec<FunctionReport>, meta: ContractMeta) -> ContractReport {
    let mut items = Vec::new();
    let mut function_audits = Vec::new();
    for report in function_reports {
        items.extend(report.items);
        function_audits.push(report.summary);
    }
    items.sort_by(item_order);
    let max_risk = items.first().map_or(0.0, |i| i.risk_score);
    ContractReport {
        contract_name: meta.contract_name,
        source_file: meta.source_file,
        generated_at: meta.generated_at,
        items,
        function_audits,
        max_risk,
    }
}

/// Audit and slice pairs for one contract, straight to a report.
pub fn build_contract_report(
    audits: &[FunctionAudit],
    slices: &[ContextSlice],
    raw_lines: &[String],
    meta: ContractMeta,
) -> ContractReport {
    let parts = audits
        .iter()
        .zip(slices)
        .map(|(audit, slice)| FunctionReport {
            summary: FunctionSummary::from(audit),
            items: render_function_report(audit, slice, raw_lines),
        })
        .collect();
    aggregate_reports(parts, meta)
}

/// Two-space indented JSON with a trailing newline.
pub fn emit_json(report: &ContractReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

pub fn parse_json(text: &str) -> Result<ContractReport, serde_json::Error> {
    serde_json::from_str(text)
}
