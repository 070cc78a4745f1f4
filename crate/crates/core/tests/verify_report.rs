//! Risk scoring properties and end-to-end verification into schema-valid
//! reports.

use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::Value;
use solaudit_core::embedding::{Embedder, LocalHashEmbedder};
use solaudit_core::kb::{KnowledgeEntry, VectorStore};
use solaudit_core::llm::ScriptedLlm;
use solaudit_core::report::{build_contract_report, emit_json, parse_json, ContractMeta, REPORT_SCHEMA};
use solaudit_core::slicer::{build_corpus, DepthBound};
use solaudit_core::source::parse_and_tag;
use solaudit_core::verifier::{risk_score, LayerId, SeverityTable, Verifier, VerifierConfig};

fn layers(s: [f64; 3]) -> BTreeMap<LayerId, f64> {
    LayerId::ALL.into_iter().zip(s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn risk_is_mean_and_symmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
        let r = risk_score(&layers([a, b, c])).unwrap();
        prop_assert!((r - (a + b + c) / 3.0).abs() <= 1e-12);
        for perm in [[b, a, c], [c, b, a], [a, c, b], [b, c, a], [c, a, b]] {
            prop_assert!((risk_score(&layers(perm)).unwrap() - r).abs() <= 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

const WALLET: &str = "pragma solidity ^0.4.24;
contract Wallet {
    address owner;
    mapping(address => uint) balances;
    event Paid(address to, uint amount);

    modifier onlyOwner() {
        require(msg.sender == owner);
        _;
    }

    constructor() public {
        owner = msg.sender;
    }

    function pay(address to, uint amount) public onlyOwner {
        // SWC-107: L17-19
        to.call.value(amount)();
        balances[to] -= amount;
        emit Paid(to, amount);
    }

    function forward(address callee, bytes _data) public {
        require(callee.delegatecall(_data));
    }
}
";

const SCRIPT: &str = r#"{
  "rules": [
    {"contains": "delegatecall", "response": [
      {"swc_id": "SWC-112", "title": "Delegatecall to caller-supplied address", "reason": "callee is arbitrary", "location": "L24"}
    ]},
    {"layer": "DesignPattern", "function": "pay", "response":
      "Reasoning first.\n[{\"swc_id\": \"SWC-107\", \"title\": \"State update after external call\", \"reason\": \"balances written after call\", \"location\": \"L18-19\", \"suggestions\": \"Move the balance update before the call.\"}]"},
    {"layer": "Architecture", "function": "pay", "fail": "timeout"}
  ]
}"#;

fn run(parallelism: usize) -> (String, Vec<solaudit_core::verifier::FunctionAudit>) {
    let (units, _) = parse_and_tag(WALLET, "Wallet.sol").unwrap();
    let unit = &units[0];
    let embedder = LocalHashEmbedder::new(256);
    let mut kb = VectorStore::new(256);
    for slice in build_corpus(&units, DepthBound::default(), true) {
        kb.insert(KnowledgeEntry::from_slice(&slice, embedder.embed(&slice.assembled_text).unwrap())).unwrap();
    }
    let slices = build_corpus(&units, DepthBound::default(), false);
    let llm = ScriptedLlm::from_json(SCRIPT).unwrap();
    let table = SeverityTable::default();
    let verifier = Verifier {
        kb: &kb,
        embedder: &embedder,
        provider: &llm,
        table: &table,
        config: VerifierConfig { parallelism, ..VerifierConfig::default() },
    };
    let audits = verifier.verify_all(&slices);
    let report = build_contract_report(
        &audits,
        &slices,
        &unit.raw_lines,
        ContractMeta {
            contract_name: unit.contract_name.clone(),
            source_file: "Wallet.sol".into(),
            generated_at: "2024-01-01T00:00:00Z".into(),
        },
    );
    (emit_json(&report), audits)
}

#[test]
fn pipeline_report_is_valid_and_stable() {
    let (json, audits) = run(1);
    assert_eq!(audits.len(), 4);
    assert_eq!(json, run(4).0);
    assert!(json.ends_with("}\n"));
    assert!(json.contains("\n  \"items\": ["));

    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let instance: Value = serde_json::from_str(&json).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let report = parse_json(&json).unwrap();
    assert_eq!(emit_json(&report), json);
    let total: usize = report.function_audits.iter().map(|f| f.finding_count).sum();
    assert_eq!(report.items.len(), total);

    let forward = &report.items[0];
    assert_eq!(forward.kind, "SWC-112");
    assert_eq!(forward.code_block.trim(), "require(callee.delegatecall(_data));");
    assert_eq!(forward.risk_score, 0.9);
    assert_eq!(report.max_risk, 0.9);

    let pay = report.items.iter().find(|i| i.kind == "SWC-107").unwrap();
    assert_eq!(pay.code_block, "        to.call.value(amount)();\n        balances[to] -= amount;");
    assert_eq!(pay.suggestions, "Move the balance update before the call.");
    assert!((pay.risk_score - 0.91 / 3.0).abs() < 1e-12);

    let pay_audit = audits.iter().find(|a| a.function_name == "pay").unwrap();
    assert_eq!(pay_audit.errors.len(), 1);
    assert!(pay_audit.retrieved.iter().any(|r| r.entry_id.ends_with("Wallet.pay:L16")));
}

#[test]
fn schema_rejects_missing_fields() {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let mut instance: Value = serde_json::from_str(&run(1).0).unwrap();
    instance["items"][0].as_object_mut().unwrap().remove("Suggestions");
    assert!(!validator.is_valid(&instance));
    let mut instance: Value = serde_json::from_str(&run(1).0).unwrap();
    instance["items"][0]["RiskScore"] = Value::from(1.5);
    assert!(!validator.is_valid(&instance));
}
