//! The binary end to end: config precedence, knowledge-base commands,
//! audits, evaluation output and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use solaudit::commands::{resolve_generated_at, RobustnessDoc, ThresholdDoc};
use solaudit::{resolve_config, GlobalArgs};

const PROXY: &str = "contract Proxy {
  address owner;
  constructor() public {
    owner = msg.sender;
  }
  // SWC-112: L7
  function forward(address callee, bytes _data) public {
    require(callee.delegatecall(_data));
  }
}
";

const BANK: &str = "pragma solidity ^0.4.24;
contract Bank {
    mapping(address => uint) credit;
    event Withdrawn(address who, uint amount);

    // SWC-107: L7-10
    function withdraw(uint amount) public {
        require(credit[msg.sender] >= amount);
        // pay out first
        msg.sender.call.value(amount)();
        credit[msg.sender] -= amount;
        emit Withdrawn(msg.sender, amount);
    }

    function deposit() public payable {
        credit[msg.sender] += msg.value;
    }
}
";

const SCRIPT: &str = r#"{"rules": [{"contains": "delegatecall", "response": [
  {"swc_id": "SWC-112", "title": "Delegatecall to arbitrary callee", "reason": "callee is caller-supplied", "location": "L8"}
]}]}"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("src")).unwrap();
        std::fs::write(dir.path().join("src/Proxy.sol"), PROXY).unwrap();
        std::fs::create_dir(dir.path().join("src/nested")).unwrap();
        std::fs::write(dir.path().join("src/nested/Bank.sol"), BANK).unwrap();
        std::fs::write(dir.path().join("src/README.txt"), "not solidity").unwrap();
        std::fs::write(dir.path().join("script.json"), SCRIPT).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> (i32, String, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_solaudit"))
            .current_dir(self.dir.path())
            .env_remove("SOURCE_DATE_EPOCH")
            .args(args)
            .output()
            .unwrap();
        (
            out.status.code().unwrap(),
            String::from_utf8(out.stdout).unwrap(),
            String::from_utf8(out.stderr).unwrap(),
        )
    }

    fn build(&self) {
        let (code, out, err) = self.run(&["--kb", "k.kb", "--dim", "128", "kb", "build", "--src", "src"]);
        assert_eq!(code, 0, "{err}");
        assert!(out.starts_with("files: 2, functions: 4, tagged: 2, inserted: 2"), "{out}");
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn precedence_defaults_file_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    std::fs::write(&cfg_path, "theta = 0.8\ntop_k = 4\nkb_path = \"file.kb\"\nembedding_dim = 32\n").unwrap();

    let defaults = resolve_config(&GlobalArgs::default()).unwrap();
    assert_eq!((defaults.theta, defaults.top_k, defaults.d_max), (0.9, 10, 3));

    let file_only = resolve_config(&GlobalArgs { config: Some(cfg_path.clone()), ..Default::default() }).unwrap();
    assert_eq!((file_only.theta, file_only.top_k, file_only.embedding.dim), (0.8, 4, 32));
    assert_eq!(file_only.kb_path, PathBuf::from("file.kb"));

    let flags = resolve_config(&GlobalArgs {
        config: Some(cfg_path),
        theta: Some(0.75),
        kb: Some("flag.kb".into()),
        ..Default::default()
    })
    .unwrap();
    assert_eq!((flags.theta, flags.top_k), (0.75, 4));
    assert_eq!(flags.kb_path, PathBuf::from("flag.kb"));

    assert!(resolve_config(&GlobalArgs { theta: Some(0.0), ..Default::default() }).is_err());
}

#[test]
fn config_secret_comes_from_environment() {
    let fx = Fixture::new();
    std::fs::write(fx.path("c.toml"), "llm_api_key = \"${SOLAUDIT_CLI_TEST_UNSET_VAR}\"\n").unwrap();
    let (code, _, err) = fx.run(&["--config", "c.toml", "kb", "stats"]);
    assert_eq!(code, 1);
    assert!(err.contains("SOLAUDIT_CLI_TEST_UNSET_VAR"), "{err}");
    assert!(!err.contains("Secret("), "{err}");
}

#[test]
fn kb_build_stats_and_add() {
    let fx = Fixture::new();
    fx.build();
    let (code, out, _) = fx.run(&["--kb", "k.kb", "kb", "stats"]);
    assert_eq!(code, 0);
    let stats: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(stats["entries"], 2);
    assert_eq!(stats["dim"], 128);
    assert_eq!(stats["swc_types"]["SWC-107"], 1);

    let before = std::fs::read(fx.path("k.kb")).unwrap();
    let (code, out, _) = fx.run(&["--kb", "k.kb", "--dim", "128", "kb", "add", "--src", "src"]);
    assert_eq!(code, 0);
    assert!(out.contains("inserted: 0"), "{out}");
    assert_eq!(std::fs::read(fx.path("k.kb")).unwrap(), before);

    std::fs::write(fx.path("more.sol"), BANK.replace("Bank", "Bank2")).unwrap();
    let (code, out, _) = fx.run(&["--kb", "k.kb", "--dim", "128", "kb", "add", "--src", "more.sol"]);
    assert_eq!(code, 0);
    assert!(out.contains("(3 entries)"), "{out}");

    let (code, _, err) = fx.run(&["--kb", "k.kb", "--dim", "64", "kb", "add", "--src", "src"]);
    assert_eq!(code, 1);
    assert!(err.contains("dimension"), "{err}");
}

#[test]
fn kb_build_with_nothing_annotated_fails() {
    let fx = Fixture::new();
    std::fs::create_dir(fx.path("plain")).unwrap();
    std::fs::write(fx.path("plain/A.sol"), "contract A { function f() public {} }").unwrap();
    let (code, _, err) = fx.run(&["--kb", "none.kb", "kb", "build", "--src", "plain"]);
    assert_eq!(code, 1);
    assert!(err.contains("no annotated functions"), "{err}");
    assert!(!fx.path("none.kb").exists());
}

#[test]
fn audit_gate_and_determinism() {
    let fx = Fixture::new();
    fx.build();
    let args = [
        "--kb", "k.kb", "--dim", "128", "--llm-script", "script.json", "audit", "src/Proxy.sol", "--out", "reports",
        "--generated-at", "2024-01-01T00:00:00Z",
    ];
    let (code, out, err) = fx.run(&args);
    assert_eq!(code, 2, "{out}{err}");
    let first = read(&fx.path("reports/Proxy.audit.json"));
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["max_risk"], 0.9);
    assert_eq!(report["items"].as_array().unwrap().len(), 3);
    for r in 0..2 {
        let (code, _, _) = fx.run(&args);
        assert_eq!(code, 2, "run {r}");
        assert_eq!(read(&fx.path("reports/Proxy.audit.json")), first);
    }

    let mut relaxed = args.to_vec();
    relaxed.extend(["--gate", "0.95"]);
    assert_eq!(fx.run(&relaxed).0, 0);

    let (code, _, _) = fx.run(&[
        "--kb", "k.kb", "--dim", "128", "--llm-script", "script.json", "audit", "src/nested/Bank.sol", "--out", "reports",
    ]);
    assert_eq!(code, 0);
    let bank: serde_json::Value = serde_json::from_str(&read(&fx.path("reports/Bank.audit.json"))).unwrap();
    assert_eq!(bank["max_risk"], 0.0);
    assert_eq!(bank["function_audits"].as_array().unwrap().len(), 2);
}

#[test]
fn audit_learns_new_patterns() {
    let fx = Fixture::new();
    fx.build();
    std::fs::write(
        fx.path("Relay.sol"),
        "contract Relay {\n  function hop(address t, bytes d, uint n) public {\n    for (uint i = 0; i < n; i++) {\n      t.delegatecall(d);\n    }\n  }\n}\n",
    )
    .unwrap();
    let base = ["--kb", "k.kb", "--dim", "128", "--llm-script", "script.json", "audit", "Relay.sol", "--out", "r", "--learn"];
    let (code, out, err) = fx.run(&base);
    assert_eq!(code, 2, "{err}");
    assert!(out.contains("learned 1 new pattern"), "{out}");
    let (_, stats, _) = fx.run(&["--kb", "k.kb", "kb", "stats"]);
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["entries"], 3);
    let (_, out, _) = fx.run(&base);
    assert!(!out.contains("learned"), "{out}");
}

#[test]
fn audit_errors_exit_one() {
    let fx = Fixture::new();
    assert_eq!(fx.run(&["--kb", "missing.kb", "audit", "src/Proxy.sol"]).0, 1);
    fx.build();
    assert_eq!(fx.run(&["--kb", "k.kb", "--dim", "128", "audit", "nope.sol"]).0, 1);
    assert_eq!(fx.run(&["--kb", "k.kb", "--dim", "128", "audit", "src/Proxy.sol", "--contract", "Other"]).0, 1);
    assert_eq!(fx.run(&["--kb", "k.kb", "--dim", "128", "audit", "src/Proxy.sol", "--gate", "2"]).0, 1);
    assert_eq!(fx.run(&["--no-such-flag"]).0, 1);
    assert_eq!(fx.run(&["--help"]).0, 0);
    assert_eq!(fx.run(&["--version"]).0, 0);
}

#[test]
fn eval_outputs() {
    let fx = Fixture::new();
    fx.build();
    std::fs::write(fx.path("specs.json"), r#"[{"kind": "CommentAdd", "seed": 5}, {"kind": "DeadCode", "dead_blocks": 1}]"#)
        .unwrap();
    let args = [
        "--kb", "k.kb", "--dim", "128", "eval", "robustness", "--src", "src", "--mutations", "specs.json", "--seed", "3",
        "--repeat", "2",
    ];
    let (code, out, err) = fx.run(&args);
    assert_eq!(code, 0, "{err}");
    let doc: RobustnessDoc = serde_json::from_str(&out).unwrap();
    assert_eq!((doc.k, doc.samples, doc.runs.len()), (10, 2, 2));
    assert_eq!(doc.runs[1].seed, 4);
    assert_eq!(doc.runs[0].rows.len(), 2);
    assert!(out.find("\"Mutation Type\"").unwrap() < out.find("\"Recall@1 (%)\"").unwrap());
    assert_eq!(fx.run(&args).1, out);

    let (code, _, _) = fx.run(&[
        "--kb", "k.kb", "--dim", "128", "eval", "threshold", "--src", "src", "--thetas", "0.1,0.5,0.9", "--mutation",
        "comment-add", "--out", "t.json",
    ]);
    assert_eq!(code, 0);
    let doc: ThresholdDoc = serde_json::from_str(&read(&fx.path("t.json"))).unwrap();
    assert_eq!(doc.rows.len(), 3);
    for w in doc.rows.windows(2) {
        assert!(w[1].retention_rate <= w[0].retention_rate);
    }

    let (code, _, _) =
        fx.run(&["--kb", "k.kb", "--dim", "128", "eval", "threshold", "--src", "src", "--thetas", "0.9,0.5"]);
    assert_eq!(code, 1);
    assert_eq!(fx.run(&["--kb", "k.kb", "eval", "threshold", "--src", "src", "--mutation", "shuffle"]).0, 1);
}

#[test]
fn generated_at_resolution() {
    assert_eq!(resolve_generated_at(Some("x"), Some("0")).unwrap(), "x");
    assert_eq!(resolve_generated_at(None, Some("86400")).unwrap(), "1970-01-02T00:00:00Z");
    assert!(resolve_generated_at(None, Some("soon")).is_err());
    assert!(resolve_generated_at(None, None).unwrap().ends_with('Z'));
}

#[test]
fn kb_build_from_corpus_matches_sources() {
    use solaudit_core::slicer::{build_corpus, corpus_to_jsonl, DepthBound};
    use solaudit_core::source::parse_and_tag;

    let fx = Fixture::new();
    fx.build();
    let mut slices = Vec::new();
    for (name, text) in [("Proxy.sol", PROXY), ("nested/Bank.sol", BANK)] {
        let (units, _) = parse_and_tag(text, name).unwrap();
        slices.extend(build_corpus(&units, DepthBound::default(), false));
    }
    std::fs::write(fx.path("corpus.jsonl"), corpus_to_jsonl(&slices)).unwrap();
    let (code, out, err) = fx.run(&["--kb", "c.kb", "--dim", "128", "kb", "build", "--corpus", "corpus.jsonl"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("files: 2, functions: 4, tagged: 2, inserted: 2"), "{out}");
    assert_eq!(std::fs::read(fx.path("c.kb")).unwrap(), std::fs::read(fx.path("k.kb")).unwrap());

    assert_eq!(fx.run(&["--kb", "c.kb", "kb", "build"]).0, 1);
    assert_eq!(fx.run(&["--kb", "c.kb", "kb", "build", "--src", "src", "--corpus", "corpus.jsonl"]).0, 1);
}
