//! Runs a small scenario from JSON text and prints the report summary.
//! Output goes to a directory under the system temp dir.

use pflow::run::run;
use pflow::scenario::parse_scenario;

const SCENARIO: &str = r#"{
  "name": "saddle",
  "system": {
    "a": [[1, 0], [0, -1]],
    "b": [[1], [1]],
    "u": {"type": "box", "lower": [-1], "upper": [1]}
  },
  "control": {"type": "periodic", "period": 4, "breakpoints": [2], "values": [[1], [-1]]},
  "analyses": [
    {"kind": "decompose"},
    {"kind": "simulate", "x0": [0.5, 0.5], "t_end": 8},
    {"kind": "sphere-sim", "t_end": 30},
    {"kind": "portrait", "trajectories": 8}
  ]
}"#;

fn main() -> pflow::Result<()> {
    let sc = parse_scenario(SCENARIO)?;
    let out = std::env::temp_dir().join("pflow-run-scenario");
    let rep = run(&sc, &out)?;
    for a in &rep.analyses {
        println!("{:<10} passed={} files={:?}", a.kind, a.passed(), a.files);
    }
    println!("wrote {}", out.display());
    Ok(())
}
