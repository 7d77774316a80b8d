//! Acceptance report: one PASS or FAIL line per criterion.
//!
//! `SSMKIT_ACCEPTANCE=1,2,11` restricts the run to the listed criteria. Failed criteria are
//! reported on their lines and in the summary; the process only exits nonzero for them when
//! `SSMKIT_ACCEPTANCE_STRICT=1`, so a workspace test run still reaches the other suites.

#[path = "acceptance/common.rs"]
mod common;
#[path = "acceptance/determinism.rs"]
mod determinism;
#[path = "acceptance/groups.rs"]
mod groups;
#[path = "acceptance/pipeline.rs"]
mod pipeline;
#[path = "acceptance/suites.rs"]
mod suites;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use common::Check;

struct Report {
    selected: Option<Vec<usize>>,
    failed: Vec<usize>,
}

impl Report {
    fn wants(&self, id: usize) -> bool {
        self.selected.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn run(&mut self, id: usize, name: &str, check: impl FnOnce() -> Check) {
        if !self.wants(id) {
            return;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("ACCEPTANCE {id}: PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                self.failed.push(id);
                println!("ACCEPTANCE {id}: FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
}

fn main() {
    let selected = std::env::var("SSMKIT_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect::<Vec<usize>>());
    let mut report = Report { selected, failed: Vec::new() };

    report.run(1, "flow correctness", suites::flow_suite);
    report.run(2, "surface projection", suites::projection_suite);
    report.run(3, "metric oracles", suites::metric_suite);
    report.run(4, "objective gradients", suites::gradient_suite);

    // criteria 5, 6, 7 and 10 share one default training run
    let trained = OnceLock::new();
    let train = || {
        trained
            .get_or_init(|| catch_unwind(pipeline::train_default).unwrap_or_else(|_| Err("training panicked".into())))
    };
    let with_model = |f: fn(&pipeline::Trained) -> Check| move || train().as_ref().map_err(|e| e.clone()).and_then(f);
    report.run(5, "end-to-end training", with_model(pipeline::end_to_end));
    report.run(6, "correspondence quality", with_model(pipeline::correspondence_quality));
    report.run(7, "uncertainty calibration", with_model(pipeline::uncertainty_calibration));

    let bumped = OnceLock::new();
    let bump =
        || bumped.get_or_init(|| catch_unwind(groups::bump_run).unwrap_or_else(|_| Err("bump run panicked".into())));
    let with_bump = |f: fn(&groups::BumpRun) -> Check| move || bump().as_ref().map_err(|e| e.clone()).and_then(f);
    report.run(8, "group differences", with_bump(groups::group_differences));
    report.run(9, "LDA contract", with_bump(groups::lda_contract));

    report.run(10, "classification", with_model(pipeline::classification));
    report.run(11, "CLI determinism", determinism::cli_determinism);

    // supplementary probes on the shared model, reported without affecting the summary
    if report.wants(5) {
        let probes: [(&str, fn(&pipeline::Trained) -> Check); 3] = [
            ("generalization", pipeline::generalization_probe),
            ("posterior direction", pipeline::posterior_direction_probe),
            ("mode alignment", pipeline::mode_alignment_probe),
        ];
        for (name, f) in probes {
            let outcome = catch_unwind(AssertUnwindSafe(|| train().as_ref().map_err(|e| e.clone()).and_then(f)));
            match outcome.unwrap_or_else(|_| Err("panicked".into())) {
                Ok(detail) => println!("PROBE {name}: PASS {detail}"),
                Err(detail) => println!("PROBE {name}: FAIL {detail}"),
            }
        }
    }

    if report.failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {:?}", report.failed);
        if std::env::var("SSMKIT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
