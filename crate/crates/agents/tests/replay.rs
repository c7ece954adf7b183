use topopt_agents::events::{read_events, Fanout, NdjsonSink, SharedLog};
use topopt_agents::faults::{Fault, FaultPlan};
use topopt_agents::memory::SessionMemory;
use topopt_agents::personas::PersonaSet;
use topopt_agents::pipeline::{run_pipeline, PipelineConfig, PipelineOutcome};
use topopt_agents::workspace::{Workspace, EVENTS_FILE};
use topopt_core::problem::{builtin_benchmark, Benchmark};

fn small_query() -> String {
    let mut spec = builtin_benchmark(Benchmark::Cantilever);
    spec.geometry.nx = 48;
    spec.geometry.ny = 16;
    spec.regularization.r_min = 1.5 * spec.geometry.element_size();
    format!("Solve this problem: {}", spec.to_json())
}

fn run(faults: Vec<Fault>) -> (PipelineOutcome, SessionMemory, SharedLog, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::create(dir.path()).unwrap();
    let log = SharedLog::default();
    let file = NdjsonSink::create(&ws.path(EVENTS_FILE)).unwrap();
    let sink = Box::new(Fanout(vec![Box::new(file), Box::new(log.clone())]));
    let config = PipelineConfig { faults: FaultPlan { faults, ..Default::default() }, ..Default::default() };
    let (outcome, memory) = run_pipeline(&small_query(), config, PersonaSet::deterministic(), ws, sink).unwrap();
    (outcome, memory, log, dir)
}

#[test]
fn event_file_rebuilds_memory() {
    let (outcome, memory, log, dir) = run(vec![Fault::SolverFailure]);
    assert!(outcome.is_accepted(), "{outcome:?}");
    assert_eq!(memory.counters.reviewer_retries, 2);
    let events = read_events(&dir.path().join(EVENTS_FILE)).unwrap();
    assert_eq!(events, *log.0.lock().unwrap());
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
    assert_eq!(SessionMemory::replay(&events).unwrap(), memory);
    assert_eq!(SessionMemory::replay(&events).unwrap().to_json(), memory.to_json());
}

#[test]
fn every_prefix_replays() {
    let (_, _, log, _dir) = run(vec![]);
    let events = log.0.lock().unwrap().clone();
    for n in 0..=events.len() {
        assert!(SessionMemory::replay(&events[..n]).is_ok(), "prefix {n}");
    }
    let mut shuffled = events.clone();
    shuffled.swap(0, 1);
    assert!(SessionMemory::replay(&shuffled).is_err());
}

#[test]
fn workspace_holds_versioned_artifacts() {
    let (_, memory, _, dir) = run(vec![Fault::SolverFailure]);
    let ws = Workspace::create(dir.path()).unwrap();
    for v in 1..=memory.spec_versions.len() {
        assert!(ws.has_content(&Workspace::spec_name(v)));
    }
    assert!(ws.has_content(&Workspace::plan_name(1)));
    for run in 1..=memory.artifacts.len() {
        assert!(ws.has_content(&Workspace::log_name(run)));
    }
    let last = memory.artifacts.len();
    assert!(ws.has_content(&Workspace::density_name(last)));
    assert!(ws.has_content(&Workspace::history_name(last)));
}
