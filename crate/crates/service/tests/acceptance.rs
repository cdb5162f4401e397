//! Service contract check. Prints one line per criterion, like the core
//! acceptance run.

mod common;

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Duration;

use common::{file_lines, Transcript};
use preictal_core::decision::DecisionEvent;
use preictal_service::ExportBundle;
use serde_json::{json, Value};

struct Check {
    failures: Vec<String>,
}

impl Check {
    fn that(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }
}

fn events(t: &Transcript) -> Vec<DecisionEvent> {
    t.lines.iter().map(|l| DecisionEvent::from_log_line(l).unwrap()).collect()
}

async fn service_contract() -> (bool, String) {
    let fx = common::start().await;
    let mut c = Check { failures: Vec::new() };

    // 75 windows of 4 s at 40x: about 100 ms per window.
    let id = fx.create_ok(fx.replay_body(0, json!({ "speed": { "factor": 40.0 } }), true)).await;
    let mut a = fx.subscribe(&id, 0).await;
    let mut b = fx.subscribe(&id, 0).await;
    let (ha, hb) = (a.hello().await, b.hello().await);
    let old_version = ha["config"]["version"].as_u64().unwrap();
    c.that(ha["next_seq"] == 0 && ha == hb, "hello frames differ or start past 0");
    let (ta, tb) = (tokio::spawn(a.drain(ha)), tokio::spawn(b.drain(hb)));

    fx.set_state(&id, "running").await;
    // Change configuration right after the first event so both sides of the
    // boundary carry events.
    for _ in 0..1000 {
        if fx.status(&id).await["events"].as_u64().unwrap() > 0 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let r = fx
        .http
        .put(format!("{}/sessions/{id}/config", fx.base))
        .json(&json!({ "tp": 0.12, "duration_required": 3 }))
        .send()
        .await
        .unwrap();
    c.that(r.status() == 200, format!("config update returned {}", r.status()));
    let ack: Value = r.json().await.unwrap();
    let k = ack["acked_at_window"].as_u64().unwrap_or(0);
    let new_version = ack["applied_version"].as_u64().unwrap();
    c.that(new_version == old_version + 1, "version did not advance by one");
    c.that(ack["effective_from_window"] == k + 1, "effective window is not ack window + 1");

    let (ta, tb) = (ta.await.unwrap(), tb.await.unwrap());
    let status = fx.wait_ended(&id).await;
    let windows = status["windows_processed"].as_u64().unwrap();
    c.that(k > 0 && k + 1 < windows, format!("ack landed at window {k} of {windows}, not mid-stream"));

    let on_disk = file_lines(&fx.log_path(&id));
    c.that(!ta.lines.is_empty(), "no events were published");
    c.that(ta.lines == tb.lines, "subscribers saw different streams");
    c.that(ta.lines == on_disk, "stream differs from the event log file");
    for t in [&ta, &tb] {
        let end = t.end.as_ref();
        c.that(end.is_some_and(|e| e["next_seq"] == t.lines.len()), "missing or wrong end marker");
    }
    let evs = events(&ta);
    let mut seen = HashSet::new();
    c.that(evs.iter().all(|e| seen.insert((e.window_id, e.kind))), "duplicate event");
    c.that(evs.windows(2).all(|p| p[0].window_id < p[1].window_id), "events out of window order");
    let (before, after): (Vec<_>, Vec<_>) = evs.iter().partition(|e| e.window_id <= k);
    c.that(!before.is_empty() && !after.is_empty(), "boundary has events on one side only");
    c.that(before.iter().all(|e| e.config_version == old_version), "event at or before ack under new config");
    c.that(after.iter().all(|e| e.config_version == new_version), "event after ack under old config");
    let history = status["config_history"].as_array().unwrap();
    c.that(
        history.last() == Some(&json!({ "version": new_version, "from_window": k + 1 })),
        format!("config history {history:?}"),
    );

    let mut late = fx.subscribe(&id, 0).await;
    let h = late.hello().await;
    c.that(late.drain(h).await.lines == on_disk, "late subscriber missed events");
    let skip = on_disk.len().min(2);
    let mut partial = fx.subscribe(&id, skip).await;
    let h = partial.hello().await;
    c.that(partial.drain(h).await.lines == on_disk[skip..], "from_seq resume is wrong");

    let bundle = ExportBundle::from_bytes(&fx.export(&id).await).unwrap();
    c.that(bundle.events == evs, "export events differ from the stream");

    let detail = format!(
        "{} events, 2 live + 2 late subscribers, ack at window {k} ({} before / {} after)",
        evs.len(),
        before.len(),
        after.len()
    );
    if c.failures.is_empty() {
        (true, detail)
    } else {
        (false, c.failures.join("; "))
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (ok, detail) = rt.block_on(service_contract());
    println!("criterion 9 service contract: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
