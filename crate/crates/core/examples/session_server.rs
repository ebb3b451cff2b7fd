//! Starts the session server, then plays one trial over the wire with a
//! simulated operator supplying the leader stream.

use std::sync::Arc;

use teleoscale::metrics::MetricNormalization;
use teleoscale::session::server::{SessionServer, WireClient};
use teleoscale::session::wire::{ClientMessage, ServerMessage};
use teleoscale::session::{SessionManager, SessionPlan};
use teleoscale::synth::{run_trial, OperatorParams};
use teleoscale::TrialConfig;

fn main() -> std::io::Result<()> {
    let root = tempfile::tempdir()?;
    let manager = Arc::new(SessionManager::new(root.path(), 0.5, MetricNormalization::fixed(6.0, 0.5)));
    let (addr, _server) = SessionServer::bind("127.0.0.1:0", manager)?.spawn()?;
    println!("server on {addr}");

    let mut client = WireClient::connect(addr)?;
    println!("<- {:?}", client.hello("example")?);
    let plan = SessionPlan::grid("demo", &[0.4, 1.0], &[0.0, 0.25], 11, TrialConfig::default());
    client.send(&ClientMessage::Configure {
        session_id: None,
        plan: Some(plan),
    })?;
    println!("<- {:?}", client.recv()?);
    let ServerMessage::TrialStart(start) = client.recv()? else {
        panic!("expected trial_start");
    };
    println!(
        "trial {} at scale {} delay {}, {} left after it",
        start.trial_index, start.config.scale, start.config.delay_s, start.remaining
    );

    // the simulated operator's leader stream, sent tick by tick
    let log = run_trial(&OperatorParams::default(), &start.config).expect("trial runs");
    let mut events = 0;
    for cmd in log.commands() {
        client.send(&ClientMessage::tick(&cmd))?;
        if let ServerMessage::Tick { events: e, .. } = client.recv()? {
            events += e.len();
        }
    }
    println!("{} ticks sent, {events} task events", log.samples.len());
    if let ServerMessage::TrialComplete { metrics: Some(m), .. } = client.recv()? {
        println!("TP {:.3}, ΔD {:.4}, OSD {:.4}, WP {:.4}", m.throughput, m.target_deviation, m.overshoot, m.weighted_performance);
    }
    if let ServerMessage::TrialStart(next) = client.recv()? {
        println!("next: trial {} of {}", next.trial_index, next.trial_index + next.remaining + 1);
    }
    // leaving mid-trial voids the started trial and requeues its cell
    client.send(&ClientMessage::Bye)?;
    println!("<- {:?}", client.recv()?);
    Ok(())
}
