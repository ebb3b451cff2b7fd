//! A ring-of-targets trial driven by a scripted operator that jumps to each
//! target and clicks, printing the task events.

use teleoscale::task::ClickOutcome;
use teleoscale::{CommandSample, TrialConfig, TrialRunner};

fn main() {
    let config = TrialConfig {
        scale: 1.0,
        delay_s: 0.1,
        target_count: 5,
        ..TrialConfig::default()
    };
    let mut runner = TrialRunner::new(config).expect("valid config");
    let targets = runner.state().targets().to_vec();
    println!("ID = {:.3} bits, {} targets", config.index_of_difficulty(), targets.len());
    for (i, t) in targets.iter().enumerate() {
        println!("  target {i}: ({:.3}, {:.3})", t.center.x, t.center.y);
    }

    let home = runner.pipeline().follower();
    let mut tick = 0;
    runner.step(&CommandSample::new(tick, home)).unwrap();
    'outer: for target in &targets {
        // hold on the target until the delayed follower arrives, then click
        for k in 0..40u64 {
            tick += 1;
            let out = runner.step(&CommandSample::new(tick, target.center).with_click(k == 39)).unwrap();
            match out.click {
                Some(ClickOutcome::Completed) => {
                    println!("tick {tick}: completed");
                    break 'outer;
                }
                Some(event) => println!("tick {tick}: {event:?}"),
                None => {}
            }
        }
    }
    let log = runner.finish();
    println!("{} samples, {} clicks, timed span {:.2} s", log.samples.len(), log.clicks.len(), log.timed_span_s().unwrap());
}
