//! Drives the leader/follower pipeline with a scripted stream: a slow circle,
//! a clutched reposition in the middle, then more circling.

use teleoscale::teleop::replay;
use teleoscale::{CommandSample, PipelineConfig, Vec2};

fn main() {
    let config = PipelineConfig::new(100.0, 0.25, 0.4);
    let mut commands = Vec::new();
    for tick in 0..300u64 {
        let t = tick as f64 / 100.0;
        let leader = Vec2::new(0.5 + 0.2 * t.cos(), 0.5 + 0.2 * t.sin());
        let clutched = (120..160).contains(&tick);
        commands.push(CommandSample::new(tick, leader).clutched(clutched));
    }
    let states = replay(&config, &commands).expect("valid stream");

    println!("scale {} delay {} s = {} ticks", config.scale, config.delay_s, config.delay_ticks());
    println!("tick  leader             follower");
    for (c, s) in commands.iter().zip(&states).step_by(25) {
        println!(
            "{:>4}  ({:.3}, {:.3})     ({:.3}, {:.3}){}",
            c.tick,
            c.leader_pos.x,
            c.leader_pos.y,
            s.follower_pos.x,
            s.follower_pos.y,
            if c.clutch_engaged { "  clutch" } else { "" }
        );
    }

    // before the clutch, follower motion is the scaled leader motion one delay later
    let k = config.delay_ticks();
    let lead = commands[100].leader_pos - commands[1].leader_pos;
    let follow = states[100 + k].follower_pos - states[1 + k].follower_pos;
    println!("leader moved {:.4}, follower moved {:.4} (ratio {:.3})", lead.norm(), follow.norm(), follow.norm() / lead.norm());
}
