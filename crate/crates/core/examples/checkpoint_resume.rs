//! Runs the flat-gap preset keeping its periodic checkpoints, resumes from
//! one of them and compares the resumed series with the tail of the
//! uninterrupted one.

use std::fs;

use ymlab::io::presets::preset;
use ymlab::io::{cmd_resume, run_config, RunOptions};

fn main() -> ymlab::Result<()> {
    let dir = std::env::temp_dir().join("ymlab-checkpoint-example");
    let mut cfg = preset("flat-gap")?;
    cfg.flow.t_end = 0.2;
    cfg.output.checkpoint_every = 10;
    cfg.output.keep_checkpoints = true;
    let full = RunOptions {
        out_dir: dir.join("full"),
        ..Default::default()
    };
    let s = run_config(cfg, &full)?;
    println!("full run: {} rows, t = {:.3}", s.rows, s.t_final);

    let resumed = RunOptions {
        out_dir: dir.join("resumed"),
        ..Default::default()
    };
    let r = cmd_resume(&full.out_dir.join("checkpoint.bin.10"), &resumed)?;
    println!("resumed at row 10: {} rows, t = {:.3}", r.rows, r.t_final);

    let a = fs::read_to_string(full.out_dir.join("series.csv"))?;
    let b = fs::read_to_string(resumed.out_dir.join("series.csv"))?;
    let tail: Vec<&str> = b.lines().skip(1).collect();
    let same = a.lines().skip(11).eq(tail.iter().copied());
    println!("{} resumed rows, identical to the full run: {same}", tail.len());
    Ok(())
}
