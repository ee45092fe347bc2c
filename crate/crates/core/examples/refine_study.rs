//! Reruns the abelian preset at two resolutions of the same box and prints
//! sup|F| at matched times.

use ymlab::io::presets::preset;
use ymlab::io::runner::refine_study;
use ymlab::io::RunOptions;

fn main() -> ymlab::Result<()> {
    let mut cfg = preset("abelian-harmonic")?;
    cfg.flow.t_end = 0.05;
    let opts = RunOptions {
        out_dir: std::env::temp_dir().join("ymlab-refine-example"),
        ..Default::default()
    };
    let r = refine_study(&cfg, &[8, 16], 3, &opts)?;
    for l in &r.levels {
        for s in &l.samples {
            println!("side {:>2}  t {:.4}  sup|F| {:.6}", l.side, s.t, s.sup_f);
        }
    }
    println!("ratios {:?}: {}", r.sup_ratios, r.verdict);
    Ok(())
}
