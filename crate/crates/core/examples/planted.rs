//! k-means MoF of raw and learned features on ten planted videos.
//!
//!     cargo run --release --example planted -- "learning_rate = 0.2" "h = 0.5"
//!
//! Each argument is a `key = value` config line applied on top of the
//! defaults.

use tsa::cluster::{segment, Method};
use tsa::config::RunConfig;
use tsa::evaluate::score;
use tsa::model::train;
use tsa::synth::{generate, SynthSpec};

fn main() -> tsa::Result<()> {
    let mut cfg = RunConfig::default();
    for line in std::env::args().skip(1) {
        cfg.apply_str(&line)?;
    }
    cfg.validate()?;
    let (mut tsa_sum, mut raw_sum, mut not_worse) = (0.0, 0.0, 0);
    println!("seed frames epochs  raw_mof  tsa_mof");
    for seed in 0..10 {
        let (x, y) = generate(&SynthSpec { seed, ..SynthSpec::default() })?;
        let out = train(&x, &RunConfig { seed, ..cfg.clone() })?;
        let raw = score(segment(&x, Method::KMeans, 4, seed)?.labels(), &y.labels)?.mof;
        let tsa = score(segment(&out.z, Method::KMeans, 4, seed)?.labels(), &y.labels)?.mof;
        println!("{seed:>4} {:>6} {:>6} {raw:>8.3} {tsa:>8.3}", x.rows(), out.state.epoch);
        raw_sum += raw;
        tsa_sum += tsa;
        not_worse += usize::from(tsa >= raw);
    }
    println!("mean raw {:.3}, mean tsa {:.3}, tsa >= raw in {not_worse}/10", raw_sum / 10.0, tsa_sum / 10.0);
    Ok(())
}
