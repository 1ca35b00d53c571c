//! Run the whole experiment at toy scale in a temporary directory and print
//! the report. Pass a directory as the first argument to keep the artifacts.

use nast::pipeline::{run_all, Arm, RunConfig};

fn main() -> nast::Result<()> {
    let keep = std::env::args().nth(1);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut cfg = RunConfig {
        out_root: keep.map_or_else(|| tmp.path().to_path_buf(), Into::into),
        seeds: vec![0, 1],
        ..RunConfig::default()
    };
    cfg.data.n_studies = 2000;
    cfg.pretrain.steps = 100;
    cfg.train.steps = 60;
    cfg.trace.n_probes = 60;

    let report = run_all(&cfg, &[Arm::Nast, Arm::Uniform], &cfg.seeds.clone())?;
    println!("{}", report.to_markdown());
    println!("artifacts in {}", cfg.run_dir().root().display());
    Ok(())
}
