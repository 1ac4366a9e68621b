//! Writes procedural source scenes for `mmht synth-data`.
//!
//! ```text
//! cargo run --example procedural_sources -- <out_dir> [count] [size] [seed]
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

use mmht::dataset::write_procedural_sources;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(out) = args.first().map(PathBuf::from) else {
        eprintln!("usage: procedural_sources <out_dir> [count] [size] [seed]");
        return ExitCode::from(1);
    };
    let num = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse::<u64>());
    let (Ok(count), Ok(size), Ok(seed)) = (num(1, 20), num(2, 64), num(3, 0)) else {
        eprintln!("count, size and seed must be non-negative integers");
        return ExitCode::from(1);
    };
    match write_procedural_sources(&out, count as usize, size as usize, seed) {
        Ok(paths) => {
            println!("wrote {} scenes to {}", paths.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
