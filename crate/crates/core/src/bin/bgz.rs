// SPDX-License-Identifier: Apache-2.0

use clap::Parser;

use billboard_gaze::cli::{exit_status, run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let res = run(cli);
    if let Err(e) = &res {
        eprintln!("error: {e}");
    }
    std::process::exit(exit_status(&res));
}
