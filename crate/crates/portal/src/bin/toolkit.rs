//! Multi-call toolkit binary: `sciflow-tk <tool> [args]`, or invoked
//! through a link named after the tool.

use std::path::Path;
use std::process::ExitCode;

use sciflow_simtk::cli::{run, TOOLS};

fn main() -> ExitCode {
    let mut args: Vec<String> = std::env::args().collect();
    let argv0 = args.remove(0);
    let called = Path::new(&argv0).file_name().and_then(|n| n.to_str()).unwrap_or("");
    let tool = if TOOLS.contains(&called) {
        called.to_string()
    } else if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        println!("usage: sciflow-tk <tool> [args]\ntools: {}", TOOLS.join(", "));
        return if args.is_empty() { ExitCode::from(2) } else { ExitCode::SUCCESS };
    } else {
        args.remove(0)
    };
    let cwd = std::env::current_dir().unwrap_or_else(|_| ".".into());
    let code = run(&tool, &args, &cwd, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code.clamp(0, 255) as u8)
}
