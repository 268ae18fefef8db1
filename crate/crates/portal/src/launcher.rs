use std::io;
use std::path::PathBuf;

use sciflow_core::bridge::{InProcessLauncher, LaunchSpec, Launcher, ProcessLauncher, Program, RunningJob};

use crate::config::ToolkitMode;

/// Runs toolkit tools in process (or through the multi-call binary) and
/// everything else, uploaded executables and inline scripts, as real
/// subprocesses.
pub struct ToolkitLauncher {
    tools: Box<dyn Launcher>,
    processes: ProcessLauncher,
}

/// Payload entry point for the in-process toolkit.
pub fn run_tool(spec: &LaunchSpec, out: &mut Vec<u8>, err: &mut Vec<u8>) -> i32 {
    let Program::Tool(tool) = &spec.program else {
        err.extend_from_slice(b"not a toolkit tool\n");
        return 127;
    };
    if !sciflow_simtk::cli::TOOLS.contains(&tool.as_str()) {
        err.extend_from_slice(format!("unknown tool {tool}\n").as_bytes());
        return 127;
    }
    sciflow_simtk::cli::run(tool, &spec.args, &spec.sandbox, out, err)
}

impl ToolkitLauncher {
    pub fn new(mode: &ToolkitMode) -> Self {
        let tools: Box<dyn Launcher> = match mode {
            ToolkitMode::InProcess => Box::new(InProcessLauncher::new(run_tool)),
            ToolkitMode::Process { binary } => Box::new(ProcessLauncher::new(Some(binary.clone()))),
        };
        ToolkitLauncher {
            tools,
            processes: ProcessLauncher::new(None),
        }
    }

    pub fn in_process() -> Self {
        ToolkitLauncher::new(&ToolkitMode::InProcess)
    }

    pub fn process(binary: impl Into<PathBuf>) -> Self {
        ToolkitLauncher::new(&ToolkitMode::Process { binary: binary.into() })
    }
}

impl Launcher for ToolkitLauncher {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn RunningJob>> {
        match spec.program {
            Program::Tool(_) => self.tools.launch(spec),
            Program::Path(_) => self.processes.launch(spec),
        }
    }
}
