use std::process::ExitCode;

fn main() -> ExitCode {
    hopper_sim::cli::run()
}
