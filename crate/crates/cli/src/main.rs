use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let help = args.iter().any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V" || a == "help");
    match graphit_cli::run(args) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(graphit_cli::CliError::Usage(msg)) if help => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(if e.kind() == "usage" { 2 } else { 1 })
        }
    }
}
