use clap::Parser;

fn main() {
    let cli = groundloop_cli::Cli::parse();
    let code = match groundloop_cli::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.json_line());
            e.code()
        }
    };
    std::process::exit(code);
}
