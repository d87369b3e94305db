use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match stvs::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { stvs::EXIT_USAGE } else { stvs::EXIT_OK });
        }
    };
    std::process::exit(stvs::run(cli));
}
