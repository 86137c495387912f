use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = vaxkit_cli::Cli::parse();
    let code = vaxkit_cli::run(cli, &|key| std::env::var(key).ok());
    std::process::exit(code);
}
