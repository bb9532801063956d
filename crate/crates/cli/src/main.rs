use clap::Parser;
use wimp_cli::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(serde_json::Value::Null) => {}
        Ok(v) => println!("{}", serde_json::to_string_pretty(&v).expect("serializable")),
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("serializable"));
            std::process::exit(1);
        }
    }
}
