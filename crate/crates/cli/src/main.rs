fn main() {
    std::process::exit(schema_miner_cli::run(std::env::args_os()));
}
