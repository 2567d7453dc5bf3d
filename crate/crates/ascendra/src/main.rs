fn main() { std::process::exit(ascendra::cli::run()); }
