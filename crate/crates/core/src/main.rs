use bmlab::cli::{main_with, Args};
use clap::Parser;

fn main() {
    std::process::exit(main_with(Args::parse()));
}
