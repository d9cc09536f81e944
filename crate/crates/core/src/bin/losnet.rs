fn main() {
    std::process::exit(losnet::cli::run(std::env::args_os()));
}
