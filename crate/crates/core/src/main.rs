fn main() {
    graphmoco::cli::init_logging();
    std::process::exit(graphmoco::cli::cli_main(std::env::args_os()));
}
