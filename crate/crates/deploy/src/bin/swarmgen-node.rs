fn main() {
    std::process::exit(swarmgen_deploy::node_cli::run(std::env::args_os()));
}
