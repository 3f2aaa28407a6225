use swarmgen_cli::{main_with, Io};

fn main() {
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut out = std::io::stdout();
    std::process::exit(main_with(std::env::args_os(), Io { input: &mut input, out: &mut out }));
}
