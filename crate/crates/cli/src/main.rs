use std::io;

fn main() {
    // failures are reported by `run` as one-line diagnostics
    std::panic::set_hook(Box::new(|_| {}));
    let code = tally_cli::run(
        std::env::args_os(),
        &mut io::stdin().lock(),
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    );
    std::process::exit(code);
}
