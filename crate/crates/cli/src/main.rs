use std::io::Write;

fn main() {
    let (code, out, err) = thintube_cli::run(std::env::args_os());
    if !out.is_empty() {
        print!("{out}");
    }
    if !err.is_empty() {
        let _ = write!(std::io::stderr(), "{err}");
    }
    std::process::exit(code);
}
