//! The command-line workflow driven from code: simulate a data set, fit
//! it, and score the fit against the simulation's truth.

use mmreg::cli::run;

fn main() {
    let dir = std::env::temp_dir().join("mmreg_workflow");
    std::fs::create_dir_all(&dir).expect("temporary directory is writable");
    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let (data, fit, metrics) = (path("sparse.csv"), path("fit.json"), path("metrics.json"));

    let steps: [&[&str]; 3] = [
        &[
            "simulate",
            "--scenario",
            "sparse",
            "--n",
            "300",
            "--p",
            "30",
            "--noise",
            "gaussian:1",
            "--seed",
            "9",
            "-o",
            &data,
        ],
        &["fit", "--model", "sparse-quantile-pd", "--q", "0.5", "--k", "10", "-i", &data, "-o", &fit],
        &["metrics", "--beta-hat", &fit, "--beta-star", &path("sparse.json"), "--data", &data, "-o", &metrics],
    ];
    for args in steps {
        let code = run(std::iter::once("mmreg").chain(args.iter().copied()));
        if code != 0 {
            eprintln!("`{}` exited with {code}", args[0]);
            std::process::exit(code);
        }
    }
    println!("{}", std::fs::read_to_string(&metrics).expect("metrics were written"));
}
