//! `lep` — command-line pipeline for local expression predictions:
//! synthetic data generation, forest/autoencoder/AU training, prediction,
//! occlusion tooling and protocol evaluation.

use clap::{Arg, ArgAction, Command};

mod cmd_eval;
mod cmd_heatmap;
mod cmd_occlude;
mod cmd_predict;
mod cmd_synth;
mod cmd_train_ae;
mod cmd_train_au;
mod cmd_train_lep;
mod common;

fn opt(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("VALUE").help(help)
}

fn flag(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .action(ArgAction::SetTrue)
        .help(help)
}

fn multi(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .action(ArgAction::Append)
        .help(help)
}

fn cli() -> Command {
    Command::new("lep")
        .about("Local expression predictions: occlusion-robust facial expression recognition and AU detection")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            opt("jobs", "worker threads; 0 = all cores [default: 0]")
                .global(true),
        )
        .arg(
            opt("seed", "master random seed; bit-exact reproducibility [default: 1]")
                .global(true),
        )
        .arg(
            opt("config", "plain-text `key = value` option file; flags take precedence")
                .global(true),
        )
        .subcommand(
            Command::new("synth")
                .about("Generate a synthetic expression dataset (images, landmarks, manifest)")
                .arg(opt("out", "output directory").required(true))
                .arg(opt("id", "dataset id written to the manifest [default: synthetic]"))
                .arg(opt("subjects", "number of subjects [default: 10]"))
                .arg(opt("classes", "number of expression classes, 2-7 [default: 7]"))
                .arg(opt("samples", "samples per subject per class [default: 10]"))
                .arg(opt("scheme", "synthetic scheme: synth17 | synth5 [default: synth17]"))
                .arg(opt("size", "square image side in pixels [default: 96]"))
                .arg(opt("signal", "class-signal placement: mouth | eyes | mixed [default: mixed]"))
                .arg(opt("geometry", "landmark deformation scale; 0 disables geometry cues [default: 1]"))
                .arg(opt("mouth-contrast", "mouth grating contrast [default: 60]"))
                .arg(opt("eye-contrast", "eye grating contrast [default: 30]"))
                .arg(opt("nose-contrast", "nose grating contrast [default: 20]"))
                .arg(opt("eye-wobble", "per-sample eye orientation wobble, radians [default: 0.05]"))
                .arg(opt("noise", "pixel noise sigma [default: 0]"))
                .arg(opt("subject-jitter", "per-subject landmark offset, fraction of size [default: 0.008]"))
                .arg(flag("au-labels", "derive per-sample AU labels from the class table")),
        )
        .subcommand(
            Command::new("train-lep")
                .about("Train a local-subspace (or global) expression forest")
                .arg(multi("manifest", "dataset manifest; repeat to merge corpora").required(true))
                .arg(opt("scheme", "landmark scheme id [default: face49]"))
                .arg(opt("out", "output model file").required(true))
                .arg(opt("trees", "forest size T1 [default: 1000]"))
                .arg(opt("locality", "mask surface fraction R [default: 0.1]"))
                .arg(opt("subject-fraction", "subjects per bootstrap [default: 0.632]"))
                .arg(opt("phi1", "distance candidates per node [default: 40]"))
                .arg(opt("phi2", "angle candidates per node [default: 40]"))
                .arg(opt("phi3", "channel-window candidates per node [default: 160]"))
                .arg(opt("thresholds", "threshold draws per feature [default: 25]"))
                .arg(opt("max-depth", "tree depth cap [default: 30]"))
                .arg(opt("min-leaf", "minimum samples per leaf [default: 1]"))
                .arg(flag("global", "train the RS-RF baseline (full-mesh masks)"))
                .arg(opt("census-out", "write the root-feature census CSV here"))
                .arg(flag("no-report", "skip the OOB accuracy report")),
        )
        .subcommand(
            Command::new("train-ae")
                .about("Train the hierarchical denoising autoencoder confidence network")
                .arg(multi("manifest", "dataset manifest; repeat to merge corpora").required(true))
                .arg(opt("scheme", "landmark scheme id [default: face49]"))
                .arg(opt("grouping", "subpart grouping file; defaults to the scheme's builtin"))
                .arg(opt("out", "output network file").required(true))
                .arg(opt("updates", "stochastic gradient updates per layer [default: 15000]"))
                .arg(opt("rate", "learning rate [default: 0.01]"))
                .arg(opt("decay", "weight decay [default: 0.001]"))
                .arg(opt("noise", "masking-noise fraction [default: 0.25]"))
                .arg(flag("no-alternate", "disable class-alternating presentation order")),
        )
        .subcommand(
            Command::new("train-au")
                .about("Train per-AU detection forests over LEP features")
                .arg(multi("manifest", "AU-labelled manifest; repeat to merge").required(true))
                .arg(opt("scheme", "landmark scheme id [default: face49]"))
                .arg(multi("model", "LEP source model; repeat for M2 concatenation").required(true))
                .arg(opt("strategy", "m1 | m2 | auto (m1 for one model, m2 for several) [default: auto]"))
                .arg(opt("out", "output AU model file").required(true))
                .arg(opt("trees", "trees per AU T2 [default: 50]"))
                .arg(opt("candidates", "LEP-component candidates per node [default: 100]"))
                .arg(opt("thresholds", "threshold draws per feature [default: 25]"))
                .arg(opt("subject-fraction", "subjects per bootstrap [default: 0.632]"))
                .arg(opt("oob-leps", "generate LEPs from OOB trees: auto | on | off [default: auto]")),
        )
        .subcommand(
            Command::new("predict")
                .about("Run the full pipeline on one image and write a report")
                .arg(multi("model", "LEP model; repeat for concatenated sources").required(true))
                .arg(opt("network", "confidence network file (enables WLS weighting)"))
                .arg(opt("au-model", "AU model file"))
                .arg(opt("image", "input PGM image").required(true))
                .arg(opt("landmarks", "landmark file for the image").required(true))
                .arg(opt("out", "report file; stdout when omitted")),
        )
        .subcommand(
            Command::new("occlude")
                .about("Overlay synthetic noise over a face region")
                .arg(opt("image", "input PGM image").required(true))
                .arg(opt("landmarks", "landmark file").required(true))
                .arg(opt("scheme", "landmark scheme id [default: face49]"))
                .arg(opt("region", "eyes | mouth").required(true))
                .arg(opt("margin", "box margin in pixels [default: 20]"))
                .arg(opt("jitter", "landmark jitter sigma as a fraction of iod (e.g. 0.1); off when omitted"))
                .arg(opt("out-image", "occluded PGM output").required(true))
                .arg(opt("out-landmarks", "write (possibly jittered) landmarks here")),
        )
        .subcommand(
            Command::new("eval")
                .about("OOB evaluation or occlusion sweep")
                .arg(multi("manifest", "dataset manifest; repeat to merge").required(true))
                .arg(opt("scheme", "landmark scheme id [default: face49]"))
                .arg(opt("model", "expression model for plain OOB evaluation"))
                .arg(opt("network", "confidence network (WLS weighting / sweeps)"))
                .arg(flag("sweep", "run the {rs,ls,wls} x regions x locality grid"))
                .arg(multi("ls-model", "LS-RF model per locality (sweep mode)"))
                .arg(multi("rs-model", "RS-RF model per locality (sweep mode)"))
                .arg(opt("regions", "comma list of none,eyes,mouth [default: none,eyes,mouth]"))
                .arg(opt("margin", "occlusion box margin in pixels [default: 20]"))
                .arg(opt("jitter", "landmark jitter sigma, fraction of iod; off when omitted"))
                .arg(opt("out", "write the result CSV here")),
        )
        .subcommand(
            Command::new("heatmap")
                .about("Export per-AU root-census heat maps as a text table")
                .arg(opt("model", "AU model file").required(true))
                .arg(flag("per-label", "resolve proportions per expression label"))
                .arg(opt("out", "output table; stdout when omitted")),
        )
}

fn main() {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand_required");

    if let Err(e) = common::configure_jobs(sub) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
    let result = match name {
        "synth" => cmd_synth::run(sub),
        "train-lep" => cmd_train_lep::run(sub),
        "train-ae" => cmd_train_ae::run(sub),
        "train-au" => cmd_train_au::run(sub),
        "predict" => cmd_predict::run(sub),
        "occlude" => cmd_occlude::run(sub),
        "eval" => cmd_eval::run(sub),
        "heatmap" => cmd_heatmap::run(sub),
        _ => unreachable!(),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
