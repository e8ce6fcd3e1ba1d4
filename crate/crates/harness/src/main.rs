use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use lhuc::model::count_parameters;
use lhuc::gradcheck::run_gradcheck;
use lhuc::synth::{gen_bump, gen_mixture_bump, gen_multicluster, BumpSpec, ClusterTaskSpec, MixtureSpec};
use lhuc_harness::dataset_io::{export_csv, write_dataset};
use lhuc_harness::load_checkpoint;
use lhuc_harness::run::run_config_file;
use serde::Deserialize;

/// LHUC / SAT-LHUC experiment runner. Log level is read from `LHUC_LOG`
/// (e.g. `LHUC_LOG=info`).
#[derive(Parser)]
#[command(name = "lhuc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        cases: usize,
    },
    /// Materialise a synthetic task to dataset files.
    SynthGen {
        spec: PathBuf,
        out: PathBuf,
        /// Also write CSV copies.
        #[arg(long)]
        csv: bool,
    },
    /// Describe a checkpoint.
    Inspect { checkpoint: PathBuf },
}

/// Exactly one of the sections must be present.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSpec {
    multicluster: Option<ClusterTaskSpec>,
    bump: Option<BumpSpec>,
    mixture: Option<MixtureSpec>,
}

fn synth_gen(spec: &PathBuf, out: &PathBuf, csv: bool) -> anyhow::Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SynthSpec = toml::from_str(&text).context("parsing synth spec")?;
    let sets = match (spec.multicluster, spec.bump, spec.mixture) {
        (Some(s), None, None) => {
            let t = gen_multicluster(&s)?;
            vec![("train", t.train), ("test", t.test)]
        }
        (None, Some(s), None) => {
            let (f1, f2) = gen_bump(&s)?;
            vec![("f1", f1), ("f2", f2)]
        }
        (None, None, Some(s)) => vec![("mixture", gen_mixture_bump(&s)?)],
        _ => bail!("synth spec needs exactly one of [multicluster], [bump], [mixture]"),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, d) in sets {
        let p = out.join(format!("{name}.lhd"));
        write_dataset(&p, &d)?;
        if csv {
            fs::write(out.join(format!("{name}.csv")), export_csv(&d)?)?;
        }
        println!("{}: {} frames, dim {}", p.display(), d.len(), d.dim());
    }
    Ok(())
}

fn inspect(path: &PathBuf) -> anyhow::Result<()> {
    let c = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let (si, per_cluster) = count_parameters(&c.params, c.bank.as_ref());
    println!("format version:  {}", lhuc_harness::checkpoint::VERSION);
    println!("topology:        {:?}", c.params.sizes());
    println!("output:          {:?}", c.params.output_kind);
    println!("reparam kind:    {}", c.kind.name());
    println!("SI parameters:   {si}");
    match &c.bank {
        None => println!("bank:            none"),
        Some(b) => {
            let ids: Vec<u32> = b.ids().map(|i| i.0).collect();
            println!("bank:            {} clusters x {per_cluster} parameters", ids.len());
            println!("cluster ids:     {ids:?}");
        }
    }
    println!("config hash:     {:#018x}", c.provenance.config_hash);
    println!("seed:            {}", c.provenance.seed);
    println!("epochs:          {}", c.provenance.epoch);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LHUC_LOG", "warn")).init();
    let cli = Cli::parse();
    let res: anyhow::Result<()> = match cli.command {
        Command::Run { config } => run_config_file(&config)
            .map(|r| {
                for f in &r.files {
                    println!("{}", f.display());
                }
            })
            .map_err(Into::into),
        Command::Gradcheck { seed, cases } => run_gradcheck(seed, cases)
            .map(|rep| {
                for (g, e) in &rep.groups {
                    println!("{g:>4}  max relative error {e:.3e}");
                }
                println!("overall max relative error {:.3e} over {} entries in {} cases", rep.max_rel_err, rep.entries_checked, rep.cases.len());
            })
            .map_err(Into::into),
        Command::SynthGen { spec, out, csv } => synth_gen(&spec, &out, csv),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
