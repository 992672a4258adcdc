//! Command-line front end. Each subcommand maps its flags onto a
//! `BenchConfig` and hands it to the harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stencil_bench::harness::{
    render_speedups, run_1d_rank, run_suite, speedup_table, verify_all, Benchmark, BenchConfig,
    VerifyOptions, RECORDS_FILE,
};
use stencil_bench::locality::{parse_peers, LocalityId};
use stencil_bench::record::{append_records, read_records, RunRecord};
use stencil_bench::simd::HaloShuffle;
use stencil_bench::stencil1d::format_checksum;

#[derive(Parser)]
#[command(name = "stencilbench", version, about = "Task-parallel stencil benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Output directory (defaults to $BENCH_OUT_DIR, then ./bench-out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Stem of the .dat file.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run the oracle suite first and abort if it fails.
    #[arg(long)]
    verify: bool,
    /// Print records as JSON lines instead of .dat lines.
    #[arg(long)]
    json: bool,
    /// Extra key=value overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// STREAM COPY bandwidth sweep.
    Stream {
        #[arg(long)]
        elements: Option<String>,
        #[arg(long, value_name = "1,2,4")]
        workers_sweep: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Distributed 1D heat equation.
    Stencil1d {
        #[arg(long)]
        points: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Locality count, or a comma list to sweep.
        #[arg(long)]
        localities: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        partitions: Option<usize>,
        #[arg(long, value_name = "strong|weak")]
        mode: Option<String>,
        #[arg(long, value_name = "inproc|tcp")]
        transport: Option<String>,
        /// This process's rank as `r/L` (multi-process TCP runs).
        #[arg(long, requires = "peers")]
        locality: Option<String>,
        /// Listen addresses of all ranks, in rank order.
        #[arg(long, requires = "locality")]
        peers: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// 2D Jacobi, scalar or packed kernel.
    Stencil2d {
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Worker count, or a comma list to sweep.
        #[arg(long)]
        workers: Option<String>,
        #[arg(long, value_name = "f32|f64")]
        precision: Option<String>,
        #[arg(long, value_name = "scalar|packed")]
        kernel: Option<String>,
        #[arg(long)]
        lanes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Expected GLUP/s from a STREAM .dat file.
    Roofline {
        #[arg(long)]
        bw_dat: PathBuf,
        #[arg(long, value_name = "f32|f64")]
        precision: Option<String>,
        #[arg(long, value_name = "2|3")]
        transfers: Option<u8>,
        #[command(flatten)]
        common: Common,
    },
    /// Oracle suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Break the halo shuffle to confirm the suite notices.
        #[arg(long, hide = true)]
        corrupt_shuffle: bool,
    },
    /// Speedup table from accumulated records.
    Report {
        /// Defaults to records.jsonl in the output directory.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a sweep described by a key = value file.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        json: bool,
    },
}

fn overrides(pairs: &[(&str, Option<String>)]) -> Vec<String> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}")))
        .collect()
}

type Failure = (stencil_bench::Error, Option<Box<BenchConfig>>);

fn build(bench: Benchmark, specific: Vec<String>, common: &Common) -> Result<BenchConfig, Failure> {
    let mut cfg = BenchConfig::new(bench);
    let applied = cfg
        .apply_overrides(&specific)
        .and_then(|_| {
            cfg.apply_overrides(&overrides(&[
                ("out_dir", common.out_dir.as_ref().map(|p| p.display().to_string())),
                ("label", common.label.clone()),
                ("runs", common.runs.map(|v| v.to_string())),
                ("seed", common.seed.map(|v| v.to_string())),
            ]))
        })
        .and_then(|_| cfg.apply_overrides(&common.set));
    cfg.verify |= common.verify;
    match applied.and_then(|_| cfg.validate()) {
        Ok(()) => Ok(cfg),
        Err(e) => Err((e, Some(Box::new(cfg)))),
    }
}

fn emit(cfg: &BenchConfig, json: bool) -> stencil_bench::Result<()> {
    let out = run_suite(cfg)?;
    if json {
        for r in &out.records {
            println!("{}", serde_json::to_string(r)?);
        }
    } else {
        print!("{}", out.dat_text());
    }
    for r in &out.records {
        if let Some(sum) = r.checksum {
            eprintln!("{} x{} checksum {}", r.benchmark, r.localities.max(r.workers), format_checksum(sum));
        }
    }
    eprintln!("wrote {}", out.dat_path.display());
    Ok(())
}

fn print_record(r: &RunRecord, json: bool) -> stencil_bench::Result<()> {
    if json {
        println!("{}", serde_json::to_string(r)?);
    } else {
        println!("{} {}", r.localities, r.wall_seconds);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let bare = |e: stencil_bench::Error| (e, None);
    match cli.cmd {
        Cmd::Stream {
            elements,
            workers_sweep,
            common,
        } => {
            let cfg = build(
                Benchmark::Stream,
                overrides(&[("elements", elements), ("workers", workers_sweep)]),
                &common,
            )?;
            emit(&cfg, common.json).map_err(|e| (e, Some(Box::new(cfg))))
        }
        Cmd::Stencil1d {
            points,
            steps,
            localities,
            workers,
            partitions,
            mode,
            transport,
            locality,
            peers,
            common,
        } => {
            let mut specific = overrides(&[
                ("points", points),
                ("steps", steps.map(|v| v.to_string())),
                ("localities", localities),
                ("workers", workers.map(|v| v.to_string())),
                ("partitions", partitions.map(|v| v.to_string())),
                ("mode", mode),
                ("transport", transport),
            ]);
            let rank = match (locality, peers) {
                (Some(id), Some(peers)) => {
                    let id: LocalityId = id.parse().map_err(|e| bare(stencil_bench::Error::from(e)))?;
                    let peers = parse_peers(&peers).map_err(|e| bare(e.into()))?;
                    specific.push(format!("localities={}", id.count()));
                    specific.push("transport=tcp".into());
                    Some((id, peers))
                }
                _ => None,
            };
            let cfg = build(Benchmark::Stencil1d, specific, &common)?;
            let Some((id, peers)) = rank else {
                return emit(&cfg, common.json).map_err(|e| (e, Some(Box::new(cfg))));
            };
            let result = (|| {
                if let Some(rec) = run_1d_rank(&cfg, id, &peers)? {
                    append_records(&cfg.out_dir.join(RECORDS_FILE), std::slice::from_ref(&rec))?;
                    print_record(&rec, common.json)?;
                    if let Some(sum) = rec.checksum {
                        eprintln!("checksum {}", format_checksum(sum));
                    }
                }
                Ok(())
            })();
            result.map_err(|e| (e, Some(Box::new(cfg))))
        }
        Cmd::Stencil2d {
            width,
            height,
            steps,
            workers,
            precision,
            kernel,
            lanes,
            common,
        } => {
            let cfg = build(
                Benchmark::Stencil2d,
                overrides(&[
                    ("width", width.map(|v| v.to_string())),
                    ("height", height.map(|v| v.to_string())),
                    ("steps", steps.map(|v| v.to_string())),
                    ("workers", workers),
                    ("precision", precision),
                    ("kernel", kernel),
                    ("lanes", lanes.map(|v| v.to_string())),
                ]),
                &common,
            )?;
            emit(&cfg, common.json).map_err(|e| (e, Some(Box::new(cfg))))
        }
        Cmd::Roofline {
            bw_dat,
            precision,
            transfers,
            common,
        } => {
            let cfg = build(
                Benchmark::Roofline,
                overrides(&[
                    ("bw_dat", Some(bw_dat.display().to_string())),
                    ("precision", precision),
                    ("transfers", transfers.map(|v| v.to_string())),
                ]),
                &common,
            )?;
            emit(&cfg, false).map_err(|e| (e, Some(Box::new(cfg))))
        }
        Cmd::Verify { seed, corrupt_shuffle } => {
            let report = verify_all(&VerifyOptions {
                seed,
                shuffle: if corrupt_shuffle {
                    HaloShuffle::Unrotated
                } else {
                    HaloShuffle::Rotate
                },
                ..VerifyOptions::default()
            })
            .map_err(bare)?;
            print!("{}", report.render());
            match report.first_failure() {
                Some(f) => Err(bare(stencil_bench::Error::Verification(format!(
                    "first failing property: {}",
                    f.name
                )))),
                None => Ok(()),
            }
        }
        Cmd::Report { records, out_dir } => {
            let path = records.unwrap_or_else(|| {
                let mut cfg = BenchConfig::new(Benchmark::Stream);
                if let Some(d) = out_dir {
                    cfg.out_dir = d;
                }
                cfg.out_dir.join(RECORDS_FILE)
            });
            let recs = read_records(&path).map_err(bare)?;
            print!("{}", render_speedups(&speedup_table(&recs)));
            Ok(())
        }
        Cmd::Suite { config, set, json } => {
            let mut cfg = BenchConfig::load(&config).map_err(bare)?;
            if let Err(e) = cfg.apply_overrides(&set).and_then(|_| cfg.validate()) {
                return Err((e, Some(Box::new(cfg))));
            }
            emit(&cfg, json).map_err(|e| (e, Some(Box::new(cfg))))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, cfg)) => {
            eprintln!("error: {e}");
            if let Some(cfg) = cfg {
                eprintln!("configuration:\n{}", cfg.to_kv());
            }
            ExitCode::FAILURE
        }
    }
}
