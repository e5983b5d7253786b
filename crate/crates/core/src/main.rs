use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ffca_core::codec::{bpp, QualityLevel};
use ffca_core::io::{read_pnm, write_fixture, write_pnm};
use ffca_core::pipeline::bench::{run_bench, BenchOptions};
use ffca_core::pipeline::synth::{synth_pair, TextureKind};
use ffca_core::pipeline::{
    average_points, compare_curves, decode_bundle, dump_debug, encode_pair, evaluate_pair, rd_csv, Bundle,
    PipelineConfig,
};
use ffca_core::tensor::Dims;
use ffca_core::weights::NetworkWeights;
use ffca_core::{Error, Result};

/// Stereo image coding with decoder-side feature alignment.
#[derive(Parser)]
#[command(name = "ffca", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with pipeline settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Code the main view and package it with the side view.
    Encode {
        #[command(flatten)]
        common: Common,
        /// Main view (binary PPM/PGM).
        main: PathBuf,
        /// Side view stored losslessly in the bundle.
        #[arg(long, conflicts_with = "side_external")]
        side: Option<PathBuf>,
        /// Side view that travels separately; only its dims are checked.
        #[arg(long)]
        side_external: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        quality: Option<u8>,
        /// Write one bundle per quality as `<out>.q<N>`.
        #[arg(long, conflicts_with = "quality")]
        all_qualities: bool,
        #[arg(long)]
        crop_car_hood: bool,
    },
    /// Decode a bundle through the alignment cascade.
    Decode {
        #[command(flatten)]
        common: Common,
        bundle: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Side view to use instead of (or in the absence of) the stored one.
        #[arg(long)]
        side_external: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Directory for the index map, disparity maps and stage distances.
        #[arg(long)]
        dump_debug: Option<PathBuf>,
    },
    /// Rate-distortion evaluation of baseline and fused reconstructions.
    Eval {
        #[command(flatten)]
        common: Common,
        /// A main/side pair; repeat for several pairs.
        #[arg(long, num_args = 2, value_names = ["MAIN", "SIDE"], required = true)]
        pair: Vec<PathBuf>,
        /// Comma-separated quality indices (default: all).
        #[arg(long, value_delimiter = ',')]
        qualities: Vec<u8>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        crop_car_hood: bool,
        #[arg(long)]
        single_scale_ssim: bool,
    },
    /// Time row-restricted against full-search matching.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Input image size as HxW.
        #[arg(long, default_value = "832x1024")]
        size: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 4)]
        oracle_samples: usize,
        #[arg(long)]
        no_networks: bool,
        #[arg(long)]
        no_all_levels: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a synthetic stereo pair with known disparity.
    Synth {
        /// noise, gradient or checkerboard[:period]
        #[arg(long, default_value = "noise")]
        kind: String,
        /// Image size as HxW.
        #[arg(long, default_value = "256x512")]
        size: String,
        /// Horizontal shift in pixels (even).
        #[arg(long, default_value_t = 16)]
        shift: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print the expected weights layout and parameter budgets.
    DescribeWeights {
        #[command(flatten)]
        common: Common,
        /// Check an existing weights file against the layout.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write a weights file with this layout.
        #[arg(long)]
        emit: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit all-zero weights instead of random ones.
        #[arg(long)]
        zeros: bool,
        #[arg(long, default_value_t = 3)]
        image_channels: usize,
    },
}

const REFINEMENT_BUDGET: usize = 300_000;
const FUSION_BUDGET: usize = 3_500_000;

fn load_config(common: &Common) -> Result<PipelineConfig> {
    match &common.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_weights(flag: &Option<PathBuf>, config: &PipelineConfig) -> Result<Option<NetworkWeights>> {
    flag.as_ref().or(config.weights.as_ref()).map(NetworkWeights::load).transpose()
}

fn parse_dims(s: &str) -> Result<Dims> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| Error::InvalidInput(format!("size `{s}` is not HxW")))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad size `{s}`")));
    Ok(Dims::new(p(h)?, p(w)?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializable"))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode { common, main, side, side_external, out, quality, all_qualities, crop_car_hood } => {
            let mut config = load_config(&common)?;
            config.crop_car_hood |= crop_car_hood;
            if let Some(q) = quality {
                config.quality = q;
            }
            let main = read_pnm(&main)?;
            let stored = side.as_ref().map(read_pnm).transpose()?;
            if let Some(path) = &side_external {
                let ext = read_pnm(path)?;
                if ext.dims() != main.dims() || ext.channels() != main.channels() {
                    return Err(Error::InvalidInput(format!(
                        "external side view {} does not match main {}",
                        ext.dims(),
                        main.dims()
                    )));
                }
            } else if stored.is_none() {
                return Err(Error::InvalidInput("give the side view with --side or --side-external".into()));
            }
            let qualities: Vec<u8> =
                if all_qualities { (0..QualityLevel::COUNT as u8).collect() } else { vec![config.quality] };
            for q in qualities {
                let cfg = PipelineConfig { quality: q, ..config.clone() };
                let bundle = encode_pair(&main, stored.as_ref(), &cfg)?;
                let path = if all_qualities {
                    let mut p = out.clone().into_os_string();
                    p.push(format!(".q{q}"));
                    PathBuf::from(p)
                } else {
                    out.clone()
                };
                std::fs::write(&path, bundle.to_bytes())?;
                println!("{}\tquality {q}\tbpp {:.6}", path.display(), bpp(&bundle.main, bundle.main.dims));
            }
        }
        Command::Decode { common, bundle, out, side_external, weights, dump_debug: debug } => {
            let bundle = Bundle::from_bytes(&std::fs::read(&bundle)?)?;
            let config = match &common.config {
                Some(_) => load_config(&common)?,
                None => bundle.config.clone(),
            };
            let weights = load_weights(&weights, &config)?;
            let side = side_external.as_ref().map(read_pnm).transpose()?;
            let decoded = decode_bundle(&bundle, side.as_ref(), &config, weights.as_ref())?;
            write_pnm(&out, &decoded.cascade.x_out)?;
            if let Some(dir) = debug {
                dump_debug(&dir, &decoded.x_hat, &decoded.cascade)?;
            }
            let summary = serde_json::json!({
                "output": out,
                "fused": decoded.cascade.fused,
                "bpp": bpp(&bundle.main, bundle.main.dims),
                "levels": decoded.cascade.levels,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::Eval { common, pair, qualities, weights, out_dir, crop_car_hood, single_scale_ssim } => {
            let mut config = load_config(&common)?;
            config.crop_car_hood |= crop_car_hood;
            config.single_scale_ssim |= single_scale_ssim;
            let weights = load_weights(&weights, &config)?;
            let qualities: Vec<QualityLevel> = if qualities.is_empty() {
                QualityLevel::all().collect()
            } else {
                qualities.into_iter().map(QualityLevel::new).collect::<Result<_>>()?
            };
            let (mut baseline, mut fused) = (Vec::new(), Vec::new());
            for p in pair.chunks(2) {
                let result = read_pnm(&p[0])
                    .and_then(|m| Ok((m, read_pnm(&p[1])?)))
                    .and_then(|(m, s)| evaluate_pair(&m, &s, &qualities, &config, weights.as_ref()));
                match result {
                    Ok(r) => {
                        baseline.push(r.baseline);
                        fused.push(r.fused);
                    }
                    Err(e) => eprintln!("skipping pair {} / {}: {e}", p[0].display(), p[1].display()),
                }
            }
            if baseline.is_empty() {
                return Err(Error::InvalidInput("no pair could be evaluated".into()));
            }
            let (baseline, fused) = (average_points(&baseline)?, average_points(&fused)?);
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("rd_baseline.csv"), rd_csv(&baseline))?;
            std::fs::write(out_dir.join("rd_fused.csv"), rd_csv(&fused))?;
            match compare_curves(&baseline, &fused) {
                Ok(report) => {
                    write_json(&out_dir.join("bd_report.json"), &report)?;
                    println!("BD-rate {:.4}%  BD-PSNR {:.4} dB", report.bd_rate_percent, report.bd_psnr_db);
                }
                Err(e) => eprintln!("no BD report: {e}"),
            }
            print!("{}", rd_csv(&fused));
        }
        Command::Bench { common, size, repeats, oracle_samples, no_networks, no_all_levels, json } => {
            let config = load_config(&common)?;
            let options = BenchOptions {
                image: parse_dims(&size)?,
                repeats,
                oracle_samples,
                oracle_all_levels: !no_all_levels,
                networks: !no_networks,
                ..Default::default()
            };
            let report = run_bench(&config, &options)?;
            let text = serde_json::to_string_pretty(&report).expect("json");
            if let Some(p) = json {
                std::fs::write(p, &text)?;
            }
            println!("{text}");
        }
        Command::Synth { kind, size, shift, seed, channels, out_dir } => {
            let dims = parse_dims(&size)?;
            let kind: TextureKind = kind.parse()?;
            let pair = synth_pair(kind, channels, dims.height, dims.width, shift, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            write_pnm(out_dir.join("main.pnm"), &pair.main)?;
            write_pnm(out_dir.join("side.pnm"), &pair.side)?;
            let file = std::fs::File::create(out_dir.join("disparity.ffca"))?;
            write_fixture(std::io::BufWriter::new(file), std::slice::from_ref(&pair.disparity))?;
            println!("wrote {} (shift {shift})", out_dir.display());
        }
        Command::DescribeWeights { common, weights, emit, seed, zeros, image_channels } => {
            let config = load_config(&common)?;
            let net = config.network(image_channels);
            net.validate()?;
            print!("{}", net.describe());
            let verdict = |n: usize, budget: usize| if n <= budget { "within" } else { "OVER" };
            let (r, f) = (net.refinement_params(), net.fusion_params());
            println!("refinement budget {REFINEMENT_BUDGET}: {r} {}", verdict(r, REFINEMENT_BUDGET));
            println!("fusion budget {FUSION_BUDGET}: {f} {}", verdict(f, FUSION_BUDGET));
            if let Some(path) = weights {
                let w = NetworkWeights::load(&path)?;
                if *w.config() != net {
                    return Err(Error::Weights {
                        layer: "meta".into(),
                        reason: format!("file built for {:?}, layout is {:?}", w.config(), net),
                    });
                }
                println!("{}: valid, {} parameters", path.display(), w.param_count());
            }
            if let Some(path) = emit {
                let w = if zeros { NetworkWeights::zeros(net)? } else { NetworkWeights::random(net, seed)? };
                w.save(&path)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
