use std::path::{Path, PathBuf};

use iagft::codec::{Codec, EncodeParams, EncodedImage, TableMode, TransformMode};
use iagft::graph::grid_laplacian;
use iagft::metrics::{bd_rate, ms_ssim, psnr, rd_csv, ssim, RDPoint, RdRecord, MS_SSIM_MIN_SIDE};
use iagft::transform::{compute_iagft, Dct2d, InnerProductWeights};
use iagft::vq::{train_ecvq_with, training_blocks, Codebook, EcvqConfig, DEFAULT_LAMBDA};
use iagft::weights::{weight_curve as curve, weight_curve_csv, DEFAULT_Q_FLOOR};
use iagft::{load_image, save_image, ImageGray};

use crate::config::Config;
use crate::{CliError, CodingArgs, ModeArg, TableArg};

const DEFAULT_DELTA: f64 = 16.0;
const DEFAULT_QUALITY: f64 = 50.0;
const UNIFORM_SWEEP: [f64; 4] = [6.0, 10.0, 16.0, 26.0];
const QUALITY_SWEEP: [f64; 4] = [90.0, 75.0, 50.0, 25.0];

type Metric = fn(&RdRecord) -> f64;

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(iagft::Error::from)?;
    }
    std::fs::write(path, bytes).map_err(iagft::Error::from)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => iagft::Error::FileNotFound(path.to_path_buf()).into(),
        _ => iagft::Error::from(e).into(),
    })
}

fn load_codebook(path: &Path) -> Result<Codebook, CliError> {
    Ok(Codebook::from_bytes(&read_file(path)?)?)
}

pub fn parse_levels(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("bad level `{s}`: {e}"))))
        .collect()
}

pub struct TrainSettings {
    pub k: usize,
    pub lambda: f64,
    pub delta: f64,
    pub q_floor: f64,
    pub seed: u64,
}

pub fn train_vq(input: &Path, out: &Path, s: &TrainSettings) -> Result<(), CliError> {
    if s.k == 0 {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    let img = load_image(input)?;
    let blocks = training_blocks(&img, s.delta, s.q_floor)?;
    let config = EcvqConfig { k: s.k, lambda: s.lambda, seed: s.seed, q_floor: s.q_floor, ..EcvqConfig::default() };
    let training = train_ecvq_with(&blocks, &config)?;
    let cb = &training.codebook;
    write_file(out, cb.to_bytes())?;
    println!("trained {} codewords from {} blocks in {} passes", cb.len(), blocks.len(), training.costs.len());
    for (k, (c, p)) in cb.codewords().iter().zip(cb.probabilities()).enumerate() {
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!("  codeword {k}: p = {p:.4}, mean q = {mean:.3}, range [{lo:.3}, {hi:.3}]");
    }
    println!("codebook hash {:016x}", cb.hash());
    Ok(())
}

/// Resolved coding flags plus the codec they select.
pub struct CodingSetup {
    pub transform: TransformMode,
    pub table: TableMode,
    pub lambda: f64,
    pub q_floor: f64,
    pub normalized_table: bool,
    pub codebook: Option<Codebook>,
}

impl CodingSetup {
    pub fn resolve(args: &CodingArgs, config: &Config) -> Result<Self, CliError> {
        let codebook_path: Option<PathBuf> = config.pick(args.codebook.clone(), "codebook")?;
        let codebook = codebook_path.as_deref().map(load_codebook).transpose()?;
        let mode =
            config.pick(args.mode, "mode")?.unwrap_or(if codebook.is_some() { ModeArg::Iagft } else { ModeArg::Dct });
        let transform = match mode {
            ModeArg::Dct => TransformMode::Dct,
            ModeArg::Iagft => TransformMode::Iagft,
        };
        let table = match config.pick(args.table, "table")?.unwrap_or(TableArg::Uniform) {
            TableArg::Uniform => TableMode::Uniform,
            TableArg::Nonuniform => TableMode::NonUniform,
        };
        Ok(Self {
            transform,
            table,
            lambda: config.pick(args.lambda, "lambda")?.unwrap_or(DEFAULT_LAMBDA),
            q_floor: config.pick(args.q_floor, "q_floor")?.unwrap_or(DEFAULT_Q_FLOOR),
            normalized_table: !config.flag(args.unnormalized_table, "unnormalized_table")?,
            codebook,
        })
    }

    /// Δ for the uniform table, quality for the non-uniform one.
    pub fn level(&self, config: &Config, delta: Option<f64>, quality: Option<f64>) -> Result<f64, CliError> {
        match self.table {
            TableMode::Uniform => {
                if quality.is_some() {
                    return Err(CliError::Usage("--quality applies to --table nonuniform; use --delta".into()));
                }
                Ok(config.pick(delta, "delta")?.unwrap_or(DEFAULT_DELTA))
            }
            TableMode::NonUniform => {
                if delta.is_some() {
                    return Err(CliError::Usage("--delta applies to --table uniform; use --quality".into()));
                }
                Ok(config.pick(quality, "quality")?.unwrap_or(DEFAULT_QUALITY))
            }
        }
    }

    pub fn default_levels(&self) -> Vec<f64> {
        match self.table {
            TableMode::Uniform => UNIFORM_SWEEP.to_vec(),
            TableMode::NonUniform => QUALITY_SWEEP.to_vec(),
        }
    }

    fn params(&self, transform: TransformMode, level: f64) -> EncodeParams {
        EncodeParams {
            lambda: self.lambda,
            q_floor: self.q_floor,
            normalized_table: self.normalized_table,
            ..EncodeParams::new(transform, self.table, level)
        }
    }

    fn codec(&self, transform: TransformMode) -> Result<Codec, CliError> {
        match (transform, &self.codebook) {
            (TransformMode::Dct, _) => Ok(Codec::dct_only()),
            (TransformMode::Iagft, Some(cb)) => Ok(Codec::new(cb.clone())?),
            (TransformMode::Iagft, None) => Err(CliError::Usage("--mode iagft needs --codebook".into())),
        }
    }
}

struct Quality {
    psnr: f64,
    ssim: f64,
    msssim: Option<f64>,
}

fn measure(reference: &ImageGray, decoded: &ImageGray) -> Result<Quality, CliError> {
    let fits = reference.width().min(reference.height()) >= MS_SSIM_MIN_SIDE;
    Ok(Quality {
        psnr: psnr(decoded, reference)?,
        ssim: ssim(decoded, reference)?,
        msssim: if fits { Some(ms_ssim(decoded, reference)?) } else { None },
    })
}

fn print_quality(q: &Quality) {
    println!("PSNR     {:.3} dB", q.psnr);
    println!("SSIM     {:.5}", q.ssim);
    match q.msssim {
        Some(m) => println!("MS-SSIM  {m:.5}"),
        None => println!("MS-SSIM  n/a (image smaller than {MS_SSIM_MIN_SIDE} px)"),
    }
}

pub fn encode(input: &Path, out: &Path, recon: Option<&Path>, setup: &CodingSetup, level: f64) -> Result<(), CliError> {
    let img = load_image(input)?;
    let codec = setup.codec(setup.transform)?;
    let encoded = codec.encode(&img, &setup.params(setup.transform, level))?;
    let bytes = encoded.encoded.to_bytes();
    write_file(out, &bytes)?;
    let decoded = codec.decode(&encoded.encoded)?;
    if let Some(path) = recon {
        save_image(&decoded, path)?;
    }
    let r = &encoded.rate;
    println!("wrote {} bytes to {}", bytes.len(), out.display());
    println!("rate     {:.4} bpp ({} bits)", r.bpp(), r.total_bits);
    println!(
        "side     {:.2}% of rate ({} bits coded, {:.0} bits ideal)",
        100.0 * r.side_info_fraction(),
        r.side_info_bits,
        r.side_info_ideal_bits
    );
    print_quality(&measure(&img, &decoded)?);
    Ok(())
}

pub fn decode(input: &Path, out: &Path, codebook: Option<&Path>, reference: Option<&Path>) -> Result<(), CliError> {
    let encoded = EncodedImage::from_bytes(&read_file(input)?)?;
    let codec = match (encoded.header.transform, codebook) {
        (TransformMode::Dct, _) => Codec::dct_only(),
        (TransformMode::Iagft, Some(path)) => Codec::new(load_codebook(path)?)?,
        (TransformMode::Iagft, None) => {
            return Err(CliError::Usage("IAGFT bitstream needs --codebook".into()));
        }
    };
    let img = codec.decode(&encoded)?;
    save_image(&img, out)?;
    println!("decoded {}x{} to {}", img.width(), img.height(), out.display());
    if let Some(path) = reference {
        print_quality(&measure(&load_image(path)?, &img)?);
    }
    Ok(())
}

pub fn eval(reference: &Path, decoded: &Path) -> Result<(), CliError> {
    print_quality(&measure(&load_image(reference)?, &load_image(decoded)?)?);
    Ok(())
}

fn sweep(
    img: &ImageGray,
    setup: &CodingSetup,
    transform: TransformMode,
    levels: &[f64],
) -> Result<Vec<RdRecord>, CliError> {
    let codec = setup.codec(transform)?;
    let mut records = Vec::with_capacity(levels.len());
    for &level in levels {
        let out = codec.encode(img, &setup.params(transform, level))?;
        let q = measure(img, &codec.decode(&out.encoded)?)?;
        let msssim = q.msssim.ok_or(iagft::Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MS_SSIM_MIN_SIDE,
        })?;
        println!(
            "{:>5} level {level:>6}: {:.4} bpp  PSNR {:.3}  SSIM {:.5}  MS-SSIM {:.5}  side {:.2}%",
            format!("{transform:?}"),
            out.rate.bpp(),
            q.psnr,
            q.ssim,
            msssim,
            100.0 * out.rate.side_info_fraction()
        );
        records.push(RdRecord { rate_bpp: out.rate.bpp(), psnr: q.psnr, ssim: q.ssim, msssim });
    }
    records.sort_by(|a, b| a.rate_bpp.total_cmp(&b.rate_bpp));
    Ok(records)
}

pub fn rd_sweep(input: &Path, out_dir: &Path, setup: &CodingSetup, levels: &[f64]) -> Result<(), CliError> {
    if levels.len() < 4 {
        return Err(CliError::Usage(format!("rd-sweep needs at least 4 levels, got {}", levels.len())));
    }
    if setup.codebook.is_none() {
        return Err(CliError::Usage("rd-sweep needs --codebook".into()));
    }
    let img = load_image(input)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let table = match setup.table {
        TableMode::Uniform => "uniform",
        TableMode::NonUniform => "nonuniform",
    };
    let dct = sweep(&img, setup, TransformMode::Dct, levels)?;
    let iagft = sweep(&img, setup, TransformMode::Iagft, levels)?;
    write_file(&out_dir.join(format!("{stem}_{table}_dct.csv")), rd_csv(&dct))?;
    write_file(&out_dir.join(format!("{stem}_{table}_iagft.csv")), rd_csv(&iagft))?;

    let points = |records: &[RdRecord], metric: Metric| -> Vec<RDPoint> {
        records.iter().map(|r| RDPoint::new(r.rate_bpp, metric(r))).collect()
    };
    let metrics: [(&str, Metric); 3] = [("psnr", |r| r.psnr), ("ssim", |r| r.ssim), ("msssim", |r| r.msssim)];
    let mut summary = String::from("image,table,metric,bd_rate_percent\n");
    println!("BD-rate of IAGFT against DCT ({table} table):");
    for (name, metric) in metrics {
        let bd = bd_rate(&points(&dct, metric), &points(&iagft, metric))?;
        println!("  {name:<7} {bd:+.2}%");
        summary.push_str(&format!("{stem},{table},{name},{bd}\n"));
    }
    write_file(&out_dir.join(format!("{stem}_{table}_bd.csv")), summary)?;
    Ok(())
}

fn parse_weights(text: &str) -> Result<Vec<f64>, CliError> {
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| iagft::Error::InvalidArgument(format!("bad weight `{t}`: {e}")).into()))
        .collect()
}

pub fn inspect_basis(weights_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let text = String::from_utf8(read_file(weights_path)?)
        .map_err(|_| iagft::Error::InvalidArgument("weight file is not UTF-8".into()))?;
    let q = parse_weights(&text)?;
    let side = (q.len() as f64).sqrt().round() as usize;
    if side == 0 || side * side != q.len() {
        return Err(iagft::Error::InvalidArgument(format!("{} weights do not form a square grid", q.len())).into());
    }
    let weights = InnerProductWeights::new(q.clone())?;
    let mut basis = compute_iagft(&grid_laplacian(side, side), &weights)?;
    if side == 8 {
        basis = basis.align_to(Dct2d::new().matrix()).0;
    }
    let n = basis.n();

    let mut dump = String::from("mode,eigenvalue");
    (0..n).for_each(|i| dump.push_str(&format!(",u{i}")));
    dump.push('\n');
    for k in 0..n {
        dump.push_str(&format!("{k},{}", basis.eigenvalues()[k]));
        basis.mode(k).iter().for_each(|u| dump.push_str(&format!(",{u}")));
        dump.push('\n');
    }

    let mut levels: Vec<f64> = q.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let profiles = levels
        .iter()
        .map(|&level| basis.mode_energy_profile(&q.iter().map(|&v| v == level).collect::<Vec<_>>()))
        .collect::<iagft::Result<Vec<_>>>()?;
    let mut energy = String::from("mode,variation");
    levels.iter().for_each(|l| energy.push_str(&format!(",energy_q{l}")));
    energy.push('\n');
    for k in 0..n {
        energy.push_str(&format!("{k},{}", profiles[0].variation[k]));
        profiles.iter().for_each(|p| energy.push_str(&format!(",{}", p.energy[k])));
        energy.push('\n');
    }
    write_file(&out_dir.join("basis.csv"), dump)?;
    write_file(&out_dir.join("energy.csv"), energy)?;
    println!("{side}x{side} grid, {} weight regions", levels.len());
    for k in 0..n.min(8) {
        let shares: Vec<String> = profiles.iter().map(|p| format!("{:.3}", p.energy[k])).collect();
        println!("  mode {k}: variation {:.4}, energy [{}]", basis.eigenvalues()[k], shares.join(", "));
    }
    Ok(())
}

pub fn weight_curve(delta: f64, out: &Path, max_variance: f64, points: usize) -> Result<(), CliError> {
    if points < 2 || max_variance.is_nan() || max_variance <= 0.0 {
        return Err(CliError::Usage("need --points >= 2 and a positive --max-variance".into()));
    }
    let variances: Vec<f64> = (0..points).map(|i| max_variance * i as f64 / (points - 1) as f64).collect();
    let table = curve(delta, &variances)?;
    write_file(out, weight_curve_csv(&table))?;
    println!("wrote {} points (Δ = {delta}) to {}", table.len(), out.display());
    Ok(())
}
