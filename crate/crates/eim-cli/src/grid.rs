//! Density-grid rendering. The target's exact density is evaluated at cell
//! centers; a trained model's density is estimated by binning exact samples
//! into the same cells. Each grid is written twice under `--out`: the raw
//! values as a CSV matrix and a max-normalized 8-bit PGM image.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use eim_core::rng::{streams, Rng};
use eim_core::targets::{Target, TargetKind};

/// Largest supported grid side; past this the artifacts stop being useful
/// and the histogram gets too sparse to read.
const MAX_RESOLUTION: usize = 2048;

#[derive(Args)]
pub struct GridArgs {
    /// config.json of a trained run; renders its target and the model.
    #[arg(long, conflicts_with = "target")]
    config: Option<PathBuf>,
    /// Checkpoint to load (default: model.ckpt next to the config).
    #[arg(long, requires = "config")]
    ckpt: Option<PathBuf>,
    /// Render only this target's exact density.
    #[arg(long, value_parser = crate::parse_target)]
    target: Option<TargetKind>,
    /// Cells per grid side.
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    /// Window as xmin,xmax,ymin,ymax.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        default_values_t = [-1.6, 1.6, -1.6, 1.6]
    )]
    bounds: Vec<f64>,
    /// Model samples binned into the histogram.
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    /// Seed for the histogram draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for target.csv/.pgm and model.csv/.pgm.
    #[arg(long)]
    out: PathBuf,
}

/// Axis-aligned window with `res` cells per side. Row 0 of every grid is the
/// top of the image (largest y), matching the PGM orientation.
struct Window {
    res: usize,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Window {
    fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let dx = (self.xmax - self.xmin) / self.res as f64;
        let dy = (self.ymax - self.ymin) / self.res as f64;
        let x = self.xmin + (col as f64 + 0.5) * dx;
        let y = self.ymin + ((self.res - 1 - row) as f64 + 0.5) * dy;
        (x, y)
    }

    /// (row, col) of the cell containing the point, or None outside.
    fn bin(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < self.xmin || x >= self.xmax || y < self.ymin || y >= self.ymax {
            return None;
        }
        let fx = (x - self.xmin) / (self.xmax - self.xmin);
        let fy = (y - self.ymin) / (self.ymax - self.ymin);
        let col = ((fx * self.res as f64) as usize).min(self.res - 1);
        let row_up = ((fy * self.res as f64) as usize).min(self.res - 1);
        Some((self.res - 1 - row_up, col))
    }
}

pub fn run(args: &GridArgs) -> Result<()> {
    if args.resolution == 0 || args.resolution > MAX_RESOLUTION {
        bail!("resolution must be between 1 and {MAX_RESOLUTION}");
    }
    let [xmin, xmax, ymin, ymax] = args.bounds[..] else {
        bail!("--bounds needs exactly xmin,xmax,ymin,ymax");
    };
    if xmin >= xmax || ymin >= ymax {
        bail!("--bounds window is empty: [{xmin},{xmax}] x [{ymin},{ymax}]");
    }
    let w = Window { res: args.resolution, xmin, xmax, ymin, ymax };
    eprintln!(
        "resolved config: resolution={} bounds=[{xmin},{xmax},{ymin},{ymax}] samples={} seed={}",
        w.res, args.samples, args.seed
    );
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let (target_kind, run) = match (&args.config, &args.target) {
        (Some(config_path), None) => {
            let (config, store, model) = crate::load_run(config_path, &args.ckpt)?;
            (config.target, Some((store, model)))
        }
        (None, Some(kind)) => (*kind, None),
        _ => bail!("pass exactly one of --config or --target"),
    };

    let target = Target::new(target_kind);
    let mut exact = Vec::with_capacity(w.res * w.res);
    for row in 0..w.res {
        for col in 0..w.res {
            let (x, y) = w.cell_center(row, col);
            exact.push(target.log_density(x, y).exp());
        }
    }
    write_grid(&args.out, "target", &w, &exact, |v| format!("{v:?}"))?;

    if let Some((store, model)) = run {
        let mut rng = Rng::new(args.seed).stream(streams::GRID);
        let mut counts = vec![0u64; w.res * w.res];
        for _ in 0..args.samples {
            let p = model.sample(&store, &mut rng)?;
            if let Some((row, col)) = w.bin(p[0], p[1]) {
                counts[row * w.res + col] += 1;
            }
        }
        let as_f64: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        write_grid(&args.out, "model", &w, &as_f64, |v| format!("{}", *v as u64))?;
    }
    Ok(())
}

/// Write `<stem>.csv` (raw values, row-major from the image top) and
/// `<stem>.pgm` (values scaled so the maximum maps to 255).
fn write_grid(
    dir: &Path,
    stem: &str,
    w: &Window,
    values: &[f64],
    fmt: impl Fn(&f64) -> String,
) -> Result<()> {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        bail!("{stem} grid is zero everywhere in the window");
    }
    let mut csv = String::new();
    for row in 0..w.res {
        let cells: Vec<String> = values[row * w.res..(row + 1) * w.res].iter().map(&fmt).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    fs::write(dir.join(format!("{stem}.csv")), csv)?;

    let mut pgm = format!("P5\n{} {}\n255\n", w.res, w.res).into_bytes();
    pgm.extend(values.iter().map(|&v| (255.0 * v / max).round().clamp(0.0, 255.0) as u8));
    let path = dir.join(format!("{stem}.pgm"));
    fs::write(&path, pgm).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
