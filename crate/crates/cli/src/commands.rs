use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use pcsr_core::data::{
    generate_patches, normalize, patch_file_name, read_cloud, write_cloud, CloudFormat, DatasetManifest, Split,
};
use pcsr_core::training::{load_checkpoint, save_checkpoint, TrainSettings, Trainer};
use pcsr_core::{rng, Error, EvalConfig, MetricReport, PointCloud};

use crate::{Cli, Command, TrainArgs};

pub const INDEX_FILE: &str = "index.txt";

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn run(cli: Cli) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth { manifest, out_dir } => synth(&manifest, &out_dir, seed),
        Command::Train(args) => train(&args, cli.seed),
        Command::Upsample {
            checkpoint,
            input,
            output,
            iterations,
        } => upsample(&checkpoint, &input, &output, iterations),
        Command::Eval {
            pred,
            gt,
            reference,
            tau,
            num_disks,
        } => eval(&pred, &gt, reference.as_deref(), tau, num_disks),
    }
}

fn synth(manifest_path: &Path, out_dir: &Path, seed: u64) -> CliResult {
    let manifest = DatasetManifest::read(manifest_path)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let dataset_seed = rng::sub_seed(seed, "dataset");
    let mut index = String::from("# file split model center_x center_y center_z scale\n");
    for (i, entry) in manifest.entries.iter().enumerate() {
        let mut e = entry.clone();
        e.seed = rng::indexed_seed(dataset_seed, &[entry.seed]);
        for (j, patch) in generate_patches(&e)?.iter().enumerate() {
            let name = patch_file_name(entry.split, i, j);
            let path = out_dir.join(&name);
            write_cloud(&patch.gt, &path, CloudFormat::Xyz)?;
            let c = patch.normalization.center;
            index.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                name.display(),
                entry.split.name(),
                i,
                c[0],
                c[1],
                c[2],
                patch.normalization.scale
            ));
        }
        println!("{entry}: {} patches", entry.patches);
    }
    let path = out_dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(|e| io_err(&path, e))?;
    Ok(())
}

/// Ground-truth patches of one split, in index order.
fn load_split(dir: &Path, split: Split) -> CliResult<Vec<PointCloud>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(CliError::Input(format!("{}:{}: malformed index line", path.display(), n + 1)));
        }
        if fields[1] == split.name() {
            out.push(read_cloud(&dir.join(fields[0]), CloudFormat::Xyz)?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("{}: no {} patches", dir.display(), split.name())));
    }
    Ok(out)
}

fn resolve_settings(args: &TrainArgs, seed: Option<u64>, base: TrainSettings) -> CliResult<TrainSettings> {
    let mut s = base;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        s.apply_text(&text)
            .map_err(|(line, msg)| CliError::Input(format!("{}:{line}: {msg}", path.display())))?;
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    flag("seed", seed.map(|v| v.to_string()));
    flag("train.phase1_epochs", args.phase1_epochs.map(|v| v.to_string()));
    flag("train.phase2_epochs", args.phase2_epochs.map(|v| v.to_string()));
    flag("train.batch_size", args.batch_size.map(|v| v.to_string()));
    flag("train.learning_rate", args.learning_rate.map(|v| v.to_string()));
    flag("loss.lambda", args.lambda.map(|v| v.to_string()));
    flag("train.input_size", args.input_size.map(|v| v.to_string()));
    flag("train.checkpoint_interval", args.checkpoint_interval.map(|v| v.to_string()));
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    for (k, v) in flags {
        s.set(&k, &v).map_err(|e| CliError::Input(format!("flag {k}: {e}")))?;
    }
    s.validate()?;
    Ok(s)
}

fn train(args: &TrainArgs, seed: Option<u64>) -> CliResult {
    if !args.dataset_dir.is_dir() {
        return Err(CliError::Input(format!("dataset directory {} not found", args.dataset_dir.display())));
    }
    let mut trainer = match &args.resume {
        Some(path) => {
            let t = load_checkpoint(path)?;
            let settings = resolve_settings(args, seed, t.settings)?;
            if settings.generator != t.settings.generator || settings.discriminator != t.settings.discriminator {
                return Err(CliError::Input("architecture settings cannot change on resume".into()));
            }
            let mut t = Trainer { settings, ..t };
            t.g_adam.cfg.learning_rate = settings.train.learning_rate;
            t.d_adam.cfg.learning_rate = settings.train.learning_rate;
            t
        }
        None => Trainer::new(resolve_settings(args, seed, TrainSettings::default())?)?,
    };
    let patches = load_split(&args.dataset_dir, Split::Train)?;
    trainer.check_dataset(&patches)?;
    println!("# settings (flag > file > default)");
    print!("{}", trainer.settings.to_text());
    println!("# {} training patches", patches.len());

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut s = args.out_checkpoint.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let resuming = args.resume.is_some() && log_path.exists();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resuming)
        .write(true)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    if !resuming {
        writeln!(log, "step,l_cd,l_g,l_d").map_err(|e| io_err(&log_path, e))?;
    }

    let out = args.out_checkpoint.clone();
    let interval = trainer.settings.train.checkpoint_interval;
    let result = trainer.run(&patches, |t, l| {
        writeln!(log, "{}", l.csv())?;
        if let Some(e) = l.epoch_end {
            let opt = |v: Option<f64>| v.map(|x| format!(" {x:.6e}")).unwrap_or_default();
            println!("phase {:?} epoch {} mean l_cd {:.6e}{}{}", e.phase, e.epoch, e.l_cd, opt(e.l_g), opt(e.l_d));
        }
        if (l.step + 1) % interval == 0 {
            save_checkpoint(t, &out)?;
        }
        Ok(())
    });
    log.flush().map_err(|e| io_err(&log_path, e))?;
    result?;
    save_checkpoint(&trainer, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn upsample(checkpoint: &Path, input: &Path, output: &Path, iterations: u32) -> CliResult {
    let generator = load_checkpoint(checkpoint)?.generator;
    let mut cloud = read_cloud(input, CloudFormat::from_path(input))?;
    for _ in 0..iterations {
        let (normalized, norm) = normalize(&cloud)?;
        cloud = norm.invert(&generator.generate(&normalized)?)?;
    }
    write_cloud(&cloud, output, CloudFormat::from_path(output))?;
    println!("{} -> {} points", input.display(), cloud.len());
    Ok(())
}

fn eval(pred: &Path, gt: &Path, reference: Option<&Path>, tau: f64, num_disks: usize) -> CliResult {
    let p = read_cloud(pred, CloudFormat::from_path(pred))?;
    let g = read_cloud(gt, CloudFormat::from_path(gt))?;
    let r = match reference {
        Some(path) => read_cloud(path, CloudFormat::from_path(path))?,
        None => g.clone(),
    };
    let cfg = EvalConfig {
        tau,
        num_disks,
        ..EvalConfig::default()
    };
    let report = MetricReport::evaluate(&p, &g, &r, &cfg)?;
    println!("{}", report.header());
    println!("{}", report.values());
    Ok(())
}
