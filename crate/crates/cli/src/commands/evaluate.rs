//! `tweedie evaluate`: per-image and mean PSNR between a prediction
//! directory and a reference directory, matched by filename. Color
//! images use the mean squared error over all channels, recorded in
//! the manifest.

use std::io::Write;
use std::path::Path;

use crate::commands::{file_name, list_images};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::netpbm::{psnr, read_netpbm};

pub struct EvaluateArgs<'a> {
    pub pred: &'a Path,
    pub reference: &'a Path,
    pub out: &'a Path,
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn run(args: &EvaluateArgs) -> Result<f64> {
    let preds = list_images(args.pred)?;
    let mut rows: Vec<(String, f64)> = Vec::with_capacity(preds.len());
    let mut manifest = RunManifest::new("evaluate");
    manifest.set("psnr_definition", "10*log10(1/mse), mse over all channels, [0,1] scale");

    for pred_path in &preds {
        let name = file_name(pred_path);
        let ref_path = args.reference.join(&name);
        if !ref_path.exists() {
            return Err(CliError::data(format!(
                "no reference for {} in {}",
                name,
                args.reference.display()
            )));
        }
        let p = read_netpbm(pred_path)?;
        let r = read_netpbm(&ref_path)?;
        let value = psnr(&p.tensor, &r.tensor)?;
        manifest.add_input(pred_path)?;
        manifest.add_input(&ref_path)?;
        rows.push((name, value));
    }

    let mean = rows.iter().map(|(_, v)| *v).sum::<f64>() / rows.len() as f64;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(args.out)?);
        writeln!(f, "image,psnr_db")?;
        for (name, value) in &rows {
            writeln!(f, "{name},{}", format_db(*value))?;
        }
        writeln!(f, "mean,{}", format_db(mean))?;
    }
    for (name, value) in &rows {
        manifest.add_metric_row(&[("image", name.clone()), ("psnr_db", format_db(*value))]);
    }
    manifest.add_metric_row(&[("image", "mean".to_string()), ("psnr_db", format_db(mean))]);
    manifest.add_output(args.out)?;
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!("mean psnr: {} dB over {} images", format_db(mean), rows.len());
    Ok(mean)
}
