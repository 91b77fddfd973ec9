use std::io::Read;
use std::path::PathBuf;

use adnet::data::{parse_idx, MnistPaths};
use flate2::read::GzDecoder;

use crate::{Failure, FetchArgs, DATA_DIR_ENV};

pub const DEFAULT_MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist/";

fn download(url: &str) -> Result<Vec<u8>, Failure> {
    let resp = ureq::get(url)
        .call()
        .map_err(|e| Failure::Runtime(format!("{url}: {e}")))?;
    let mut gz = Vec::new();
    resp.into_reader()
        .read_to_end(&mut gz)
        .map_err(|e| Failure::Runtime(format!("{url}: {e}")))?;
    let mut raw = Vec::new();
    GzDecoder::new(gz.as_slice())
        .read_to_end(&mut raw)
        .map_err(|e| Failure::Runtime(format!("{url}: not gzip data ({e})")))?;
    Ok(raw)
}

/// Downloads each file, checks it parses as IDX, and stores it uncompressed.
pub fn fetch_mnist(a: &FetchArgs) -> Result<(), Failure> {
    let dir = a
        .dir
        .clone()
        .or_else(|| {
            std::env::var_os(DATA_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let base = a.mirror.trim_end_matches('/');
    for name in MnistPaths::FILES {
        let target = dir.join(name);
        if target.exists() && !a.force {
            println!("{} exists", target.display());
            continue;
        }
        let raw = download(&format!("{base}/{name}.gz"))?;
        parse_idx(&raw).map_err(|e| Failure::Runtime(format!("{name}: {e}")))?;
        std::fs::write(&target, &raw)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", target.display())))?;
        println!("wrote {}", target.display());
    }
    Ok(())
}
