use std::path::Path;

use crate::error::{Error, Result};
use crate::net::PwocConfig;

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Renders `config` as `key = value` lines that [`parse_config`] reads back.
pub fn config_to_text(config: &PwocConfig) -> String {
    format!(
        "d_max = {}\nbottom_up_channels = {}\npyramid_channels = {}\nleaky_slope = {:?}\nocc_channels = {}\nsf_channels = {}\nctx_channels = {}\nctx_dilations = {}\n",
        config.d_max,
        list(&config.bottom_up_channels),
        config.pyramid_channels,
        config.leaky_slope,
        list(&config.occ_channels),
        list(&config.sf_channels),
        list(&config.ctx_channels),
        list(&config.ctx_dilations),
    )
}

/// Parses `key = value` lines over the defaults. `#` starts a comment;
/// lists are comma separated.
pub fn parse_config(text: &str) -> Result<PwocConfig> {
    let mut cfg = PwocConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let bad = |msg: String| Error::format("config", format!("line {lineno}: {msg}"));
        let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("{key}: {s:?} is not a non-negative integer")));
        let ints = |s: &str| s.split(',').map(int).collect::<Result<Vec<usize>>>();
        match key {
            "d_max" => cfg.d_max = int(value)?,
            "pyramid_channels" => cfg.pyramid_channels = int(value)?,
            "leaky_slope" => cfg.leaky_slope = value.parse().map_err(|_| bad(format!("leaky_slope: {value:?} is not a number")))?,
            "bottom_up_channels" => cfg.bottom_up_channels = ints(value)?,
            "occ_channels" => cfg.occ_channels = ints(value)?,
            "sf_channels" => cfg.sf_channels = ints(value)?,
            "ctx_channels" => cfg.ctx_channels = ints(value)?,
            "ctx_dilations" => cfg.ctx_dilations = ints(value)?,
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<PwocConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
