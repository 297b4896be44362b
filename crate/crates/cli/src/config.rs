//! `key = value` configuration files. Command-line flags take precedence
//! over file entries.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Keys read by the subcommands themselves.
const COMMAND_KEYS: &[&str] = &[
    "seed",
    "out",
    "quiet",
    "sites",
    "manifest",
    "input",
    "labels",
    "backend",
    "mask",
    "mask_dir",
    "pred_dir",
    "labels_from",
    "erode",
    "stat",
    "crossval",
    "site_a",
    "site_b",
    "range",
    "significance",
    "base_hu_window",
    "rod_hu_margin",
    "search_region",
    "min_component_voxels",
];

/// Case-template keys; these may also carry a `<site>.` prefix.
pub const TEMPLATE_KEYS: &[&str] = &[
    "dims",
    "spacing",
    "origin",
    "slab_width",
    "slab_height",
    "slab_length",
    "rod_radius",
    "rod_pitch",
    "rod_densities",
    "base_density",
    "sagitta",
    "axial_tilt",
    "alpha",
    "beta",
    "noise_sd",
    "kernel_blur_sd",
    "table_gap",
    "body_semi_axes",
    "body_gap",
    "soft_tissue",
    "bone",
    "metal_streaks",
    "crop_fraction",
    "halation",
    "jitter",
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            let bare = key.split_once('.').map_or(key, |(_, k)| k);
            let known = if key.contains('.') {
                TEMPLATE_KEYS.contains(&bare)
            } else {
                COMMAND_KEYS.contains(&key) || TEMPLATE_KEYS.contains(&key)
            };
            if !known {
                return Err(CliError::Config(format!("config line {}: unknown key '{key}'", n + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!(
                    "config line {}: duplicate key '{key}'",
                    n + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parsed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::Config(format!("invalid value '{v}' for '{key}'")))
            })
            .transpose()
    }

    /// Whitespace-separated list of exactly `N` values.
    pub fn get_array<T: FromStr + Copy + Default, const N: usize>(
        &self,
        key: &str,
    ) -> Result<Option<[T; N]>, CliError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let err = || CliError::Config(format!("'{key}' expects {N} values, got '{v}'"));
        let parts: Vec<T> = v
            .split_whitespace()
            .map(|p| p.parse::<T>().map_err(|_| err()))
            .collect::<Result<_, _>>()?;
        let arr: [T; N] = parts.try_into().map_err(|_| err())?;
        Ok(Some(arr))
    }

    /// `flag` if given, else the config entry.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}
