use std::path::{Path, PathBuf};

use anyhow::Context;
use tracecard::card::FailurePatterns;
use tracecard::PricingTable;
use tracecard_ingest::ServiceConfig;

use crate::{Cli, Failure, WithCode, EXIT_CONFIG};

/// Everything commands need from flags, config file and environment,
/// validated up front.
pub struct Settings {
    pub service: ServiceConfig,
    pub pricing: PricingTable,
    pub failure_patterns: FailurePatterns,
    pub denylist: Vec<String>,
    pub seed: u64,
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

impl Settings {
    pub fn resolve(cli: &Cli) -> Result<Self, Failure> {
        let mut service = ServiceConfig::from_process_env(cli.config.as_deref()).code(EXIT_CONFIG)?;
        if let Some(dir) = &cli.data_dir {
            service.data_dir = dir.clone();
        }
        if let Some(p) = &cli.pricing {
            service.pricing = Some(p.clone());
        }
        let pricing = match &service.pricing {
            Some(p) => PricingTable::load(p)
                .with_context(|| format!("pricing table {}", p.display()))
                .code(EXIT_CONFIG)?,
            None => PricingTable::default(),
        };
        let failure_patterns = match &cli.failure_patterns {
            Some(p) => read(p)
                .and_then(|t| Ok(FailurePatterns::parse_file(&t)?))
                .code(EXIT_CONFIG)?,
            None => FailurePatterns::default(),
        };
        let denylist = match &cli.denylist {
            Some(p) => read(p)
                .code(EXIT_CONFIG)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
            None => Vec::new(),
        };
        Ok(Settings {
            service,
            pricing,
            failure_patterns,
            denylist,
            seed: cli.seed,
        })
    }

    pub fn data_dir(&self) -> &PathBuf {
        &self.service.data_dir
    }
}
