//! Downloads registry weights into the cache.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{AdapterError, Result};
use crate::registry::{ModelRegistry, ModelRole};

pub const DEFAULT_ENDPOINT: &str = "https://huggingface.co";

/// Environment variable overriding the download endpoint.
pub const ENDPOINT_ENV: &str = "INSERTKIT_HF_ENDPOINT";

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FetchReport {
    pub downloaded: Vec<PathBuf>,
    /// Files already present in the cache.
    pub present: Vec<PathBuf>,
    /// Roles backed by built-in adapters with nothing to fetch.
    pub builtin: Vec<ModelRole>,
}

pub fn endpoint(override_endpoint: Option<&str>) -> String {
    override_endpoint
        .map(str::to_string)
        .or_else(|| std::env::var(ENDPOINT_ENV).ok())
        .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string())
        .trim_end_matches('/')
        .to_string()
}

pub fn file_url(endpoint: &str, repo: &str, revision: &str, path: &str) -> String {
    format!("{endpoint}/{repo}/resolve/{revision}/{path}")
}

fn download(client: &reqwest::blocking::Client, url: &str, dest: &Path) -> Result<()> {
    let fail = |reason: String| AdapterError::Download {
        url: url.to_string(),
        reason,
    };
    let mut resp = client.get(url).send().map_err(|e| fail(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(fail(format!("HTTP {}", resp.status())));
    }
    if let Some(parent) = dest.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = dest.with_extension("partial");
    let mut file = std::fs::File::create(&tmp)?;
    resp.copy_to(&mut file).map_err(|e| fail(e.to_string()))?;
    file.flush()?;
    drop(file);
    std::fs::rename(&tmp, dest)?;
    Ok(())
}

/// Fetches every file of `roles` that is not yet in the cache. Files are
/// written to a `.partial` sibling first and renamed once complete.
pub fn fetch_models(
    registry: &ModelRegistry,
    roles: &[ModelRole],
    cache_root: &Path,
    endpoint_override: Option<&str>,
) -> Result<FetchReport> {
    let endpoint = endpoint(endpoint_override);
    let client = reqwest::blocking::Client::builder()
        .timeout(None)
        .build()
        .map_err(|e| AdapterError::Download {
            url: endpoint.clone(),
            reason: e.to_string(),
        })?;
    let mut report = FetchReport::default();
    for &role in roles {
        let entry = registry
            .get(role)
            .ok_or_else(|| AdapterError::Registry(format!("no model registered for role `{role}`")))?;
        if entry.is_builtin() {
            report.builtin.push(role);
            continue;
        }
        let dir = ModelRegistry::entry_dir(cache_root, role, entry);
        for (repo, path) in entry.sources() {
            let dest = dir.join(entry.local_path(&repo, &path));
            if dest.is_file() {
                report.present.push(dest);
                continue;
            }
            let url = file_url(&endpoint, &repo, &entry.revision, &path);
            tracing::info!(%url, dest = %dest.display(), "fetching");
            download(&client, &url, &dest)?;
            report.downloaded.push(dest);
        }
    }
    Ok(report)
}
