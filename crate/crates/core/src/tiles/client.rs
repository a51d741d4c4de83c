//! Rate-limited HTTP tile fetching backed by an on-disk cache.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::geo::{tile_to_quadkey, TileCoord};
use super::patch::TileSource;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "HEDONIC_TILE_API_KEY";
const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileClientConfig {
    /// Placeholders: `{quadkey}`, `{z}`, `{x}`, `{y}`, `{key}`.
    pub tile_url_template: String,
    pub cache_dir: PathBuf,
    /// Requests per second across all threads; 0 disables the limit.
    pub max_rps: f64,
    pub max_inflight: usize,
    pub max_retries: usize,
    pub retry_base_ms: u64,
    pub timeout_ms: u64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for TileClientConfig {
    fn default() -> Self {
        TileClientConfig {
            tile_url_template: String::new(),
            cache_dir: PathBuf::from("tile-cache"),
            max_rps: 10.0,
            max_inflight: 4,
            max_retries: 3,
            retry_base_ms: 500,
            timeout_ms: 30_000,
            api_key: None,
        }
    }
}

impl TileClientConfig {
    /// Picks up the API key from `HEDONIC_TILE_API_KEY` when set.
    pub fn with_env_key(mut self) -> Self {
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tile_url_template;
        if t.is_empty() {
            return Err(Error::Config("tile_url_template is empty".into()));
        }
        let xyz = t.contains("{z}") && t.contains("{x}") && t.contains("{y}");
        if !t.contains("{quadkey}") && !xyz {
            return Err(Error::Config(format!(
                "tile_url_template {t:?} needs {{quadkey}} or {{z}}/{{x}}/{{y}}"
            )));
        }
        if t.contains("{key}") && self.api_key.is_none() {
            return Err(Error::Config(format!(
                "tile_url_template uses {{key}} but {API_KEY_ENV} is not set"
            )));
        }
        if self.max_inflight == 0 {
            return Err(Error::Config("max_inflight must be at least 1".into()));
        }
        if !self.max_rps.is_finite() || self.max_rps < 0.0 {
            return Err(Error::Config("max_rps must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn tile_url(&self, coord: TileCoord) -> String {
        self.tile_url_template
            .replace("{quadkey}", tile_to_quadkey(coord).as_str())
            .replace("{z}", &coord.zoom.to_string())
            .replace("{x}", &coord.x.to_string())
            .replace("{y}", &coord.y.to_string())
            .replace("{key}", self.api_key.as_deref().unwrap_or(""))
    }

    pub fn cache_path(&self, coord: TileCoord) -> PathBuf {
        self.cache_dir
            .join(coord.zoom.to_string())
            .join(coord.x.to_string())
            .join(format!("{}.png", coord.y))
    }
}

pub fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(&PNG_SIGNATURE)
}

type FlightResult = Option<std::result::Result<Arc<Vec<u8>>, Error>>;

#[derive(Default)]
struct Flight {
    result: Mutex<FlightResult>,
    done: Condvar,
}

/// Counting semaphore bounding concurrent HTTP requests.
struct Slots {
    free: Mutex<usize>,
    released: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.released.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.released.notify_one();
    }
}

/// Thread-safe tile client. Concurrent requests for the same uncached tile
/// share one download.
pub struct TileClient {
    config: TileClientConfig,
    agent: ureq::Agent,
    next_start: Mutex<Instant>,
    slots: Slots,
    inflight: Mutex<HashMap<TileCoord, Arc<Flight>>>,
    requests: AtomicUsize,
    temp_counter: AtomicUsize,
}

enum Attempt {
    Done(Vec<u8>),
    Retry(String),
    Fail(Error),
}

impl TileClient {
    pub fn new(config: TileClientConfig) -> Result<Self> {
        config.validate()?;
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(TileClient {
            agent: ureq::Agent::new_with_config(agent_config),
            next_start: Mutex::new(Instant::now()),
            slots: Slots {
                free: Mutex::new(config.max_inflight),
                released: Condvar::new(),
            },
            inflight: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
            temp_counter: AtomicUsize::new(0),
            config,
        })
    }

    pub fn config(&self) -> &TileClientConfig {
        &self.config
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Cached bytes if present, otherwise a (deduplicated) download.
    pub fn fetch_tile(&self, coord: TileCoord) -> Result<Vec<u8>> {
        let path = self.config.cache_path(coord);
        if let Some(bytes) = read_cached(&path)? {
            return Ok(bytes);
        }

        let (flight, leader) = {
            let mut inflight = self.inflight.lock().unwrap();
            match inflight.get(&coord) {
                Some(f) => (Arc::clone(f), false),
                None => {
                    let f = Arc::new(Flight::default());
                    inflight.insert(coord, Arc::clone(&f));
                    (f, true)
                }
            }
        };

        if !leader {
            let mut slot = flight.result.lock().unwrap();
            while slot.is_none() {
                slot = flight.done.wait(slot).unwrap();
            }
            return match slot.as_ref().unwrap() {
                Ok(bytes) => Ok(bytes.as_ref().clone()),
                Err(e) => Err(replicate(e)),
            };
        }

        // A concurrent leader may have finished between our cache check and
        // taking the flight slot.
        let outcome = match read_cached(&path) {
            Ok(Some(bytes)) => Ok(bytes),
            Ok(None) => self.download(coord, &path),
            Err(e) => Err(e),
        };
        let shared = outcome.map(Arc::new);
        let reply = match &shared {
            Ok(bytes) => Ok(bytes.as_ref().clone()),
            Err(e) => Err(replicate(e)),
        };
        *flight.result.lock().unwrap() = Some(shared);
        flight.done.notify_all();
        self.inflight.lock().unwrap().remove(&coord);
        reply
    }

    fn throttle(&self) {
        if self.config.max_rps <= 0.0 {
            return;
        }
        let interval = Duration::from_secs_f64(1.0 / self.config.max_rps);
        let wait = {
            let mut next = self.next_start.lock().unwrap();
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + interval;
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }

    fn download(&self, coord: TileCoord, path: &Path) -> Result<Vec<u8>> {
        let url = self.config.tile_url(coord);
        let attempts = self.config.max_retries + 1;
        let mut last_reason = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.retry_base_ms << (attempt - 1).min(16);
                log::debug!("retrying {url} in {backoff} ms ({last_reason})");
                thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(&url) {
                Attempt::Done(bytes) => {
                    self.write_cache(path, &bytes)?;
                    return Ok(bytes);
                }
                Attempt::Retry(reason) => last_reason = reason,
                Attempt::Fail(e) => return Err(e),
            }
        }
        Err(Error::FetchTransient {
            url,
            attempts,
            reason: last_reason,
        })
    }

    fn attempt(&self, url: &str) -> Attempt {
        let _slot = self.slots.acquire();
        self.throttle();
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut response = match self.agent.get(url).call() {
            Ok(r) => r,
            Err(e) => {
                return match e {
                    ureq::Error::Timeout(_)
                    | ureq::Error::ConnectionFailed
                    | ureq::Error::HostNotFound
                    | ureq::Error::Io(_)
                    | ureq::Error::Protocol(_) => Attempt::Retry(e.to_string()),
                    other => Attempt::Fail(Error::FetchPermanent {
                        url: url.to_owned(),
                        reason: other.to_string(),
                    }),
                }
            }
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => match response.body_mut().read_to_vec() {
                Ok(bytes) if is_png(&bytes) => Attempt::Done(bytes),
                Ok(bytes) => Attempt::Fail(Error::Content {
                    url: url.to_owned(),
                    reason: format!("body of {} bytes is not a PNG", bytes.len()),
                }),
                Err(e) => Attempt::Retry(format!("reading body: {e}")),
            },
            500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fail(Error::FetchPermanent {
                url: url.to_owned(),
                reason: format!("HTTP {status}"),
            }),
        }
    }

    /// Temp file plus rename, so readers never observe a partial tile.
    fn write_cache(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.temp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = dir.join(format!(
            ".{}.{}.{n}.tmp",
            path.file_name().unwrap().to_string_lossy(),
            std::process::id()
        ));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

impl TileSource for TileClient {
    fn tile_png(&self, coord: TileCoord) -> Result<Vec<u8>> {
        self.fetch_tile(coord)
    }

    fn max_parallel(&self) -> usize {
        self.config.max_inflight
    }
}

fn read_cached(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Errors are not `Clone`; waiters on a shared download get an equivalent copy.
fn replicate(e: &Error) -> Error {
    match e {
        Error::FetchPermanent { url, reason } => Error::FetchPermanent {
            url: url.clone(),
            reason: reason.clone(),
        },
        Error::FetchTransient {
            url,
            attempts,
            reason,
        } => Error::FetchTransient {
            url: url.clone(),
            attempts: *attempts,
            reason: reason.clone(),
        },
        Error::Content { url, reason } => Error::Content {
            url: url.clone(),
            reason: reason.clone(),
        },
        other => Error::FetchTransient {
            url: String::new(),
            attempts: 0,
            reason: other.to_string(),
        },
    }
}
