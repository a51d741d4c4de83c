//! Tile-client scenarios against the scripted server. Each returns a short
//! description of what went wrong, so they can back both ordinary tests and
//! the acceptance report.

use std::path::Path;
use std::time::Duration;

use hedonic_core::tiles::{compose_patch, PatchRequest, TileClient, TileClientConfig, TileCoord};
use hedonic_core::Error;

use super::http::{parse_tile_path, tile_png, Reply, TestServer};

pub fn client_config(server: &TestServer, cache: &Path) -> TileClientConfig {
    TileClientConfig {
        tile_url_template: format!("{}/{{z}}/{{x}}/{{y}}.png", server.base_url()),
        cache_dir: cache.to_path_buf(),
        max_rps: 0.0,
        max_inflight: 4,
        max_retries: 3,
        retry_base_ms: 1,
        timeout_ms: 2_000,
        api_key: None,
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn client_error_not_retried() -> Result<(), String> {
    for status in [400u16, 403, 404, 429] {
        let server = TestServer::start(move |_, _| Reply::Status(status, b"nope".to_vec()));
        let cache = tempfile::tempdir().unwrap();
        let client = TileClient::new(client_config(&server, cache.path())).unwrap();
        let err = client.fetch_tile(TileCoord::new(1, 2, 3).unwrap()).unwrap_err();
        check(matches!(err, Error::FetchPermanent { .. }), || {
            format!("HTTP {status}: expected a permanent error, got {err}")
        })?;
        check(server.total_hits() == 1, || {
            format!("HTTP {status}: {} requests, expected 1", server.total_hits())
        })?;
    }
    Ok(())
}

pub fn server_error_retried_three_times() -> Result<(), String> {
    let server = TestServer::start(|_, _| Reply::Status(503, Vec::new()));
    let cache = tempfile::tempdir().unwrap();
    let client = TileClient::new(client_config(&server, cache.path())).unwrap();
    let err = client.fetch_tile(TileCoord::new(1, 2, 3).unwrap()).unwrap_err();
    check(matches!(err, Error::FetchTransient { attempts: 4, .. }), || {
        format!("expected a transient error after 4 attempts, got {err}")
    })?;
    check(server.total_hits() == 4, || {
        format!("{} requests for 1 original + 3 retries", server.total_hits())
    })?;
    check(client.network_requests() == 4, || {
        format!("client counted {} requests", client.network_requests())
    })
}

pub fn server_error_then_success() -> Result<(), String> {
    let png = tile_png(5);
    let body = png.clone();
    let server = TestServer::start(move |_, seen| {
        if seen < 2 {
            Reply::Status(502, Vec::new())
        } else {
            Reply::Status(200, body.clone())
        }
    });
    let cache = tempfile::tempdir().unwrap();
    let client = TileClient::new(client_config(&server, cache.path())).unwrap();
    let bytes = client
        .fetch_tile(TileCoord::new(1, 2, 3).unwrap())
        .map_err(|e| format!("fetch failed: {e}"))?;
    check(bytes == png, || "wrong tile body".into())?;
    check(server.total_hits() == 3, || format!("{} requests, expected 3", server.total_hits()))
}

pub fn timeout_is_retried() -> Result<(), String> {
    let png = tile_png(1);
    let server = TestServer::start(move |_, seen| {
        if seen == 0 {
            Reply::Delayed(Duration::from_millis(600), 200, png.clone())
        } else {
            Reply::Status(200, png.clone())
        }
    });
    let cache = tempfile::tempdir().unwrap();
    let config = TileClientConfig {
        timeout_ms: 150,
        ..client_config(&server, cache.path())
    };
    let client = TileClient::new(config).unwrap();
    client
        .fetch_tile(TileCoord::new(1, 2, 3).unwrap())
        .map_err(|e| format!("fetch failed: {e}"))?;
    check(client.network_requests() == 2, || {
        format!("{} requests, expected 2", client.network_requests())
    })
}

pub fn sample_request() -> PatchRequest {
    PatchRequest {
        lat: 35.595,
        lon: -82.551,
        zoom: 16,
        extent_m: 600.0,
        out_size: 64,
    }
}

fn tile_server() -> TestServer {
    TestServer::start(|path, _| match parse_tile_path(path) {
        Some((_, x, y)) => Reply::Status(200, tile_png(x.wrapping_mul(31) ^ y)),
        None => Reply::Status(404, Vec::new()),
    })
}

pub fn warm_cache_compose_is_offline_and_stable() -> Result<(), String> {
    let server = tile_server();
    let cache = tempfile::tempdir().unwrap();
    let req = sample_request();

    let cold = TileClient::new(client_config(&server, cache.path())).unwrap();
    let first = compose_patch(&cold, &req).map_err(|e| format!("cold compose: {e}"))?;
    let downloaded = server.total_hits();
    check(downloaded >= 4 && cold.network_requests() == downloaded, || {
        format!(
            "cold compose: {downloaded} server hits, {} client requests",
            cold.network_requests()
        )
    })?;

    let warm = TileClient::new(client_config(&server, cache.path())).unwrap();
    let second = compose_patch(&warm, &req).map_err(|e| format!("warm compose: {e}"))?;
    let third = compose_patch(&warm, &req).map_err(|e| format!("warm compose: {e}"))?;
    check(warm.network_requests() == 0 && server.total_hits() == downloaded, || {
        format!("warm compose made {} network calls", warm.network_requests())
    })?;
    check(first == second && second == third, || "warm patches differ from cold patch".into())
}

pub fn concurrent_requests_share_one_download() -> Result<(), String> {
    let png = tile_png(9);
    let server = TestServer::start(move |_, _| {
        Reply::Delayed(Duration::from_millis(100), 200, png.clone())
    });
    let cache = tempfile::tempdir().unwrap();
    let client = TileClient::new(client_config(&server, cache.path())).unwrap();
    let coord = TileCoord::new(4, 5, 6).unwrap();
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..6).map(|_| s.spawn(|| client.fetch_tile(coord))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    check(results.iter().all(|r| r.is_ok()), || "a waiter failed".into())?;
    check(server.total_hits() == 1, || format!("{} downloads of one tile", server.total_hits()))
}
