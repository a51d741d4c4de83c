//! Web-Mercator tile geometry, quadkeys, and satellite patch acquisition.

#[cfg(feature = "fetch")]
mod client;
mod geo;
mod patch;

#[cfg(feature = "fetch")]
pub use client::{is_png, TileClient, TileClientConfig, API_KEY_ENV};
pub use geo::{
    clip_latitude, clip_longitude, ground_resolution, latlon_to_pixel_xy, map_size,
    patch_side_px, pixel_to_tile, quadkey_to_tile, tile_to_quadkey, QuadKey, TileCoord,
    EARTH_RADIUS_M, MAX_LATITUDE, MAX_ZOOM, MIN_ZOOM, TILE_SIZE,
};
pub use patch::{compose_patch, PatchRequest, PatchWindow, TileSource};
