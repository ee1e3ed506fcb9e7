//! File formats and manifests.

mod manifest;
mod pfm;
mod png;

pub use manifest::{
    load_field, manifest_path, read_json, read_rig, read_scene, read_solve_config, save_field, sha256_bytes,
    sha256_file, write_json, write_rig, write_solve_config, DirLock, FieldEntry, FieldManifest, LightEntry,
    MapsSpec, RigFile, RigSpec, SceneFile, SceneSpec, SphereSpec, SpiralSpec, FIELD_MANIFEST_NAME,
    FORMAT_VERSION, LOCK_NAME,
};
pub use pfm::{
    decode_pfm, encode_pfm, read_normal_map, read_pfm, read_scalar_map, write_normal_map, write_pfm,
    write_pfm_with, write_scalar_map, Endian,
};
pub use png::{srgb_encode, tonemap_bytes, write_png_tonemapped};
