//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus two binary files per
//! sample: images as `IMG1 w h c\n` followed by little-endian f32 payload,
//! clouds as `PCD1 n\n` followed by little-endian f32 triples. GPS tracks,
//! labels, and poses live in the manifest at full decimal precision.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::PathLossLabel;
use crate::sensors::{
    config_digest, hex_digest, Dataset, DatasetMeta, GpsFix, Image, PointCloud, Sample,
    SamplePose, SplitIndices,
};

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSample {
    id: usize,
    image_file: String,
    image_sha256: String,
    cloud_file: String,
    cloud_sha256: String,
    gps_track: Vec<GpsFix>,
    label: PathLossLabel,
    pose: SamplePose,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    sample_count: usize,
    scene_config_digest: String,
    meta: DatasetMeta,
    split: SplitIndices,
    samples: Vec<ManifestSample>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_digest(hasher)
}

fn encode_image(img: &Image) -> Vec<u8> {
    let mut out = format!("IMG1 {} {} 3\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn encode_cloud(pc: &PointCloud) -> Vec<u8> {
    let mut out = format!("PCD1 {}\n", pc.points.len()).into_bytes();
    out.reserve(pc.points.len() * 12);
    for p in &pc.points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn split_header(bytes: &[u8], file: &Path) -> Result<(String, usize)> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Corruption {
        file: file.to_path_buf(),
        reason: "missing header line".into(),
    })?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Corruption {
            file: file.to_path_buf(),
            reason: "header is not ASCII".into(),
        })?
        .to_string();
    Ok((header, nl + 1))
}

fn decode_image(bytes: &[u8], file: &Path) -> Result<Image> {
    let (header, payload_at) = split_header(bytes, file)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "IMG1" {
        return Err(Error::Corruption {
            file: file.to_path_buf(),
            reason: format!("bad image header {header:?}"),
        });
    }
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| Error::Corruption {
            file: file.to_path_buf(),
            reason: format!("bad image header {header:?}"),
        })
    };
    let (w, h, c) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if c != 3 {
        return Err(Error::Corruption {
            file: file.to_path_buf(),
            reason: format!("expected 3 channels, header says {c}"),
        });
    }
    let payload = &bytes[payload_at..];
    if payload.len() != w * h * c * 4 {
        return Err(Error::Corruption {
            file: file.to_path_buf(),
            reason: format!(
                "payload {} bytes, header implies {}",
                payload.len(),
                w * h * c * 4
            ),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Image::from_data(w, h, data)
}

fn decode_cloud(bytes: &[u8], file: &Path) -> Result<PointCloud> {
    let (header, payload_at) = split_header(bytes, file)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 || fields[0] != "PCD1" {
        return Err(Error::Corruption {
            file: file.to_path_buf(),
            reason: format!("bad cloud header {header:?}"),
        });
    }
    let n = fields[1].parse::<usize>().map_err(|_| Error::Corruption {
        file: file.to_path_buf(),
        reason: format!("bad cloud header {header:?}"),
    })?;
    let payload = &bytes[payload_at..];
    if payload.len() != n * 12 {
        return Err(Error::Corruption {
            file: file.to_path_buf(),
            reason: format!("payload {} bytes, header implies {}", payload.len(), n * 12),
        });
    }
    let mut points = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(12) {
        points.push([
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]),
            f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]),
            f32::from_le_bytes([chunk[8], chunk[9], chunk[10], chunk[11]]),
        ]);
    }
    Ok(PointCloud { points })
}

fn image_file_name(id: usize) -> String {
    format!("img_{id:06}.bin")
}

fn cloud_file_name(id: usize) -> String {
    format!("pcd_{id:06}.bin")
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut manifest_samples = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let image_file = image_file_name(s.id);
        let cloud_file = cloud_file_name(s.id);
        let img_bytes = encode_image(&s.image);
        let pcd_bytes = encode_cloud(&s.cloud);
        let img_path = dir.join(&image_file);
        std::fs::write(&img_path, &img_bytes).map_err(|e| Error::io(&img_path, e))?;
        let pcd_path = dir.join(&cloud_file);
        std::fs::write(&pcd_path, &pcd_bytes).map_err(|e| Error::io(&pcd_path, e))?;
        manifest_samples.push(ManifestSample {
            id: s.id,
            image_sha256: sha256_hex(&img_bytes),
            image_file,
            cloud_sha256: sha256_hex(&pcd_bytes),
            cloud_file,
            gps_track: s.gps_track.clone(),
            label: s.label,
            pose: s.pose,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        sample_count: ds.samples.len(),
        scene_config_digest: ds.scene_config_digest.clone(),
        meta: ds.meta.clone(),
        split: ds.split.clone(),
        samples: manifest_samples,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    let man_path = dir.join("manifest.json");
    std::fs::write(&man_path, json).map_err(|e| Error::io(&man_path, e))?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let man_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    if manifest.samples.len() != manifest.sample_count {
        return Err(Error::Format(format!(
            "manifest lists {} samples but declares {}",
            manifest.samples.len(),
            manifest.sample_count
        )));
    }
    // The stored digest must match the stored generating configuration.
    let recomputed = config_digest(&manifest.meta);
    if recomputed != manifest.scene_config_digest {
        return Err(Error::Format(format!(
            "scene_config_digest {} does not match the stored configuration (expected {recomputed})",
            manifest.scene_config_digest
        )));
    }

    // All modality files must exist before any payload is trusted.
    let missing: Vec<usize> = manifest
        .samples
        .iter()
        .filter(|m| !dir.join(&m.image_file).is_file() || !dir.join(&m.cloud_file).is_file())
        .map(|m| m.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format(format!(
            "missing modality files for sample ids {missing:?}"
        )));
    }

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for (idx, m) in manifest.samples.iter().enumerate() {
        if m.id != idx {
            return Err(Error::Format(format!(
                "manifest ids must be dense and ordered; slot {idx} holds id {}",
                m.id
            )));
        }
        let img_path = dir.join(&m.image_file);
        let img_bytes = std::fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
        if sha256_hex(&img_bytes) != m.image_sha256 {
            return Err(Error::Corruption {
                file: img_path,
                reason: "sha256 mismatch".into(),
            });
        }
        let image = decode_image(&img_bytes, &img_path)?;

        let pcd_path = dir.join(&m.cloud_file);
        let pcd_bytes = std::fs::read(&pcd_path).map_err(|e| Error::io(&pcd_path, e))?;
        if sha256_hex(&pcd_bytes) != m.cloud_sha256 {
            return Err(Error::Corruption {
                file: pcd_path,
                reason: "sha256 mismatch".into(),
            });
        }
        let cloud = decode_cloud(&pcd_bytes, &pcd_path)?;

        if m.gps_track.len() != manifest.meta.gps_window {
            return Err(Error::Format(format!(
                "sample {idx}: gps track length {} != window {}",
                m.gps_track.len(),
                manifest.meta.gps_window
            )));
        }
        samples.push(Sample {
            id: m.id,
            image,
            cloud,
            gps_track: m.gps_track.clone(),
            label: m.label,
            pose: m.pose,
        });
    }
    manifest.split.validate(samples.len())?;
    Ok(Dataset {
        samples,
        scene_config_digest: manifest.scene_config_digest,
        split: manifest.split,
        meta: manifest.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, generate_routes, SceneConfig};

    fn tiny_dataset() -> Dataset {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let routes = generate_routes(&scene, 2, 11).unwrap();
        let opts = crate::sensors::GenOptions {
            lidar: crate::sensors::LidarConfig {
                azimuth_steps: 90,
                elevation_steps: 4,
                ..Default::default()
            },
            camera: crate::sensors::CameraConfig {
                width: 16,
                height: 16,
                ..Default::default()
            },
            ..Default::default()
        };
        crate::sensors::generate_dataset_with(&scene, &routes, 12, 5, 3, &opts).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
        assert_eq!(ds.content_digest(), back.content_digest());
    }

    #[test]
    fn truncated_cloud_is_reported_as_corruption() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join(cloud_file_name(3));
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 7]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Corruption { file, .. }) => {
                assert!(file.ends_with(cloud_file_name(3)));
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn flipped_bit_is_reported_as_corruption() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join(image_file_name(0));
        let mut bytes = std::fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&victim, &bytes).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Corruption { .. })
        ));
    }

    #[test]
    fn missing_files_listed_by_id() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(image_file_name(2))).unwrap();
        std::fs::remove_file(dir.path().join(cloud_file_name(7))).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format(msg)) => {
                assert!(msg.contains('2') && msg.contains('7'), "message: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_manifest_config_fails_digest() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let man_path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&man_path).unwrap();
        let tampered = text.replace("\"gps_window\": 5", "\"gps_window\": 6");
        assert_ne!(text, tampered);
        std::fs::write(&man_path, tampered).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
    }
}
