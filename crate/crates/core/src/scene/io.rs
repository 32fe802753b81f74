//! Scene directory layout:
//!
//! | file             | encoding                               | required |
//! |------------------|----------------------------------------|----------|
//! | `rgb.png`        | 8-bit RGB                              | yes      |
//! | `depth.png`      | 16-bit gray, millimeters, 0 = invalid  | yes      |
//! | `camera.json`    | `{"fx","fy","cx","cy"}`                | yes      |
//! | `labels.png`     | 16-bit gray, instance ids, 0 = bg      | no       |
//! | `foreground.png` | 8-bit gray, nonzero = foreground       | no       |

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{Intrinsics, Scene};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelImage};

const RGB_FILE: &str = "rgb.png";
const DEPTH_FILE: &str = "depth.png";
const CAMERA_FILE: &str = "camera.json";
const LABELS_FILE: &str = "labels.png";
const FOREGROUND_FILE: &str = "foreground.png";

fn corrupt(file: &str, reason: impl std::fmt::Display) -> Error {
    Error::CorruptEncoding {
        file: file.to_string(),
        reason: reason.to_string(),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(file_name(path)));
    }
    image::open(path).map_err(|e| corrupt(&file_name(path), e))
}

fn write_image<P, C>(path: &Path, img: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| corrupt(&file_name(path), e))
}

fn gray16(path: &Path) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    match open_image(path)? {
        DynamicImage::ImageLuma16(img) => Ok(img),
        other => Err(corrupt(
            &file_name(path),
            format!("expected 16-bit grayscale, found {:?}", other.color()),
        )),
    }
}

pub fn save_labels(path: &Path, labels: &LabelImage) -> Result<()> {
    let (w, h) = labels.dims();
    let mut data = Vec::with_capacity(w * h);
    for &l in labels.as_slice() {
        let v = u16::try_from(l).map_err(|_| corrupt(&file_name(path), "label exceeds 65535"))?;
        data.push(v);
    }
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data).expect("buffer size");
    write_image(path, &img)
}

pub fn load_labels(path: &Path) -> Result<LabelImage> {
    let img = gray16(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    LabelImage::from_vec(w, h, img.into_raw().into_iter().map(u32::from).collect())
}

/// Save values in `[0, 1]` as a 16-bit PNG scaled by 65535.
pub fn save_unit_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), width * height);
    let data: Vec<u16> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(width as u32, height as u32, data).expect("buffer size");
    write_image(path, &img)
}

/// Load a 16-bit PNG as values/65535.
pub fn load_boundary_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = gray16(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Ok((w, h, values))
}

pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = scene.dims();

    let rgb: Vec<u8> = scene.rgb().iter().flatten().copied().collect();
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, rgb).expect("buffer size");
    write_image(&dir.join(RGB_FILE), &img)?;

    let mut mm = Vec::with_capacity(w * h);
    for &d in scene.depth() {
        let v = (d * 1000.0).round();
        if !(0.0..=65535.0).contains(&v) {
            return Err(corrupt(DEPTH_FILE, "depth exceeds 16-bit millimeter range"));
        }
        mm.push(v as u16);
    }
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, mm).expect("buffer size");
    write_image(&dir.join(DEPTH_FILE), &img)?;

    let camera = serde_json::to_string_pretty(scene.camera()).expect("intrinsics serialize");
    let camera_path = dir.join(CAMERA_FILE);
    fs::write(&camera_path, camera).map_err(|e| Error::io(camera_path, e))?;

    if let Some(labels) = scene.labels() {
        save_labels(&dir.join(LABELS_FILE), labels)?;
    }
    if let Some(fg) = scene.foreground() {
        let data: Vec<u8> = fg.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, data).expect("buffer size");
        write_image(&dir.join(FOREGROUND_FILE), &img)?;
    }
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let rgb_img = open_image(&dir.join(RGB_FILE))?.to_rgb8();
    let (w, h) = (rgb_img.width() as usize, rgb_img.height() as usize);
    let check = |file: &str, found: (usize, usize)| -> Result<()> {
        if found != (w, h) {
            return Err(Error::DimensionMismatch {
                file: file.to_string(),
                expected: (w, h),
                found,
            });
        }
        Ok(())
    };

    let depth_img = gray16(&dir.join(DEPTH_FILE))?;
    check(DEPTH_FILE, (depth_img.width() as usize, depth_img.height() as usize))?;

    let camera_path = dir.join(CAMERA_FILE);
    if !camera_path.is_file() {
        return Err(Error::MissingFile(CAMERA_FILE.into()));
    }
    let text = fs::read_to_string(&camera_path).map_err(|e| Error::io(&camera_path, e))?;
    let camera: Intrinsics = serde_json::from_str(&text).map_err(|e| corrupt(CAMERA_FILE, e))?;
    camera.validate().map_err(|_| corrupt(CAMERA_FILE, "invalid intrinsics"))?;

    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.is_file() {
        let li = load_labels(&labels_path)?;
        check(LABELS_FILE, li.dims())?;
        Some(li)
    } else {
        None
    };

    let fg_path = dir.join(FOREGROUND_FILE);
    let foreground = if fg_path.is_file() {
        let img = open_image(&fg_path)?.to_luma8();
        check(FOREGROUND_FILE, (img.width() as usize, img.height() as usize))?;
        Some(BinaryMask::from_bits(w, h, img.into_raw().into_iter().map(|v| v > 0).collect())?)
    } else {
        None
    };

    let rgb = rgb_img.pixels().map(|p| p.0).collect();
    let depth = depth_img.into_raw().into_iter().map(|v| v as f64 / 1000.0).collect();
    let mut scene = Scene::new(w, h, rgb, depth, camera)?;
    if let Some(li) = labels {
        scene = scene.with_labels(li)?;
    }
    if let Some(fg) = foreground {
        scene = scene.with_foreground(fg)?;
    }
    Ok(scene)
}
