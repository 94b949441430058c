//! On-disk datasets.
//!
//! Binary layout (little-endian), 32-byte header then fixed-size records:
//!
//! ```text
//! 0   magic     "TBNNDSET"
//! 8   version   u32 (1)
//! 12  records   u32
//! 16  channels  u32
//! 20  height    u32
//! 24  width     u32
//! 28  classes   u16
//! 30  bits      u8   pixel depth, 1..=8
//! 31  reserved  u8   0
//! 32  records: label u16, split u8 (0 train, 1 test), C*H*W pixel bytes (planar)
//! ```
//!
//! Folder layout: one sub-directory per class (sorted names give the label
//! order) holding PNG or PNM images of identical size. An optional split
//! manifest (`split.txt` in the root by default) lists `class/file train|test`
//! per line; unlisted images go to the train split.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thermobnn_core::data::{Dataset, Split};
use thermobnn_core::encoders::ImageDims;

use crate::error::{data_err, io_err, CliResult};
use crate::fsutil::{self, Reader, Writer};

pub const DATASET_MAGIC: &[u8; 8] = b"TBNNDSET";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
const IMAGE_EXTENSIONS: [&str; 5] = ["png", "pgm", "ppm", "pbm", "pnm"];

pub fn encode_dataset(data: &Dataset) -> CliResult<Vec<u8>> {
    let fits = |v: usize, max: usize, what: &str| {
        if v > max {
            Err(data_err!("{what} {v} does not fit the dataset header"))
        } else {
            Ok(())
        }
    };
    fits(data.len(), u32::MAX as usize, "record count")?;
    fits(data.classes, u16::MAX as usize, "class count")?;
    let d = data.dims;
    let mut w = Writer::default();
    w.buf.extend_from_slice(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u32(data.len() as u32);
    for v in [d.channels, d.height, d.width] {
        fits(v, u32::MAX as usize, "image dimension")?;
        w.u32(v as u32);
    }
    w.u16(data.classes as u16);
    w.u8(data.bits as u8);
    w.u8(0);
    for i in 0..data.len() {
        w.u16(data.labels[i]);
        w.u8(data.splits[i].code());
        w.buf.extend_from_slice(data.image(i));
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8], origin: &str) -> CliResult<Dataset> {
    let mut r = Reader::new(bytes, origin);
    if r.take(8)? != DATASET_MAGIC {
        return Err(r.error(0, "not a dataset file (bad magic)"));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(r.error(8, format!("unsupported dataset version {version}")));
    }
    let n = r.u32()? as usize;
    let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let classes = usize::from(r.u16()?);
    let bits = u32::from(r.u8()?);
    r.u8()?;
    if c == 0 || h == 0 || w == 0 || classes == 0 {
        return Err(r.error(16, "zero image dimension or class count"));
    }
    if !(1..=8).contains(&bits) {
        return Err(r.error(30, format!("pixel depth {bits} outside 1..=8")));
    }
    let dims = ImageDims::new(c, h, w);
    let record = 3 + dims.len();
    let need = n as u64 * record as u64;
    if need != r.remaining() as u64 {
        return Err(r.error(
            HEADER_LEN,
            format!(
                "{n} records of {record} bytes need {need} bytes, found {}",
                r.remaining()
            ),
        ));
    }
    let max = (1u32 << bits) - 1;
    let mut images = Vec::with_capacity(n * dims.len());
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for i in 0..n {
        let at = r.pos();
        let label = r.u16()?;
        if usize::from(label) >= classes {
            return Err(r.error(at, format!("record {i}: label {label} is not below {classes} classes")));
        }
        let code = r.u8()?;
        let split =
            Split::from_code(code).ok_or_else(|| r.error(at + 2, format!("record {i}: unknown split code {code}")))?;
        let px_at = r.pos();
        let px = r.take(dims.len())?;
        if let Some(p) = px.iter().position(|v| u32::from(*v) > max) {
            return Err(r.error(px_at + p, format!("record {i}: pixel {} exceeds {bits} bits", px[p])));
        }
        images.extend_from_slice(px);
        labels.push(label);
        splits.push(split);
    }
    Ok(Dataset::new(dims, bits, classes, images, labels, splits)?)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    fsutil::write_atomic(path, &encode_dataset(data)?)
}

/// Reads a binary dataset file, or ingests a class-folder tree.
pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    if path.is_dir() {
        return load_folder(path, None);
    }
    decode_dataset(&fsutil::read(path)?, &path.display().to_string())
}

/// Planar 8-bit pixels of a PNG/PNM image: one channel for grey images,
/// three for colour (alpha dropped).
pub fn load_image(path: &Path) -> CliResult<(ImageDims, Vec<u8>)> {
    let img = image::open(path).map_err(|e| data_err!("{}: {e}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let mut out = vec![0u8; 3 * w * h];
        for (p, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                out[c * w * h + p] = px.0[c];
            }
        }
        Ok((ImageDims::new(3, h, w), out))
    } else {
        Ok((ImageDims::new(1, h, w), img.to_luma8().into_raw()))
    }
}

fn parse_manifest(text: &str, origin: &str) -> CliResult<BTreeMap<String, Split>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(file), Some(split), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(data_err!("{origin}:{}: expected `path split`", i + 1));
        };
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(data_err!("{origin}:{}: unknown split `{other}`", i + 1)),
        };
        if out.insert(file.to_string(), split).is_some() {
            return Err(data_err!("{origin}:{}: `{file}` listed twice", i + 1));
        }
    }
    Ok(out)
}

fn sorted_entries(dir: &Path) -> CliResult<Vec<fs::DirEntry>> {
    let mut v = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    v.sort_by_key(|e| e.file_name());
    Ok(v)
}

/// Ingests `root/<class>/<image>`; `manifest` defaults to `root/split.txt`
/// when that file exists.
pub fn load_folder(root: &Path, manifest: Option<&Path>) -> CliResult<Dataset> {
    let default_manifest = root.join("split.txt");
    let manifest = manifest.or_else(|| default_manifest.is_file().then_some(default_manifest.as_path()));
    let mut splits_by_name = match manifest {
        Some(p) => {
            let text = String::from_utf8(fsutil::read(p)?).map_err(|_| data_err!("{}: not UTF-8", p.display()))?;
            parse_manifest(&text, &p.display().to_string())?
        }
        None => BTreeMap::new(),
    };
    let classes: Vec<_> = sorted_entries(root)?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .collect();
    if classes.is_empty() {
        return Err(data_err!("{}: no class folders", root.display()));
    }
    if classes.len() > usize::from(u16::MAX) {
        return Err(data_err!("{}: too many classes", root.display()));
    }
    let mut dims: Option<ImageDims> = None;
    let (mut images, mut labels, mut splits) = (Vec::new(), Vec::new(), Vec::new());
    for (label, class) in classes.iter().enumerate() {
        let class_name = class.file_name().to_string_lossy().into_owned();
        for entry in sorted_entries(&class.path())? {
            let path = entry.path();
            let ext = path
                .extension()
                .map(|e| e.to_string_lossy().to_ascii_lowercase())
                .unwrap_or_default();
            if !path.is_file() || !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                continue;
            }
            let (d, px) = load_image(&path)?;
            match dims {
                None => dims = Some(d),
                Some(first) if first != d => {
                    return Err(data_err!(
                        "{}: image is {:?}, earlier images are {:?}",
                        path.display(),
                        d,
                        first
                    ))
                }
                _ => {}
            }
            let key = format!("{}/{}", class_name, entry.file_name().to_string_lossy());
            splits.push(splits_by_name.remove(&key).unwrap_or(Split::Train));
            images.extend_from_slice(&px);
            labels.push(label as u16);
        }
    }
    if let Some(missing) = splits_by_name.keys().next() {
        return Err(data_err!(
            "split manifest lists `{missing}`, which is not an image of the folder"
        ));
    }
    let dims = dims.ok_or_else(|| data_err!("{}: no images", root.display()))?;
    Ok(Dataset::new(dims, 8, classes.len(), images, labels, splits)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermobnn_core::data::{make_synthetic, SyntheticSpec};

    fn small() -> Dataset {
        make_synthetic(&SyntheticSpec {
            classes: 4,
            train: 12,
            test: 8,
            height: 5,
            width: 6,
            seed: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn binary_round_trip_and_size() {
        let d = small();
        let bytes = encode_dataset(&d).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + d.len() * (3 + 3 * 5 * 6));
        assert_eq!(decode_dataset(&bytes, "mem").unwrap(), d);
    }

    #[test]
    fn corrupt_files_name_the_offset() {
        let d = small();
        let mut bytes = encode_dataset(&d).unwrap();
        let rec = 3 + 90;
        // label of record 2
        bytes[HEADER_LEN + 2 * rec] = 9;
        let e = decode_dataset(&bytes, "mem").unwrap_err().to_string();
        assert!(e.contains(&format!("byte {}", HEADER_LEN + 2 * rec)), "{e}");

        let bytes = encode_dataset(&d).unwrap();
        let e = decode_dataset(&bytes[..bytes.len() - 1], "mem")
            .unwrap_err()
            .to_string();
        assert!(e.contains("byte 32"), "{e}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad, "mem").unwrap_err().to_string().contains("magic"));
        let mut bad = bytes;
        bad[HEADER_LEN + 2] = 7;
        assert!(decode_dataset(&bad, "mem")
            .unwrap_err()
            .to_string()
            .contains("split code 7"));
    }

    #[test]
    fn folder_ingestion_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for (class, shade) in [("cat", 10u8), ("dog", 200u8)] {
            fs::create_dir(dir.path().join(class)).unwrap();
            for k in 0..3u8 {
                let img = image::GrayImage::from_fn(4, 3, |x, y| image::Luma([shade + k + (x + y) as u8]));
                img.save(dir.path().join(class).join(format!("{k}.png"))).unwrap();
            }
        }
        fs::write(
            dir.path().join("split.txt"),
            "# holdout\ncat/2.png test\ndog/0.png test\n",
        )
        .unwrap();
        let d = load_folder(dir.path(), None).unwrap();
        assert_eq!(d.dims, ImageDims::new(1, 3, 4));
        assert_eq!(d.classes, 2);
        assert_eq!(d.labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(d.indices(Split::Test), vec![2, 3]);
        assert_eq!(d.image(1)[0], 11);
        assert_eq!(d.image(5)[3 * 4 - 1], 200 + 2 + 5);

        fs::write(dir.path().join("split.txt"), "cat/9.png test\n").unwrap();
        assert!(load_folder(dir.path(), None)
            .unwrap_err()
            .to_string()
            .contains("cat/9.png"));
    }

    #[test]
    fn colour_images_are_planar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        image::RgbImage::from_fn(2, 1, |x, _| image::Rgb([x as u8, 10 + x as u8, 20 + x as u8]))
            .save(&p)
            .unwrap();
        let (d, px) = load_image(&p).unwrap();
        assert_eq!(d, ImageDims::new(3, 1, 2));
        assert_eq!(px, vec![0, 1, 10, 11, 20, 21]);
    }
}
