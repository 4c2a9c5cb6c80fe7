//! IDX binary format ingestion (MNIST-style), gzip-optional.
//!
//! Images carry the big-endian magic `0x00000803` (u8 data, 3 dimensions),
//! labels `0x00000801`. Pixel values are scaled to `[0, 1]` on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;

use crate::problems::logistic::ClassificationData;
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut head = [0u8; 2];
    let n = file.read(&mut head)?;
    let plain: Box<dyn Read> = Box::new(std::io::Cursor::new(head[..n].to_vec()).chain(file));
    if n == 2 && head == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(plain)))
    } else {
        Ok(plain)
    }
}

fn read_u32_be(r: &mut dyn Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Raw image tensor: `count x rows x cols`, values scaled to `[0, 1]`.
pub struct IdxImages {
    pub data: Vec<f64>,
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    let mut r = open_maybe_gz(path)?;
    let magic = read_u32_be(&mut r)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::MalformedData(format!(
            "bad image magic {magic:#010x} in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut r)? as usize;
    let rows = read_u32_be(&mut r)? as usize;
    let cols = read_u32_be(&mut r)? as usize;
    let mut raw = vec![0u8; count * rows * cols];
    r.read_exact(&mut raw)?;
    Ok(IdxImages {
        data: raw.iter().map(|&b| b as f64 / 255.0).collect(),
        count,
        rows,
        cols,
    })
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open_maybe_gz(path)?;
    let magic = read_u32_be(&mut r)?;
    if magic != LABEL_MAGIC {
        return Err(Error::MalformedData(format!(
            "bad label magic {magic:#010x} in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut r)? as usize;
    let mut raw = vec![0u8; count];
    r.read_exact(&mut raw)?;
    Ok(raw)
}

/// Load an image/label pair into a classification dataset.
pub fn load_dataset(images: &Path, labels: &Path) -> Result<Arc<ClassificationData>> {
    let imgs = read_images(images)?;
    let labs = read_labels(labels)?;
    if imgs.count != labs.len() {
        return Err(Error::MalformedData(format!(
            "{} images but {} labels",
            imgs.count,
            labs.len()
        )));
    }
    Ok(Arc::new(ClassificationData::new(
        imgs.data,
        labs,
        imgs.rows * imgs.cols,
    )?))
}

fn sink(path: &Path, gzip: bool) -> Result<Box<dyn Write>> {
    let file = BufWriter::new(File::create(path)?);
    if gzip {
        Ok(Box::new(GzEncoder::new(file, flate2::Compression::fast())))
    } else {
        Ok(Box::new(file))
    }
}

/// Write `count x rows x cols` u8 images in IDX format.
pub fn write_images(path: &Path, pixels: &[u8], rows: usize, cols: usize, gzip: bool) -> Result<()> {
    assert_eq!(pixels.len() % (rows * cols), 0);
    let count = pixels.len() / (rows * cols);
    let mut w = sink(path, gzip)?;
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(count as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

/// Write labels in IDX format.
pub fn write_labels(path: &Path, labels: &[u8], gzip: bool) -> Result<()> {
    let mut w = sink(path, gzip)?;
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let labels = vec![3u8, 9u8];
        for gz in [false, true] {
            let ip = dir.path().join(if gz { "img.gz" } else { "img" });
            let lp = dir.path().join(if gz { "lab.gz" } else { "lab" });
            write_images(&ip, &pixels, 4, 3, gz).unwrap();
            write_labels(&lp, &labels, gz).unwrap();
            let imgs = read_images(&ip).unwrap();
            assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 4, 3));
            assert_eq!(imgs.data[5], pixels[5] as f64 / 255.0);
            assert!(imgs.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(read_labels(&lp).unwrap(), labels);
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        std::fs::write(&p, 0xdeadbeefu32.to_be_bytes()).unwrap();
        assert!(matches!(read_images(&p), Err(Error::MalformedData(_))));
    }
}
