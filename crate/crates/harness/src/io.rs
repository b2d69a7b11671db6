//! Video input and output: YUV4MPEG2 files and directories of PNG/PGM/PPM
//! frames.
//!
//! Y4M support covers 8-bit `Cmono` and `C444`. Three-channel sequences are
//! written as `C444` tagged with `XSIT=RGB`; such files are read back as RGB,
//! while untagged 4:4:4 files are converted from BT.601 full-range YCbCr.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use sit_core::{Frame, FrameSequence};

use crate::error::{HarnessError, Result};

const Y4M_MAGIC: &str = "YUV4MPEG2";
const RGB_TAG: &str = "XSIT=RGB";

fn is_y4m(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m"))
}

/// Reads a `.y4m` file or a directory of images sorted by file name.
pub fn read_video(path: &Path) -> Result<FrameSequence> {
    if path.is_dir() {
        read_image_dir(path)
    } else if is_y4m(path) {
        let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        read_y4m(BufReader::new(file)).map_err(|e| match e {
            HarnessError::Input(m) => HarnessError::Input(format!("{}: {m}", path.display())),
            other => other,
        })
    } else {
        Err(HarnessError::Input(format!("{}: expected a .y4m file or an image directory", path.display())))
    }
}

/// Writes a `.y4m` file, or PNG frames `frame_00001.png, ...` into a directory.
pub fn write_video(path: &Path, seq: &FrameSequence) -> Result<()> {
    if is_y4m(path) {
        let mut buf = Vec::new();
        write_y4m(&mut buf, seq)?;
        fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
    } else {
        write_image_dir(path, seq)
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Input(format!("{}: no PNG/PGM/PPM frames", dir.display())));
    }
    Ok(files)
}

fn frame_from_image(img: DynamicImage) -> Result<Frame> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray =
        matches!(img.color(), image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16);
    if gray {
        Ok(Frame::from_u8(w, h, 1, img.to_luma8().as_raw())?)
    } else {
        let rgb = img.to_rgb8();
        let mut planar = vec![0u8; 3 * w * h];
        for (i, px) in rgb.as_raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * w * h + i] = px[c];
            }
        }
        Ok(Frame::from_u8(w, h, 3, &planar)?)
    }
}

pub fn read_image_dir(dir: &Path) -> Result<FrameSequence> {
    let frames = image_files(dir)?
        .iter()
        .map(|p| {
            let img = image::open(p).map_err(|e| HarnessError::Input(format!("{}: {e}", p.display())))?;
            frame_from_image(img)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence::new(frames)?)
}

pub fn frame_to_image(f: &Frame) -> DynamicImage {
    let (w, h) = (f.width() as u32, f.height() as u32);
    let bytes = f.to_u8();
    if f.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized buffer"))
    } else {
        let n = f.pixels();
        let interleaved: Vec<u8> = (0..n).flat_map(|i| [bytes[i], bytes[n + i], bytes[2 * n + i]]).collect();
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, interleaved).expect("sized buffer"))
    }
}

pub fn write_image_dir(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for (i, f) in seq.iter().enumerate() {
        let p = dir.join(format!("frame_{:05}.png", i + 1));
        frame_to_image(f)
            .save_with_format(&p, ImageFormat::Png)
            .map_err(|e| HarnessError::Input(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

struct Y4mHeader {
    width: usize,
    height: usize,
    channels: usize,
    rgb: bool,
}

fn parse_y4m_header(line: &str) -> Result<Y4mHeader> {
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some(Y4M_MAGIC) {
        return Err(HarnessError::Input("missing YUV4MPEG2 signature".into()));
    }
    let (mut width, mut height, mut colour, mut rgb) = (0, 0, "420jpeg".to_string(), false);
    for t in tokens {
        let (tag, val) = t.split_at(1);
        match tag {
            "W" => width = val.parse().map_err(|_| HarnessError::Input(format!("bad width {val}")))?,
            "H" => height = val.parse().map_err(|_| HarnessError::Input(format!("bad height {val}")))?,
            "C" => colour = val.to_string(),
            "I" if val != "p" && val != "?" => {
                return Err(HarnessError::Input(format!("interlacing {val} unsupported")));
            }
            _ if t == RGB_TAG => rgb = true,
            _ => {}
        }
    }
    let channels = match colour.as_str() {
        "mono" => 1,
        "444" => 3,
        other => return Err(HarnessError::Input(format!("Y4M colour space C{other} unsupported; use Cmono or C444"))),
    };
    if width == 0 || height == 0 {
        return Err(HarnessError::Input("Y4M header lacks W or H".into()));
    }
    Ok(Y4mHeader { width, height, channels, rgb })
}

fn ycbcr_to_rgb(planes: &mut [u8], n: usize) {
    for i in 0..n {
        let y = planes[i] as f64;
        let cb = planes[n + i] as f64 - 128.0;
        let cr = planes[2 * n + i] as f64 - 128.0;
        let r = y + 1.402 * cr;
        let g = y - 0.344136 * cb - 0.714136 * cr;
        let b = y + 1.772 * cb;
        for (c, v) in [r, g, b].into_iter().enumerate() {
            planes[c * n + i] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

pub fn read_y4m(mut r: impl BufRead) -> Result<FrameSequence> {
    let io_err = |e| HarnessError::io("<y4m>", e);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err)?;
    let hdr = parse_y4m_header(line.trim_end())?;
    let n = hdr.width * hdr.height;
    let mut frames = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io_err)? == 0 {
            break;
        }
        if !line.starts_with("FRAME") {
            return Err(HarnessError::Input(format!("expected FRAME marker, found {:?}", line.trim_end())));
        }
        let mut buf = vec![0u8; n * hdr.channels];
        r.read_exact(&mut buf).map_err(|_| HarnessError::Input(format!("frame {} is truncated", frames.len() + 1)))?;
        if hdr.channels == 3 && !hdr.rgb {
            ycbcr_to_rgb(&mut buf, n);
        }
        frames.push(Frame::from_u8(hdr.width, hdr.height, hdr.channels, &buf)?);
    }
    Ok(FrameSequence::new(frames)?)
}

pub fn write_y4m(mut w: impl Write, seq: &FrameSequence) -> Result<()> {
    let io_err = |e| HarnessError::io("<y4m>", e);
    let colour = if seq.channels() == 1 { "Cmono".to_string() } else { format!("C444 {RGB_TAG}") };
    writeln!(w, "{Y4M_MAGIC} W{} H{} F25:1 Ip A1:1 {colour}", seq.width(), seq.height()).map_err(io_err)?;
    for f in seq {
        w.write_all(b"FRAME\n").map_err(io_err)?;
        w.write_all(&f.to_u8()).map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sit_core::synth::{generate, GeneratorConfig, GeneratorKind};

    fn clip(channels: usize) -> FrameSequence {
        let seq = generate(&GeneratorConfig::new(GeneratorKind::rotating(), 12, 10, 3).with_channels(channels)).unwrap();
        // quantize so 8-bit round trips are exact
        let frames = seq.iter().map(|f| Frame::from_u8(12, 10, channels, &f.to_u8()).unwrap()).collect();
        FrameSequence::new(frames).unwrap()
    }

    #[test]
    fn y4m_round_trip() {
        for ch in [1, 3] {
            let seq = clip(ch);
            let mut buf = Vec::new();
            write_y4m(&mut buf, &seq).unwrap();
            assert_eq!(read_y4m(&buf[..]).unwrap(), seq);
        }
    }

    #[test]
    fn y4m_rejects_420_and_truncation() {
        let data = b"YUV4MPEG2 W4 H2 F25:1\nFRAME\n000000000000";
        assert!(matches!(read_y4m(&data[..]), Err(HarnessError::Input(_))));
        let data = b"YUV4MPEG2 W4 H2 Cmono\nFRAME\n0000";
        assert!(read_y4m(&data[..]).is_err());
    }

    #[test]
    fn y4m_ycbcr_grey_stays_grey() {
        let mut data = b"YUV4MPEG2 W1 H1 C444\nFRAME\n".to_vec();
        data.extend([100, 128, 128]);
        let seq = read_y4m(&data[..]).unwrap();
        assert_eq!(seq.frame(0).to_u8(), vec![100, 100, 100]);
    }

    #[test]
    fn image_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for ch in [1, 3] {
            let sub = dir.path().join(format!("c{ch}"));
            let seq = clip(ch);
            write_video(&sub, &seq).unwrap();
            assert_eq!(read_video(&sub).unwrap(), seq);
        }
    }
}
