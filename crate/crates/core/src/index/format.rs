//! Binary index container. Layout (all integers little-endian) is
//! documented in `docs/index-format.md`.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{ExemplarLibrary, ExemplarRecord};
use crate::error::{Error, Result};
use crate::raster::{BBox, CategorySet, LabelMap, Mask, ShapeInstance, ShapeSource};

pub const MAGIC: &[u8; 4] = b"CSIX";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_index(lib: &ExemplarLibrary, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_index(lib, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<ExemplarLibrary> {
    let bytes = std::fs::read(path)?;
    read_index(&bytes)
}

pub fn write_index(lib: &ExemplarLibrary, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LE>(FORMAT_VERSION)?;
    out.write_u16::<LE>(lib.num_categories)?;
    out.write_u32::<LE>(lib.category_names.len() as u32)?;
    for name in &lib.category_names {
        write_str(out, name)?;
    }
    out.write_u32::<LE>(lib.records.len() as u32)?;
    let mut payload = Vec::new();
    for rec in &lib.records {
        payload.clear();
        write_record(rec, &mut payload)?;
        out.write_u64::<LE>(payload.len() as u64)?;
        out.write_all(&payload)?;
    }
    Ok(())
}

pub fn read_index(bytes: &[u8]) -> Result<ExemplarLibrary> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = cur.read_u32::<LE>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported index version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let num_categories = cur.read_u16::<LE>().map_err(truncated)?;
    let name_count = cur.read_u32::<LE>().map_err(truncated)?;
    if name_count != num_categories as u32 {
        return Err(Error::Format(format!(
            "{name_count} category names for {num_categories} categories"
        )));
    }
    let names = (0..name_count).map(|_| read_str(&mut cur)).collect::<Result<Vec<_>>>()?;
    let record_count = cur.read_u32::<LE>().map_err(truncated)?;
    let mut records = Vec::with_capacity(record_count.min(1 << 20) as usize);
    for i in 0..record_count {
        let len = cur.read_u64::<LE>().map_err(truncated)? as usize;
        let start = cur.position() as usize;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format(format!("record {i} truncated")))?;
        let mut rec_cur = Cursor::new(&bytes[start..end]);
        let rec = read_record(&mut rec_cur, num_categories)
            .map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        if rec_cur.position() as usize != len {
            return Err(Error::Format(format!("record {i} has trailing bytes")));
        }
        records.push(rec);
        cur.set_position(end as u64);
    }
    if cur.position() as usize != bytes.len() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    ExemplarLibrary::new(names, records).map_err(|e| Error::Format(e.to_string()))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file truncated".into())
    } else {
        Error::Io(e)
    }
}

fn write_str(out: &mut impl Write, s: &str) -> Result<()> {
    out.write_u32::<LE>(s.len() as u32)?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(cur: &mut Cursor<&[u8]>) -> Result<String> {
    let len = cur.read_u32::<LE>().map_err(truncated)? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if len > remaining {
        return Err(Error::Format("file truncated".into()));
    }
    let mut buf = vec![0u8; len];
    cur.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

/// Label maps are run-length encoded: width, height, run count, then
/// (value u16, length u32) pairs.
fn write_map(out: &mut Vec<u8>, map: &LabelMap) -> Result<()> {
    out.write_u32::<LE>(map.width())?;
    out.write_u32::<LE>(map.height())?;
    let mut runs: Vec<(u16, u32)> = Vec::new();
    for &v in map.data() {
        match runs.last_mut() {
            Some((value, len)) if *value == v => *len += 1,
            _ => runs.push((v, 1)),
        }
    }
    out.write_u32::<LE>(runs.len() as u32)?;
    for (v, len) in runs {
        out.write_u16::<LE>(v)?;
        out.write_u32::<LE>(len)?;
    }
    Ok(())
}

fn read_map(cur: &mut Cursor<&[u8]>, num_categories: u16) -> Result<LabelMap> {
    let w = cur.read_u32::<LE>().map_err(truncated)?;
    let h = cur.read_u32::<LE>().map_err(truncated)?;
    let total = w as u64 * h as u64;
    let run_count = cur.read_u32::<LE>().map_err(truncated)?;
    let remaining = (cur.get_ref().len() - cur.position() as usize) as u64;
    if run_count as u64 * 6 > remaining {
        return Err(Error::Format("file truncated".into()));
    }
    if total > u32::MAX as u64 {
        return Err(Error::Format(format!("implausible map size {w}x{h}")));
    }
    let mut data = Vec::new();
    for _ in 0..run_count {
        let v = cur.read_u16::<LE>().map_err(truncated)?;
        let len = cur.read_u32::<LE>().map_err(truncated)? as u64;
        if data.len() as u64 + len > total {
            return Err(Error::Format("label runs overflow map size".into()));
        }
        data.resize(data.len() + len as usize, v);
    }
    if data.len() as u64 != total {
        return Err(Error::Format("label runs do not cover map".into()));
    }
    LabelMap::new(w, h, num_categories, data).map_err(|e| Error::Format(e.to_string()))
}

fn write_record(rec: &ExemplarRecord, out: &mut Vec<u8>) -> Result<()> {
    out.write_u32::<LE>(rec.exemplar_id)?;
    write_str(out, &rec.image_ref)?;
    write_map(out, &rec.labels)?;
    out.write_u32::<LE>(rec.indicator.words().len() as u32)?;
    for &w in rec.indicator.words() {
        out.write_u64::<LE>(w)?;
    }
    out.write_u32::<LE>(rec.histogram.len() as u32)?;
    for &f in &rec.histogram {
        out.write_f64::<LE>(f)?;
    }
    write_map(out, &rec.lowres100)?;
    write_map(out, &rec.lowres128)?;
    out.write_u32::<LE>(rec.shapes.len() as u32)?;
    for s in &rec.shapes {
        out.write_u32::<LE>(s.shape_id)?;
        out.write_u16::<LE>(s.instance_id)?;
        out.write_u16::<LE>(s.category)?;
        out.write_u32::<LE>(s.bbox.row0)?;
        out.write_u32::<LE>(s.bbox.col0)?;
        out.write_u32::<LE>(s.bbox.rows)?;
        out.write_u32::<LE>(s.bbox.cols)?;
        out.write_u32::<LE>(s.area)?;
        let mut packed = vec![0u8; s.mask.bits().len().div_ceil(8)];
        for (i, &b) in s.mask.bits().iter().enumerate() {
            if b {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.write_all(&packed)?;
    }
    Ok(())
}

fn read_record(cur: &mut Cursor<&[u8]>, num_categories: u16) -> Result<ExemplarRecord> {
    let exemplar_id = cur.read_u32::<LE>().map_err(truncated)?;
    let image_ref = read_str(cur)?;
    let labels = read_map(cur, num_categories)?;
    let word_count = cur.read_u32::<LE>().map_err(truncated)?;
    if word_count as usize != (num_categories as usize).div_ceil(64) {
        return Err(Error::Format("indicator length mismatch".into()));
    }
    let words = (0..word_count)
        .map(|_| cur.read_u64::<LE>().map_err(truncated))
        .collect::<Result<Vec<_>>>()?;
    let indicator = CategorySet::from_words(num_categories, words)?;
    let hist_len = cur.read_u32::<LE>().map_err(truncated)?;
    if hist_len != num_categories as u32 {
        return Err(Error::Format("histogram length mismatch".into()));
    }
    let histogram = (0..hist_len)
        .map(|_| cur.read_f64::<LE>().map_err(truncated))
        .collect::<Result<Vec<_>>>()?;
    let lowres100 = read_map(cur, num_categories)?;
    let lowres128 = read_map(cur, num_categories)?;
    let shape_count = cur.read_u32::<LE>().map_err(truncated)?;
    let mut shapes = Vec::new();
    for _ in 0..shape_count {
        let shape_id = cur.read_u32::<LE>().map_err(truncated)?;
        let instance_id = cur.read_u16::<LE>().map_err(truncated)?;
        let category = cur.read_u16::<LE>().map_err(truncated)?;
        let bbox = BBox {
            row0: cur.read_u32::<LE>().map_err(truncated)?,
            col0: cur.read_u32::<LE>().map_err(truncated)?,
            rows: cur.read_u32::<LE>().map_err(truncated)?,
            cols: cur.read_u32::<LE>().map_err(truncated)?,
        };
        let area = cur.read_u32::<LE>().map_err(truncated)?;
        if !bbox.fits_in(labels.width(), labels.height()) {
            return Err(Error::Format(format!("shape {shape_id} bbox outside labels")));
        }
        let n = bbox.rows as usize * bbox.cols as usize;
        let mut packed = vec![0u8; n.div_ceil(8)];
        cur.read_exact(&mut packed).map_err(truncated)?;
        let bits = (0..n).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
        let mask = Mask::new(bbox.rows, bbox.cols, bits)?;
        shapes.push(ShapeInstance {
            shape_id,
            instance_id,
            category,
            bbox,
            mask,
            area,
            source: ShapeSource::Exemplar(exemplar_id),
        });
    }
    Ok(ExemplarRecord::from_parts(
        exemplar_id,
        image_ref,
        labels,
        indicator,
        histogram,
        lowres100,
        lowres128,
        shapes,
    ))
}
