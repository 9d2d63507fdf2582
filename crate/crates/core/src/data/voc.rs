//! Pascal-VOC bounding-box annotations.
//!
//! Boxes are read as half-open pixel ranges `[xmin, xmax) × [ymin, ymax)`.

use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use super::imageops::resize_window;
use super::{io_err, read_image, DataError, Label, LabeledPatch, PATCH_SIZE};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundingBox {
    pub name: String,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    /// Position of the object in the file, from 0.
    pub object: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Crops {
    pub patches: Vec<LabeledPatch>,
    /// Object positions whose boxes were clamped to the image.
    pub clamped: Vec<usize>,
    pub rejected: Vec<Rejected>,
}

/// Parses the `<object>` elements of a VOC document.
pub fn parse_voc(xml: &str) -> Result<Vec<BoundingBox>, (u64, String)> {
    let mut reader = Reader::from_str(xml);
    let mut path: Vec<String> = Vec::new();
    let mut objects = Vec::new();
    let mut current: Option<BoundingBox> = None;
    loop {
        let pos = reader.buffer_position();
        let event = reader.read_event().map_err(|e| (pos, e.to_string()))?;
        match event {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if name == "object" {
                    current = Some(BoundingBox::default());
                }
                path.push(name);
            }
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if path.pop().as_deref() != Some(name.as_str()) {
                    return Err((pos, format!("unexpected closing tag </{name}>")));
                }
                if name == "object" {
                    objects.extend(current.take());
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| (pos, e.to_string()))?;
                let text = text.trim();
                let Some(obj) = current.as_mut() else { continue };
                let field = path.last().map(String::as_str);
                let parent = path.len().checked_sub(2).map(|i| path[i].as_str());
                let coord = |s: &str| s.parse::<f64>().map_err(|_| (pos, format!("bad coordinate `{s}`")));
                match (parent, field) {
                    (Some("object"), Some("name")) => obj.name = text.to_string(),
                    (Some("bndbox"), Some("xmin")) => obj.xmin = coord(text)?,
                    (Some("bndbox"), Some("ymin")) => obj.ymin = coord(text)?,
                    (Some("bndbox"), Some("xmax")) => obj.xmax = coord(text)?,
                    (Some("bndbox"), Some("ymax")) => obj.ymax = coord(text)?,
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if let Some(open) = path.last() {
        return Err((reader.buffer_position(), format!("unclosed <{open}>")));
    }
    Ok(objects)
}

/// Crops every annotated box out of `image`, resized to 64×64.
///
/// Objects whose name is not a known class, or whose box is empty after
/// clamping to the image, are rejected individually.
pub fn crop_annotations(image: &Path, annotation: &Path) -> Result<Crops, DataError> {
    let xml = std::fs::read_to_string(annotation).map_err(io_err(annotation))?;
    let boxes = parse_voc(&xml).map_err(|(offset, message)| DataError::Xml {
        path: annotation.display().to_string(),
        offset,
        message,
    })?;
    let pixels = read_image(image)?;
    let (h, w) = (pixels.shape()[0] as f64, pixels.shape()[1] as f64);
    let stem = image.file_stem().unwrap_or_default().to_string_lossy();
    let mut crops = Crops::default();
    for (i, b) in boxes.iter().enumerate() {
        let label = match b.name.parse::<Label>() {
            Ok(l) => l,
            Err(e) => {
                crops.rejected.push(Rejected { object: i, reason: e });
                continue;
            }
        };
        let (x0, x1) = (b.xmin.clamp(0.0, w), b.xmax.clamp(0.0, w));
        let (y0, y1) = (b.ymin.clamp(0.0, h), b.ymax.clamp(0.0, h));
        if (x0, x1, y0, y1) != (b.xmin, b.xmax, b.ymin, b.ymax) {
            crops.clamped.push(i);
        }
        if x1 <= x0 || y1 <= y0 {
            crops.rejected.push(Rejected {
                object: i,
                reason: "empty box after clamping".into(),
            });
            continue;
        }
        let patch = resize_window(&pixels, y0, x0, y1 - y0, x1 - x0, PATCH_SIZE, PATCH_SIZE);
        crops
            .patches
            .push(LabeledPatch::new(patch, label, format!("{stem}#{i}")));
    }
    Ok(crops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_objects_and_ignores_other_fields() {
        let xml = r#"<annotation><filename>a.png</filename><size><width>100</width></size>
            <object><name>weed</name><pose>x</pose><bndbox><xmin>10</xmin><ymin>10</ymin><xmax>74</xmax><ymax>74</ymax></bndbox></object>
            <object><name>beet</name><bndbox><xmin>1.5</xmin><ymin>2</ymin><xmax>3</xmax><ymax>4</ymax></bndbox></object>
        </annotation>"#;
        let objs = parse_voc(xml).unwrap();
        assert_eq!(objs.len(), 2);
        assert_eq!(objs[0].name, "weed");
        assert_eq!((objs[0].xmin, objs[0].ymax), (10.0, 74.0));
        assert_eq!(objs[1].xmin, 1.5);
        assert!(parse_voc("<annotation></annotation>").unwrap().is_empty());
    }

    #[test]
    fn malformed_documents_report_an_offset() {
        let (offset, _) = parse_voc("<annotation><object></annotation>").unwrap_err();
        assert!(offset > 0);
        assert!(parse_voc("<annotation><object><name>weed</name>").is_err());
        assert!(parse_voc("<a><bndbox><xmin>zz</xmin></bndbox></a>").is_ok());
    }
}
