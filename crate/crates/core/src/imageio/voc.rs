use std::fs;
use std::path::Path;

use super::types::GTBox;
use super::ImageError;

/// Class-name table: line index in the backing text file is the class id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
}

impl ClassTable {
    pub fn new(names: Vec<String>) -> Result<Self, ImageError> {
        if names.is_empty() {
            return Err(ImageError::invalid("class table", "no classes"));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() || n.trim() != n {
                return Err(ImageError::invalid(
                    "class table",
                    format!("line {i} is blank or padded"),
                ));
            }
            if names[..i].contains(n) {
                return Err(ImageError::invalid("class table", format!("duplicate class {n:?}")));
            }
        }
        Ok(ClassTable { names })
    }

    pub fn from_text(text: &str) -> Result<Self, ImageError> {
        let mut lines: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        ClassTable::new(lines.into_iter().map(str::to_string).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = self.names.join("\n");
        out.push('\n');
        out
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let text = fs::read_to_string(path).map_err(|e| ImageError::io(path, e))?;
        ClassTable::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        fs::write(path, self.to_text()).map_err(|e| ImageError::io(path, e))
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name_of(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Parses a VOC-style annotation document into boxes.
///
/// Coordinates are taken verbatim (no one-based adjustment); the writer in
/// this module emits the same convention, so round trips are exact. Unknown
/// child elements are ignored; unknown class names are not.
pub fn parse_voc_annotation(text: &str, classes: &ClassTable) -> Result<Vec<GTBox>, ImageError> {
    let mut boxes = Vec::new();
    for object in blocks(text, "object")? {
        let name = required(object, "name")?.trim();
        let class_id = classes
            .id_of(name)
            .ok_or_else(|| ImageError::parse("name", format!("unknown class {name:?}")))?;
        let difficult = match optional(object, "difficult")? {
            Some(v) => match v.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(ImageError::parse("difficult", format!("expected 0 or 1, got {other:?}")))
                }
            },
            None => false,
        };
        let bndbox = required(object, "bndbox")?;
        let coord = |tag: &str| -> Result<f64, ImageError> {
            required(bndbox, tag)?
                .trim()
                .parse::<f64>()
                .map_err(|_| ImageError::parse(tag, "not a number"))
        };
        let (xmin, ymin) = (coord("xmin")?, coord("ymin")?);
        let (xmax, ymax) = (coord("xmax")?, coord("ymax")?);
        let b = GTBox::new(xmin, ymin, xmax, ymax, class_id, difficult)
            .map_err(|e| ImageError::parse("bndbox", e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// Renders boxes as a VOC-style annotation document.
pub fn write_voc_annotation(
    boxes: &[GTBox],
    classes: &ClassTable,
    width: usize,
    height: usize,
    depth: usize,
) -> Result<String, ImageError> {
    let mut out = String::new();
    out.push_str("<annotation>\n");
    out.push_str(&format!(
        "  <size><width>{width}</width><height>{height}</height><depth>{depth}</depth></size>\n"
    ));
    for b in boxes {
        let name = classes.name_of(b.class_id).ok_or_else(|| {
            ImageError::invalid("box", format!("class id {} not in table", b.class_id))
        })?;
        out.push_str("  <object>\n");
        out.push_str(&format!("    <name>{name}</name>\n"));
        out.push_str(&format!("    <difficult>{}</difficult>\n", b.difficult as u8));
        out.push_str(&format!(
            "    <bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox>\n",
            b.xmin, b.ymin, b.xmax, b.ymax
        ));
        out.push_str("  </object>\n");
    }
    out.push_str("</annotation>\n");
    Ok(out)
}

/// All `<tag>…</tag>` spans at any depth below `text`, left to right.
fn blocks<'a>(text: &'a str, tag: &str) -> Result<Vec<&'a str>, ImageError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let inner_start = start + open.len();
        let inner_len = rest[inner_start..]
            .find(&close)
            .ok_or_else(|| ImageError::parse(tag, "missing closing tag"))?;
        found.push(&rest[inner_start..inner_start + inner_len]);
        rest = &rest[inner_start + inner_len + close.len()..];
    }
    Ok(found)
}

fn optional<'a>(text: &'a str, tag: &str) -> Result<Option<&'a str>, ImageError> {
    let mut all = blocks(text, tag)?;
    if all.len() > 1 {
        return Err(ImageError::parse(tag, "element repeated"));
    }
    Ok(all.pop())
}

fn required<'a>(text: &'a str, tag: &str) -> Result<&'a str, ImageError> {
    optional(text, tag)?.ok_or_else(|| ImageError::parse(tag, "element missing"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ClassTable {
        ClassTable::new(vec!["cat".into(), "dog".into()]).unwrap()
    }

    #[test]
    fn class_table_text_roundtrip() {
        let t = table();
        assert_eq!(t.to_text(), "cat\ndog\n");
        assert_eq!(ClassTable::from_text("cat\ndog\n").unwrap(), t);
        assert_eq!(ClassTable::from_text("cat\ndog").unwrap(), t);
        assert_eq!(t.id_of("dog"), Some(1));
        assert_eq!(t.name_of(0), Some("cat"));
        assert!(ClassTable::from_text("cat\n\ndog\n").is_err());
        assert!(ClassTable::from_text("cat\ncat\n").is_err());
        assert!(ClassTable::from_text("").is_err());
    }

    #[test]
    fn empty_annotation_gives_no_boxes() {
        let doc = "<annotation><size><width>8</width></size></annotation>";
        assert_eq!(parse_voc_annotation(doc, &table()).unwrap(), vec![]);
    }

    #[test]
    fn single_object_fixture() {
        let doc = "\
<annotation>
  <object>
    <name>dog</name>
    <pose>Left</pose>
    <difficult>0</difficult>
    <bndbox><xmin>48</xmin><ymin>240</ymin><xmax>195</xmax><ymax>371</ymax></bndbox>
  </object>
</annotation>";
        let boxes = parse_voc_annotation(doc, &table()).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        assert_eq!((b.xmin, b.ymin, b.xmax, b.ymax), (48.0, 240.0, 195.0, 371.0));
        assert_eq!(b.class_id, 1);
        assert!(!b.difficult);
    }

    #[test]
    fn difficult_flag_preserved() {
        let doc = "<object><name>cat</name><difficult>1</difficult>\
                   <bndbox><xmin>1</xmin><ymin>1</ymin><xmax>2</xmax><ymax>2</ymax></bndbox></object>";
        let boxes = parse_voc_annotation(doc, &table()).unwrap();
        assert!(boxes[0].difficult);
    }

    #[test]
    fn inverted_coordinates_rejected() {
        let doc = "<object><name>cat</name>\
                   <bndbox><xmin>5</xmin><ymin>1</ymin><xmax>2</xmax><ymax>2</ymax></bndbox></object>";
        let err = parse_voc_annotation(doc, &table()).unwrap_err();
        assert!(matches!(err, ImageError::Parse { ref element, .. } if element == "bndbox"));
    }

    #[test]
    fn unknown_class_and_malformed_markup_rejected() {
        let doc = "<object><name>bird</name>\
                   <bndbox><xmin>1</xmin><ymin>1</ymin><xmax>2</xmax><ymax>2</ymax></bndbox></object>";
        let err = parse_voc_annotation(doc, &table()).unwrap_err();
        assert!(matches!(err, ImageError::Parse { ref element, .. } if element == "name"));

        let unclosed = "<object><name>cat</name>";
        let err = parse_voc_annotation(unclosed, &table()).unwrap_err();
        assert!(matches!(err, ImageError::Parse { ref element, .. } if element == "object"));

        let no_box = "<object><name>cat</name></object>";
        let err = parse_voc_annotation(no_box, &table()).unwrap_err();
        assert!(matches!(err, ImageError::Parse { ref element, .. } if element == "bndbox"));
    }

    #[test]
    fn write_then_parse_roundtrip() {
        let boxes = vec![
            GTBox::new(3.0, 4.0, 10.0, 12.0, 0, false).unwrap(),
            GTBox::new(0.5, 1.25, 7.75, 9.0, 1, true).unwrap(),
        ];
        let doc = write_voc_annotation(&boxes, &table(), 64, 64, 3).unwrap();
        let back = parse_voc_annotation(&doc, &table()).unwrap();
        assert_eq!(back, boxes);
    }

    #[test]
    fn write_rejects_unknown_class_id() {
        let boxes = vec![GTBox::new(0.0, 0.0, 1.0, 1.0, 9, false).unwrap()];
        assert!(write_voc_annotation(&boxes, &table(), 8, 8, 3).is_err());
    }
}
