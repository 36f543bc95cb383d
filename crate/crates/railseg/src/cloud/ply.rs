//! PLY 1.0 reader/writer for labeled clouds.
//!
//! Vertices carry `x`, `y`, `z` coordinates and a `class` label (uchar).
//! Binary files are little-endian and store coordinates as `double`, which
//! makes binary the lossless interchange format; ASCII prints 6 decimal
//! places and is meant for inspection. The reader accepts `float` or
//! `double` coordinates and ignores unknown scalar properties.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::cloud::{LabelSchema, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(token: &str) -> Option<ScalarType> {
        Some(match token {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 => 4,
            ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct PropertyDef {
    name: String,
    ty: ScalarType,
}

#[derive(Debug)]
struct ElementDef {
    name: String,
    count: usize,
    properties: Vec<PropertyDef>,
}

struct Header {
    format: Format,
    elements: Vec<ElementDef>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::PlyFormat(msg.into())
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<bool> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| malformed(format!("header read failed: {e}")))?;
        while line.ends_with('\n') || line.ends_with('\r') {
            line.pop();
        }
        Ok(n > 0)
    };

    if !read_line(&mut line)? || line != "ply" {
        return Err(malformed("missing 'ply' magic line"));
    }

    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        if !read_line(&mut line)? {
            return Err(malformed("header ended before end_header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if tokens.len() < 3 || tokens[2] != "1.0" {
                    return Err(malformed(format!("unsupported format line: {line:?}")));
                }
                format = Some(match tokens[1] {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => {
                        return Err(malformed(format!("unsupported format {other:?}")))
                    }
                });
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(malformed(format!("bad element line: {line:?}")));
                }
                let count: usize = tokens[2]
                    .parse()
                    .map_err(|_| malformed(format!("bad element count: {line:?}")))?;
                elements.push(ElementDef {
                    name: tokens[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                if tokens.get(1) == Some(&"list") {
                    return Err(malformed(format!(
                        "list properties are not supported (element {:?})",
                        element.name
                    )));
                }
                if tokens.len() != 3 {
                    return Err(malformed(format!("bad property line: {line:?}")));
                }
                let ty = ScalarType::parse(tokens[1])
                    .ok_or_else(|| malformed(format!("unknown property type {:?}", tokens[1])))?;
                element.properties.push(PropertyDef {
                    name: tokens[2].to_string(),
                    ty,
                });
            }
            Some("end_header") => break,
            Some(other) => return Err(malformed(format!("unexpected header keyword {other:?}"))),
        }
    }

    Ok(Header {
        format: format.ok_or_else(|| malformed("missing format line"))?,
        elements,
    })
}

/// Load a labeled cloud. The vertex element must provide `x`, `y`, `z`
/// coordinates and a `class` property; extra scalar properties are ignored.
pub fn load_ply(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let header = parse_header(&mut reader)?;

    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();

    for element in &header.elements {
        if element.name == "vertex" {
            let idx_of = |name: &str| -> Result<usize> {
                element
                    .properties
                    .iter()
                    .position(|p| p.name == name)
                    .ok_or_else(|| malformed(format!("vertex element lacks property {name:?}")))
            };
            let (xi, yi, zi, ci) = (idx_of("x")?, idx_of("y")?, idx_of("z")?, idx_of("class")?);
            positions.reserve(element.count);
            labels.reserve(element.count);

            match header.format {
                Format::Ascii => {
                    let mut line = String::new();
                    for row in 0..element.count {
                        line.clear();
                        let n = reader
                            .read_line(&mut line)
                            .map_err(|e| malformed(format!("vertex row {row}: {e}")))?;
                        if n == 0 {
                            return Err(malformed(format!(
                                "expected {} vertices, file ended at {row}",
                                element.count
                            )));
                        }
                        let tokens: Vec<&str> = line.split_whitespace().collect();
                        if tokens.len() < element.properties.len() {
                            return Err(malformed(format!("vertex row {row} is short")));
                        }
                        let get = |i: usize| -> Result<f64> {
                            tokens[i]
                                .parse::<f64>()
                                .map_err(|_| malformed(format!("vertex row {row}: bad number")))
                        };
                        positions.push(Vector3::new(get(xi)?, get(yi)?, get(zi)?));
                        labels.push(label_from_f64(get(ci)?, schema)?);
                    }
                }
                Format::BinaryLittleEndian => {
                    let offsets = property_offsets(&element.properties);
                    let row_size = *offsets.last().unwrap();
                    let mut buf = vec![0u8; row_size];
                    for row in 0..element.count {
                        reader.read_exact(&mut buf).map_err(|_| {
                            malformed(format!(
                                "expected {} vertices, file ended at {row}",
                                element.count
                            ))
                        })?;
                        let read = |i: usize| -> f64 {
                            element.properties[i].ty.read_f64(&buf[offsets[i]..])
                        };
                        positions.push(Vector3::new(read(xi), read(yi), read(zi)));
                        labels.push(label_from_f64(read(ci), schema)?);
                    }
                }
            }
        } else {
            // Skip a foreign element's data so a trailing vertex element can
            // still be reached.
            match header.format {
                Format::Ascii => {
                    let mut line = String::new();
                    for _ in 0..element.count {
                        line.clear();
                        if reader.read_line(&mut line).map_err(|e| malformed(e.to_string()))? == 0
                        {
                            return Err(malformed("file ended inside skipped element"));
                        }
                    }
                }
                Format::BinaryLittleEndian => {
                    let row: usize = element.properties.iter().map(|p| p.ty.size()).sum();
                    let mut sink = vec![0u8; row * element.count];
                    reader
                        .read_exact(&mut sink)
                        .map_err(|_| malformed("file ended inside skipped element"))?;
                }
            }
        }
    }

    PointCloud::new(positions, labels, schema.clone())
}

fn property_offsets(props: &[PropertyDef]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(props.len() + 1);
    let mut acc = 0;
    for p in props {
        offsets.push(acc);
        acc += p.ty.size();
    }
    offsets.push(acc);
    offsets
}

fn label_from_f64(value: f64, schema: &LabelSchema) -> Result<u8> {
    if !value.is_finite() || value < 0.0 || value.fract() != 0.0 || value > 255.0 {
        return Err(Error::PlyFormat(format!("bad class value {value}")));
    }
    let v = value as u32;
    if v as usize >= schema.num_classes() {
        return Err(Error::LabelOutOfRange {
            value: v,
            num_classes: schema.num_classes(),
        });
    }
    Ok(v as u8)
}

/// Write the cloud as PLY. Binary (little-endian, double coordinates) is
/// lossless: `load_ply` inverts it bit-for-bit. ASCII prints 6 decimals.
pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, ascii: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    let coord_type = if ascii { "float" } else { "double" };
    let format = if ascii { "ascii" } else { "binary_little_endian" };
    write!(
        w,
        "ply\nformat {format} 1.0\ncomment railseg labeled point cloud\n\
         element vertex {}\nproperty {coord_type} x\nproperty {coord_type} y\n\
         property {coord_type} z\nproperty uchar class\nend_header\n",
        cloud.len()
    )
    .map_err(io_err)?;

    if ascii {
        for (p, &l) in cloud.positions().iter().zip(cloud.labels()) {
            writeln!(w, "{:.6} {:.6} {:.6} {}", p.x, p.y, p.z, l).map_err(io_err)?;
        }
    } else {
        let mut row = [0u8; 25];
        for (p, &l) in cloud.positions().iter().zip(cloud.labels()) {
            row[0..8].copy_from_slice(&p.x.to_le_bytes());
            row[8..16].copy_from_slice(&p.y.to_le_bytes());
            row[16..24].copy_from_slice(&p.z.to_le_bytes());
            row[24] = l;
            w.write_all(&row).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, RngSeed};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("railseg-ply-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = RngSeed(seed).rng();
        let positions = (0..n)
            .map(|_| {
                Vector3::new(
                    rng::uniform_f64(&mut rng, -100.0, 100.0),
                    rng::uniform_f64(&mut rng, -100.0, 100.0),
                    rng::uniform_f64(&mut rng, -100.0, 100.0),
                )
            })
            .collect();
        let labels = (0..n).map(|_| rng::uniform_usize(&mut rng, 3) as u8).collect();
        PointCloud::new(positions, labels, LabelSchema::railroad()).unwrap()
    }

    #[test]
    fn empty_cloud_round_trips() {
        let path = tmp("empty.ply");
        let cloud = PointCloud::empty(LabelSchema::railroad());
        save_ply(&cloud, &path, false).unwrap();
        let text_start = std::fs::read(&path).unwrap();
        assert!(String::from_utf8_lossy(&text_start).contains("element vertex 0"));
        let back = load_ply(&path, &LabelSchema::railroad()).unwrap();
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        for seed in 0..5u64 {
            let cloud = random_cloud(3 + 40 * seed as usize, seed);
            let path = tmp(&format!("bin-{seed}.ply"));
            save_ply(&cloud, &path, false).unwrap();
            let back = load_ply(&path, cloud.schema()).unwrap();
            assert_eq!(back.positions(), cloud.positions());
            assert_eq!(back.labels(), cloud.labels());
        }
    }

    #[test]
    fn ascii_round_trip_within_print_precision() {
        let cloud = random_cloud(25, 42);
        let path = tmp("ascii.ply");
        save_ply(&cloud, &path, true).unwrap();
        let back = load_ply(&path, cloud.schema()).unwrap();
        assert_eq!(back.labels(), cloud.labels());
        for (a, b) in cloud.positions().iter().zip(back.positions()) {
            assert!((a - b).amax() <= 1e-6);
        }
    }

    #[test]
    fn class_out_of_schema_range_errors() {
        let path = tmp("bad-class.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar class\nend_header\n0 0 0 7\n",
        )
        .unwrap();
        let err = load_ply(&path, &LabelSchema::railroad()).unwrap_err();
        assert!(err.to_string().contains("label out of range"), "{err}");
    }

    #[test]
    fn missing_file_and_malformed_header() {
        assert!(matches!(
            load_ply(tmp("does-not-exist.ply"), &LabelSchema::railroad()),
            Err(Error::Io { .. })
        ));
        let path = tmp("not-ply.ply");
        std::fs::write(&path, "off\n0 0 0\n").unwrap();
        assert!(matches!(
            load_ply(&path, &LabelSchema::railroad()),
            Err(Error::PlyFormat(_))
        ));
    }

    #[test]
    fn non_finite_coordinate_rejected() {
        let path = tmp("nan.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar class\nend_header\nnan 0 0 1\n",
        )
        .unwrap();
        assert!(matches!(
            load_ply(&path, &LabelSchema::railroad()),
            Err(Error::NonFiniteCoordinate { .. })
        ));
    }

    #[test]
    fn unknown_extra_properties_are_ignored() {
        let path = tmp("extra-props.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float intensity\nproperty float y\nproperty float z\nproperty uchar class\nend_header\n\
             1 99 2 3 0\n4 98 5 6 2\n",
        )
        .unwrap();
        let cloud = load_ply(&path, &LabelSchema::railroad()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.positions()[0], Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(cloud.labels(), &[0, 2]);
    }

    #[test]
    fn float_coordinates_accepted_on_load() {
        let path = tmp("float-bin.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar class\nend_header\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.25f32).to_le_bytes());
        bytes.extend_from_slice(&10.0f32.to_le_bytes());
        bytes.push(1);
        std::fs::write(&path, bytes).unwrap();
        let cloud = load_ply(&path, &LabelSchema::railroad()).unwrap();
        assert_eq!(cloud.positions()[0], Vector3::new(1.5, -2.25, 10.0));
        assert_eq!(cloud.labels(), &[1]);
    }
}
