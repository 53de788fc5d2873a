//! ASCII VTK XML PolyData (`.vtp`) reader.
//!
//! Reads inline-ASCII `.vtp` files as exported by ParaView/SimVascular:
//! the `<Points>` coordinates, every single-component `<PointData>` scalar
//! array, and optional `<Lines>` polyline connectivity. Binary, appended,
//! and compressed encodings are rejected. Point coordinates are taken to be
//! LPS millimetres, the frame simulation exports use.

use std::fs;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use crate::geom::WorldPoint;

/// Scalar array name carried by simulation pressure exports, plus the
/// variant spelling some exports use.
pub const PRESSURE_ARRAY_NAMES: [&str; 2] = ["pressure_ave_mmhg", "pressure_ave_mmmhg"];

#[derive(Debug, Error)]
pub enum VtpError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("xml error: {0}")]
    Xml(#[from] quick_xml::Error),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("missing Points element")]
    MissingPoints,
    #[error("declared NumberOfPoints {declared} disagrees with parsed point count {actual}")]
    PointCountMismatch { declared: usize, actual: usize },
    #[error("scalar array '{name}' has {actual} values, expected {expected}")]
    ScalarLengthMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("malformed vtp: {0}")]
    Malformed(String),
}

/// Points plus named per-point scalar arrays and optional polylines.
#[derive(Debug, Clone, Default)]
pub struct PolyData {
    pub points: Vec<WorldPoint>,
    pub point_scalars: Vec<(String, Vec<f64>)>,
    pub polylines: Vec<Vec<usize>>,
}

impl PolyData {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.point_scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// The pressure scalar array, located under either accepted name.
    pub fn pressure(&self) -> Option<&[f64]> {
        PRESSURE_ARRAY_NAMES.iter().find_map(|n| self.scalar(n))
    }
}

pub fn read_vtp_ascii(path: &Path) -> Result<PolyData, VtpError> {
    let text = fs::read_to_string(path).map_err(|source| VtpError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_vtp_ascii(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    None,
    Points,
    PointData,
    Lines,
}

struct ArrayAttrs {
    name: String,
    components: usize,
}

fn attr(e: &BytesStart, key: &str) -> Result<Option<String>, VtpError> {
    for a in e.attributes() {
        let a = a.map_err(|e| VtpError::Malformed(format!("bad attribute: {e}")))?;
        if a.key.as_ref() == key.as_bytes() {
            let v = a
                .unescape_value()
                .map_err(|e| VtpError::Malformed(format!("bad attribute value: {e}")))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn check_data_array(e: &BytesStart) -> Result<ArrayAttrs, VtpError> {
    if let Some(fmt) = attr(e, "format")? {
        if !fmt.eq_ignore_ascii_case("ascii") {
            return Err(VtpError::UnsupportedEncoding(format!(
                "DataArray format=\"{fmt}\"; only inline ascii is supported"
            )));
        }
    }
    let name = attr(e, "Name")?.unwrap_or_default();
    let components = match attr(e, "NumberOfComponents")? {
        Some(c) => c
            .parse::<usize>()
            .map_err(|_| VtpError::Malformed(format!("bad NumberOfComponents '{c}'")))?,
        None => 1,
    };
    Ok(ArrayAttrs { name, components })
}

fn parse_values(text: &str, context: &str) -> Result<Vec<f64>, VtpError> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| VtpError::Malformed(format!("bad number '{tok}' in {context}")))
        })
        .collect()
}

/// Parses an inline-ASCII `.vtp` document.
pub fn parse_vtp_ascii(text: &str) -> Result<PolyData, VtpError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    let mut section = Section::None;
    let mut declared_points: Option<usize> = None;
    let mut points_raw: Option<Vec<f64>> = None;
    let mut scalars: Vec<(String, Vec<f64>)> = Vec::new();
    let mut connectivity: Option<Vec<f64>> = None;
    let mut offsets: Option<Vec<f64>> = None;

    // Pending DataArray whose text content is being collected.
    let mut pending: Option<(ArrayAttrs, String)> = None;
    let mut saw_vtkfile = false;

    loop {
        match reader.read_event()? {
            Event::Start(e) | Event::Empty(e) => {
                let name = e.name();
                let local = name.as_ref();
                match local {
                    b"VTKFile" => {
                        saw_vtkfile = true;
                        if attr(&e, "compressor")?.is_some_and(|c| !c.is_empty()) {
                            return Err(VtpError::UnsupportedEncoding(
                                "compressed vtp is not supported".into(),
                            ));
                        }
                    }
                    b"AppendedData" => {
                        return Err(VtpError::UnsupportedEncoding(
                            "appended data sections are not supported".into(),
                        ));
                    }
                    b"Piece" => {
                        if let Some(n) = attr(&e, "NumberOfPoints")? {
                            let n = n.parse::<usize>().map_err(|_| {
                                VtpError::Malformed(format!("bad NumberOfPoints '{n}'"))
                            })?;
                            declared_points = Some(n);
                        }
                    }
                    b"Points" => section = Section::Points,
                    b"PointData" => section = Section::PointData,
                    b"Lines" => section = Section::Lines,
                    b"DataArray" => {
                        let attrs = check_data_array(&e)?;
                        pending = Some((attrs, String::new()));
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if let Some((_, buf)) = pending.as_mut() {
                    buf.push_str(&t.unescape().map_err(VtpError::Xml)?);
                    buf.push(' ');
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"DataArray" => {
                    if let Some((attrs, buf)) = pending.take() {
                        finish_array(
                            section,
                            attrs,
                            &buf,
                            &mut points_raw,
                            &mut scalars,
                            &mut connectivity,
                            &mut offsets,
                        )?;
                    }
                }
                b"Points" | b"PointData" | b"Lines" => section = Section::None,
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }

    if !saw_vtkfile {
        return Err(VtpError::Malformed("no VTKFile element".into()));
    }
    let points_raw = points_raw.ok_or(VtpError::MissingPoints)?;
    if points_raw.len() % 3 != 0 {
        return Err(VtpError::Malformed(format!(
            "Points array length {} is not a multiple of 3",
            points_raw.len()
        )));
    }
    let points: Vec<WorldPoint> = points_raw
        .chunks_exact(3)
        .map(|c| WorldPoint::lps(c[0], c[1], c[2]))
        .collect();

    if let Some(declared) = declared_points {
        if declared != points.len() {
            return Err(VtpError::PointCountMismatch {
                declared,
                actual: points.len(),
            });
        }
    }
    for (name, values) in &scalars {
        if values.len() != points.len() {
            return Err(VtpError::ScalarLengthMismatch {
                name: name.clone(),
                expected: points.len(),
                actual: values.len(),
            });
        }
    }

    let polylines = build_polylines(connectivity, offsets, points.len())?;
    Ok(PolyData {
        points,
        point_scalars: scalars,
        polylines,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_array(
    section: Section,
    attrs: ArrayAttrs,
    buf: &str,
    points_raw: &mut Option<Vec<f64>>,
    scalars: &mut Vec<(String, Vec<f64>)>,
    connectivity: &mut Option<Vec<f64>>,
    offsets: &mut Option<Vec<f64>>,
) -> Result<(), VtpError> {
    match section {
        Section::Points => {
            if attrs.components != 3 {
                return Err(VtpError::Malformed(format!(
                    "Points DataArray has NumberOfComponents={}, expected 3",
                    attrs.components
                )));
            }
            *points_raw = Some(parse_values(buf, "Points")?);
        }
        Section::PointData => {
            // Multi-component attributes (normals etc.) are not scalars.
            if attrs.components == 1 {
                if attrs.name.is_empty() {
                    return Err(VtpError::Malformed(
                        "PointData DataArray without a Name attribute".into(),
                    ));
                }
                let values = parse_values(buf, &attrs.name)?;
                scalars.push((attrs.name, values));
            }
        }
        Section::Lines => match attrs.name.as_str() {
            "connectivity" => *connectivity = Some(parse_values(buf, "connectivity")?),
            "offsets" => *offsets = Some(parse_values(buf, "offsets")?),
            _ => {}
        },
        Section::None => {}
    }
    Ok(())
}

fn build_polylines(
    connectivity: Option<Vec<f64>>,
    offsets: Option<Vec<f64>>,
    n_points: usize,
) -> Result<Vec<Vec<usize>>, VtpError> {
    let (conn, offs) = match (connectivity, offsets) {
        (Some(c), Some(o)) => (c, o),
        (None, None) => return Ok(Vec::new()),
        _ => {
            return Err(VtpError::Malformed(
                "Lines element needs both connectivity and offsets".into(),
            ))
        }
    };
    let conn: Vec<usize> = conn
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && v >= 0.0 && (v as usize) < n_points {
                Ok(v as usize)
            } else {
                Err(VtpError::Malformed(format!(
                    "connectivity index {v} out of range"
                )))
            }
        })
        .collect::<Result<_, _>>()?;
    let mut lines = Vec::new();
    let mut start = 0usize;
    for o in offs {
        let end = o as usize;
        if o.fract() != 0.0 || end < start || end > conn.len() {
            return Err(VtpError::Malformed(format!("bad offset {o}")));
        }
        lines.push(conn[start..end].to_vec());
        start = end;
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(points: &str, point_data: &str, n: usize) -> String {
        format!(
            r#"<?xml version="1.0"?>
<VTKFile type="PolyData" version="0.1" byte_order="LittleEndian">
  <PolyData>
    <Piece NumberOfPoints="{n}" NumberOfLines="0">
      <Points>
        <DataArray type="Float32" NumberOfComponents="3" format="ascii">
          {points}
        </DataArray>
      </Points>
      <PointData>
        {point_data}
      </PointData>
    </Piece>
  </PolyData>
</VTKFile>"#
        )
    }

    #[test]
    fn parses_three_point_fixture_with_pressure() {
        let doc = fixture(
            "0 0 0  1 0 0  2 0 0",
            r#"<DataArray type="Float64" Name="pressure_ave_mmhg" format="ascii">
                 100.0 99.5 99.0
               </DataArray>"#,
            3,
        );
        let pd = parse_vtp_ascii(&doc).unwrap();
        assert_eq!(pd.points.len(), 3);
        assert_eq!(pd.point_scalars.len(), 1);
        let p = pd.pressure().unwrap();
        assert_eq!(p, &[100.0, 99.5, 99.0]);
        assert_eq!(pd.points[1].x, 1.0);
    }

    #[test]
    fn accepts_variant_pressure_spelling() {
        let doc = fixture(
            "0 0 0  1 1 1",
            r#"<DataArray Name="pressure_ave_mmmhg" format="ascii">90 91</DataArray>"#,
            2,
        );
        let pd = parse_vtp_ascii(&doc).unwrap();
        assert_eq!(pd.pressure().unwrap(), &[90.0, 91.0]);
    }

    #[test]
    fn empty_point_data_gives_zero_scalar_arrays() {
        let doc = fixture("1 2 3", "", 1);
        let pd = parse_vtp_ascii(&doc).unwrap();
        assert_eq!(pd.points.len(), 1);
        assert!(pd.point_scalars.is_empty());
        assert!(pd.pressure().is_none());
    }

    #[test]
    fn declared_count_mismatch_is_an_error() {
        let doc = fixture("0 0 0  1 0 0", "", 3);
        match parse_vtp_ascii(&doc) {
            Err(VtpError::PointCountMismatch {
                declared: 3,
                actual: 2,
            }) => {}
            other => panic!("expected count mismatch, got {other:?}"),
        }
    }

    #[test]
    fn binary_format_rejected() {
        let doc = r#"<?xml version="1.0"?>
<VTKFile type="PolyData"><PolyData><Piece NumberOfPoints="1">
  <Points><DataArray NumberOfComponents="3" format="binary">AAAA</DataArray></Points>
</Piece></PolyData></VTKFile>"#;
        assert!(matches!(
            parse_vtp_ascii(doc),
            Err(VtpError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn appended_data_rejected() {
        let doc = r#"<?xml version="1.0"?>
<VTKFile type="PolyData">
  <AppendedData encoding="raw">_xxxx</AppendedData>
</VTKFile>"#;
        assert!(matches!(
            parse_vtp_ascii(doc),
            Err(VtpError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn compressed_rejected() {
        let doc = r#"<?xml version="1.0"?>
<VTKFile type="PolyData" compressor="vtkZLibDataCompressor"><PolyData/></VTKFile>"#;
        assert!(matches!(
            parse_vtp_ascii(doc),
            Err(VtpError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn missing_points_rejected() {
        let doc = r#"<?xml version="1.0"?>
<VTKFile type="PolyData"><PolyData><Piece NumberOfPoints="0"><PointData/></Piece></PolyData></VTKFile>"#;
        assert!(matches!(parse_vtp_ascii(doc), Err(VtpError::MissingPoints)));
    }

    #[test]
    fn scalar_length_mismatch_rejected() {
        let doc = fixture(
            "0 0 0  1 0 0",
            r#"<DataArray Name="pressure_ave_mmhg" format="ascii">100</DataArray>"#,
            2,
        );
        assert!(matches!(
            parse_vtp_ascii(&doc),
            Err(VtpError::ScalarLengthMismatch { .. })
        ));
    }

    #[test]
    fn polylines_parse() {
        let doc = r#"<?xml version="1.0"?>
<VTKFile type="PolyData"><PolyData><Piece NumberOfPoints="4" NumberOfLines="2">
  <Points><DataArray NumberOfComponents="3" format="ascii">
    0 0 0  1 0 0  2 0 0  3 0 0
  </DataArray></Points>
  <Lines>
    <DataArray type="Int64" Name="connectivity" format="ascii">0 1 2 2 3</DataArray>
    <DataArray type="Int64" Name="offsets" format="ascii">3 5</DataArray>
  </Lines>
</Piece></PolyData></VTKFile>"#;
        let pd = parse_vtp_ascii(doc).unwrap();
        assert_eq!(pd.polylines, vec![vec![0, 1, 2], vec![2, 3]]);
    }

    #[test]
    fn malformed_number_rejected() {
        let doc = fixture("0 0 zero", "", 1);
        assert!(matches!(parse_vtp_ascii(&doc), Err(VtpError::Malformed(_))));
    }
}
