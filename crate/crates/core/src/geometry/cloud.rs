//! Point cloud container and its on-disk encodings.
//!
//! Binary layout (`PPC1`, all little-endian):
//!
//! | offset | type       | field                                          |
//! |--------|------------|------------------------------------------------|
//! | 0      | `[u8; 4]`  | magic `b"PPC1"`                                |
//! | 4      | `u32`      | point count `n`                                |
//! | 8      | `u32`      | flags: bit 0 normals present, bit 1 cluster ids |
//! | 12     | `f32 x 3n` | x, y, z triples                                |
//! | ...    | `f32 x 3n` | normal triples (if flagged; NaN marks invalid) |
//! | ...    | `u32 x n`  | cluster ids (if flagged)                       |
//!
//! The text form is one `x y z` line per point; `#` starts a comment.

use std::io::{BufRead, Read, Write};

use nalgebra::Vector3;

use super::GeometryError;

pub const MAGIC: &[u8; 4] = b"PPC1";
const FLAG_NORMALS: u32 = 1;
const FLAG_CLUSTERS: u32 = 1 << 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Per-point normals; `None` marks a point whose normal could not be estimated.
    pub normals: Option<Vec<Option<Vector3<f64>>>>,
    pub cluster_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        let cloud = Self {
            points,
            normals: None,
            cluster_ids: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_cluster_ids(mut self, ids: Vec<u32>) -> Result<Self, GeometryError> {
        self.cluster_ids = Some(ids);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if let Some(bad) = self
            .points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(GeometryError::InvalidArgument(format!(
                "point {bad} has a non-finite coordinate"
            )));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(GeometryError::InvalidArgument(
                    "normal count differs from point count".into(),
                ));
            }
            if let Some(bad) = normals
                .iter()
                .position(|n| n.is_some_and(|n| (n.norm() - 1.0).abs() > 1e-6))
            {
                return Err(GeometryError::InvalidArgument(format!(
                    "normal {bad} is not unit length"
                )));
            }
        }
        if let Some(ids) = &self.cluster_ids {
            if ids.len() != self.points.len() {
                return Err(GeometryError::InvalidArgument(
                    "cluster id count differs from point count".into(),
                ));
            }
        }
        Ok(())
    }

    /// Sub-cloud of the points labelled `cluster_id`, in original order.
    pub fn select_cluster(&self, cluster_id: u32) -> PointCloud {
        let Some(ids) = &self.cluster_ids else {
            return PointCloud::default();
        };
        let keep: Vec<usize> = ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == cluster_id)
            .map(|(i, _)| i)
            .collect();
        PointCloud {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| keep.iter().map(|&i| n[i]).collect()),
            cluster_ids: Some(vec![cluster_id; keep.len()]),
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), GeometryError> {
        self.validate()?;
        let n = u32::try_from(self.points.len())
            .map_err(|_| GeometryError::Format("too many points for a u32 count".into()))?;
        let mut flags = 0;
        if self.normals.is_some() {
            flags |= FLAG_NORMALS;
        }
        if self.cluster_ids.is_some() {
            flags |= FLAG_CLUSTERS;
        }
        let mut buf = Vec::with_capacity(12 + self.points.len() * 28);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&n.to_le_bytes());
        buf.extend_from_slice(&flags.to_le_bytes());
        for p in &self.points {
            for c in p.iter() {
                buf.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        if let Some(normals) = &self.normals {
            for n in normals {
                let v = n.unwrap_or(Vector3::repeat(f64::NAN));
                for c in v.iter() {
                    buf.extend_from_slice(&(*c as f32).to_le_bytes());
                }
            }
        }
        if let Some(ids) = &self.cluster_ids {
            for id in ids {
                buf.extend_from_slice(&id.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, GeometryError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cursor = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cursor.take(4)? != MAGIC {
            return Err(GeometryError::Format("bad magic, expected PPC1".into()));
        }
        let n = cursor.u32()? as usize;
        let flags = cursor.u32()?;
        if flags & !(FLAG_NORMALS | FLAG_CLUSTERS) != 0 {
            return Err(GeometryError::Format(format!("unknown flags {flags:#x}")));
        }
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push(cursor.vec3()?);
        }
        let normals = if flags & FLAG_NORMALS != 0 {
            let mut normals = Vec::with_capacity(n);
            for _ in 0..n {
                let v = cursor.vec3()?;
                normals.push(if v.iter().all(|c| c.is_finite()) {
                    Some(v.normalize())
                } else {
                    None
                });
            }
            Some(normals)
        } else {
            None
        };
        let cluster_ids = if flags & FLAG_CLUSTERS != 0 {
            let mut ids = Vec::with_capacity(n);
            for _ in 0..n {
                ids.push(cursor.u32()?);
            }
            Some(ids)
        } else {
            None
        };
        if cursor.pos != bytes.len() {
            return Err(GeometryError::Format(format!(
                "{} trailing bytes",
                bytes.len() - cursor.pos
            )));
        }
        let cloud = PointCloud {
            points,
            normals,
            cluster_ids,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn write_xyz<W: Write>(&self, mut w: W) -> Result<(), GeometryError> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    pub fn read_xyz<R: BufRead>(r: R) -> Result<Self, GeometryError> {
        let mut points = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let coords: Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            match coords {
                Ok(c) if c.len() == 3 => points.push(Vector3::new(c[0], c[1], c[2])),
                _ => {
                    return Err(GeometryError::Format(format!(
                        "line {}: expected three numbers",
                        lineno + 1
                    )));
                }
            }
        }
        PointCloud::new(points)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], GeometryError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(GeometryError::Format(
                "unexpected end of point cloud data".into(),
            ));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, GeometryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, GeometryError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, GeometryError> {
        Ok(Vector3::new(
            f64::from(self.f32()?),
            f64::from(self.f32()?),
            f64::from(self.f32()?),
        ))
    }
}
