use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data_model::RecordKey;
use crate::tsne::LayoutPoint;
use crate::{Error, Result};

/// Label given to points outside every polygon.
pub const REST_LABEL: &str = "rest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub label: String,
    /// Vertices in layout coordinates; the ring closes implicitly.
    pub vertices: Vec<[f64; 2]>,
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if cross != 0.0 {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Even-odd rule; points on an edge or vertex are inside.
pub fn point_in_polygon(pt: [f64; 2], vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    if n == 0 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[j]);
        if on_segment(pt, a, b) {
            return true;
        }
        if (a[1] > pt[1]) != (b[1] > pt[1]) {
            let x_cross = a[0] + (pt[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if pt[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub polygons: Vec<Polygon>,
    pub assignment: BTreeMap<RecordKey, String>,
}

impl ClusterLabeling {
    pub fn label(&self, key: &RecordKey) -> Option<&str> {
        self.assignment.get(key).map(String::as_str)
    }

    /// Polygon labels in list order, then `rest`.
    pub fn labels(&self) -> Vec<&str> {
        self.polygons
            .iter()
            .map(|p| p.label.as_str())
            .chain(std::iter::once(REST_LABEL))
            .collect()
    }

    pub fn members<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RecordKey> + 'a {
        self.assignment.iter().filter(move |(_, l)| l.as_str() == label).map(|(k, _)| k)
    }

    /// Point count per label, including empty polygons and `rest`.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.labels().into_iter().map(|l| (l.to_string(), 0)).collect();
        for l in self.assignment.values() {
            *counts.entry(l.clone()).or_default() += 1;
        }
        counts
    }
}

pub fn validate_polygons(polygons: &[Polygon]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in polygons {
        if p.label.trim().is_empty() {
            return Err(Error::invalid("polygon label must not be empty"));
        }
        if p.label == REST_LABEL {
            return Err(Error::invalid(format!("`{REST_LABEL}` is reserved for unassigned points")));
        }
        if !seen.insert(p.label.as_str()) {
            return Err(Error::invalid(format!("duplicate polygon label `{}`", p.label)));
        }
        if p.vertices.len() < 3 {
            return Err(Error::invalid(format!(
                "polygon `{}` has {} vertices, need at least 3",
                p.label,
                p.vertices.len()
            )));
        }
        if p.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("polygon `{}` has a non-finite vertex", p.label)));
        }
    }
    Ok(())
}

/// Labels each point by the first polygon containing it, else `rest`.
pub fn assign_clusters(layout: &[LayoutPoint], polygons: &[Polygon]) -> Result<ClusterLabeling> {
    validate_polygons(polygons)?;
    let assignment = layout
        .iter()
        .map(|pt| {
            let label = polygons
                .iter()
                .find(|p| point_in_polygon([pt.x, pt.y], &p.vertices))
                .map_or(REST_LABEL, |p| p.label.as_str());
            (RecordKey::new(&pt.subject_id, pt.region), label.to_string())
        })
        .collect();
    Ok(ClusterLabeling {
        polygons: polygons.to_vec(),
        assignment,
    })
}

/// `[{"label": …, "vertices": [[x, y], …]}, …]`
pub fn read_polygons_json<R: Read>(r: R) -> Result<Vec<Polygon>> {
    let polygons: Vec<Polygon> = serde_json::from_reader(r)?;
    validate_polygons(&polygons)?;
    Ok(polygons)
}

pub fn write_polygons_json<W: Write>(w: W, polygons: &[Polygon]) -> Result<()> {
    serde_json::to_writer_pretty(w, polygons)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Region;
    use proptest::prelude::*;

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

    fn pt(id: &str, x: f64, y: f64) -> LayoutPoint {
        LayoutPoint { subject_id: id.into(), region: Region::Cervical, x, y }
    }

    fn poly(label: &str, v: &[[f64; 2]]) -> Polygon {
        Polygon { label: label.into(), vertices: v.to_vec() }
    }

    #[test]
    fn unit_square() {
        assert!(point_in_polygon([0.5, 0.5], &SQUARE));
        assert!(!point_in_polygon([2.0, 2.0], &SQUARE));
        assert!(point_in_polygon([1.0, 0.5], &SQUARE));
        assert!(point_in_polygon([0.0, 0.0], &SQUARE));
        assert!(!point_in_polygon([1.0 + 1e-12, 0.5], &SQUARE));
    }

    #[test]
    fn degenerate_polygon_only_contains_its_edges() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(point_in_polygon([0.5, 0.5], &line));
        assert!(!point_in_polygon([0.5, 0.6], &line));
    }

    #[test]
    fn concave_polygon() {
        let u = [[0.0, 0.0], [3.0, 0.0], [3.0, 3.0], [2.0, 3.0], [2.0, 1.0], [1.0, 1.0], [1.0, 3.0], [0.0, 3.0]];
        assert!(!point_in_polygon([1.5, 2.0], &u));
        assert!(point_in_polygon([0.5, 2.0], &u));
        assert!(point_in_polygon([2.5, 2.0], &u));
    }

    #[test]
    fn two_disjoint_polygons() {
        let layout = [pt("a", 0.5, 0.5), pt("b", 0.2, 0.8), pt("c", 5.5, 5.5), pt("d", 9.0, 9.0)];
        let polys = [poly("left", &SQUARE), poly("right", &[[5.0, 5.0], [6.0, 5.0], [6.0, 6.0]])];
        let lab = assign_clusters(&layout, &polys).unwrap();
        let counts = lab.counts();
        assert_eq!((counts["left"], counts["right"], counts["rest"]), (2, 1, 1));
        assert_eq!(lab.label(&RecordKey::new("d", Region::Cervical)), Some("rest"));
    }

    #[test]
    fn overlap_goes_to_first_polygon() {
        let layout = [pt("a", 0.5, 0.5)];
        let polys = [poly("first", &SQUARE), poly("second", &[[-1.0, -1.0], [2.0, -1.0], [2.0, 2.0], [-1.0, 2.0]])];
        assert_eq!(assign_clusters(&layout, &polys).unwrap().assignment.values().next().unwrap(), "first");
    }

    #[test]
    fn no_polygons_means_rest() {
        let layout = [pt("a", 0.0, 0.0), pt("b", 1.0, 1.0)];
        let lab = assign_clusters(&layout, &[]).unwrap();
        assert!(lab.assignment.values().all(|l| l == REST_LABEL));
    }

    #[test]
    fn invalid_polygon_sets() {
        let dup = [poly("x", &SQUARE), poly("x", &SQUARE)];
        assert!(assign_clusters(&[], &dup).is_err());
        assert!(assign_clusters(&[], &[poly("x", &SQUARE[..2])]).is_err());
        assert!(assign_clusters(&[], &[poly(REST_LABEL, &SQUARE)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let polys = vec![poly("a", &SQUARE)];
        let mut buf = Vec::new();
        write_polygons_json(&mut buf, &polys).unwrap();
        assert_eq!(read_polygons_json(&buf[..]).unwrap(), polys);
        let raw = br#"[{"label":"a","vertices":[[0,0],[1,0],[0,1]]}]"#;
        assert_eq!(read_polygons_json(&raw[..]).unwrap()[0].vertices[2], [0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn assignment_ignores_point_order_and_is_idempotent(
            pts in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..40),
            rot in 0usize..40,
        ) {
            let layout: Vec<LayoutPoint> = pts.iter().enumerate().map(|(i, &(x, y))| pt(&format!("s{i}"), x, y)).collect();
            let polys = [poly("tri", &[[-1.0, -1.0], [1.5, 0.0], [0.0, 1.5]]), poly("sq", &SQUARE)];
            let a = assign_clusters(&layout, &polys).unwrap();
            let mut shuffled = layout.clone();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            prop_assert_eq!(&a, &assign_clusters(&shuffled, &polys).unwrap());
            prop_assert_eq!(&a, &assign_clusters(&layout, &a.polygons).unwrap());
        }
    }
}
