//! Report serialization: JSON with every float written to 17 significant
//! digits, and a CSV projection of node families.

use std::io;

use serde::ser::{Serialize, SerializeMap, Serializer};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::space::{ScenarioTree, StoppingTime};

/// Pretty JSON formatter that writes floats as `d.ddddddddddddddddde±x`.
struct FixedDigits<'a> {
    inner: PrettyFormatter<'a>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.inner.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for FixedDigits<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

/// Canonical JSON: struct field order, two-space indent, 17 significant
/// digits, non-finite numbers as `null`, trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let fmt = FixedDigits { inner: PrettyFormatter::with_indent(b"  ") };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser).expect("report types serialize infallibly");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Node id to value, serialized as a JSON object in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMap<V>(pub Vec<(String, V)>);

impl<V: Serialize> Serialize for NodeMap<V> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl NodeMap<f64> {
    /// Every node's value; NaN entries (outside a family's domain) dropped.
    pub fn family(tree: &ScenarioTree, values: &[f64]) -> Self {
        Self((0..tree.len()).filter(|&m| !values[m].is_nan()).map(|m| (tree.id(m).to_string(), values[m])).collect())
    }

    pub fn at(tree: &ScenarioTree, nodes: &[usize], values: &[f64]) -> Self {
        Self(nodes.iter().map(|&m| (tree.id(m).to_string(), values[m])).collect())
    }
}

impl NodeMap<bool> {
    /// Stop decision per node: `true` exactly on the stop frontier.
    pub fn policy(tree: &ScenarioTree, tau: &StoppingTime) -> Self {
        Self((0..tree.len()).map(|m| (tree.id(m).to_string(), tau.stops_at(tree, m))).collect())
    }
}

/// CSV with columns `node,stage,<name>...`; floats at 17 significant digits.
pub fn families_to_csv(tree: &ScenarioTree, families: &[(&str, &[f64])]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["node".to_string(), "stage".to_string()];
    header.extend(families.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for m in 0..tree.len() {
        let mut row = vec![tree.id(m).to_string(), tree.stage(m).to_string()];
        row.extend(families.iter().map(|(_, v)| if v[m].is_nan() { String::new() } else { format!("{:.16e}", v[m]) }));
        w.write_record(&row).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?)
        .map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvFamilies {
    pub nodes: Vec<String>,
    pub stages: Vec<usize>,
    /// Name and values; empty cells read back as NaN.
    pub families: Vec<(String, Vec<f64>)>,
}

pub fn families_from_csv(text: &str) -> Result<CsvFamilies> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || &header[0] != "node" || &header[1] != "stage" {
        return Err(Error::Config("csv must start with `node,stage`".into()));
    }
    let mut out = CsvFamilies {
        nodes: Vec::new(),
        stages: Vec::new(),
        families: header.iter().skip(2).map(|h| (h.to_string(), Vec::new())).collect(),
    };
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        out.nodes.push(rec[0].to_string());
        out.stages.push(rec[1].parse().map_err(|_| Error::Config(format!("bad stage `{}`", &rec[1])))?);
        for (i, (_, vals)) in out.families.iter_mut().enumerate() {
            let cell = &rec[i + 2];
            vals.push(if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse().map_err(|_| Error::Config(format!("bad number `{cell}`")))?
            });
        }
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}
