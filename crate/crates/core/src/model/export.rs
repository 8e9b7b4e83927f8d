use std::io::{self, BufRead, Write};

use crate::{DenseMatrix, Scalar};

pub const ATTENTION_HEADER: &str = "# graphit-attention v1";

/// Attention maps of one graph as read back from an export file.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionExport {
    pub graph_id: usize,
    pub layers: Vec<DenseMatrix<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes the versioned header, a `graph_id= layers= nodes=` line, then one
/// `layer i` block of `N` comma-separated rows per layer.
pub fn write_attention<T: Scalar>(mut w: impl Write, graph_id: usize, layers: &[DenseMatrix<T>]) -> io::Result<()> {
    let n = layers.first().map_or(0, DenseMatrix::rows);
    writeln!(w, "{ATTENTION_HEADER}")?;
    writeln!(w, "graph_id={graph_id} layers={} nodes={n}", layers.len())?;
    for (l, a) in layers.iter().enumerate() {
        writeln!(w, "layer {l}")?;
        for i in 0..a.rows() {
            let row: Vec<String> = a.row(i).iter().map(|x| x.as_f64().to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn read_attention(r: impl BufRead) -> Result<AttentionExport, ExportError> {
    let bad = |line: usize, reason: String| ExportError::Parse { line, reason };
    let mut lines = r.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l)));
    let mut next = |what: &str| -> Result<(usize, String), ExportError> {
        match lines.next() {
            Some(l) => Ok(l?),
            None => Err(bad(0, format!("unexpected end of file, expected {what}"))),
        }
    };
    let (ln, h) = next("header")?;
    if h.trim() != ATTENTION_HEADER {
        return Err(bad(ln, format!("expected `{ATTENTION_HEADER}`")));
    }
    let (ln, meta) = next("metadata")?;
    let mut vals = [None; 3];
    for kv in meta.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(ln, format!("bad field `{kv}`")))?;
        let slot = match k {
            "graph_id" => 0,
            "layers" => 1,
            "nodes" => 2,
            _ => return Err(bad(ln, format!("unknown field `{k}`"))),
        };
        vals[slot] = Some(v.parse::<usize>().map_err(|_| bad(ln, format!("`{k}` is not an integer")))?);
    }
    let [Some(graph_id), Some(num_layers), Some(n)] = vals else {
        return Err(bad(ln, "need graph_id, layers and nodes".into()));
    };
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let (ln, tag) = next("layer tag")?;
        if tag.trim() != format!("layer {l}") {
            return Err(bad(ln, format!("expected `layer {l}`")));
        }
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n {
            let (ln, row) = next("matrix row")?;
            let xs = row
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad(ln, format!("bad value `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if xs.len() != n {
                return Err(bad(ln, format!("expected {n} values, found {}", xs.len())));
            }
            data.extend(xs);
        }
        layers.push(DenseMatrix::from_vec(n, n, data).expect("n×n"));
    }
    Ok(AttentionExport { graph_id, layers })
}
