use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::{AlignmentReport, EvalError, MetricsRecord, METRICS_VERSION};

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub variant: String,
    pub seed: u64,
    /// Column name to value, in table order: languages, then Lrl, Hrl, Avg.
    pub values: Vec<(String, Option<f64>)>,
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Comma-delimited accuracy table: one row per record, language columns in
/// the order of the first record, then `Lrl,Hrl,Avg`.
pub fn render_table(records: &[MetricsRecord]) -> Result<String, EvalError> {
    let first = records.first().ok_or_else(|| EvalError::Invalid("no records to export".into()))?;
    let langs: Vec<&str> = first.languages.iter().map(|l| l.lang.as_str()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant", "seed"];
    header.extend(&langs);
    header.extend(["Lrl", "Hrl", "Avg"]);
    w.write_record(&header).map_err(|e| EvalError::Parse(e.to_string()))?;
    for r in records {
        let mut row = vec![r.variant.clone(), r.seed.to_string()];
        for lang in &langs {
            let acc = r.accuracy(lang).ok_or_else(|| EvalError::MissingLanguage(lang.to_string()))?;
            row.push(cell(Some(acc)));
        }
        row.extend([cell(r.lrl), cell(r.hrl), cell(r.avg)]);
        w.write_record(&row).map_err(|e| EvalError::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>, EvalError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| EvalError::Parse(e.to_string()))?.iter().map(String::from).collect();
    if header.len() < 5 || header[0] != "variant" || header[1] != "seed" {
        return Err(EvalError::Parse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| EvalError::Parse(e.to_string()))?;
        let seed = rec[1].parse().map_err(|_| EvalError::Parse(format!("bad seed {:?}", &rec[1])))?;
        let mut values = Vec::new();
        for (name, v) in header[2..].iter().zip(rec.iter().skip(2)) {
            let x = if v.is_empty() {
                None
            } else {
                Some(v.parse::<f64>().map_err(|_| EvalError::Parse(format!("bad value {v:?}")))?)
            };
            values.push((name.clone(), x));
        }
        rows.push(TableRow { variant: rec[0].to_string(), seed, values });
    }
    Ok(rows)
}

/// Projection onto the top two principal components. Each component's sign
/// is fixed so that its largest-magnitude entry is positive.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, EvalError> {
    let n = vectors.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(EvalError::Dim("ragged vectors".into()));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut comps = Vec::new();
    for &k in order.iter().take(2) {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        comps.push(c);
    }
    while comps.len() < 2 {
        comps.push(vec![0.0; d]);
    }
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&comps[0]), p(&comps[1])]
        })
        .collect())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    version: u32,
    records: &'a [MetricsRecord],
    alignment: &'a [AlignmentReport],
}

/// Writes `accuracy.csv`, `metrics.json` and `projection.csv` under `dir`.
/// `pooled` holds, per language, the vectors to project jointly.
pub fn export_report(
    records: &[MetricsRecord],
    alignment: &[AlignmentReport],
    pooled: &[(String, Vec<Vec<f64>>)],
    dir: &Path,
) -> Result<(), EvalError> {
    let io = |p: &Path, e| EvalError::Io(p.display().to_string(), e);
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let table = render_table(records)?;
    let metrics = serde_json::to_string_pretty(&MetricsFile { version: METRICS_VERSION, records, alignment })
        .expect("metrics serialize")
        + "\n";
    let all: Vec<Vec<f64>> = pooled.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
    let coords = pca_2d(&all)?;
    let mut proj = String::from("lang,index,x,y\n");
    let mut k = 0;
    for (lang, vecs) in pooled {
        for i in 0..vecs.len() {
            proj.push_str(&format!("{lang},{i},{},{}\n", coords[k][0], coords[k][1]));
            k += 1;
        }
    }
    for (name, body) in [("accuracy.csv", table), ("metrics.json", metrics), ("projection.csv", proj)] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| io(&p, e))?;
    }
    Ok(())
}
