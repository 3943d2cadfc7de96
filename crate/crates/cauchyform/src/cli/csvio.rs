//! CSV files for sampled spacetime forms.
//!
//! First line: `# cauchyform-spacetime-v1 degree=K bc=NAME t0=.. dt=.. samples=..`,
//! then a header row and one row per (sample, component, simplex).

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;

use crate::boundary::BcTag;
use crate::error::{Error, Result};
use crate::mesh::SimplicialComplex;
use crate::propagator::{SpacetimeForm, TimeGrid};

pub const SPACETIME_FORMAT: &str = "cauchyform-spacetime-v1";
const COLUMNS: [&str; 5] = ["sample", "tau", "component_degree", "simplex", "value"];

/// A form read from disk with the bc it was declared under.
#[derive(Clone, Debug)]
pub struct TaggedForm {
    pub bc: BcTag,
    pub form: SpacetimeForm,
}

pub fn write_form<W: Write>(form: &SpacetimeForm, bc: BcTag, mut out: W) -> Result<()> {
    let g = form.grid;
    writeln!(out, "# {SPACETIME_FORMAT} degree={} bc={} t0={} dt={} samples={}", form.k, bc.name(), g.t0, g.dt, g.samples)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(COLUMNS).map_err(csv_err)?;
    for i in 0..g.samples {
        let tau = g.tau(i).to_string();
        for comp in &form.comps {
            for s in 0..comp.data.nrows() {
                w.write_record([i.to_string(), tau.clone(), comp.degree.to_string(), s.to_string(), comp.data[(s, i)].to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, BcTag, TimeGrid)> {
    let bad = |m: &str| Error::Parse(format!("spacetime csv header: {m}"));
    let rest = line.strip_prefix('#').ok_or_else(|| bad("missing '#' line"))?.trim();
    let mut parts = rest.split_whitespace();
    if parts.next() != Some(SPACETIME_FORMAT) {
        return Err(bad(&format!("expected format {SPACETIME_FORMAT}")));
    }
    let (mut degree, mut bc, mut t0, mut dt, mut samples) = (None, None, None, None, None);
    for p in parts {
        let (key, val) = p.split_once('=').ok_or_else(|| bad(&format!("malformed field '{p}'")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("{key} is not a number")));
        match key {
            "degree" => degree = Some(val.parse::<usize>().map_err(|_| bad("degree is not an integer"))?),
            "bc" => bc = Some(serde_json::from_value::<BcTag>(serde_json::Value::String(val.into())).map_err(|_| bad(&format!("unknown bc '{val}'")))?),
            "t0" => t0 = Some(num(val)?),
            "dt" => dt = Some(num(val)?),
            "samples" => samples = Some(val.parse::<usize>().map_err(|_| bad("samples is not an integer"))?),
            _ => return Err(bad(&format!("unknown field '{key}'"))),
        }
    }
    let grid = TimeGrid::new(t0.ok_or_else(|| bad("t0 missing"))?, dt.ok_or_else(|| bad("dt missing"))?, samples.ok_or_else(|| bad("samples missing"))?)?;
    Ok((degree.ok_or_else(|| bad("degree missing"))?, bc.ok_or_else(|| bad("bc missing"))?, grid))
}

/// Reads a form on the given mesh. Entries not listed are zero; every listed
/// entry must name an existing sample, component and simplex.
pub fn read_form<R: Read>(c: &SimplicialComplex, input: R) -> Result<TaggedForm> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let (k, bc, grid) = parse_header(first.trim_end())?;
    if k > c.dim() + 1 {
        return Err(Error::DegreeOutOfRange { degree: k, lo: 0, hi: c.dim() + 1 });
    }
    let mut form = SpacetimeForm::zeros(c, k, grid);
    let mut rd = csv::Reader::from_reader(reader);
    let headers = rd.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Parse(format!("expected columns {}, got {}", COLUMNS.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let row = line + 2;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Parse(format!("row {row}: missing column {}", COLUMNS[i])));
        let int = |i: usize| -> Result<usize> { field(i)?.trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad {}", COLUMNS[i]))) };
        let (i, deg, s) = (int(0)?, int(2)?, int(3)?);
        let tau: f64 = field(1)?.trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad tau")))?;
        let value: f64 = field(4)?.trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad value")))?;
        if i >= grid.samples {
            return Err(Error::Parse(format!("row {row}: sample {i} beyond {} samples", grid.samples)));
        }
        if (tau - grid.tau(i)).abs() > 1e-9 * (1.0 + tau.abs()) {
            return Err(Error::Parse(format!("row {row}: tau {tau} does not match sample {i} ({})", grid.tau(i))));
        }
        if !value.is_finite() {
            return Err(Error::Parse(format!("row {row}: value is not finite")));
        }
        let comp = form.comp_mut(deg).ok_or_else(|| Error::Parse(format!("row {row}: degree-{k} form has no component of degree {deg}")))?;
        if s >= comp.data.nrows() {
            return Err(Error::Parse(format!("row {row}: simplex {s} out of range for degree {deg}")));
        }
        comp.data[(s, i)] = value;
    }
    Ok(TaggedForm { bc, form })
}

/// Eigenvalue table: degree, index, eigenvalue.
pub fn write_spectrum<W: Write>(rows: &[(usize, usize, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["degree", "index", "eigenvalue"]).map_err(csv_err)?;
    for (d, i, l) in rows {
        w.write_record([d.to_string(), i.to_string(), l.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn zeros_like(form: &SpacetimeForm) -> SpacetimeForm {
    let mut z = form.clone();
    for c in &mut z.comps {
        c.data = DMatrix::zeros(c.data.nrows(), c.data.ncols());
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate, MeshGeneratorSpec};

    #[test]
    fn round_trip() {
        let c = generate(&MeshGeneratorSpec::Interval { length: 1.0, resolution: 4 }).unwrap();
        let grid = TimeGrid::new(0.5, 0.1, 4).unwrap();
        let mut f = SpacetimeForm::zeros(&c, 1, grid);
        f.comp_mut(0).unwrap().data[(2, 1)] = 0.1 + 0.2;
        f.comp_mut(1).unwrap().data[(3, 3)] = -1e-300;
        let mut buf = Vec::new();
        write_form(&f, BcTag::Dirichlet, &mut buf).unwrap();
        let back = read_form(&c, buf.as_slice()).unwrap();
        assert_eq!(back.bc, BcTag::Dirichlet);
        assert_eq!(back.form, f);
    }

    #[test]
    fn schema_violations() {
        let c = generate(&MeshGeneratorSpec::Interval { length: 1.0, resolution: 4 }).unwrap();
        let head = "# cauchyform-spacetime-v1 degree=0 bc=dirichlet t0=0 dt=0.1 samples=3\nsample,tau,component_degree,simplex,value\n";
        assert!(read_form(&c, format!("{head}0,0,0,1,2.5\n").as_bytes()).is_ok());
        assert!(read_form(&c, format!("{head}0,0,0,9,1\n").as_bytes()).is_err());
        assert!(read_form(&c, format!("{head}0,0,1,0,1\n").as_bytes()).is_err());
        assert!(read_form(&c, format!("{head}1,0.3,0,0,1\n").as_bytes()).is_err());
        assert!(read_form(&c, "sample,tau\n".as_bytes()).is_err());
        let wrong_cols = "# cauchyform-spacetime-v1 degree=0 bc=dirichlet t0=0 dt=0.1 samples=3\na,b,c,d,e\n";
        assert!(read_form(&c, wrong_cols.as_bytes()).is_err());
    }
}
