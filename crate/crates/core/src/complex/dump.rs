use std::io::Write;

use super::cochain::Cochain;
use super::field::CellField;
use crate::error::Result;
use crate::exterior::basis;

fn header(dim: usize) -> Vec<String> {
    let mut h = vec!["face_index".to_string(), "direction_set".to_string()];
    h.extend((0..dim).map(|a| format!("position{a}")));
    h.push("value".into());
    h
}

/// CSV rows `face_index,direction_set,position0..,value` in face order.
pub fn write_cochain_csv<W: Write>(u: &Cochain<f64>, out: W) -> Result<()> {
    let grid = u.grid();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(grid.dim()))?;
    let layout = grid.layout(u.degree());
    let mut rows = Vec::with_capacity(layout.len());
    layout.for_each(|i, t, pos| {
        let mut rec = vec![i.to_string(), layout.dirs()[t].to_string()];
        rec.extend(pos.iter().map(|p| p.to_string()));
        rec.push(format!("{:e}", u.values()[i]));
        rows.push(rec);
    });
    for rec in rows {
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Same schema for a per-cell field: the index is the cell index and the
/// direction set names the component.
pub fn write_field_csv<W: Write>(f: &CellField<f64>, out: W) -> Result<()> {
    let grid = f.grid();
    let dirs = basis(grid.dim(), f.degree());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(grid.dim()))?;
    for c in 0..grid.cell_count() {
        let pos = grid.cell_position(c);
        for (dir, v) in dirs.iter().zip(f.cell(c)) {
            let mut rec = vec![c.to_string(), dir.to_string()];
            rec.extend(pos.iter().map(|p| p.to_string()));
            rec.push(format!("{v:e}"));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::grid::Grid;

    #[test]
    fn cochain_dump_layout() {
        let g = Grid::new(2, 1, 1.0).unwrap();
        let u = Cochain::from_values(&g, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_cochain_csv(&u, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "face_index,direction_set,position0,position1,value");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("2,dx2,0,0,"));
    }
}
