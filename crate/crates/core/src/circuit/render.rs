use super::{FlatCircuit, GateKind};

#[derive(Clone)]
enum Cell {
    Wire,
    Label(String),
    Cross,
}

/// Text diagram with one row per wire. Gates are packed into columns as early
/// as their wire dependencies allow; a two-qubit gate occupies every wire it
/// spans so its vertical connector never crosses another gate.
pub fn render_ascii(fc: &FlatCircuit) -> String {
    let n = fc.n_qubits;
    let mut next_free = vec![0usize; n];
    let mut columns: Vec<Vec<Cell>> = Vec::new();
    for g in &fc.gates {
        let lo = *g.wires.iter().min().expect("gates have wires");
        let hi = *g.wires.iter().max().expect("gates have wires");
        let col = (lo..=hi).map(|w| next_free[w]).max().unwrap_or(0);
        for slot in next_free.iter_mut().take(hi + 1).skip(lo) {
            *slot = col + 1;
        }
        while columns.len() <= col {
            columns.push(vec![Cell::Wire; n]);
        }
        let cells = &mut columns[col];
        match g.kind {
            GateKind::CNOT => {
                for cell in cells.iter_mut().take(hi).skip(lo + 1) {
                    *cell = Cell::Cross;
                }
                cells[g.wires[0]] = Cell::Label("*".into());
                cells[g.wires[1]] = Cell::Label("(+)".into());
            }
            GateKind::CZ => {
                for cell in cells.iter_mut().take(hi).skip(lo + 1) {
                    *cell = Cell::Cross;
                }
                cells[g.wires[0]] = Cell::Label("*".into());
                cells[g.wires[1]] = Cell::Label("*".into());
            }
            kind => cells[lo] = Cell::Label(kind.name().into()),
        }
    }

    let widths: Vec<usize> = columns
        .iter()
        .map(|c| {
            c.iter()
                .map(|cell| match cell {
                    Cell::Label(s) => s.len(),
                    _ => 1,
                })
                .max()
                .unwrap_or(1)
        })
        .collect();

    let mut measured: Vec<Vec<char>> = vec![Vec::new(); n];
    for m in &fc.measurements {
        measured[m.wire].push(m.observable.short());
    }

    let prefix_width = format!("q{}", n.saturating_sub(1)).len();
    let mut out = String::new();
    for w in 0..n {
        let mut line = format!("{:>prefix_width$}: ", format!("q{w}"));
        for (col, width) in columns.iter().zip(&widths) {
            line.push('-');
            match &col[w] {
                Cell::Wire => line.push_str(&"-".repeat(*width)),
                Cell::Cross => line.push_str(&center("|", *width)),
                Cell::Label(s) => line.push_str(&center(s, *width)),
            }
            line.push('-');
        }
        if !measured[w].is_empty() {
            let obs: Vec<String> = measured[w].iter().map(|c| c.to_string()).collect();
            line.push_str(&format!(" <{}>", obs.join(",")));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn center(label: &str, width: usize) -> String {
    let pad = width - label.len();
    let left = pad / 2;
    format!("{}{}{}", "-".repeat(left), label, "-".repeat(pad - left))
}
