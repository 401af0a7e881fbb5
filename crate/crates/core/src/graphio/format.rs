use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::{Graph, GraphError, GraphSet, Labels, ParseErrorKind, Split};
use crate::numkit::DenseMatrix;

/// Floats are written with 9 significant digits, enough to round-trip `f32`.
pub(crate) fn fmt_f32(v: f32) -> String {
    format!("{v:.8e}")
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                return Some((i + 1, toks));
            }
        }
        None
    }

    fn expect(&mut self) -> Result<(usize, Vec<&'a str>), GraphError> {
        self.next_line().ok_or(GraphError::Parse {
            line: self.last + 1,
            kind: ParseErrorKind::UnexpectedEof,
        })
    }
}

fn err(line: usize, kind: ParseErrorKind) -> GraphError {
    GraphError::Parse { line, kind }
}

fn syntax(line: usize, msg: impl Into<String>) -> GraphError {
    err(line, ParseErrorKind::Syntax(msg.into()))
}

fn num<T: std::str::FromStr>(line: usize, tok: &str, what: &str) -> Result<T, GraphError> {
    tok.parse().map_err(|_| syntax(line, format!("cannot parse {what} from '{tok}'")))
}

fn tagged<'a>(lines: &mut Lines<'a>, tag: &str, arity: usize) -> Result<(usize, Vec<&'a str>), GraphError> {
    let (line, toks) = lines.expect()?;
    if toks[0] != tag {
        return Err(syntax(line, format!("expected a '{tag}' line, found '{}'", toks[0])));
    }
    if toks.len() != arity + 1 {
        return Err(syntax(line, format!("'{tag}' line needs {arity} fields, found {}", toks.len() - 1)));
    }
    Ok((line, toks))
}

fn node_id(line: usize, tok: &str, n: usize) -> Result<usize, GraphError> {
    let v: usize = num(line, tok, "node id")?;
    if v >= n {
        return Err(syntax(line, format!("node id {v} outside 0..{n}")));
    }
    Ok(v)
}

fn parse_block(lines: &mut Lines<'_>) -> Result<Graph, GraphError> {
    let (hline, h) = lines.expect()?;
    if h[0] != "graph" || !(h.len() == 5 || h.len() == 6) {
        return Err(err(hline, ParseErrorKind::MalformedHeader(h.join(" "))));
    }
    let header_num = |i: usize| -> Result<usize, GraphError> {
        h[i].parse()
            .map_err(|_| err(hline, ParseErrorKind::MalformedHeader(format!("field {i} '{}' is not a count", h[i]))))
    };
    let (n, m, f, c) = (header_num(1)?, header_num(2)?, header_num(3)?, header_num(4)?);
    let multilabel = match h.get(5) {
        None => false,
        Some(&"multilabel") => true,
        Some(other) => return Err(err(hline, ParseErrorKind::MalformedHeader(format!("unknown flag '{other}'")))),
    };

    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (line, t) = tagged(lines, "e", 2)?;
        let v: usize = num(line, t[1], "endpoint")?;
        let u: usize = num(line, t[2], "endpoint")?;
        if v >= n || u >= n {
            return Err(err(line, ParseErrorKind::DanglingEndpoint { v, u, num_nodes: n }));
        }
        if v == u {
            return Err(err(line, ParseErrorKind::SelfLoop(v)));
        }
        edges.push((v, u));
    }

    let mut feats = vec![0.0f32; n * f];
    let mut seen = vec![false; n];
    for _ in 0..n {
        let (line, t) = tagged(lines, "x", f + 1)?;
        let v = node_id(line, t[1], n)?;
        if std::mem::replace(&mut seen[v], true) {
            return Err(err(line, ParseErrorKind::Duplicate { tag: 'x', node: v }));
        }
        for (j, tok) in t[2..].iter().enumerate() {
            let x: f32 = num(line, tok, "feature")?;
            if !x.is_finite() {
                return Err(syntax(line, "non-finite feature"));
            }
            feats[v * f + j] = x;
        }
    }

    let mut seen = vec![false; n];
    let labels = if multilabel {
        let mut rows = vec![Vec::new(); n];
        for _ in 0..n {
            let (line, t) = tagged(lines, "y", c + 1)?;
            let v = node_id(line, t[1], n)?;
            if std::mem::replace(&mut seen[v], true) {
                return Err(err(line, ParseErrorKind::Duplicate { tag: 'y', node: v }));
            }
            rows[v] = t[2..]
                .iter()
                .map(|tok| match *tok {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(syntax(line, format!("multi-hot flag must be 0 or 1, found '{other}'"))),
                })
                .collect::<Result<_, _>>()?;
        }
        Labels::Multi(rows)
    } else {
        let mut ys = vec![0usize; n];
        for _ in 0..n {
            let (line, t) = tagged(lines, "y", 2)?;
            let v = node_id(line, t[1], n)?;
            if std::mem::replace(&mut seen[v], true) {
                return Err(err(line, ParseErrorKind::Duplicate { tag: 'y', node: v }));
            }
            let y: usize = num(line, t[2], "label")?;
            if y >= c {
                return Err(err(line, ParseErrorKind::LabelOutOfRange { node: v, label: y, classes: c }));
            }
            ys[v] = y;
        }
        Labels::Single(ys)
    };

    let mut splits = vec![Split::None; n];
    let mut seen = vec![false; n];
    for _ in 0..n {
        let (line, t) = tagged(lines, "m", 2)?;
        let v = node_id(line, t[1], n)?;
        if std::mem::replace(&mut seen[v], true) {
            return Err(err(line, ParseErrorKind::MaskOverlap(v)));
        }
        splits[v] = Split::parse(t[2]).ok_or_else(|| syntax(line, format!("unknown mask '{}'", t[2])))?;
    }

    let features = DenseMatrix::from_vec(n, f, feats)?;
    Graph::new(n, &edges, features, labels, c, splits)
}

fn expect_end(lines: &mut Lines<'_>) -> Result<(), GraphError> {
    match lines.next_line() {
        None => Ok(()),
        Some((line, t)) => Err(syntax(line, format!("trailing content starting with '{}'", t[0]))),
    }
}

pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let mut lines = Lines::new(text);
    let g = parse_block(&mut lines)?;
    expect_end(&mut lines)?;
    Ok(g)
}

/// Parses a `graphset <N>` file. Each block is prefixed by
/// `glabel <label> [train|val|test|none]`; a missing split means `train`.
pub fn parse_graphset(text: &str) -> Result<GraphSet, GraphError> {
    let mut lines = Lines::new(text);
    let (hline, h) = lines.expect()?;
    if h.len() != 2 || h[0] != "graphset" {
        return Err(err(hline, ParseErrorKind::MalformedHeader(h.join(" "))));
    }
    let count: usize = h[1]
        .parse()
        .map_err(|_| err(hline, ParseErrorKind::MalformedHeader(format!("bad graph count '{}'", h[1]))))?;
    let mut graphs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut splits = Vec::with_capacity(count);
    let mut classes: Option<(usize, usize)> = None;
    for _ in 0..count {
        let (line, t) = lines.expect()?;
        if t[0] != "glabel" || !(t.len() == 2 || t.len() == 3) {
            return Err(syntax(line, "expected 'glabel <label> [split]'"));
        }
        let y: usize = num(line, t[1], "graph label")?;
        let split = match t.get(2) {
            None => Split::Train,
            Some(s) => Split::parse(s).ok_or_else(|| syntax(line, format!("unknown split '{s}'")))?,
        };
        let block_line = lines.last + 1;
        let g = parse_block(&mut lines)?;
        match classes {
            None => classes = Some((g.num_classes(), g.feature_dim())),
            Some((c, f)) if c != g.num_classes() || f != g.feature_dim() => {
                return Err(err(
                    block_line,
                    ParseErrorKind::MalformedHeader("graphs disagree on feature dimension or class count".into()),
                ));
            }
            Some(_) => {}
        }
        if y >= g.num_classes() {
            return Err(err(line, ParseErrorKind::LabelOutOfRange { node: graphs.len(), label: y, classes: g.num_classes() }));
        }
        graphs.push(g);
        labels.push(y);
        splits.push(split);
    }
    expect_end(&mut lines)?;
    let c = classes.map_or(0, |(c, _)| c);
    GraphSet::new(graphs, labels, splits, c)
}

/// Either kind of file, told apart by the first header token.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Graph(Graph),
    Set(GraphSet),
}

pub fn parse_dataset(text: &str) -> Result<Dataset, GraphError> {
    match text.split_whitespace().next() {
        Some("graphset") => Ok(Dataset::Set(parse_graphset(text)?)),
        _ => Ok(Dataset::Graph(parse_graph(text)?)),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, GraphError> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph, GraphError> {
    parse_graph(&fs::read_to_string(path)?)
}

pub fn load_graphset(path: impl AsRef<Path>) -> Result<GraphSet, GraphError> {
    parse_graphset(&fs::read_to_string(path)?)
}

pub fn write_graph(g: &Graph, out: &mut impl Write) -> io::Result<()> {
    let flag = if g.labels().is_multilabel() { " multilabel" } else { "" };
    writeln!(out, "graph {} {} {} {}{flag}", g.num_nodes(), g.num_edges(), g.feature_dim(), g.num_classes())?;
    for &(v, u) in g.edges() {
        writeln!(out, "e {v} {u}")?;
    }
    for v in 0..g.num_nodes() {
        write!(out, "x {v}")?;
        for &x in g.features().row(v) {
            write!(out, " {}", fmt_f32(x))?;
        }
        writeln!(out)?;
    }
    match g.labels() {
        Labels::Single(ys) => {
            for (v, y) in ys.iter().enumerate() {
                writeln!(out, "y {v} {y}")?;
            }
        }
        Labels::Multi(rows) => {
            for (v, row) in rows.iter().enumerate() {
                write!(out, "y {v}")?;
                for &b in row {
                    write!(out, " {}", u8::from(b))?;
                }
                writeln!(out)?;
            }
        }
    }
    for (v, s) in g.splits().iter().enumerate() {
        writeln!(out, "m {v} {s}")?;
    }
    Ok(())
}

pub fn write_graphset(set: &GraphSet, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "graphset {}", set.len())?;
    for ((g, y), s) in set.graphs().iter().zip(set.labels()).zip(set.splits()) {
        writeln!(out, "glabel {y} {s}")?;
        write_graph(g, out)?;
    }
    Ok(())
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_graph(g, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_graphset(set: &GraphSet, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_graphset(set, &mut w)?;
    w.flush()?;
    Ok(())
}
