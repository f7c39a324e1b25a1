//! Map descriptions for the command line.
//!
//! ```text
//! map    := ctor ':' args | comb '(' items ')' | 'file:' path | path
//! ctor   := id | pinch | depol | dstoch | unitary
//! comb   := tensor | compose | dsum | mix
//! ```
//!
//! Examples: `pinch:[3];blocks=1,2`, `depol:[3];corner=2,3`,
//! `dstoch:[[0.9,0.1],[0.1,0.9]]`, `unitary:[2];seed=5`,
//! `mix(0.3:id:[2],0.7:depol:[2])`, `tensor(pinch:[2],id:[1,1])`.

use std::path::Path;

use nalgebra::DMatrix;

use crate::algebra::{random_unitary, AlgebraShape, Element};
use crate::error::{Error, Result};
use crate::map::{compose_maps, direct_sum, tensor_product, PtpuMap};

/// Parse a mini-language string, or load a Map JSON file when the string names one.
pub fn parse_map(src: &str) -> Result<PtpuMap> {
    let trimmed = src.trim();
    if let Some(path) = trimmed.strip_prefix("file:") {
        return load_map_file(Path::new(path));
    }
    if trimmed.ends_with(".json") || Path::new(trimmed).is_file() {
        return load_map_file(Path::new(trimmed));
    }
    let mut p = Parser { src: trimmed.as_bytes(), pos: 0 };
    let map = p.map()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(map)
}

pub fn load_map_file(path: &Path) -> Result<PtpuMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        pos: e.column(),
        msg: format!("{}: line {}: {e}", path.display(), e.line()),
    })?;
    PtpuMap::from_json(&value)
}

/// Parse a shape such as `[2,1]`.
pub fn parse_shape(src: &str) -> Result<AlgebraShape> {
    let mut p = Parser { src: src.trim().as_bytes(), pos: 0 };
    let shape = p.shape()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input after shape"));
    }
    Ok(shape)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse { pos: self.pos, msg: msg.into() }
    }

    fn at(&self, pos: usize, err: Error) -> Error {
        match err {
            Error::Parse { .. } => err,
            other => Error::Parse { pos, msg: other.to_string() },
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a name"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && matches!(self.src[self.pos], b'0'..=b'9' | b'.' | b'-' | b'+' | b'e' | b'E') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { pos: start, msg: "expected a number".into() })
    }

    fn integer(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { pos: start, msg: "expected a nonnegative integer".into() })
    }

    /// True when the input after the current comma continues a number list
    /// (a number not followed by `:`, which would be a mixture weight).
    fn list_continues(&self) -> bool {
        let mut i = self.pos + 1;
        while i < self.src.len() && self.src[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= self.src.len() || !self.src[i].is_ascii_digit() {
            return false;
        }
        while i < self.src.len() && matches!(self.src[i], b'0'..=b'9' | b'.') {
            i += 1;
        }
        self.src.get(i) != Some(&b':')
    }

    fn integer_list(&mut self) -> Result<Vec<usize>> {
        let mut out = vec![self.integer()?];
        while self.peek() == Some(b',') && self.list_continues() {
            self.pos += 1;
            out.push(self.integer()?);
        }
        Ok(out)
    }

    fn shape(&mut self) -> Result<AlgebraShape> {
        let start = self.pos;
        self.expect(b'[')?;
        let mut dims = vec![self.integer()?];
        while self.eat(b',') {
            dims.push(self.integer()?);
        }
        self.expect(b']')?;
        AlgebraShape::new(dims).map_err(|e| self.at(start, e))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let start = self.pos;
        self.expect(b'[')?;
        let mut rows = Vec::new();
        loop {
            self.expect(b'[')?;
            let mut row = vec![self.number()?];
            while self.eat(b',') {
                row.push(self.number()?);
            }
            self.expect(b']')?;
            rows.push(row);
            if !self.eat(b',') {
                break;
            }
        }
        self.expect(b']')?;
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse { pos: start, msg: "matrix rows have different lengths".into() });
        }
        Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    /// `;key=value` options after a constructor.
    fn options(&mut self) -> Result<Vec<(String, Vec<usize>, usize)>> {
        let mut out = Vec::new();
        while self.eat(b';') {
            let key = self.ident()?;
            self.expect(b'=')?;
            let at = self.pos;
            out.push((key, self.integer_list()?, at));
        }
        Ok(out)
    }

    fn map(&mut self) -> Result<PtpuMap> {
        self.skip_ws();
        let start = self.pos;
        let name = self.ident()?;
        if self.eat(b'(') {
            return self.combinator(&name, start);
        }
        self.expect(b':')?;
        let map = match name.as_str() {
            "id" => {
                let shape = self.shape()?;
                self.no_options(&name)?;
                PtpuMap::identity(&shape)
            }
            "pinch" => {
                let shape = self.shape()?;
                let mut groups = vec![1; shape.total_rank()];
                for (key, vals, at) in self.options()? {
                    match key.as_str() {
                        "blocks" => groups = vals,
                        _ => return Err(Error::Parse { pos: at, msg: format!("unknown option '{key}' for pinch") }),
                    }
                }
                PtpuMap::diagonal_pinching(&shape, &groups).map_err(|e| self.at(start, e))?
            }
            "depol" => {
                let shape = self.shape()?;
                let mut corner: Vec<usize> = (1..=shape.total_rank()).collect();
                for (key, vals, at) in self.options()? {
                    match key.as_str() {
                        "corner" => {
                            if vals.iter().any(|&v| v == 0 || v > shape.total_rank()) {
                                return Err(Error::Parse { pos: at, msg: "corner index out of range (1-based)".into() });
                            }
                            corner = vals;
                        }
                        _ => return Err(Error::Parse { pos: at, msg: format!("unknown option '{key}' for depol") }),
                    }
                }
                let mut d = vec![0.0; shape.total_rank()];
                for k in corner {
                    d[k - 1] = 1.0;
                }
                let e = Element::diagonal(&shape, &d).map_err(|e| self.at(start, e))?;
                PtpuMap::depolarize_corner(&shape, &e).map_err(|e| self.at(start, e))?
            }
            "dstoch" => {
                let t = self.matrix()?;
                self.no_options(&name)?;
                PtpuMap::classical_stochastic(&t).map_err(|e| self.at(start, e))?
            }
            "unitary" => {
                let shape = self.shape()?;
                let mut seed = 0;
                for (key, vals, at) in self.options()? {
                    match (key.as_str(), vals.as_slice()) {
                        ("seed", [s]) => seed = *s as u64,
                        _ => return Err(Error::Parse { pos: at, msg: format!("unknown option '{key}' for unitary") }),
                    }
                }
                let u = random_unitary(&shape, seed);
                PtpuMap::unitary_conjugation(&shape, &u).map_err(|e| self.at(start, e))?
            }
            _ => return Err(Error::Parse { pos: start, msg: format!("unknown map constructor '{name}'") }),
        };
        Ok(map)
    }

    fn no_options(&mut self, name: &str) -> Result<()> {
        if self.peek() == Some(b';') {
            return Err(self.error(format!("'{name}' takes no options")));
        }
        Ok(())
    }

    fn combinator(&mut self, name: &str, start: usize) -> Result<PtpuMap> {
        if name == "mix" {
            let mut terms = Vec::new();
            loop {
                let w = self.number()?;
                self.expect(b':')?;
                terms.push((w, self.map()?));
                if !self.eat(b',') {
                    break;
                }
            }
            self.expect(b')')?;
            return PtpuMap::convex_combination(&terms).map_err(|e| self.at(start, e));
        }
        let a = self.map()?;
        self.expect(b',')?;
        let b = self.map()?;
        self.expect(b')')?;
        let out = match name {
            "tensor" => tensor_product(&a, &b),
            "compose" => compose_maps(&a, &b),
            "dsum" => direct_sum(&a, &b),
            _ => return Err(Error::Parse { pos: start, msg: format!("unknown combinator '{name}'") }),
        };
        out.map_err(|e| self.at(start, e))
    }
}
