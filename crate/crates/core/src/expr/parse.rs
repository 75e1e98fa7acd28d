//! Recursive-descent parser.
//!
//! ```text
//! expr     := term (('+'|'-') term)*
//! term     := factor (('*'|'/') factor)*
//! factor   := base ('^' exponent)?
//! base     := number | ident | ident '(' expr ')' | '(' expr ')' | '-' factor
//! exponent := integer | '(' ['-'] integer ['/' integer] ')'
//! ```
//!
//! The parser builds the tree as written; it does not fold constants.

use super::{Expr, ExprError, Func, Node, Number, Rational, Symbol};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Number),
    Int(i64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(_) | Tok::Int(_) => "number".into(),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax { offset, message: message.into() }
}

/// Decimal literal to an exact rational when it fits comfortably in `i64`.
fn exact_decimal(int: &str, frac: &str) -> Option<Rational> {
    let digits = format!("{int}{frac}");
    let digits = digits.trim_start_matches('0');
    if digits.len() > 15 || frac.len() > 15 {
        return None;
    }
    let num: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    Rational::new(num, 10i64.checked_pow(frac.len() as u32)?)
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'^' => out.push((Tok::Caret, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let int = &text[i..j];
                let mut frac = "";
                let mut is_plain_int = true;
                if j < bytes.len() && bytes[j] == b'.' {
                    is_plain_int = false;
                    let k = j + 1;
                    j = k;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    frac = &text[k..j];
                }
                if int.is_empty() && frac.is_empty() {
                    return Err(syntax(start, "malformed number"));
                }
                let mut has_exp = false;
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    let digits_start = k;
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    if k > digits_start {
                        has_exp = true;
                        j = k;
                    }
                }
                let lit = &text[start..j];
                let tok = if has_exp {
                    let v: f64 = lit.parse().map_err(|_| syntax(start, "malformed number"))?;
                    Tok::Num(Number::Float(v))
                } else if is_plain_int {
                    match int.parse::<i64>() {
                        Ok(v) => Tok::Int(v),
                        Err(_) => Tok::Num(Number::Float(
                            lit.parse().map_err(|_| syntax(start, "malformed number"))?,
                        )),
                    }
                } else {
                    match exact_decimal(int, frac) {
                        Some(r) => Tok::Num(Number::Exact(r)),
                        None => Tok::Num(Number::Float(
                            lit.parse().map_err(|_| syntax(start, "malformed number"))?,
                        )),
                    }
                };
                out.push((tok, start));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((Tok::Ident(text[i..j].to_string()), start));
                i = j;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        }
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let idx = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[idx].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected {what}, found {}", self.peek().describe())))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    let t = self.term()?;
                    terms.push(Expr::from_node(Node::Neg(t)));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::from_node(Node::Add(terms)) })
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        fn collapse(mut factors: Vec<Expr>) -> Expr {
            if factors.len() == 1 {
                factors.pop().unwrap()
            } else {
                Expr::from_node(Node::Mul(factors))
            }
        }
        let mut factors = vec![self.factor()?];
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    factors.push(self.factor()?);
                }
                Tok::Slash => {
                    self.bump();
                    let num = collapse(std::mem::take(&mut factors));
                    let den = self.factor()?;
                    factors.push(Expr::from_node(Node::Div(num, den)));
                }
                _ => break,
            }
        }
        Ok(collapse(factors))
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let e = self.exponent()?;
            return Ok(Expr::from_node(Node::Pow(base, e)));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Rational, ExprError> {
        let at = self.offset();
        match self.bump() {
            Tok::Int(v) => Ok(Rational::integer(v)),
            Tok::LParen => {
                let neg = if *self.peek() == Tok::Minus {
                    self.bump();
                    true
                } else {
                    false
                };
                let p = self.integer("integer exponent")?;
                let q = if *self.peek() == Tok::Slash {
                    self.bump();
                    self.integer("integer denominator")?
                } else {
                    1
                };
                self.expect(Tok::RParen, "')'")?;
                let p = if neg { -p } else { p };
                Rational::new(p, q).ok_or_else(|| syntax(at, "exponent denominator must be non-zero"))
            }
            other => Err(syntax(
                at,
                format!(
                    "expected integer or parenthesized rational exponent, found {}",
                    other.describe()
                ),
            )),
        }
    }

    fn integer(&mut self, what: &str) -> Result<i64, ExprError> {
        let at = self.offset();
        match self.bump() {
            Tok::Int(v) => Ok(v),
            other => Err(syntax(at, format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::int(v))
            }
            Tok::Num(n) => {
                self.bump();
                Ok(Expr::constant(n))
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ExprError::UnknownFunction { name: name.clone(), offset: at })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(Expr::from_node(Node::Call(func, arg)))
                } else {
                    Ok(Expr::var(Symbol::from_name(&name)))
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Minus => {
                self.bump();
                // A literal directly after a unary minus is a negative constant,
                // unless it is the base of a power.
                let literal = match self.peek() {
                    Tok::Int(v) => Some(Number::int(*v)),
                    Tok::Num(n) => Some(*n),
                    _ => None,
                };
                if let Some(n) = literal {
                    if *self.peek_at(1) != Tok::Caret {
                        self.bump();
                        return Ok(Expr::constant(n.neg()));
                    }
                }
                let inner = self.factor()?;
                Ok(Expr::from_node(Node::Neg(inner)))
            }
            other => Err(syntax(
                at,
                format!("expected number, identifier, '(' or '-', found {}", other.describe()),
            )),
        }
    }
}

/// Parses an expression over `x0, r, s, z` and named parameters.
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(p.offset(), format!("expected operator or end of input, found {}", p.peek().describe())));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Coord;

    fn var(c: Coord) -> Expr {
        Expr::var(c)
    }

    #[test]
    fn sqrt_of_sum() {
        let e = parse("sqrt(1 + z^2)").unwrap();
        let want = Expr::from_node(Node::Call(
            Func::Sqrt,
            Expr::from_node(Node::Add(vec![
                Expr::int(1),
                Expr::from_node(Node::Pow(var(Coord::Z), Rational::integer(2))),
            ])),
        ));
        assert_eq!(e, want);
    }

    #[test]
    fn example_profile_with_parameter() {
        let e = parse("sqrt(1+r^2-s^2+exp(x0)*z^2) + s*k/(1+r^2)").unwrap();
        let syms = e.free_symbols();
        assert!(syms.contains(&Symbol::from_name("k")));
        for c in Coord::ALL {
            assert!(syms.contains(&Symbol::Coord(c)), "missing {c:?}");
        }
        match e.node() {
            Node::Add(t) => assert_eq!(t.len(), 2),
            other => panic!("expected a sum, got {other:?}"),
        }
    }

    #[test]
    fn malformed_operator_sequence() {
        let err = parse("s +* z").unwrap_err();
        match err {
            ExprError::Syntax { offset, message } => {
                assert_eq!(offset, 3);
                assert!(message.contains("expected"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_function() {
        assert!(matches!(parse("tanh(z)"), Err(ExprError::UnknownFunction { offset: 0, .. })));
    }

    #[test]
    fn exponents() {
        assert!(parse("z^(1/2) + z^(-3/2) + z^(-1)").is_ok());
        assert!(matches!(parse("z^s"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(parse("z^(1/0)").is_err());
    }

    #[test]
    fn literals() {
        assert_eq!(parse("0.5").unwrap().as_const(), Some(Number::Exact(Rational::new(1, 2).unwrap())));
        assert_eq!(parse("-3").unwrap().as_const(), Some(Number::int(-3)));
        assert_eq!(parse("1.5e0").unwrap().as_const(), Some(Number::Float(1.5)));
        // unary minus binds looser than power
        assert!(matches!(parse("-3^2").unwrap().node(), Node::Neg(_)));
    }

    #[test]
    fn trailing_garbage() {
        assert!(matches!(parse("z )"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { offset: 0, .. })));
    }
}
