//! Recursive-descent parser for the expression language.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := base ('^' exponent)? | '-' factor
//! base   := number | ident | '(' expr ')' | func '(' expr ')'
//! func   := exp | log | sin | cos | sqrt
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`. Exponents are
//! integers, optionally signed; a parenthesized rational like `x^(1/2)` is
//! also accepted so that printed trees always parse back. Number literals
//! are decimal (`2`, `0.75`) and become exact rationals; a quotient of
//! literals such as `1/2` folds to the exact rational constant.

use super::{Expr, Func, ParseError};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(BigRational),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    src: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.src.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, col: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            while matches!(self.src.peek(), Some(c) if c.is_whitespace()) {
                self.bump();
            }
            let (line, col) = (self.line, self.col);
            let Some(&c) = self.src.peek() else {
                out.push(Token {
                    tok: Tok::Eof,
                    line,
                    col,
                });
                return Ok(out);
            };
            let tok = match c {
                '+' => {
                    self.bump();
                    Tok::Plus
                }
                '-' => {
                    self.bump();
                    Tok::Minus
                }
                '*' => {
                    self.bump();
                    Tok::Star
                }
                '/' => {
                    self.bump();
                    Tok::Slash
                }
                '^' => {
                    self.bump();
                    Tok::Caret
                }
                '(' => {
                    self.bump();
                    Tok::LParen
                }
                ')' => {
                    self.bump();
                    Tok::RParen
                }
                c if c.is_ascii_digit() => self.number(line, col)?,
                c if c.is_alphabetic() => {
                    let mut name = String::new();
                    while matches!(self.src.peek(), Some(c) if c.is_alphanumeric() || *c == '_')
                    {
                        name.push(self.bump().expect("peeked"));
                    }
                    Tok::Ident(name)
                }
                other => {
                    return Err(self.error(line, col, format!("unexpected character `{other}`")))
                }
            };
            out.push(Token { tok, line, col });
        }
    }

    fn number(&mut self, line: usize, col: usize) -> Result<Tok, ParseError> {
        let mut int_part = BigInt::zero();
        while matches!(self.src.peek(), Some(c) if c.is_ascii_digit()) {
            let d = self.bump().expect("peeked") as u8 - b'0';
            int_part = int_part * 10 + d;
        }
        let mut value = BigRational::from_integer(int_part);
        if matches!(self.src.peek(), Some('.')) {
            self.bump();
            if !matches!(self.src.peek(), Some(c) if c.is_ascii_digit()) {
                return Err(self.error(
                    line,
                    col,
                    "malformed number: expected a digit after the decimal point",
                ));
            }
            let mut frac = BigInt::zero();
            let mut scale = BigInt::one();
            while matches!(self.src.peek(), Some(c) if c.is_ascii_digit()) {
                let d = self.bump().expect("peeked") as u8 - b'0';
                frac = frac * 10 + d;
                scale *= 10;
            }
            value += BigRational::new(frac, scale);
        }
        Ok(Tok::Num(value))
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

/// Parse an expression; errors carry one-based line and column.
pub fn parse(input: &str) -> Result<Expr, ParseError> {
    let tokens = Lexer::new(input).tokens()?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::Eof {
        return Err(p.error_at(&t, "unexpected trailing input"));
    }
    Ok(e)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, message: impl Into<String>) -> ParseError {
        self.error_pos(t.line, t.col, message)
    }

    fn error_pos(&self, line: usize, col: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        let t = self.bump();
        if t.tok == tok {
            Ok(())
        } else {
            Err(self.error_at(&t, format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = Expr::sum(vec![acc, rhs]);
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = Expr::sum(vec![acc, Expr::neg(rhs)]);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    let rhs = self.factor()?;
                    acc = Expr::product(vec![acc, rhs]);
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.factor()?;
                    acc = Expr::div(acc, rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            let inner = self.factor()?;
            return Ok(Expr::neg(inner));
        }
        let base = self.base()?;
        if self.peek().tok == Tok::Caret {
            self.bump();
            let exp = self.exponent()?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<BigRational, ParseError> {
        let t = self.bump();
        let (line, col) = (t.line, t.col);
        match t.tok {
            Tok::Num(n) if n.is_integer() => Ok(n),
            Tok::Num(_) => Err(self.error_pos(line, col, "exponent must be an integer")),
            Tok::Minus => {
                let t2 = self.bump();
                let (l2, c2) = (t2.line, t2.col);
                match t2.tok {
                    Tok::Num(n) if n.is_integer() => Ok(-n),
                    _ => Err(self.error_pos(l2, c2, "expected an integer exponent")),
                }
            }
            Tok::LParen => {
                let neg = if self.peek().tok == Tok::Minus {
                    self.bump();
                    true
                } else {
                    false
                };
                let tp = self.bump();
                let (lp, cp) = (tp.line, tp.col);
                let Tok::Num(p) = tp.tok else {
                    return Err(self.error_pos(lp, cp, "expected a rational exponent"));
                };
                if !p.is_integer() {
                    return Err(self.error_pos(lp, cp, "expected a rational exponent"));
                }
                let mut value = p;
                if self.peek().tok == Tok::Slash {
                    self.bump();
                    let tq = self.bump();
                    let (lq, cq) = (tq.line, tq.col);
                    let Tok::Num(q) = tq.tok else {
                        return Err(self.error_pos(lq, cq, "expected a rational exponent"));
                    };
                    if !q.is_integer() || q.is_zero() {
                        return Err(self.error_pos(
                            lq,
                            cq,
                            "expected a nonzero integer denominator",
                        ));
                    }
                    value /= q;
                }
                self.expect(Tok::RParen, "`)` after the exponent")?;
                Ok(if neg { -value } else { value })
            }
            _ => Err(self.error_pos(line, col, "expected an integer exponent")),
        }
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let t = self.bump();
        let (line, col) = (t.line, t.col);
        match t.tok {
            Tok::Num(n) => Ok(Expr::Const(n)),
            Tok::Ident(name) => {
                if self.peek().tok == Tok::LParen {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(self.error_pos(line, col, format!("unknown function `{name}`")));
                    };
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)` to close the function argument")?;
                    Ok(Expr::call(func, arg))
                } else {
                    Ok(Expr::var(name))
                }
            }
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Eof => Err(self.error_pos(line, col, "unexpected end of input")),
            other => Err(self.error_pos(line, col, format!("unexpected token `{other:?}`"))),
        }
    }
}
