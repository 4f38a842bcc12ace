//! Tiny expression grammar for user-supplied scalar functions of `s`.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          // right-associative
//! atom   := number | 's' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | sqrt | tanh | abs
//! ```
//!
//! Deliberately small: no user functions, no piecewise (the geometry
//! catalog covers those needs), which keeps exhaustive testing feasible.

use std::fmt;

/// Parse failure with the byte offset of the first offending character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Tanh,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression over the variable `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    source: String,
}

impl Expression {
    pub fn eval(&self, s: f64) -> f64 {
        eval_node(&self.root, s)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

fn eval_node(node: &Node, s: f64) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var => s,
        Node::Neg(a) => -eval_node(a, s),
        Node::Add(a, b) => eval_node(a, s) + eval_node(b, s),
        Node::Sub(a, b) => eval_node(a, s) - eval_node(b, s),
        Node::Mul(a, b) => eval_node(a, s) * eval_node(b, s),
        Node::Div(a, b) => eval_node(a, s) / eval_node(b, s),
        Node::Pow(a, b) => eval_node(a, s).powf(eval_node(b, s)),
        Node::Call(f, a) => {
            let x = eval_node(a, s);
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Sqrt => x.sqrt(),
                Func::Tanh => x.tanh(),
                Func::Abs => x.abs(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ExprError {
                    offset: start,
                    message: format!("bad number literal `{lit}`"),
                })?;
                out.push((Tok::Num(v), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
            }
            other => {
                return Err(ExprError {
                    offset: i,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<&(Tok, usize)> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> ExprError {
        let offset = self.peek().map_or(self.end, |t| t.1);
        ExprError {
            offset,
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().map(|t| t.0.clone()) {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().map(|t| t.0.clone()) {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if matches!(self.peek(), Some((Tok::Minus, _))) {
            self.bump();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some((Tok::Caret, _))) {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some((tok, offset)) = self.bump().cloned() else {
            return Err(self.err_here("unexpected end of expression"));
        };
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Ident(name) => {
                if name == "s" {
                    return Ok(Node::Var);
                }
                let func = match name.as_str() {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "sqrt" => Func::Sqrt,
                    "tanh" => Func::Tanh,
                    "abs" => Func::Abs,
                    _ => {
                        return Err(ExprError {
                            offset,
                            message: format!("unknown identifier `{name}`"),
                        })
                    }
                };
                match self.bump() {
                    Some((Tok::LParen, _)) => {}
                    _ => {
                        return Err(ExprError {
                            offset,
                            message: format!("function `{name}` needs parentheses"),
                        })
                    }
                }
                let arg = self.expr()?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(Node::Call(func, Box::new(arg))),
                    _ => Err(self.err_here("missing `)`")),
                }
            }
            Tok::LParen => {
                let inner = self.expr()?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(inner),
                    _ => Err(self.err_here("missing `)`")),
                }
            }
            other => Err(ExprError {
                offset,
                message: format!("unexpected token `{other:?}`"),
            }),
        }
    }
}

/// Parse `text` into an [`Expression`] or a diagnostic with the byte
/// offset of the first error.
pub fn parse_expression(text: &str) -> Result<Expression, ExprError> {
    let toks = lex(text)?;
    let mut parser = Parser {
        toks: &toks,
        pos: 0,
        end: text.len(),
    };
    let root = parser.expr()?;
    if parser.pos != toks.len() {
        return Err(parser.err_here("trailing input"));
    }
    Ok(Expression {
        root,
        source: text.to_string(),
    })
}
