//! Small arithmetic expression language for config-driven fields: numbers,
//! the variables `x`, `y`, `t`, `r`, the constants `pi` and `e`, the usual
//! operators with `^` for powers, and a handful of functions.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(f64),
    Ident(usize), // index into the parser's name table
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call1(Func1, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, Copy)]
enum Var {
    X,
    Y,
    T,
    R,
}

#[derive(Debug, Clone, Copy)]
enum Func1 {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
}

#[derive(Debug, Clone, Copy)]
enum Func2 {
    Min,
    Max,
    Pow,
}

/// A compiled expression; cheap to clone and safe to share across threads.
#[derive(Clone)]
pub struct Expr {
    root: Arc<Node>,
    source: String,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self.source)
    }
}

/// Evaluation context; unused variables default to 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ctx {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub r: f64,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut names = Vec::new();
        let toks = lex(src, &mut names)?;
        let mut p = Parser {
            toks: &toks,
            pos: 0,
            names: &names,
            src,
        };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(parse_err(src, "trailing input after expression"));
        }
        Ok(Self {
            root: Arc::new(root),
            source: src.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, ctx: Ctx) -> f64 {
        eval_node(&self.root, ctx)
    }
}

fn parse_err(src: &str, msg: &str) -> Error {
    Error::Parse {
        line: 0,
        msg: format!("in expression '{src}': {msg}"),
    }
}

fn lex(src: &str, names: &mut Vec<String>) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| parse_err(src, &format!("bad number '{text}'")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                let name: String = bytes[start..i].iter().collect();
                names.push(name);
                out.push(Tok::Ident(names.len() - 1));
            }
            other => return Err(parse_err(src, &format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    names: &'a [String],
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Tok> {
        self.toks.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        if self.bump() == Some(t) {
            Ok(())
        } else {
            Err(parse_err(self.src, &format!("expected {t:?}")))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary minus binds looser than '^': -2^2 is -(2^2)
    fn factor(&mut self) -> Result<Node> {
        if self.peek() == Some(Tok::Minus) {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        if self.peek() == Some(Tok::Plus) {
            self.pos += 1;
            return self.factor();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.peek() == Some(Tok::Caret) {
            self.pos += 1;
            let exp = self.factor()?; // right associative
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Node::Const(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Ident(id)) => {
                let name = self.names[id].as_str();
                if self.peek() == Some(Tok::LParen) {
                    self.pos += 1;
                    let first = self.expr()?;
                    let two = if self.peek() == Some(Tok::Comma) {
                        self.pos += 1;
                        Some(self.expr()?)
                    } else {
                        None
                    };
                    self.expect(Tok::RParen)?;
                    return match (name, two) {
                        ("sin", None) => Ok(Node::Call1(Func1::Sin, Box::new(first))),
                        ("cos", None) => Ok(Node::Call1(Func1::Cos, Box::new(first))),
                        ("tan", None) => Ok(Node::Call1(Func1::Tan, Box::new(first))),
                        ("exp", None) => Ok(Node::Call1(Func1::Exp, Box::new(first))),
                        ("ln", None) => Ok(Node::Call1(Func1::Ln, Box::new(first))),
                        ("sqrt", None) => Ok(Node::Call1(Func1::Sqrt, Box::new(first))),
                        ("abs", None) => Ok(Node::Call1(Func1::Abs, Box::new(first))),
                        ("tanh", None) => Ok(Node::Call1(Func1::Tanh, Box::new(first))),
                        ("min", Some(b)) => {
                            Ok(Node::Call2(Func2::Min, Box::new(first), Box::new(b)))
                        }
                        ("max", Some(b)) => {
                            Ok(Node::Call2(Func2::Max, Box::new(first), Box::new(b)))
                        }
                        ("pow", Some(b)) => {
                            Ok(Node::Call2(Func2::Pow, Box::new(first), Box::new(b)))
                        }
                        _ => Err(parse_err(self.src, &format!("unknown function '{name}'"))),
                    };
                }
                match name {
                    "x" => Ok(Node::Var(Var::X)),
                    "y" => Ok(Node::Var(Var::Y)),
                    "t" => Ok(Node::Var(Var::T)),
                    "r" => Ok(Node::Var(Var::R)),
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "e" => Ok(Node::Const(std::f64::consts::E)),
                    _ => Err(parse_err(self.src, &format!("unknown identifier '{name}'"))),
                }
            }
            other => Err(parse_err(self.src, &format!("unexpected token {other:?}"))),
        }
    }
}

fn eval_node(n: &Node, ctx: Ctx) -> f64 {
    match n {
        Node::Const(v) => *v,
        Node::Var(Var::X) => ctx.x,
        Node::Var(Var::Y) => ctx.y,
        Node::Var(Var::T) => ctx.t,
        Node::Var(Var::R) => ctx.r,
        Node::Neg(a) => -eval_node(a, ctx),
        Node::Add(a, b) => eval_node(a, ctx) + eval_node(b, ctx),
        Node::Sub(a, b) => eval_node(a, ctx) - eval_node(b, ctx),
        Node::Mul(a, b) => eval_node(a, ctx) * eval_node(b, ctx),
        Node::Div(a, b) => eval_node(a, ctx) / eval_node(b, ctx),
        Node::Pow(a, b) => eval_node(a, ctx).powf(eval_node(b, ctx)),
        Node::Call1(f, a) => {
            let v = eval_node(a, ctx);
            match f {
                Func1::Sin => v.sin(),
                Func1::Cos => v.cos(),
                Func1::Tan => v.tan(),
                Func1::Exp => v.exp(),
                Func1::Ln => v.ln(),
                Func1::Sqrt => v.sqrt(),
                Func1::Abs => v.abs(),
                Func1::Tanh => v.tanh(),
            }
        }
        Node::Call2(f, a, b) => {
            let (u, v) = (eval_node(a, ctx), eval_node(b, ctx));
            match f {
                Func2::Min => u.min(v),
                Func2::Max => u.max(v),
                Func2::Pow => u.powf(v),
            }
        }
    }
}
