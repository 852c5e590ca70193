//! Line-oriented text form.
//!
//! ```text
//! # comment
//! var i = 3
//! L: br i > one ? B : X
//! B: i = i - one
//!    jmp L
//! X: out i
//!    halt
//! ```
//!
//! Statements may also be separated by `;` on one line.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use super::{BinOp, Instruction, Program, ProgramError, Relop, VarId, Variable, MAX_VARIABLES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("undefined variable `{0}`")]
    UndefinedVariable(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("more than {MAX_VARIABLES} variables")]
    TooManyVariables,
    #[error("{0}")]
    Program(ProgramError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
        }
    }
}

const SYMBOLS: [&str; 13] = [
    "==", "!=", ">=", "<=", "<", ">", "=", "+", "-", "*", "/", ":", "?",
];

const KEYWORDS: [&str; 5] = ["var", "br", "jmp", "out", "halt"];

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

impl Pos {
    fn err(self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            column: self.column,
            kind,
        }
    }

    fn syntax(self, msg: impl Into<String>) -> ParseError {
        self.err(ParseErrorKind::Syntax(msg.into()))
    }
}

fn tokenize(text: &str, line: usize, start_col: usize) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos {
            line,
            column: start_col + i,
        };
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            let n = digits
                .parse::<i64>()
                .map_err(|_| pos.syntax(format!("integer `{digits}` out of range")))?;
            out.push((Tok::Int(n), pos));
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let sym = SYMBOLS
                .iter()
                .find(|s| rest.starts_with(**s))
                .ok_or_else(|| pos.syntax(format!("unexpected character `{c}`")))?;
            out.push((Tok::Sym(sym), pos));
            i += sym.len();
        }
    }
    Ok(out)
}

#[derive(Debug)]
enum RawOp {
    Halt,
    Const(String, i32),
    Mov(String, String),
    Binary(BinOp, String, String, String),
    Out(String),
    Jmp(String),
    Br(Relop, String, String, String, String),
}

struct Cursor<'a> {
    toks: &'a [(Tok, Pos)],
    at: usize,
    end: Pos,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.peek();
        self.at += 1;
        t
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => Ok(s.clone()),
            Some(t) => Err(pos.syntax(format!("expected {what}, found {t}"))),
            None => Err(pos.syntax(format!("expected {what}, found end of statement"))),
        }
    }

    fn sym(&mut self, sym: &str) -> Result<(), ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(Tok::Sym(s)) if *s == sym => Ok(()),
            Some(t) => Err(pos.syntax(format!("expected `{sym}`, found {t}"))),
            None => Err(pos.syntax(format!("expected `{sym}`, found end of statement"))),
        }
    }

    fn int(&mut self) -> Result<i32, ParseError> {
        let pos = self.pos();
        let negative = matches!(self.peek(), Some(Tok::Sym("-")));
        if negative {
            self.next();
        }
        match self.next() {
            Some(Tok::Int(n)) => {
                let n = if negative { -n } else { *n };
                i32::try_from(n)
                    .map_err(|_| pos.syntax(format!("integer {n} does not fit in 32 bits")))
            }
            Some(t) => Err(pos.syntax(format!("expected integer, found {t}"))),
            None => Err(pos.syntax("expected integer, found end of statement")),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.toks.get(self.at) {
            Some((t, p)) => Err(p.syntax(format!("unexpected {t} after statement"))),
            None => Ok(()),
        }
    }
}

fn relop(sym: &str) -> Option<Relop> {
    Some(match sym {
        "==" => Relop::Eq,
        "!=" => Relop::Ne,
        "<" => Relop::Lt,
        ">=" => Relop::Ge,
        ">" => Relop::Gt,
        "<=" => Relop::Le,
        _ => return None,
    })
}

fn binop(sym: &str) -> Option<BinOp> {
    Some(match sym {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        _ => return None,
    })
}

#[derive(Default)]
struct Builder {
    vars: Vec<Variable>,
    var_pos: HashMap<String, usize>,
    labels: HashMap<String, usize>,
    ops: Vec<(RawOp, Pos)>,
}

impl Builder {
    fn statement(&mut self, toks: &[(Tok, Pos)], end: Pos) -> Result<(), ParseError> {
        let mut cur = Cursor { toks, at: 0, end };
        // leading labels
        while let (Some(Tok::Ident(name)), Some((Tok::Sym(":"), _))) =
            (cur.peek(), toks.get(cur.at + 1))
        {
            if KEYWORDS.contains(&name.as_str()) {
                break;
            }
            let pos = cur.pos();
            if self.labels.insert(name.clone(), self.ops.len()).is_some() {
                return Err(pos.err(ParseErrorKind::DuplicateLabel(name.clone())));
            }
            cur.at += 2;
        }
        let pos = cur.pos();
        let op = match cur.peek() {
            None => return Ok(()),
            Some(Tok::Ident(kw)) if kw == "var" => {
                cur.next();
                let name_pos = cur.pos();
                let name = cur.ident("variable name")?;
                cur.sym("=")?;
                let init = cur.int()?;
                cur.finish()?;
                if self.var_pos.contains_key(&name) {
                    return Err(name_pos.err(ParseErrorKind::DuplicateVariable(name)));
                }
                if self.vars.len() == MAX_VARIABLES {
                    return Err(name_pos.err(ParseErrorKind::TooManyVariables));
                }
                self.var_pos.insert(name.clone(), self.vars.len());
                self.vars.push(Variable::new(name, init));
                return Ok(());
            }
            Some(Tok::Ident(kw)) if kw == "halt" => {
                cur.next();
                RawOp::Halt
            }
            Some(Tok::Ident(kw)) if kw == "out" => {
                cur.next();
                RawOp::Out(cur.ident("variable")?)
            }
            Some(Tok::Ident(kw)) if kw == "jmp" => {
                cur.next();
                RawOp::Jmp(cur.ident("label")?)
            }
            Some(Tok::Ident(kw)) if kw == "br" => {
                cur.next();
                let lhs = cur.ident("variable")?;
                let rel_pos = cur.pos();
                let rel = match cur.next() {
                    Some(Tok::Sym(s)) => relop(s),
                    _ => None,
                }
                .ok_or_else(|| rel_pos.syntax("expected comparison (==, !=, <, >=, >, <=)"))?;
                let rhs = cur.ident("variable")?;
                cur.sym("?")?;
                let then_l = cur.ident("label")?;
                cur.sym(":")?;
                let else_l = cur.ident("label")?;
                RawOp::Br(rel, lhs, rhs, then_l, else_l)
            }
            Some(Tok::Ident(_)) => {
                let dst = cur.ident("variable")?;
                cur.sym("=")?;
                match cur.peek() {
                    Some(Tok::Int(_)) | Some(Tok::Sym("-")) => RawOp::Const(dst, cur.int()?),
                    _ => {
                        let lhs = cur.ident("variable or integer")?;
                        match cur.peek() {
                            None => RawOp::Mov(dst, lhs),
                            Some(Tok::Sym(s)) if binop(s).is_some() => {
                                let op = binop(s).unwrap();
                                cur.next();
                                let rhs = cur.ident("variable")?;
                                RawOp::Binary(op, dst, lhs, rhs)
                            }
                            Some(t) => {
                                return Err(cur
                                    .pos()
                                    .syntax(format!("expected operator, found {t}")))
                            }
                        }
                    }
                }
            }
            Some(t) => return Err(pos.syntax(format!("unexpected {t}"))),
        };
        cur.finish()?;
        self.ops.push((op, pos));
        Ok(())
    }

    fn finish(self) -> Result<Program, ParseError> {
        let var = |name: &str, pos: Pos| {
            self.var_pos
                .get(name)
                .map(|&i| VarId(i as u8))
                .ok_or_else(|| pos.err(ParseErrorKind::UndefinedVariable(name.to_string())))
        };
        let label = |name: &str, pos: Pos| {
            self.labels
                .get(name)
                .copied()
                .filter(|&t| t < self.ops.len())
                .ok_or_else(|| pos.err(ParseErrorKind::UndefinedLabel(name.to_string())))
        };
        let mut instrs = Vec::with_capacity(self.ops.len());
        for (op, pos) in &self.ops {
            let pos = *pos;
            instrs.push(match op {
                RawOp::Halt => Instruction::Halt,
                RawOp::Const(d, value) => Instruction::Const {
                    dst: var(d, pos)?,
                    value: *value,
                },
                RawOp::Mov(d, s) => Instruction::Mov {
                    dst: var(d, pos)?,
                    src: var(s, pos)?,
                },
                RawOp::Binary(op, d, l, r) => Instruction::Binary {
                    op: *op,
                    dst: var(d, pos)?,
                    lhs: var(l, pos)?,
                    rhs: var(r, pos)?,
                },
                RawOp::Out(s) => Instruction::Out { src: var(s, pos)? },
                RawOp::Jmp(l) => Instruction::Jmp {
                    target: label(l, pos)?,
                },
                RawOp::Br(rel, l, r, t, e) => Instruction::Br {
                    relop: *rel,
                    lhs: var(l, pos)?,
                    rhs: var(r, pos)?,
                    then_target: label(t, pos)?,
                    else_target: label(e, pos)?,
                },
            });
        }
        let end = self
            .ops
            .last()
            .map(|(_, p)| *p)
            .unwrap_or(Pos { line: 1, column: 1 });
        Program::new(self.vars, instrs).map_err(|e| end.err(ParseErrorKind::Program(e)))
    }
}

/// Parses the text IR. Variables are numbered in declaration order and
/// may be declared anywhere in the file.
pub fn parse_text(source: &str) -> Result<Program, ParseError> {
    let mut builder = Builder::default();
    for (lineno, raw) in source.lines().enumerate() {
        let line = lineno + 1;
        let code = raw.split('#').next().unwrap_or("");
        let mut col = 1;
        for stmt in code.split(';') {
            let toks = tokenize(stmt, line, col)?;
            let end = Pos {
                line,
                column: col + stmt.chars().count(),
            };
            builder.statement(&toks, end)?;
            col += stmt.chars().count() + 1;
        }
    }
    builder.finish()
}

/// Renders the program in the text form accepted by [`parse_text`].
/// Branch targets get labels `L<index>`.
impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in self.vars() {
            writeln!(f, "var {} = {}", v.name, v.init)?;
        }
        let targets: BTreeSet<usize> = self.instrs().iter().flat_map(|i| i.targets()).collect();
        let name = |v: VarId| self.var_name(v);
        for (idx, ins) in self.instrs().iter().enumerate() {
            if targets.contains(&idx) {
                writeln!(f, "L{idx}:")?;
            }
            write!(f, "    ")?;
            match *ins {
                Instruction::Halt => writeln!(f, "halt")?,
                Instruction::Const { dst, value } => writeln!(f, "{} = {}", name(dst), value)?,
                Instruction::Mov { dst, src } => writeln!(f, "{} = {}", name(dst), name(src))?,
                Instruction::Binary { op, dst, lhs, rhs } => writeln!(
                    f,
                    "{} = {} {} {}",
                    name(dst),
                    name(lhs),
                    op.symbol(),
                    name(rhs)
                )?,
                Instruction::Out { src } => writeln!(f, "out {}", name(src))?,
                Instruction::Jmp { target } => writeln!(f, "jmp L{target}")?,
                Instruction::Br {
                    relop,
                    lhs,
                    rhs,
                    then_target,
                    else_target,
                } => writeln!(
                    f,
                    "br {} {} {} ? L{} : L{}",
                    name(lhs),
                    relop.symbol(),
                    name(rhs),
                    then_target,
                    else_target
                )?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_text("halt").unwrap();
        assert!(p.vars().is_empty());
        assert_eq!(p.instrs(), &[Instruction::Halt]);
    }

    #[test]
    fn undeclared_operand_is_reported_with_position() {
        let err = parse_text("var x = 0\nvar z = 1\nx = y + z\nhalt").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UndefinedVariable("y".into()));
        assert_eq!((err.line, err.column), (3, 1));
    }

    #[test]
    fn semicolons_labels_and_negative_constants() {
        let p = parse_text("var x = 0\nL: x = -5; out x; br x < x ? L : E\nE: halt").unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(
            p.instrs()[0],
            Instruction::Const {
                dst: VarId(0),
                value: -5
            }
        );
        assert_eq!(
            p.instrs()[2],
            Instruction::Br {
                relop: Relop::Lt,
                lhs: VarId(0),
                rhs: VarId(0),
                then_target: 0,
                else_target: 3
            }
        );
    }

    #[test]
    fn error_cases() {
        let kind = |s: &str| parse_text(s).unwrap_err().kind;
        assert_eq!(
            kind("var a = 1\nvar a = 2\nhalt"),
            ParseErrorKind::DuplicateVariable("a".into())
        );
        assert_eq!(
            kind("jmp nowhere\nhalt"),
            ParseErrorKind::UndefinedLabel("nowhere".into())
        );
        assert_eq!(
            kind("A: halt\nA: halt"),
            ParseErrorKind::DuplicateLabel("A".into())
        );
        // a label with no instruction after it cannot be a target
        assert_eq!(
            kind("halt\njmp E\nE:"),
            ParseErrorKind::UndefinedLabel("E".into())
        );
        assert!(matches!(
            kind("var a = 99999999999\nhalt"),
            ParseErrorKind::Syntax(_)
        ));
        assert!(matches!(
            kind("var a = 1\na = a +\nhalt"),
            ParseErrorKind::Syntax(_)
        ));
        assert!(matches!(
            kind("var a = 1\nout a"),
            ParseErrorKind::Program(ProgramError::MissingHalt)
        ));
        assert!(matches!(kind("@"), ParseErrorKind::Syntax(_)));
        let too_many: String = (0..257).map(|i| format!("var v{i} = 0\n")).collect();
        assert_eq!(kind(&(too_many + "halt")), ParseErrorKind::TooManyVariables);
    }

    #[test]
    fn display_reparses_to_same_program() {
        let src = "var i = 3\nvar one = 1\nL: br i > one ? B : X\nB: i = i - one\njmp L\nX: out i\nhalt\n";
        let p = parse_text(src).unwrap();
        assert_eq!(parse_text(&p.to_string()).unwrap(), p);
    }
}
