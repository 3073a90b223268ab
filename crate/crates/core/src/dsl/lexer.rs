use super::{DslError, Span};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Bare identifier; keywords are recognized by the parser.
    Ident(String),
    /// Backtick-quoted identifier, always a column name.
    Quoted(String),
    Str(String),
    /// `exact` holds integer literals that fit in 64 bits.
    Number { value: f64, exact: Option<u64> },
    LParen,
    RParen,
    Comma,
    Eq,
    Plus,
    Minus,
    Star,
    StarStar,
    Slash,
    Pipe,
    Semi,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Quoted(s) => format!("column `{s}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Number { .. } => "number".to_string(),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::Eq => "`=`".to_string(),
            Tok::Plus => "`+`".to_string(),
            Tok::Minus => "`-`".to_string(),
            Tok::Star => "`*`".to_string(),
            Tok::StarStar => "`**`".to_string(),
            Tok::Slash => "`/`".to_string(),
            Tok::Pipe => "`|`".to_string(),
            Tok::Semi => "`;`".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: Span,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn here(&self) -> Span {
        Span {
            start: self.pos,
            end: self.pos,
            line: self.line,
            col: self.col,
        }
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, DslError> {
    let mut cur = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        while let Some(c) = cur.peek() {
            if c.is_whitespace() {
                cur.bump();
            } else if c == '#' {
                while cur.peek().is_some_and(|c| c != '\n') {
                    cur.bump();
                }
            } else {
                break;
            }
        }
        let mut span = cur.here();
        let Some(c) = cur.bump() else {
            out.push(Token { tok: Tok::Eof, span });
            return Ok(out);
        };
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '=' => Tok::Eq,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '/' => Tok::Slash,
            '|' => Tok::Pipe,
            ';' => Tok::Semi,
            '*' => {
                if cur.peek() == Some('*') {
                    cur.bump();
                    Tok::StarStar
                } else {
                    Tok::Star
                }
            }
            '"' => Tok::Str(string_body(&mut cur, span)?),
            '`' => {
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        Some('`') if cur.peek() == Some('`') => {
                            cur.bump();
                            s.push('`');
                        }
                        Some('`') => break,
                        Some(c) => s.push(c),
                        None => return Err(DslError::at(span, "unterminated quoted column name")),
                    }
                }
                if s.is_empty() {
                    return Err(DslError::at(span, "empty column name"));
                }
                Tok::Quoted(s)
            }
            c if c.is_ascii_digit() || (c == '.' && cur.peek().is_some_and(|d| d.is_ascii_digit())) => {
                number(&mut cur, span)?
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while cur.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                    cur.bump();
                }
                Tok::Ident(src[span.start..cur.pos].to_string())
            }
            other => return Err(DslError::at(span, format!("unexpected character `{other}`"))),
        };
        span.end = cur.pos;
        out.push(Token { tok, span });
    }
}

fn string_body(cur: &mut Cursor<'_>, start: Span) -> Result<String, DslError> {
    let mut s = String::new();
    loop {
        match cur.bump() {
            Some('"') => return Ok(s),
            Some('\\') => match cur.bump() {
                Some('"') => s.push('"'),
                Some('\\') => s.push('\\'),
                Some('n') => s.push('\n'),
                Some('t') => s.push('\t'),
                Some(c) => {
                    return Err(DslError::at(cur.here(), format!("unknown escape `\\{c}` in string")));
                }
                None => break,
            },
            Some(c) => s.push(c),
            None => break,
        }
    }
    Err(DslError::at(start, "unterminated string"))
}

fn number(cur: &mut Cursor<'_>, span: Span) -> Result<Tok, DslError> {
    let digits = |cur: &mut Cursor<'_>| {
        while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
            cur.bump();
        }
    };
    let mut integer = !cur.src[span.start..cur.pos].starts_with('.');
    digits(cur);
    if cur.peek() == Some('.') && integer {
        integer = false;
        cur.bump();
        digits(cur);
    }
    if matches!(cur.peek(), Some('e' | 'E')) {
        let sign_then_digit = matches!(cur.peek2(), Some('+' | '-'));
        let digit = cur.peek2().is_some_and(|c| c.is_ascii_digit());
        if digit || sign_then_digit {
            integer = false;
            cur.bump();
            if sign_then_digit {
                cur.bump();
            }
            if !cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                return Err(DslError::at(cur.here(), "malformed exponent"));
            }
            digits(cur);
        }
    }
    let text = &cur.src[span.start..cur.pos];
    let value: f64 = text
        .parse()
        .map_err(|_| DslError::at(span, format!("malformed number `{text}`")))?;
    let exact = if integer { text.parse().ok() } else { None };
    Ok(Tok::Number { value, exact })
}
