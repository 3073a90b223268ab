use super::lexer::{tokenize, Tok, Token};
use super::{DslError, DslProgram, DslStatement, Span};
use crate::metric::{AggregateKind, ArithOp, Metric, Operation};
use crate::table::Cell;

pub(crate) const AGGREGATES: &[&str] = &["sum", "count", "mean", "min", "max", "variance", "sd", "quantile"];
pub(crate) const OPERATIONS: &[&str] = &["distribution", "percent_change", "absolute_change", "bootstrap", "jackknife"];
pub(crate) const KEYWORDS: &[&str] = &["as", "null"];

const DEFAULT_N_REP: usize = 1000;

struct Param {
    name: &'static str,
    required: bool,
}

const fn req(name: &'static str) -> Param {
    Param { name, required: true }
}

const fn opt(name: &'static str) -> Param {
    Param { name, required: false }
}

fn params(function: &str) -> &'static [Param] {
    const VAR: &[Param] = &[req("var")];
    const QUANTILE: &[Param] = &[req("var"), req("q")];
    const DISTRIBUTION: &[Param] = &[req("over")];
    const CHANGE: &[Param] = &[req("condition"), req("baseline")];
    const BOOTSTRAP: &[Param] = &[opt("n_rep"), opt("seed")];
    const JACKKNIFE: &[Param] = &[req("unit")];
    match function {
        "quantile" => QUANTILE,
        "distribution" => DISTRIBUTION,
        "percent_change" | "absolute_change" => CHANGE,
        "bootstrap" => BOOTSTRAP,
        "jackknife" => JACKKNIFE,
        _ => VAR,
    }
}

#[derive(Debug, Clone)]
enum Value {
    Column(String),
    Str(String),
    Number { value: f64, exact: Option<i128> },
    Null,
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Column(_) => "a column name",
            Value::Str(_) => "a string",
            Value::Number { .. } => "a number",
            Value::Null => "null",
        }
    }
}

/// Closest candidate within a small edit distance.
pub(crate) fn suggest<'a>(name: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(name, c), c))
        .filter(|&(d, c)| d <= 2.max(c.len() / 3))
        .min_by_key(|&(d, _)| d)
        .map(|(_, c)| c.to_string())
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
    columns: Vec<(String, Span)>,
}

pub(crate) fn parse_program(src: &str) -> Result<DslProgram, DslError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        i: 0,
        columns: Vec::new(),
    };
    let mut statements = Vec::new();
    loop {
        if p.peek() == &Tok::Eof && !statements.is_empty() {
            break;
        }
        let start = p.span();
        let metric = p.pipeline()?;
        let end = p.toks[p.i.saturating_sub(1)].span.end;
        statements.push(DslStatement {
            metric,
            span: Span { end, ..start },
            columns: std::mem::take(&mut p.columns),
        });
        match p.peek() {
            Tok::Semi => {
                p.i += 1;
            }
            Tok::Eof => break,
            _ => {
                return Err(p.unexpected(&["`|`", "`;`", "an arithmetic operator", "end of input"]));
            }
        }
    }
    Ok(DslProgram { statements })
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.i].span
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if t.tok != Tok::Eof {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Span, DslError> {
        if self.peek() == &tok {
            Ok(self.next().span)
        } else {
            Err(self.unexpected(&[what]))
        }
    }

    fn unexpected(&self, expected: &[&str]) -> DslError {
        let found = self.peek();
        let mut err = DslError::at(self.span(), format!("unexpected {}", found.describe()));
        err.expected = expected.iter().map(|s| s.to_string()).collect();
        err
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    /// expr (`as` name)? (`|` call (`as` name)?)*
    fn pipeline(&mut self) -> Result<Metric, DslError> {
        let mut m = self.additive()?;
        m = self.rename(m)?;
        while self.eat(&Tok::Pipe) {
            let (name, span) = self.function_name()?;
            if !OPERATIONS.contains(&name.as_str()) {
                let mut err = if AGGREGATES.contains(&name.as_str()) {
                    DslError::at(span, format!("`{name}` is an aggregate and cannot follow `|`"))
                } else {
                    let mut e = DslError::at(span, format!("unknown operation `{name}`"));
                    e.suggestion = suggest(&name, OPERATIONS.iter().copied());
                    e
                };
                err.expected = vec!["an operation".to_string()];
                return Err(err);
            }
            let op = self.operation(&name, span)?;
            m = self.rename(m | op)?;
        }
        Ok(m)
    }

    fn rename(&mut self, m: Metric) -> Result<Metric, DslError> {
        if !self.is_keyword("as") {
            return Ok(m);
        }
        self.next();
        let span = self.span();
        match self.peek().clone() {
            Tok::Str(name) => {
                self.next();
                m.set_names([name]).map_err(|e| DslError::at(span, e.to_string()))
            }
            _ => Err(self.unexpected(&["a quoted name"])),
        }
    }

    fn additive(&mut self) -> Result<Metric, DslError> {
        let mut m = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(m),
            };
            self.next();
            let rhs = self.multiplicative()?;
            m = Metric::combine(op, m, rhs);
        }
    }

    fn multiplicative(&mut self) -> Result<Metric, DslError> {
        let mut m = self.power()?;
        loop {
            let op = match self.peek() {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => return Ok(m),
            };
            self.next();
            let rhs = self.power()?;
            m = Metric::combine(op, m, rhs);
        }
    }

    fn power(&mut self) -> Result<Metric, DslError> {
        let base = self.atom()?;
        if !self.eat(&Tok::StarStar) {
            return Ok(base);
        }
        let negative = self.eat(&Tok::Minus);
        match self.peek().clone() {
            Tok::Number { value, .. } => {
                self.next();
                Ok(base.pow(if negative { -value } else { value }))
            }
            _ => Err(self.unexpected(&["a number"])),
        }
    }

    fn atom(&mut self) -> Result<Metric, DslError> {
        const EXPECTED: &[&str] = &["an aggregate call", "a number", "`(`"];
        match self.peek().clone() {
            Tok::Number { value, .. } => {
                self.next();
                Ok(Metric::scalar(value))
            }
            Tok::Minus => {
                self.next();
                match self.peek().clone() {
                    Tok::Number { value, .. } => {
                        self.next();
                        Ok(Metric::scalar(-value))
                    }
                    _ => Err(self.unexpected(&["a number"])),
                }
            }
            Tok::LParen => {
                self.next();
                let m = self.pipeline()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(m)
            }
            Tok::Ident(ref s) if !KEYWORDS.contains(&s.as_str()) => {
                let (name, span) = self.function_name()?;
                if AGGREGATES.contains(&name.as_str()) {
                    return self.aggregate(&name, span);
                }
                let mut err = if OPERATIONS.contains(&name.as_str()) {
                    DslError::at(span, format!("`{name}` is an operation; apply it with `|`"))
                } else {
                    let mut e = DslError::at(span, format!("unknown function `{name}`"));
                    e.suggestion = suggest(&name, AGGREGATES.iter().chain(OPERATIONS).copied());
                    e
                };
                err.expected = vec!["an aggregate call".to_string()];
                Err(err)
            }
            _ => Err(self.unexpected(EXPECTED)),
        }
    }

    /// A function name followed by its opening parenthesis.
    fn function_name(&mut self) -> Result<(String, Span), DslError> {
        let span = self.span();
        let name = match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => s.clone(),
            _ => return Err(self.unexpected(&["a function name"])),
        };
        self.next();
        if self.peek() != &Tok::LParen {
            let known = AGGREGATES.contains(&name.as_str()) || OPERATIONS.contains(&name.as_str());
            if !known {
                let mut e = DslError::at(
                    span,
                    format!("unexpected `{name}`; column names are only valid as call arguments"),
                );
                e.suggestion = suggest(&name, AGGREGATES.iter().chain(OPERATIONS).copied());
                return Err(e);
            }
            return Err(self.unexpected(&["`(`"]));
        }
        Ok((name, span))
    }

    /// Parse `( args )` and bind them against the function's parameters.
    fn arguments(&mut self, function: &str) -> Result<Vec<Option<(Value, Span)>>, DslError> {
        let params = params(function);
        let mut bound: Vec<Option<(Value, Span)>> = vec![None; params.len()];
        self.expect(Tok::LParen, "`(`")?;
        let mut positional = 0;
        let mut seen_named = false;
        if !self.eat(&Tok::RParen) {
            loop {
                let arg_span = self.span();
                let named = match (self.peek(), self.toks.get(self.i + 1).map(|t| &t.tok)) {
                    (Tok::Ident(name), Some(Tok::Eq)) => Some(name.clone()),
                    _ => None,
                };
                let slot = if let Some(name) = named {
                    self.i += 2;
                    seen_named = true;
                    match params.iter().position(|p| p.name == name) {
                        Some(i) => i,
                        None => {
                            let mut e =
                                DslError::at(arg_span, format!("`{function}` has no argument named `{name}`"));
                            e.suggestion = suggest(&name, params.iter().map(|p| p.name));
                            return Err(e);
                        }
                    }
                } else {
                    if seen_named {
                        return Err(DslError::at(arg_span, "positional argument after a named one"));
                    }
                    if positional >= params.len() {
                        return Err(DslError::at(
                            arg_span,
                            format!("`{function}` takes at most {} argument(s)", params.len()),
                        ));
                    }
                    positional += 1;
                    positional - 1
                };
                if bound[slot].is_some() {
                    return Err(DslError::at(
                        arg_span,
                        format!("argument `{}` given more than once", params[slot].name),
                    ));
                }
                let value_span = self.span();
                let value = self.value()?;
                bound[slot] = Some((value, value_span));
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(Tok::RParen, "`,` or `)`")?;
                break;
            }
        }
        for (p, b) in params.iter().zip(&bound) {
            if p.required && b.is_none() {
                return Err(DslError::at(
                    self.toks[self.i - 1].span,
                    format!("`{function}` is missing argument `{}`", p.name),
                ));
            }
        }
        Ok(bound)
    }

    fn value(&mut self) -> Result<Value, DslError> {
        let t = self.next();
        Ok(match t.tok {
            Tok::Ident(s) if s == "null" => Value::Null,
            Tok::Ident(s) if s != "as" => Value::Column(s),
            Tok::Quoted(s) => Value::Column(s),
            Tok::Str(s) => Value::Str(s),
            Tok::Number { value, exact } => Value::Number {
                value,
                exact: exact.map(i128::from),
            },
            Tok::Minus => match self.peek().clone() {
                Tok::Number { value, exact } => {
                    self.next();
                    Value::Number {
                        value: -value,
                        exact: exact.map(|v| -i128::from(v)),
                    }
                }
                _ => return Err(self.unexpected(&["a number"])),
            },
            _ => {
                self.i -= usize::from(t.tok != Tok::Eof);
                return Err(self.unexpected(&["a column name", "a string", "a number", "null"]));
            }
        })
    }

    fn column(&mut self, function: &str, param: &str, arg: (Value, Span)) -> Result<String, DslError> {
        match arg.0 {
            Value::Column(c) => {
                self.columns.push((c.clone(), arg.1));
                Ok(c)
            }
            other => {
                let mut e = DslError::at(
                    arg.1,
                    format!("`{function}` expects a column name for `{param}`, got {}", other.describe()),
                );
                if let Value::Str(s) = other {
                    e.suggestion = Some(s);
                }
                Err(e)
            }
        }
    }

    fn aggregate(&mut self, name: &str, span: Span) -> Result<Metric, DslError> {
        let mut args = self.arguments(name)?.into_iter();
        let var = self.column(name, "var", args.next().flatten().unwrap())?;
        let kind = match name {
            "sum" => AggregateKind::Sum,
            "count" => AggregateKind::Count,
            "mean" => AggregateKind::Mean,
            "min" => AggregateKind::Min,
            "max" => AggregateKind::Max,
            "variance" => AggregateKind::Variance,
            "sd" => AggregateKind::StdDev,
            "quantile" => {
                let (v, s) = args.next().flatten().unwrap();
                return Metric::quantile(var, probability(v, s)?).map_err(|e| DslError::at(span, e.to_string()));
            }
            _ => unreachable!("checked by caller"),
        };
        Ok(Metric::aggregate(kind, var))
    }

    fn operation(&mut self, name: &str, span: Span) -> Result<Operation, DslError> {
        let mut args = self.arguments(name)?.into_iter();
        let mut next = || args.next().flatten();
        Ok(match name {
            "distribution" => Operation::distribution(self.column(name, "over", next().unwrap())?),
            "percent_change" | "absolute_change" => {
                let condition = self.column(name, "condition", next().unwrap())?;
                let baseline = baseline(next().unwrap())?;
                if name == "percent_change" {
                    Operation::percent_change(condition, baseline)
                } else {
                    Operation::absolute_change(condition, baseline)
                }
            }
            "bootstrap" => {
                let n_rep = match next() {
                    Some((v, s)) => non_negative(v, s, "n_rep")?,
                    None => DEFAULT_N_REP as u64,
                };
                let seed = match next() {
                    Some((v, s)) => non_negative(v, s, "seed")?,
                    None => 0,
                };
                Operation::bootstrap(n_rep as usize, seed).map_err(|e| DslError::at(span, e.to_string()))?
            }
            "jackknife" => Operation::jackknife(self.column(name, "unit", next().unwrap())?),
            _ => unreachable!("checked by caller"),
        })
    }
}

fn baseline((v, span): (Value, Span)) -> Result<Cell, DslError> {
    match v {
        Value::Str(s) => Ok(Cell::Text(s)),
        Value::Null => Ok(Cell::Null),
        Value::Number { exact: Some(v), .. } if i64::try_from(v).is_ok() => Ok(Cell::Int(v as i64)),
        Value::Number { value, .. } => Ok(Cell::Float(value)),
        Value::Column(c) => {
            let mut e = DslError::at(
                span,
                "baseline must be a string, number or null; column names are not values",
            );
            e.suggestion = Some(format!("\"{c}\""));
            Err(e)
        }
    }
}

fn probability(v: Value, span: Span) -> Result<f64, DslError> {
    match v {
        Value::Number { value, .. } if (0.0..=1.0).contains(&value) => Ok(value),
        Value::Number { .. } => Err(DslError::at(span, "quantile level must lie in [0, 1]")),
        other => Err(DslError::at(span, format!("expected a number for `q`, got {}", other.describe()))),
    }
}

fn non_negative(v: Value, span: Span, param: &str) -> Result<u64, DslError> {
    match v {
        Value::Number { exact: Some(v), .. } if u64::try_from(v).is_ok() => Ok(v as u64),
        other => Err(DslError::at(
            span,
            format!("`{param}` must be a non-negative integer, got {}", other.describe()),
        )),
    }
}
