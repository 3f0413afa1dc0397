//! Tokenizer shared by the model and query parsers, with line/column
//! tracking for diagnostics.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Identifier, optionally with a single trailing `*`.
    Ident(String),
    Number(f64),
    /// Double-quoted label literal.
    Label(String),
    /// Punctuation or operator: one of ( ) { } [ ] , : = >= > + - * / | & ! := ~
    Punct(&'static str),
    Newline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn err_at(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::ParseError {
        line,
        col,
        msg: msg.into(),
    }
}

/// Tokenizes the input. Comments run from `#` to end of line; newlines are
/// significant (they terminate entries) and are emitted as tokens.
///
/// With `star_idents` a trailing `*` becomes part of an identifier
/// (counterfactual-world names in queries); without it `*` is always the
/// multiplication operator (model files, where starred names are illegal).
pub fn tokenize_with(text: &str, star_idents: bool) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    for (li, raw_line) in text.lines().enumerate() {
        let line = li + 1;
        let chars: Vec<char> = raw_line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let col = i + 1;
            let c = chars[i];
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                let mut name: String = chars[start..i].iter().collect();
                if star_idents && i < chars.len() && chars[i] == '*' {
                    name.push('*');
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(name),
                    line,
                    col,
                });
                continue;
            }
            if c.is_ascii_digit()
                || (c == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit())
            {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let x: f64 = s
                    .parse()
                    .map_err(|_| err_at(line, col, format!("invalid number `{s}`")))?;
                out.push(Token {
                    tok: Tok::Number(x),
                    line,
                    col,
                });
                continue;
            }
            if c == '"' {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '"' {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(err_at(line, col, "unterminated label literal"));
                }
                out.push(Token {
                    tok: Tok::Label(chars[start..j].iter().collect()),
                    line,
                    col,
                });
                i = j + 1;
                continue;
            }
            let two: Option<&'static str> = if i + 1 < chars.len() {
                match (c, chars[i + 1]) {
                    (':', '=') => Some(":="),
                    ('>', '=') => Some(">="),
                    _ => None,
                }
            } else {
                None
            };
            if let Some(p) = two {
                out.push(Token {
                    tok: Tok::Punct(p),
                    line,
                    col,
                });
                i += 2;
                continue;
            }
            let one: &'static str = match c {
                '(' => "(",
                ')' => ")",
                '{' => "{",
                '}' => "}",
                '[' => "[",
                ']' => "]",
                ',' => ",",
                ':' => ":",
                '=' => "=",
                '>' => ">",
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '|' => "|",
                '&' => "&",
                '!' => "!",
                '~' => "~",
                _ => return Err(err_at(line, col, format!("unexpected character `{c}`"))),
            };
            out.push(Token {
                tok: Tok::Punct(one),
                line,
                col,
            });
            i += 1;
        }
        out.push(Token {
            tok: Tok::Newline,
            line,
            col: chars.len() + 1,
        });
    }
    Ok(out)
}

pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    tokenize_with(text, false)
}

/// Cursor over the token stream with convenience expectations.
pub struct Cursor {
    toks: Vec<Token>,
    pos: usize,
}

impl Cursor {
    pub fn new(toks: Vec<Token>) -> Self {
        Cursor { toks, pos: 0 }
    }

    pub fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    pub fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn here(&self) -> (usize, usize) {
        match self.peek() {
            Some(t) => (t.line, t.col),
            None => self
                .toks
                .last()
                .map(|t| (t.line, t.col))
                .unwrap_or((1, 1)),
        }
    }

    pub fn skip_newlines(&mut self) {
        while matches!(self.peek().map(|t| &t.tok), Some(Tok::Newline)) {
            self.pos += 1;
        }
    }

    pub fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Punct(q)) if *q == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_punct(&mut self, p: &str) -> Result<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            let (l, c) = self.here();
            Err(err_at(l, c, format!("expected `{p}`")))
        }
    }

    pub fn eat_ident(&mut self, word: &str) -> bool {
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Ident(w)) if w == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_ident(&mut self) -> Result<(String, usize, usize)> {
        let (l, c) = self.here();
        match self.next().map(|t| t.tok) {
            Some(Tok::Ident(w)) => Ok((w, l, c)),
            _ => Err(err_at(l, c, "expected an identifier")),
        }
    }

    pub fn expect_number(&mut self) -> Result<f64> {
        let (l, c) = self.here();
        let neg = self.eat_punct("-");
        match self.next().map(|t| t.tok) {
            Some(Tok::Number(x)) => Ok(if neg { -x } else { x }),
            _ => Err(err_at(l, c, "expected a number")),
        }
    }

    /// Ends a section entry: consumes a newline, or accepts an upcoming
    /// `}` (left for the section loop) or end of input.
    pub fn end_entry(&mut self) -> Result<()> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Newline) => {
                self.next();
                Ok(())
            }
            Some(Tok::Punct("}")) | None => Ok(()),
            _ => {
                let (l, c) = self.here();
                Err(err_at(l, c, "expected end of line"))
            }
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_a_law_line() {
        let toks = tokenize("Z := X + Y + U_Z # law\n").unwrap();
        let kinds: Vec<&Tok> = toks.iter().map(|t| &t.tok).collect();
        assert_eq!(kinds.len(), 8); // 7 tokens + newline
        assert_eq!(*kinds[1], Tok::Punct(":="));
        assert_eq!(*kinds[6], Tok::Ident("U_Z".into()));
    }

    #[test]
    fn starred_identifiers() {
        let toks = tokenize_with("Y*=3", true).unwrap();
        assert_eq!(toks[0].tok, Tok::Ident("Y*".into()));
        assert_eq!(toks[1].tok, Tok::Punct("="));
    }

    #[test]
    fn reports_position() {
        let err = tokenize("x := $").unwrap_err();
        match err {
            Error::ParseError { line, col, .. } => {
                assert_eq!(line, 1);
                assert_eq!(col, 6);
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
