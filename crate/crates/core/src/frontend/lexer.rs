use std::fmt;

use super::{FrontendError, Pos};

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Let,
    Var,
    Steps,
    If,
    Elif,
    Else,
    While,
    For,
    In,
    Range,
    Print,
    Input,
    Native,
    Item,
    True,
    False,
    And,
    Or,
    Not,
    Ident(String),
    Int(u64),
    Float(f64),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Newline,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    NotEq,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(v) => write!(f, "integer {v}"),
            Tok::Float(v) => write!(f, "number {v}"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Newline => f.write_str("newline"),
            other => write!(f, "`{}`", keyword_text(other)),
        }
    }
}

fn keyword_text(t: &Tok) -> &'static str {
    match t {
        Tok::Let => "let",
        Tok::Var => "var",
        Tok::Steps => "steps",
        Tok::If => "if",
        Tok::Elif => "elif",
        Tok::Else => "else",
        Tok::While => "while",
        Tok::For => "for",
        Tok::In => "in",
        Tok::Range => "range",
        Tok::Print => "print",
        Tok::Input => "input",
        Tok::Native => "native",
        Tok::Item => "item",
        Tok::True => "true",
        Tok::False => "false",
        Tok::And => "and",
        Tok::Or => "or",
        Tok::Not => "not",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::LBrace => "{",
        Tok::RBrace => "}",
        Tok::LBracket => "[",
        Tok::RBracket => "]",
        Tok::Comma => ",",
        Tok::Semi => ";",
        Tok::Assign => "=",
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Star => "*",
        Tok::Slash => "/",
        Tok::Lt => "<",
        Tok::Gt => ">",
        Tok::Le => "<=",
        Tok::Ge => ">=",
        Tok::EqEq => "==",
        Tok::NotEq => "!=",
        _ => "?",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "let" => Tok::Let,
        "var" => Tok::Var,
        "steps" => Tok::Steps,
        "if" => Tok::If,
        "elif" => Tok::Elif,
        "else" => Tok::Else,
        "while" => Tok::While,
        "for" => Tok::For,
        "in" => Tok::In,
        "range" => Tok::Range,
        "print" => Tok::Print,
        "input" => Tok::Input,
        "native" => Tok::Native,
        "item" => Tok::Item,
        "true" => Tok::True,
        "false" => Tok::False,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        _ => return None,
    })
}

/// Splits source text into tokens. `#` starts a comment running to the end
/// of the line. Newlines are kept as statement separators.
pub fn tokenize(source: &str) -> Result<Vec<Token>, FrontendError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let start = i;
        match c {
            '\n' => {
                out.push(Token { tok: Tok::Newline, pos });
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None | Some('\n') => {
                            return Err(FrontendError::Lex { pos, msg: "unterminated string literal".into() })
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                Some('n') => s.push('\n'),
                                _ => {
                                    return Err(FrontendError::Lex {
                                        pos: Pos { line, col: col + (i - start) },
                                        msg: "bad escape in string literal".into(),
                                    })
                                }
                            }
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), pos });
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_float = false;
                if i < chars.len() && chars[i] == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let tok = if is_float {
                    Tok::Float(text.parse().map_err(|_| FrontendError::Lex { pos, msg: format!("bad number `{text}`") })?)
                } else {
                    match text.parse::<u64>() {
                        Ok(v) => Tok::Int(v),
                        Err(_) => Tok::Float(
                            text.parse().map_err(|_| FrontendError::Lex { pos, msg: format!("bad number `{text}`") })?,
                        ),
                    }
                };
                out.push(Token { tok, pos });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = keyword(&word).unwrap_or(Tok::Ident(word));
                out.push(Token { tok, pos });
            }
            _ => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let (tok, len) = match two.as_str() {
                    "<=" => (Tok::Le, 2),
                    ">=" => (Tok::Ge, 2),
                    "==" => (Tok::EqEq, 2),
                    "!=" => (Tok::NotEq, 2),
                    _ => {
                        let tok = match c {
                            '(' => Tok::LParen,
                            ')' => Tok::RParen,
                            '{' => Tok::LBrace,
                            '}' => Tok::RBrace,
                            '[' => Tok::LBracket,
                            ']' => Tok::RBracket,
                            ',' => Tok::Comma,
                            ';' => Tok::Semi,
                            '=' => Tok::Assign,
                            '+' => Tok::Plus,
                            '-' => Tok::Minus,
                            '*' => Tok::Star,
                            '/' => Tok::Slash,
                            '<' => Tok::Lt,
                            '>' => Tok::Gt,
                            _ => {
                                return Err(FrontendError::Lex { pos, msg: format!("illegal character `{c}`") });
                            }
                        };
                        (tok, 1)
                    }
                };
                out.push(Token { tok, pos });
                i += len;
            }
        }
        col += i - start;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn simple_let() {
        assert_eq!(kinds("let x = 1"), vec![Tok::Let, Tok::Ident("x".into()), Tok::Assign, Tok::Int(1)]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
    }

    #[test]
    fn illegal_character_position() {
        match tokenize("let x = @") {
            Err(FrontendError::Lex { pos, .. }) => assert_eq!(pos, Pos { line: 1, col: 9 }),
            other => panic!("expected lex error, got {other:?}"),
        }
    }

    #[test]
    fn comments_numbers_and_operators() {
        let toks = kinds("a <= 2.5e1 # trailing\n\"s\\\"q\" != .5");
        assert_eq!(
            toks,
            vec![
                Tok::Ident("a".into()),
                Tok::Le,
                Tok::Float(25.0),
                Tok::Newline,
                Tok::Str("s\"q".into()),
                Tok::NotEq,
                Tok::Float(0.5),
            ]
        );
    }

    #[test]
    fn positions_track_lines() {
        let toks = tokenize("x\n  y").unwrap();
        assert_eq!(toks[2].pos, Pos { line: 2, col: 3 });
    }
}
