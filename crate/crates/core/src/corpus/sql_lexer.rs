use super::SqlParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Lexeme {
    Word(String),
    Number(String),
    Str(String),
    Punct(&'static str),
}

impl Lexeme {
    pub(crate) fn is_word(&self, w: &str) -> bool {
        matches!(self, Lexeme::Word(x) if x.eq_ignore_ascii_case(w))
    }

    pub(crate) fn is_punct(&self, p: &str) -> bool {
        matches!(self, Lexeme::Punct(x) if *x == p)
    }

    pub(crate) fn describe(&self) -> String {
        match self {
            Lexeme::Word(w) | Lexeme::Number(w) => w.clone(),
            Lexeme::Str(s) => format!("'{s}'"),
            Lexeme::Punct(p) => (*p).to_string(),
        }
    }
}

const PUNCT: &[&str] = &["<=", ">=", "!=", "<>", "(", ")", ",", ";", "=", "<", ">", "+", "-", "/", "*"];

pub(crate) fn lex(sql: &str) -> Result<Vec<Lexeme>, SqlParseError> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '\'' || c == '"' || c == '`' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && chars[j] != c {
                j += 1;
            }
            if j >= chars.len() {
                return Err(SqlParseError::new("unterminated string literal"));
            }
            let text: String = chars[start..j].iter().collect();
            out.push(if c == '`' { Lexeme::Word(text) } else { Lexeme::Str(text) });
            i = j + 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(Lexeme::Number(chars[start..i].iter().collect()));
            continue;
        }
        if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                if d.is_alphanumeric() || d == '_' || d == '.' {
                    i += 1;
                } else if d == '*' && i > start && chars[i - 1] == '.' {
                    i += 1;
                    break;
                } else {
                    break;
                }
            }
            out.push(Lexeme::Word(chars[start..i].iter().collect()));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCT.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                out.push(Lexeme::Punct(p));
                i += p.chars().count();
            }
            None => return Err(SqlParseError::new(format!("unexpected character '{c}'"))),
        }
    }
    Ok(out)
}
