//! Lexer for RC source text.
//!
//! Resilience clause words (`share`, `compare`, `retry`, ...) are keywords only
//! inside a `#pragma rolex` line; `PRECISION`/`MAXIMUS` only directly inside a
//! `tolerant (` qualifier and `DETECT`/`CORRECT` inside `robust (`. Everywhere
//! else they lex as plain identifiers.

use std::fmt;

use super::ast::Pos;
use super::FrontendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Int,
    Unsigned,
    Float,
    Double,
    Void,
    If,
    Else,
    While,
    For,
    Return,
    Break,
    Continue,
    Print,
    Sizeof,
    Null,
    RolexPrecisionType,
    Tolerant,
    Robust,
    Heal,
    Precision,
    Maximus,
    DetectUpper,
    CorrectUpper,
    // pragma-line words
    Rolex,
    RecoverRollback,
    RecoverRollforward,
    Declare,
    Resilient,
    Share,
    Private,
    Compare,
    Reinitialize,
    Ameliorate,
    Fallback,
    Retry,
    Ignore,
    Detect,
    Correct,
    Default,
    Shared,
    None,
}

impl Keyword {
    pub fn text(self) -> &'static str {
        use Keyword::*;
        match self {
            Int => "int",
            Unsigned => "unsigned",
            Float => "float",
            Double => "double",
            Void => "void",
            If => "if",
            Else => "else",
            While => "while",
            For => "for",
            Return => "return",
            Break => "break",
            Continue => "continue",
            Print => "print",
            Sizeof => "sizeof",
            Null => "NULL",
            RolexPrecisionType => "rolex_precision",
            Tolerant => "tolerant",
            Robust => "robust",
            Heal => "heal",
            Precision => "PRECISION",
            Maximus => "MAXIMUS",
            DetectUpper => "DETECT",
            CorrectUpper => "CORRECT",
            Rolex => "rolex",
            RecoverRollback => "recover-rollback",
            RecoverRollforward => "recover-rollforward",
            Declare => "declare",
            Resilient => "resilient",
            Share => "share",
            Private => "private",
            Compare => "compare",
            Reinitialize => "reinitialize",
            Ameliorate => "ameliorate",
            Fallback => "fallback",
            Retry => "retry",
            Ignore => "ignore",
            Detect => "detect",
            Correct => "correct",
            Default => "default",
            Shared => "shared",
            None => "none",
        }
    }

    fn always(word: &str) -> Option<Keyword> {
        use Keyword::*;
        Some(match word {
            "int" => Int,
            "unsigned" => Unsigned,
            "float" => Float,
            "double" => Double,
            "void" => Void,
            "if" => If,
            "else" => Else,
            "while" => While,
            "for" => For,
            "return" => Return,
            "break" => Break,
            "continue" => Continue,
            "print" => Print,
            "sizeof" => Sizeof,
            "NULL" => Null,
            "rolex_precision" => RolexPrecisionType,
            "tolerant" => Tolerant,
            "robust" => Robust,
            "heal" => Heal,
            _ => return Option::None,
        })
    }

    fn pragma(word: &str) -> Option<Keyword> {
        use Keyword::*;
        Some(match word {
            "rolex" => Rolex,
            "declare" => Declare,
            "resilient" => Resilient,
            "share" => Share,
            "private" => Private,
            "compare" => Compare,
            "reinitialize" => Reinitialize,
            "ameliorate" => Ameliorate,
            "fallback" => Fallback,
            "retry" => Retry,
            "ignore" => Ignore,
            "detect" => Detect,
            "correct" => Correct,
            "DETECT" => DetectUpper,
            "CORRECT" => CorrectUpper,
            "default" => Default,
            "shared" => Shared,
            "none" => None,
            _ => return Option::None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Punct {
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Assign,
    PlusAssign,
    MinusAssign,
    StarAssign,
    SlashAssign,
    PlusPlus,
    MinusMinus,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Amp,
    Pipe,
    Caret,
    Tilde,
    Bang,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    Ne,
    AndAnd,
    OrOr,
    Shl,
    Shr,
}

impl Punct {
    pub fn text(self) -> &'static str {
        use Punct::*;
        match self {
            LParen => "(",
            RParen => ")",
            LBrace => "{",
            RBrace => "}",
            LBracket => "[",
            RBracket => "]",
            Semi => ";",
            Comma => ",",
            Assign => "=",
            PlusAssign => "+=",
            MinusAssign => "-=",
            StarAssign => "*=",
            SlashAssign => "/=",
            PlusPlus => "++",
            MinusMinus => "--",
            Plus => "+",
            Minus => "-",
            Star => "*",
            Slash => "/",
            Percent => "%",
            Amp => "&",
            Pipe => "|",
            Caret => "^",
            Tilde => "~",
            Bang => "!",
            Lt => "<",
            Gt => ">",
            Le => "<=",
            Ge => ">=",
            EqEq => "==",
            Ne => "!=",
            AndAnd => "&&",
            OrOr => "||",
            Shl => "<<",
            Shr => ">>",
        }
    }
}

// Longest operators first so the scanner is greedy.
const PUNCTS: &[Punct] = &[
    Punct::PlusAssign,
    Punct::MinusAssign,
    Punct::StarAssign,
    Punct::SlashAssign,
    Punct::PlusPlus,
    Punct::MinusMinus,
    Punct::Le,
    Punct::Ge,
    Punct::EqEq,
    Punct::Ne,
    Punct::AndAnd,
    Punct::OrOr,
    Punct::Shl,
    Punct::Shr,
    Punct::LParen,
    Punct::RParen,
    Punct::LBrace,
    Punct::RBrace,
    Punct::LBracket,
    Punct::RBracket,
    Punct::Semi,
    Punct::Comma,
    Punct::Assign,
    Punct::Plus,
    Punct::Minus,
    Punct::Star,
    Punct::Slash,
    Punct::Percent,
    Punct::Amp,
    Punct::Pipe,
    Punct::Caret,
    Punct::Tilde,
    Punct::Bang,
    Punct::Lt,
    Punct::Gt,
];

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Keyword(Keyword),
    Ident,
    IntLit { value: u64, unsigned: bool },
    FloatLit { value: f64, single: bool },
    StrLit(String),
    Punct(Punct),
    /// `#pragma rolex`
    PragmaIntro,
    /// Newline that terminates a pragma line.
    PragmaEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub pos: Pos,
}

impl Token {
    pub fn is_punct(&self, p: Punct) -> bool {
        self.kind == TokenKind::Punct(p)
    }

    pub fn is_kw(&self, k: Keyword) -> bool {
        self.kind == TokenKind::Keyword(k)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TokenKind::Keyword(_) => write!(f, "kw:{}", self.lexeme),
            TokenKind::Ident => write!(f, "ident:{}", self.lexeme),
            TokenKind::IntLit { .. } | TokenKind::FloatLit { .. } | TokenKind::StrLit(_) => {
                write!(f, "lit:{}", self.lexeme)
            }
            TokenKind::Punct(_) => write!(f, "punct:{}", self.lexeme),
            TokenKind::PragmaIntro => f.write_str("pragma:#pragma rolex"),
            TokenKind::PragmaEnd => f.write_str("pragma-end"),
        }
    }
}

struct Lexer {
    chars: Vec<char>,
    i: usize,
    line: u32,
    col: u32,
    in_pragma: bool,
    out: Vec<Token>,
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, FrontendError> {
    let mut lx = Lexer { chars: source.chars().collect(), i: 0, line: 1, col: 1, in_pragma: false, out: Vec::new() };
    lx.run()?;
    Ok(lx.out)
}

impl Lexer {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.i + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.i).copied()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos::new(self.line, self.col)
    }

    fn push(&mut self, kind: TokenKind, lexeme: String, pos: Pos) {
        self.out.push(Token { kind, lexeme, pos });
    }

    fn run(&mut self) -> Result<(), FrontendError> {
        while let Some(c) = self.peek(0) {
            let pos = self.pos();
            if c == '\n' {
                self.bump();
                if self.in_pragma {
                    self.in_pragma = false;
                    self.push(TokenKind::PragmaEnd, "\n".into(), pos);
                }
            } else if c.is_whitespace() {
                self.bump();
            } else if c == '/' && self.peek(1) == Some('/') {
                while self.peek(0).is_some_and(|c| c != '\n') {
                    self.bump();
                }
            } else if c == '/' && self.peek(1) == Some('*') {
                self.bump();
                self.bump();
                loop {
                    match self.peek(0) {
                        None => return Err(FrontendError::lexical(pos, "unterminated comment")),
                        Some('*') if self.peek(1) == Some('/') => {
                            self.bump();
                            self.bump();
                            break;
                        }
                        Some('\n') if self.in_pragma => {
                            return Err(FrontendError::lexical(pos, "comment spans a pragma line end"))
                        }
                        _ => {
                            self.bump();
                        }
                    }
                }
            } else if c == '#' {
                self.pragma(pos)?;
            } else if c.is_ascii_alphabetic() || c == '_' {
                self.word(pos);
            } else if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) {
                self.number(pos)?;
            } else if c == '"' {
                self.string(pos)?;
            } else {
                self.punct(pos)?;
            }
        }
        if self.in_pragma {
            let pos = self.pos();
            self.push(TokenKind::PragmaEnd, String::new(), pos);
        }
        Ok(())
    }

    fn pragma(&mut self, pos: Pos) -> Result<(), FrontendError> {
        if self.in_pragma {
            return Err(FrontendError::lexical(pos, "unexpected '#' inside pragma"));
        }
        self.bump();
        while self.peek(0).is_some_and(|c| c == ' ' || c == '\t') {
            self.bump();
        }
        let word = self.take_word();
        if word != "pragma" {
            return Err(FrontendError::lexical(pos, format!("unsupported preprocessor directive '#{word}'")));
        }
        while self.peek(0).is_some_and(|c| c == ' ' || c == '\t') {
            self.bump();
        }
        let word = self.take_word();
        if word != "rolex" {
            return Err(FrontendError::lexical(pos, format!("unsupported pragma '{word}'")));
        }
        self.in_pragma = true;
        self.push(TokenKind::PragmaIntro, "#pragma rolex".into(), pos);
        Ok(())
    }

    fn take_word(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn prev_is(&self, back: usize, pred: impl Fn(&Token) -> bool) -> bool {
        self.out.len() >= back && pred(&self.out[self.out.len() - back])
    }

    fn word(&mut self, pos: Pos) {
        let mut word = self.take_word();
        if self.in_pragma && word == "recover" && self.peek(0) == Some('-') {
            let save = (self.i, self.line, self.col);
            self.bump();
            let rest = self.take_word();
            match rest.as_str() {
                "rollback" | "rollforward" => {
                    word = format!("recover-{rest}");
                    let kw = if rest == "rollback" { Keyword::RecoverRollback } else { Keyword::RecoverRollforward };
                    self.push(TokenKind::Keyword(kw), word, pos);
                    return;
                }
                _ => {
                    (self.i, self.line, self.col) = save;
                }
            }
        }
        let after_open = |kw: Keyword| {
            self.prev_is(1, |t| t.is_punct(Punct::LParen)) && self.prev_is(2, |t| t.is_kw(kw))
        };
        let kind = if let Some(kw) = Keyword::always(&word) {
            TokenKind::Keyword(kw)
        } else if self.in_pragma && Keyword::pragma(&word).is_some() {
            TokenKind::Keyword(Keyword::pragma(&word).unwrap())
        } else if (word == "PRECISION" || word == "MAXIMUS") && after_open(Keyword::Tolerant) {
            TokenKind::Keyword(if word == "PRECISION" { Keyword::Precision } else { Keyword::Maximus })
        } else if matches!(word.as_str(), "DETECT" | "CORRECT" | "detect" | "correct") && after_open(Keyword::Robust) {
            TokenKind::Keyword(match word.as_str() {
                "DETECT" => Keyword::DetectUpper,
                "CORRECT" => Keyword::CorrectUpper,
                "detect" => Keyword::Detect,
                _ => Keyword::Correct,
            })
        } else {
            TokenKind::Ident
        };
        self.push(kind, word, pos);
    }

    fn number(&mut self, pos: Pos) -> Result<(), FrontendError> {
        let mut text = String::new();
        if self.peek(0) == Some('0') && matches!(self.peek(1), Some('x' | 'X')) {
            self.bump();
            self.bump();
            let mut digits = String::new();
            while let Some(c) = self.peek(0).filter(|c| c.is_ascii_hexdigit()) {
                digits.push(c);
                self.bump();
            }
            let unsigned = self.int_suffix();
            let value = u64::from_str_radix(&digits, 16)
                .map_err(|_| FrontendError::lexical(pos, "malformed hexadecimal literal"))?;
            let lexeme = format!("0x{digits}{}", if unsigned { "u" } else { "" });
            self.push(TokenKind::IntLit { value, unsigned }, lexeme, pos);
            return self.no_trailing_ident(pos);
        }
        let mut is_float = false;
        while let Some(c) = self.peek(0) {
            if c.is_ascii_digit() {
                text.push(c);
            } else if c == '.' && !is_float && !text.contains('e') {
                is_float = true;
                text.push(c);
            } else if (c == 'e' || c == 'E')
                && !text.contains('e')
                && (self.peek(1).is_some_and(|d| d.is_ascii_digit())
                    || (matches!(self.peek(1), Some('+' | '-')) && self.peek(2).is_some_and(|d| d.is_ascii_digit())))
            {
                is_float = true;
                text.push('e');
                self.bump();
                if let Some(sign @ ('+' | '-')) = self.peek(0) {
                    text.push(sign);
                    self.bump();
                }
                continue;
            } else {
                break;
            }
            self.bump();
        }
        if is_float {
            let single = matches!(self.peek(0), Some('f' | 'F'));
            if single {
                self.bump();
            }
            let value: f64 = text.parse().map_err(|_| FrontendError::lexical(pos, "malformed float literal"))?;
            let lexeme = if single { format!("{text}f") } else { text };
            self.push(TokenKind::FloatLit { value, single }, lexeme, pos);
        } else {
            let unsigned = self.int_suffix();
            let value: u64 = text.parse().map_err(|_| FrontendError::lexical(pos, "integer literal out of range"))?;
            let lexeme = if unsigned { format!("{text}u") } else { text };
            self.push(TokenKind::IntLit { value, unsigned }, lexeme, pos);
        }
        self.no_trailing_ident(pos)
    }

    fn int_suffix(&mut self) -> bool {
        if matches!(self.peek(0), Some('u' | 'U')) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn no_trailing_ident(&self, pos: Pos) -> Result<(), FrontendError> {
        match self.peek(0) {
            Some(c) if c.is_ascii_alphanumeric() || c == '_' => {
                Err(FrontendError::lexical(pos, "invalid suffix on numeric literal"))
            }
            _ => Ok(()),
        }
    }

    fn string(&mut self, pos: Pos) -> Result<(), FrontendError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(FrontendError::lexical(pos, "unterminated string literal")),
                Some('"') => break,
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    _ => return Err(FrontendError::lexical(pos, "unknown escape in string literal")),
                },
                Some(c) => s.push(c),
            }
        }
        let lexeme = format!("{s:?}");
        self.push(TokenKind::StrLit(s), lexeme, pos);
        Ok(())
    }

    fn punct(&mut self, pos: Pos) -> Result<(), FrontendError> {
        for &p in PUNCTS {
            let text = p.text();
            if text.chars().enumerate().all(|(k, ch)| self.peek(k) == Some(ch)) {
                for _ in 0..text.len() {
                    self.bump();
                }
                self.push(TokenKind::Punct(p), text.into(), pos);
                return Ok(());
            }
        }
        let c = self.peek(0).unwrap_or('?');
        Err(FrontendError::lexical(pos, format!("invalid character '{c}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn show(src: &str) -> Vec<String> {
        tokenize(src).unwrap().iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn maximus_qualifier_tokens() {
        assert_eq!(
            show("tolerant (MAXIMUS = 1023) unsigned int counter;"),
            [
                "kw:tolerant", "punct:(", "kw:MAXIMUS", "punct:=", "lit:1023", "punct:)", "kw:unsigned", "kw:int",
                "ident:counter", "punct:;"
            ]
        );
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
    }

    #[test]
    fn invalid_character_is_positioned() {
        let err = tokenize("int @x;").unwrap_err();
        assert_eq!((err.pos.line, err.pos.col), (1, 5));
    }

    #[test]
    fn clause_words_are_contextual() {
        let toks = show("int share;\n#pragma rolex recover-rollback share(share)\n{ }");
        assert_eq!(toks[1], "ident:share");
        assert!(toks.contains(&"kw:recover-rollback".to_string()));
        assert!(toks.contains(&"kw:share".to_string()));
        assert!(toks.contains(&"pragma-end".to_string()));
        let maximus = show("int MAXIMUS;");
        assert_eq!(maximus[1], "ident:MAXIMUS");
    }

    #[test]
    fn unterminated_literals() {
        assert!(tokenize("print \"abc").is_err());
        assert!(tokenize("/* open").is_err());
    }

    #[test]
    fn numeric_literals() {
        let toks = tokenize("1.5e-3 2.0f 0xffu 7").unwrap();
        assert_eq!(toks[0].kind, TokenKind::FloatLit { value: 1.5e-3, single: false });
        assert_eq!(toks[1].kind, TokenKind::FloatLit { value: 2.0, single: true });
        assert_eq!(toks[2].kind, TokenKind::IntLit { value: 255, unsigned: true });
        assert_eq!(toks[3].kind, TokenKind::IntLit { value: 7, unsigned: false });
    }
}
