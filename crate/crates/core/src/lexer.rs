//! Comment- and string-aware scanning of Solidity text.
//!
//! The parser, slicer and mutator never look at raw source directly: they
//! work on a *blanked* copy where every comment and string-literal body is
//! overwritten with spaces. Byte offsets and line breaks are preserved, so
//! positions found in the blanked text map 1:1 onto the original.

/// A comment found in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommentSpan {
    /// Byte offset of the first `/`.
    pub start: usize,
    /// Byte offset one past the last comment byte (the newline of a line
    /// comment is not part of it).
    pub end: usize,
    /// 1-based line of `start`.
    pub start_line: usize,
    /// 1-based line of the last comment byte.
    pub end_line: usize,
    pub block: bool,
}

#[derive(Debug, Clone)]
pub struct Lexed {
    pub blanked: String,
    pub comments: Vec<CommentSpan>,
    /// `line_starts[i]` is the byte offset of line `i + 1`.
    pub line_starts: Vec<usize>,
}

impl Lexed {
    /// 1-based line number containing byte `offset`.
    pub fn line_of(&self, offset: usize) -> usize {
        match self.line_starts.binary_search(&offset) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Code,
    LineComment,
    BlockComment,
    Str(u8),
}

pub fn line_starts(text: &str) -> Vec<usize> {
    let mut starts = vec![0];
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            starts.push(i + 1);
        }
    }
    starts
}

/// Scan `text`, returning the blanked copy and every comment span.
///
/// Unterminated block comments run to end of input; unterminated strings end
/// at the next newline (Solidity string literals cannot span lines).
pub fn lex(text: &str) -> Lexed {
    let bytes = text.as_bytes();
    let mut out = bytes.to_vec();
    let mut comments = Vec::new();
    let mut state = State::Code;
    let mut comment_start = 0;
    let mut line = 1;
    let mut comment_line = 1;
    let mut i = 0;

    // Only ASCII bytes are ever blanked individually; a multi-byte UTF-8
    // sequence inside a comment or string is replaced byte-for-byte with
    // spaces, which keeps the result valid UTF-8.
    while i < bytes.len() {
        let b = bytes[i];
        let next = bytes.get(i + 1).copied();
        match state {
            State::Code => match (b, next) {
                (b'/', Some(b'/')) => {
                    state = State::LineComment;
                    comment_start = i;
                    comment_line = line;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 2;
                    continue;
                }
                (b'/', Some(b'*')) => {
                    state = State::BlockComment;
                    comment_start = i;
                    comment_line = line;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 2;
                    continue;
                }
                (b'"', _) | (b'\'', _) => state = State::Str(b),
                _ => {}
            },
            State::LineComment => {
                if b == b'\n' {
                    comments.push(CommentSpan {
                        start: comment_start,
                        end: i,
                        start_line: comment_line,
                        end_line: line,
                        block: false,
                    });
                    state = State::Code;
                } else {
                    out[i] = b' ';
                }
            }
            State::BlockComment => {
                if b == b'*' && next == Some(b'/') {
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    comments.push(CommentSpan {
                        start: comment_start,
                        end: i + 2,
                        start_line: comment_line,
                        end_line: line,
                        block: true,
                    });
                    state = State::Code;
                    i += 2;
                    continue;
                } else if b != b'\n' {
                    out[i] = b' ';
                }
            }
            State::Str(quote) => {
                if b == b'\\' && next.is_some() && next != Some(b'\n') {
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 2;
                    continue;
                } else if b == quote || b == b'\n' {
                    state = State::Code;
                } else {
                    out[i] = b' ';
                }
            }
        }
        if b == b'\n' {
            line += 1;
        }
        i += 1;
    }
    match state {
        State::LineComment => comments.push(CommentSpan {
            start: comment_start,
            end: bytes.len(),
            start_line: comment_line,
            end_line: line,
            block: false,
        }),
        State::BlockComment => comments.push(CommentSpan {
            start: comment_start,
            end: bytes.len(),
            start_line: comment_line,
            end_line: line,
            block: true,
        }),
        _ => {}
    }

    let blanked = String::from_utf8(out).expect("blanking only writes ASCII spaces");
    Lexed {
        blanked,
        comments,
        line_starts: line_starts(text),
    }
}

/// Remove every comment from `text`, leaving code and string literals as-is.
pub fn strip_comments(text: &str) -> String {
    let lexed = lex(text);
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for c in &lexed.comments {
        out.push_str(&text[pos..c.start]);
        pos = c.end;
    }
    out.push_str(&text[pos..]);
    out
}

pub fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

pub fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

/// An identifier occurrence in (blanked) text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ident<'a> {
    pub text: &'a str,
    pub start: usize,
    /// Previous non-whitespace character is `.` (member access).
    pub after_dot: bool,
    /// Next non-whitespace character is `(`.
    pub before_paren: bool,
}

/// Every identifier token in `text`, in order. Numeric literals such as
/// `0x1f` or `1e18` are skipped.
pub fn identifiers(text: &str) -> Vec<Ident<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_digit() {
            while i < bytes.len() && is_ident_char(bytes[i] as char) {
                i += 1;
            }
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < bytes.len() && is_ident_char(bytes[i] as char) {
                i += 1;
            }
            let prev = text[..start].trim_end().chars().next_back();
            let next = text[i..].trim_start().chars().next();
            out.push(Ident {
                text: &text[start..i],
                start,
                after_dot: prev == Some('.'),
                before_paren: next == Some('('),
            });
            continue;
        }
        i += 1;
    }
    out
}

/// Offset of the `}` matching the `{` at `open`, counting braces in blanked
/// text. `None` when the block never closes.
pub fn matching_brace(blanked: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, b) in blanked.bytes().enumerate().skip(open) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

pub const KEYWORDS: &[&str] = &[
    "abstract", "address", "after", "alias", "anonymous", "apply", "as", "assembly", "assert",
    "auto", "bool", "break", "byte", "bytes", "calldata", "case", "catch", "constant",
    "constructor", "continue", "contract", "copyof", "default", "define", "delete", "do", "else",
    "emit", "enum", "error", "event", "external", "fallback", "false", "final", "fixed", "for",
    "function", "gwei", "hex", "if", "immutable", "implements", "import", "in", "indexed",
    "inline", "interface", "internal", "is", "keccak256", "let", "library", "macro", "mapping",
    "match", "memory", "modifier", "msg", "mutable", "new", "null", "of", "override", "partial",
    "payable", "pragma", "private", "promise", "public", "pure", "receive", "reference",
    "relocatable", "require", "return", "returns", "revert", "sealed", "selfdestruct", "sha256",
    "sizeof", "static", "storage", "string", "struct", "super", "supports", "switch", "this",
    "throw", "true", "try", "tx", "type", "typedef", "typeof", "ufixed", "unchecked", "unicode",
    "using", "var", "view", "virtual", "wei", "ether", "seconds", "minutes", "hours", "days",
    "weeks", "years", "while", "block", "now", "abi", "gasleft", "blockhash", "ecrecover",
    "ripemd160", "addmod", "mulmod", "suicide", "sha3", "_",
];

/// Solidity keyword, builtin, or elementary type name.
pub fn is_reserved(word: &str) -> bool {
    if KEYWORDS.contains(&word) {
        return true;
    }
    is_elementary_type(word)
}

pub fn is_elementary_type(word: &str) -> bool {
    fn sized(word: &str, prefix: &str) -> bool {
        word.strip_prefix(prefix)
            .is_some_and(|rest| rest.is_empty() || rest.bytes().all(|b| b.is_ascii_digit()))
    }
    matches!(word, "address" | "bool" | "string" | "byte" | "var")
        || sized(word, "uint")
        || sized(word, "int")
        || sized(word, "bytes")
        || word.starts_with("fixed")
        || word.starts_with("ufixed")
}
