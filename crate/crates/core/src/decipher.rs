//! Serialization of edit scripts into a natural-language edit grammar and a
//! parser back.
//!
//! Wire grammar (single spaces between all units):
//!
//! ```text
//! chain := '<coe>' (op ' . ')* '<coe_end>'
//! op    := 'deleting "' span '"' anchor?
//!        | 'inserting "' span '" at ' INT
//!        | 'replacing "' span '"' anchor? ' with "' span '"'
//! anchor := ' at ' INT
//! ```
//!
//! The empty script serializes as `<coe> keep everything . <coe_end>`.
//! Canonical mode always writes the `at INT` anchor; display mode omits it
//! for deleting/replacing, whose old spans can be located in the source when
//! they occur exactly once. Inserts carry no old span, so their anchor is
//! kept in both modes. The parser accepts either form per op.

use std::fmt;

use thiserror::Error;

use crate::corpus::Token;
use crate::edit::{EditError, EditOp, EditScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Canonical,
    Display,
}

/// A serialized chain-of-edits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeText {
    pub text: String,
    pub mode: Mode,
}

impl fmt::Display for CoeText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("grammar violation at offset {offset}: expected {expected}, found {found:?}")]
    Grammar {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("span {span:?} not found in source")]
    SpanNotFound { span: String },
    #[error("span {span:?} is ambiguous in source (positions {candidates:?})")]
    AmbiguousSpan {
        span: String,
        candidates: Vec<usize>,
    },
    #[error("resolved script violates edit invariants: {0}")]
    InvalidScript(#[from] EditError),
}

fn span_text(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders `script` in the edit grammar. Byte-exact wire format.
pub fn serialize(script: &EditScript, mode: Mode) -> CoeText {
    let mut parts: Vec<String> = Vec::with_capacity(script.ops.len());
    for op in &script.ops {
        let anchored = mode == Mode::Canonical;
        let part = match op {
            EditOp::Insert { pos, tokens } => {
                format!("inserting \"{}\" at {}", span_text(tokens), pos)
            }
            EditOp::Delete { pos, tokens } => {
                if anchored {
                    format!("deleting \"{}\" at {}", span_text(tokens), pos)
                } else {
                    format!("deleting \"{}\"", span_text(tokens))
                }
            }
            EditOp::Replace { pos, old, new } => {
                if anchored {
                    format!(
                        "replacing \"{}\" at {} with \"{}\"",
                        span_text(old),
                        pos,
                        span_text(new)
                    )
                } else {
                    format!("replacing \"{}\" with \"{}\"", span_text(old), span_text(new))
                }
            }
        };
        parts.push(part);
    }
    let body = if parts.is_empty() {
        "keep everything . ".to_string()
    } else {
        let mut s = String::new();
        for p in &parts {
            s.push_str(p);
            s.push_str(" . ");
        }
        s
    };
    CoeText {
        text: format!("<coe> {body}<coe_end>"),
        mode,
    }
}

/// One lexeme with the char offset where it starts. A `"` is always its own
/// lexeme, even when glued to a word.
#[derive(Debug, Clone, PartialEq)]
struct Lexeme {
    text: String,
    offset: usize,
}

fn lex(text: &str) -> Vec<Lexeme> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0usize;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || c == '"' {
            if !current.is_empty() {
                out.push(Lexeme {
                    text: std::mem::take(&mut current),
                    offset: start,
                });
            }
            if c == '"' {
                out.push(Lexeme {
                    text: "\"".to_string(),
                    offset: i,
                });
            }
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        }
    }
    if !current.is_empty() {
        out.push(Lexeme {
            text: current,
            offset: start,
        });
    }
    out
}

struct Parser<'a> {
    lexemes: Vec<Lexeme>,
    pos: usize,
    source: &'a [Token],
    end_offset: usize,
}

/// Position anchoring parsed for one op.
enum Anchor {
    At(usize),
    Locate,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Lexeme> {
        self.lexemes.get(self.pos)
    }

    fn next(&mut self) -> Option<Lexeme> {
        let lx = self.lexemes.get(self.pos).cloned();
        if lx.is_some() {
            self.pos += 1;
        }
        lx
    }

    fn offset(&self) -> usize {
        self.peek().map(|l| l.offset).unwrap_or(self.end_offset)
    }

    fn err(&self, expected: &str) -> ParseError {
        ParseError::Grammar {
            offset: self.offset(),
            expected: expected.to_string(),
            found: self
                .peek()
                .map(|l| l.text.clone())
                .unwrap_or_else(|| "end of input".to_string()),
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(lx) if lx.text == word => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(&format!("{word:?}"))),
        }
    }

    fn quoted_span(&mut self) -> Result<Vec<Token>, ParseError> {
        self.expect("\"")?;
        let mut tokens = Vec::new();
        loop {
            match self.next() {
                Some(lx) if lx.text == "\"" => break,
                Some(lx) => {
                    let tok = Token::new(lx.text.clone()).map_err(|_| ParseError::Grammar {
                        offset: lx.offset,
                        expected: "span token".to_string(),
                        found: lx.text,
                    })?;
                    tokens.push(tok);
                }
                None => return Err(self.err("closing '\"'")),
            }
        }
        if tokens.is_empty() {
            return Err(self.err("non-empty span"));
        }
        Ok(tokens)
    }

    fn anchor(&mut self) -> Result<Anchor, ParseError> {
        if self.peek().map(|l| l.text.as_str()) == Some("at") {
            self.pos += 1;
            let lx = self.next().ok_or_else(|| self.err("position integer"))?;
            let pos: usize = lx.text.parse().map_err(|_| ParseError::Grammar {
                offset: lx.offset,
                expected: "position integer".to_string(),
                found: lx.text.clone(),
            })?;
            Ok(Anchor::At(pos))
        } else {
            Ok(Anchor::Locate)
        }
    }

    fn resolve(&self, span: &[Token], anchor: Anchor) -> Result<usize, ParseError> {
        match anchor {
            Anchor::At(pos) => Ok(pos),
            Anchor::Locate => {
                let candidates: Vec<usize> = (0..=self.source.len().saturating_sub(span.len()))
                    .filter(|&i| !span.is_empty() && self.source[i..i + span.len()] == *span)
                    .collect();
                match candidates.len() {
                    0 => Err(ParseError::SpanNotFound {
                        span: span_text(span),
                    }),
                    1 => Ok(candidates[0]),
                    _ => Err(ParseError::AmbiguousSpan {
                        span: span_text(span),
                        candidates,
                    }),
                }
            }
        }
    }

    fn op(&mut self) -> Result<EditOp, ParseError> {
        let keyword = self.next().ok_or_else(|| self.err("edit keyword"))?;
        let op = match keyword.text.as_str() {
            "deleting" => {
                let span = self.quoted_span()?;
                let anchor = self.anchor()?;
                let pos = self.resolve(&span, anchor)?;
                EditOp::Delete { pos, tokens: span }
            }
            "inserting" => {
                let span = self.quoted_span()?;
                match self.anchor()? {
                    Anchor::At(pos) => EditOp::Insert { pos, tokens: span },
                    Anchor::Locate => return Err(self.err("'at' (inserts carry a position)")),
                }
            }
            "replacing" => {
                let old = self.quoted_span()?;
                let anchor = self.anchor()?;
                self.expect("with")?;
                let new = self.quoted_span()?;
                let pos = self.resolve(&old, anchor)?;
                EditOp::Replace { pos, old, new }
            }
            _ => {
                return Err(ParseError::Grammar {
                    offset: keyword.offset,
                    expected: "'deleting', 'inserting' or 'replacing'".to_string(),
                    found: keyword.text,
                })
            }
        };
        self.expect(".")?;
        Ok(op)
    }
}

/// Parses a chain back into an edit script against `source`.
///
/// Anchoring is inferred per op: an `at INT` clause is taken literally;
/// without one the op's old span is located in the source and must occur
/// exactly once. Ops are sorted by position; the result satisfies all edit
/// script invariants or parsing fails.
pub fn parse(text: &str, source: &[Token]) -> Result<EditScript, ParseError> {
    let mut parser = Parser {
        lexemes: lex(text),
        pos: 0,
        source,
        end_offset: text.chars().count(),
    };
    parser.expect("<coe>")?;
    let mut ops: Vec<EditOp> = Vec::new();
    if parser.peek().map(|l| l.text.as_str()) == Some("keep") {
        parser.expect("keep")?;
        parser.expect("everything")?;
        parser.expect(".")?;
    } else {
        while parser.peek().map(|l| l.text.as_str()) != Some("<coe_end>") {
            if parser.peek().is_none() {
                return Err(parser.err("edit op or '<coe_end>'"));
            }
            ops.push(parser.op()?);
        }
    }
    parser.expect("<coe_end>")?;
    if parser.peek().is_some() {
        return Err(parser.err("end of input"));
    }
    ops.sort_by_key(|op| (op.pos(), op.old_span().is_empty()));
    let script = EditScript {
        total_cost: ops
            .iter()
            .map(|op| op.old_span().len().max(op.new_span().len()) as u64)
            .sum(),
        ops,
        source_len: source.len(),
    };
    // Cost bookkeeping above is nominal (unit-ish); identity is ops + len.
    script.validate()?;
    Ok(script)
}

/// Splits a chain string into model tokens; `"` becomes its own token.
pub fn chain_tokens(text: &str) -> Vec<String> {
    lex(text).into_iter().map(|l| l.text).collect()
}

/// Inverse of [`chain_tokens`]: joins tokens with spaces, gluing each
/// opening quote to the following token and each closing quote to the
/// preceding one.
pub fn chain_string(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut open = false;
    for tok in tokens {
        if tok == "\"" {
            if open {
                out.push('"');
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push('"');
            }
            open = !open;
        } else {
            if !out.is_empty() && !(open && out.ends_with('"')) {
                out.push(' ');
            }
            out.push_str(tok);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::edit::{infer_edits, CostSet};

    fn toks(text: &str) -> Vec<Token> {
        tokenize(text, false)
    }

    #[test]
    fn serialize_single_replace_canonical() {
        let script = EditScript {
            ops: vec![EditOp::Replace {
                pos: 1,
                old: toks("b"),
                new: toks("x"),
            }],
            source_len: 3,
            total_cost: 1,
        };
        let coe = serialize(&script, Mode::Canonical);
        assert_eq!(coe.text, "<coe> replacing \"b\" at 1 with \"x\" . <coe_end>");
    }

    #[test]
    fn serialize_empty_script() {
        let coe = serialize(&EditScript::empty(3), Mode::Canonical);
        assert_eq!(coe.text, "<coe> keep everything . <coe_end>");
        let parsed = parse(&coe.text, &toks("a b c")).unwrap();
        assert!(parsed.is_empty());
    }

    #[test]
    fn serialize_display_matches_published_style() {
        let source = toks(
            "Kevin hides snacks he bought from the store in his bag and brings them into the theater.",
        );
        let script = EditScript {
            ops: vec![
                EditOp::Delete {
                    pos: 1,
                    tokens: toks("hides snacks he bought from the"),
                },
                EditOp::Replace {
                    pos: 7,
                    old: toks("store in his bag and brings them into the theater"),
                    new: toks("asks his friend if he can bring him a snack"),
                },
            ],
            source_len: source.len(),
            total_cost: 16,
        };
        let coe = serialize(&script, Mode::Display);
        assert_eq!(
            coe.text,
            "<coe> deleting \"hides snacks he bought from the\" . \
             replacing \"store in his bag and brings them into the theater\" \
             with \"asks his friend if he can bring him a snack\" . <coe_end>"
        );
        let parsed = parse(&coe.text, &source).unwrap();
        assert_eq!(parsed, script);
        assert_eq!(
            crate::edit::apply_script(&source, &parsed).unwrap(),
            toks("Kevin asks his friend if he can bring him a snack.")
        );
    }

    #[test]
    fn parse_display_unique_span() {
        let script = parse("<coe> deleting \"b\" . <coe_end>", &toks("a b c")).unwrap();
        assert_eq!(
            script.ops,
            vec![EditOp::Delete {
                pos: 1,
                tokens: toks("b"),
            }]
        );
    }

    #[test]
    fn parse_display_ambiguous_span() {
        match parse("<coe> deleting \"a\" . <coe_end>", &toks("a b a")) {
            Err(ParseError::AmbiguousSpan { candidates, .. }) => {
                assert_eq!(candidates, vec![0, 2]);
            }
            other => panic!("expected ambiguity, got {other:?}"),
        }
    }

    #[test]
    fn parse_display_span_not_found() {
        assert!(matches!(
            parse("<coe> deleting \"z\" . <coe_end>", &toks("a b c")),
            Err(ParseError::SpanNotFound { .. })
        ));
    }

    #[test]
    fn parse_reports_offsets_for_grammar_errors() {
        let text = "<coe> deleting b . <coe_end>";
        match parse(text, &toks("a b c")) {
            Err(ParseError::Grammar { offset, .. }) => {
                assert_eq!(offset, text.find('b').unwrap());
            }
            other => panic!("expected grammar error, got {other:?}"),
        }
        assert!(parse("deleting \"b\" .", &toks("a b")).is_err());
        assert!(parse("<coe> deleting \"b\" . <coe_end> junk", &toks("a b")).is_err());
    }

    #[test]
    fn parse_insert_requires_anchor() {
        assert!(parse("<coe> inserting \"x\" at 1 . <coe_end>", &toks("a b")).is_ok());
        assert!(matches!(
            parse("<coe> inserting \"x\" . <coe_end>", &toks("a b")),
            Err(ParseError::Grammar { .. })
        ));
    }

    #[test]
    fn parse_sorts_ops_and_rejects_overlap() {
        let script = parse(
            "<coe> deleting \"c\" . deleting \"a\" . <coe_end>",
            &toks("a b c"),
        )
        .unwrap();
        assert_eq!(script.ops[0].pos(), 0);
        assert_eq!(script.ops[1].pos(), 2);
        assert!(matches!(
            parse(
                "<coe> deleting \"a b\" at 0 . deleting \"b c\" at 1 . <coe_end>",
                &toks("a b c"),
            ),
            Err(ParseError::InvalidScript(_))
        ));
    }

    #[test]
    fn canonical_roundtrip_through_inference() {
        let s = toks("the cat sat on the mat .");
        let t = toks("a dog sat on a mat today .");
        for costs in crate::edit::DEFAULT_COST_SETS {
            let script = infer_edits(&s, &t, &costs);
            let coe = serialize(&script, Mode::Canonical);
            let parsed = parse(&coe.text, &s).unwrap();
            assert_eq!(parsed, script);
            assert_eq!(crate::edit::apply_script(&s, &parsed).unwrap(), t);
        }
    }

    #[test]
    fn parse_rejects_position_out_of_range() {
        assert!(matches!(
            parse("<coe> deleting \"b\" at 7 . <coe_end>", &toks("a b")),
            Err(ParseError::InvalidScript(_))
        ));
    }

    #[test]
    fn chain_token_string_roundtrip() {
        let text = "<coe> replacing \"b c\" at 1 with \"x\" . <coe_end>";
        let tokens = chain_tokens(text);
        assert_eq!(
            tokens,
            vec![
                "<coe>", "replacing", "\"", "b", "c", "\"", "at", "1", "with", "\"", "x", "\"",
                ".", "<coe_end>"
            ]
        );
        assert_eq!(chain_string(&tokens), text);
    }

    #[test]
    fn replace_script_survives_unit_inference_roundtrip() {
        let s = toks("a b c");
        let t = toks("a x c");
        let script = infer_edits(&s, &t, &CostSet::unit());
        let display = serialize(&script, Mode::Display);
        assert_eq!(display.text, "<coe> replacing \"b\" with \"x\" . <coe_end>");
        assert_eq!(parse(&display.text, &s).unwrap(), script);
    }
}
