//! IOB tag strings and span conversion.
//!
//! Tags are plain strings: `O`, `B`, `I` (untyped, as produced by the span
//! detector) or `B-X` / `I-X` (typed).

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagKind {
    O,
    B,
    I,
}

/// A parsed tag; `ty` is `None` for untyped `B`/`I` and always for `O`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tag<'a> {
    pub kind: TagKind,
    pub ty: Option<&'a str>,
}

impl<'a> Tag<'a> {
    pub fn parse(s: &'a str) -> Option<Tag<'a>> {
        let (head, ty) = match s.split_once('-') {
            Some((h, t)) if !t.is_empty() => (h, Some(t)),
            Some(_) => return None,
            None => (s, None),
        };
        let kind = match head {
            "O" if ty.is_none() => TagKind::O,
            "B" => TagKind::B,
            "I" => TagKind::I,
            _ => return None,
        };
        Some(Tag { kind, ty })
    }
}

impl fmt::Display for Tag<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.kind {
            TagKind::O => return f.write_str("O"),
            TagKind::B => "B",
            TagKind::I => "I",
        };
        match self.ty {
            Some(t) => write!(f, "{head}-{t}"),
            None => f.write_str(head),
        }
    }
}

/// A labelled mention: inclusive token range plus optional type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub ty: Option<String>,
}

/// True when every `I` continues a mention of the same type.
pub fn is_valid_iob<S: AsRef<str>>(labels: &[S]) -> bool {
    let mut prev: Option<Tag> = None;
    for l in labels {
        let Some(tag) = Tag::parse(l.as_ref()) else {
            return false;
        };
        if tag.kind == TagKind::I {
            match prev {
                Some(p) if p.kind != TagKind::O && p.ty == tag.ty => {}
                _ => return false,
            }
        }
        prev = Some(tag);
    }
    true
}

/// Rewrites stray `I` tags (after `O`, at sentence start, or after a different
/// type) as `B`. Unparseable tags become `O`. Returns the number of changes.
pub fn repair_iob(labels: &mut [String]) -> usize {
    let mut fixed = 0;
    let mut prev_kind = TagKind::O;
    let mut prev_ty: Option<String> = None;
    for l in labels.iter_mut() {
        let (kind, ty) = match Tag::parse(l) {
            Some(t) => (t.kind, t.ty.map(str::to_string)),
            None => {
                *l = "O".to_string();
                fixed += 1;
                (TagKind::O, None)
            }
        };
        let kind = if kind == TagKind::I && (prev_kind == TagKind::O || prev_ty != ty) {
            *l = Tag {
                kind: TagKind::B,
                ty: ty.as_deref(),
            }
            .to_string();
            fixed += 1;
            TagKind::B
        } else {
            kind
        };
        prev_kind = kind;
        prev_ty = ty;
    }
    fixed
}

/// Mentions encoded by a valid IOB sequence, in order. Stray `I` tags start a
/// new mention.
pub fn spans_from_labels<S: AsRef<str>>(labels: &[S]) -> Vec<LabeledSpan> {
    let mut spans: Vec<LabeledSpan> = Vec::new();
    let mut open = false;
    for (i, l) in labels.iter().enumerate() {
        let tag = Tag::parse(l.as_ref()).unwrap_or(Tag {
            kind: TagKind::O,
            ty: None,
        });
        match tag.kind {
            TagKind::O => open = false,
            TagKind::I if open && spans.last().map(|s| s.ty.as_deref()) == Some(tag.ty) => {
                spans.last_mut().expect("open span").end = i;
            }
            TagKind::B | TagKind::I => {
                spans.push(LabeledSpan {
                    start: i,
                    end: i,
                    ty: tag.ty.map(str::to_string),
                });
                open = true;
            }
        }
    }
    spans
}

/// Encodes disjoint spans as an IOB sequence of length `len`.
pub fn labels_from_spans(len: usize, spans: &[LabeledSpan]) -> Vec<String> {
    let mut out = vec!["O".to_string(); len];
    for s in spans {
        let ty = s.ty.as_deref();
        out[s.start] = Tag {
            kind: TagKind::B,
            ty,
        }
        .to_string();
        for l in &mut out[s.start + 1..=s.end] {
            *l = Tag {
                kind: TagKind::I,
                ty,
            }
            .to_string();
        }
    }
    out
}
