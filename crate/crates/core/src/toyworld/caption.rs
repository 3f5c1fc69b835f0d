//! Closed caption grammar:
//!
//! ```text
//! a <color> <shape> (moving <dir> [quickly] | static) [on (white|noise)]
//! ```
//!
//! Speed 1 and the black background are the unmarked defaults, which keeps
//! the short form ("a red circle moving left") canonical.

use super::scene::{Background, Color, Motion, SceneSpec, Shape};
use crate::error::{Error, Result};

/// Padding token id; always maps to the zero embedding.
pub const PAD: usize = 0;
/// Fixed token length every caption is padded to.
pub const MAX_TOKENS: usize = 8;

const WORDS: [&str; 23] = [
    "<pad>", "a", "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple", "circle", "square",
    "triangle", "moving", "left", "right", "up", "down", "static", "quickly", "on", "white", "noise",
];

pub struct Vocab;

impl Vocab {
    pub fn size() -> usize {
        WORDS.len()
    }

    pub fn id(word: &str) -> Result<usize> {
        WORDS
            .iter()
            .position(|w| *w == word && word != "<pad>")
            .ok_or_else(|| Error::Vocabulary(word.to_string()))
    }

    pub fn word(id: usize) -> Option<&'static str> {
        WORDS.get(id).copied()
    }
}

/// Token ids padded to [`MAX_TOKENS`], plus the surface string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub text: String,
    pub tokens: Vec<usize>,
}

impl Caption {
    pub fn from_spec(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut words = vec!["a", spec.color.word(), spec.shape.word()];
        match spec.motion {
            Motion::Static => words.push("static"),
            m => {
                words.extend(["moving", m.word()]);
                if spec.speed == 2 {
                    words.push("quickly");
                }
            }
        }
        if spec.background != Background::Black {
            words.extend(["on", spec.background.word()]);
        }
        let text = words.join(" ");
        let tokens = tokenize(&text)?;
        Ok(Self { text, tokens })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec = parse_caption(text)?;
        Self::from_spec(&spec)
    }

    /// Number of non-padding tokens.
    pub fn len(&self) -> usize {
        self.tokens.iter().filter(|&&t| t != PAD).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Word ids padded with [`PAD`] to [`MAX_TOKENS`].
pub fn tokenize(text: &str) -> Result<Vec<usize>> {
    let mut ids = text.split_whitespace().map(Vocab::id).collect::<Result<Vec<_>>>()?;
    if ids.len() > MAX_TOKENS {
        return Err(Error::Spec(format!("caption has {} tokens, limit {MAX_TOKENS}", ids.len())));
    }
    ids.resize(MAX_TOKENS, PAD);
    Ok(ids)
}

fn lookup<T: Copy>(all: &[T], word: &dyn Fn(T) -> &'static str, w: Option<&str>, what: &str) -> Result<T> {
    let w = w.ok_or_else(|| Error::Spec(format!("caption ends before the {what}")))?;
    all.iter()
        .copied()
        .find(|&x| word(x) == w)
        .ok_or_else(|| Error::Spec(format!("`{w}` is not a {what}")))
}

/// Inverse of [`Caption::from_spec`]. Unknown words give a vocabulary error,
/// known words out of place give a spec error.
pub fn parse_caption(text: &str) -> Result<SceneSpec> {
    tokenize(text)?;
    let mut it = text.split_whitespace().peekable();
    if it.next() != Some("a") {
        return Err(Error::Spec("caption must start with `a`".into()));
    }
    let color = lookup(&Color::ALL, &|c: Color| c.word(), it.next(), "color")?;
    let shape = lookup(&Shape::ALL, &|s: Shape| s.word(), it.next(), "shape")?;
    let (motion, speed) = match it.next() {
        Some("static") => (Motion::Static, 0),
        Some("moving") => {
            let m = lookup(&Motion::ALL[..4], &|m: Motion| m.word(), it.next(), "direction")?;
            if it.peek() == Some(&"quickly") {
                it.next();
                (m, 2)
            } else {
                (m, 1)
            }
        }
        other => return Err(Error::Spec(format!("expected `moving` or `static`, got {other:?}"))),
    };
    let background = match it.next() {
        None => Background::Black,
        Some("on") => lookup(&Background::ALL[1..], &|b: Background| b.word(), it.next(), "background")?,
        Some(w) => return Err(Error::Spec(format!("unexpected `{w}`"))),
    };
    if let Some(w) = it.next() {
        return Err(Error::Spec(format!("trailing `{w}`")));
    }
    Ok(SceneSpec {
        shape,
        color,
        motion,
        speed,
        background,
    })
}
