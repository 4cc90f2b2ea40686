use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset-level task identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Text2image,
    Img2imgDeblur,
    Image2depth,
    Depth2image,
    Semantic2image,
    Image2semantic,
    Faceid,
    Multiview,
    PoseEstimation,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Text2image,
        Task::Img2imgDeblur,
        Task::Image2depth,
        Task::Depth2image,
        Task::Semantic2image,
        Task::Image2semantic,
        Task::Faceid,
        Task::Multiview,
        Task::PoseEstimation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Text2image => "text2image",
            Task::Img2imgDeblur => "img2img_deblur",
            Task::Image2depth => "image2depth",
            Task::Depth2image => "depth2image",
            Task::Semantic2image => "semantic2image",
            Task::Image2semantic => "image2semantic",
            Task::Faceid => "faceid",
            Task::Multiview => "multiview",
            Task::PoseEstimation => "pose_estimation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task `{s}`")))
    }

    pub fn token(self) -> TaskToken {
        match self {
            Task::Text2image => TaskToken::Text2Image,
            Task::Img2imgDeblur => TaskToken::Img2Img,
            Task::Image2depth => TaskToken::Image2Depth,
            Task::Depth2image => TaskToken::Depth2Image,
            Task::Semantic2image => TaskToken::Semantic2Image,
            Task::Image2semantic => TaskToken::Image2Semantic,
            Task::Faceid => TaskToken::FaceId,
            Task::Multiview => TaskToken::Multiview,
            Task::PoseEstimation => TaskToken::Image2Rays,
        }
    }

    /// Tasks whose prompts carry color/class bindings.
    pub fn uses_bindings(self) -> bool {
        matches!(self, Task::Semantic2image | Task::Image2semantic)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskToken {
    Text2Image,
    Img2Img,
    Semantic2Image,
    Image2Semantic,
    Image2Depth,
    Depth2Image,
    FaceId,
    Multiview,
    Image2Rays,
}

impl TaskToken {
    const ALL: [TaskToken; 9] = [
        TaskToken::Text2Image,
        TaskToken::Img2Img,
        TaskToken::Semantic2Image,
        TaskToken::Image2Semantic,
        TaskToken::Image2Depth,
        TaskToken::Depth2Image,
        TaskToken::FaceId,
        TaskToken::Multiview,
        TaskToken::Image2Rays,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskToken::Text2Image => "[[text2image]]",
            TaskToken::Img2Img => "[[img2img]]",
            TaskToken::Semantic2Image => "[[semantic2image]]",
            TaskToken::Image2Semantic => "[[image2semantic]]",
            TaskToken::Image2Depth => "[[image2depth]]",
            TaskToken::Depth2Image => "[[depth2image]]",
            TaskToken::FaceId => "[[faceid]]",
            TaskToken::Multiview => "[[multiview]]",
            TaskToken::Image2Rays => "[[image2rays]]",
        }
    }
}

pub const COLOR_WORDS: [&str; 8] = [
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
];
pub const SHAPE_WORDS: [&str; 2] = ["sphere", "box"];
/// Semantic class names; class id `k` (1-based) is `CLASS_NAMES[k - 1]`.
pub const CLASS_NAMES: [&str; 8] = [
    "mouse", "cat", "dog", "bird", "fish", "frog", "horse", "owl",
];
pub const MAX_MARKERS: usize = 12;
const NULL_TOKEN: &str = "[[null]]";

/// A `<#RRGGBB class>` color/class binding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Binding {
    pub rgb: [u8; 3],
    pub class_name: String,
}

impl Binding {
    /// Parses `#RRGGBB` (case-insensitive) with a class name.
    pub fn new(hex: &str, class_name: &str) -> Result<Self> {
        let digits = hex.strip_prefix('#').unwrap_or(hex);
        if digits.len() != 6 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::invalid(format!("malformed hex color `{hex}`")));
        }
        let byte = |i: usize| u8::from_str_radix(&digits[i..i + 2], 16).expect("validated hex");
        Ok(Self {
            rgb: [byte(0), byte(2), byte(4)],
            class_name: class_name.to_string(),
        })
    }

    pub fn hex(&self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.rgb[0], self.rgb[1], self.rgb[2])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PromptToken {
    Null,
    Task(TaskToken),
    Binding(Binding),
    /// `[[imgK]]`, 1-based.
    Marker(usize),
    Word(String),
}

impl fmt::Display for PromptToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptToken::Null => f.write_str(NULL_TOKEN),
            PromptToken::Task(t) => f.write_str(t.as_str()),
            PromptToken::Binding(b) => write!(f, "<{} {}>", b.hex(), b.class_name),
            PromptToken::Marker(k) => write!(f, "[[img{k}]]"),
            PromptToken::Word(w) => f.write_str(w),
        }
    }
}

impl PromptToken {
    pub fn parse(s: &str) -> Result<Self> {
        if s == NULL_TOKEN {
            return Ok(PromptToken::Null);
        }
        if let Some(t) = TaskToken::ALL.into_iter().find(|t| t.as_str() == s) {
            return Ok(PromptToken::Task(t));
        }
        if let Some(k) = s
            .strip_prefix("[[img")
            .and_then(|r| r.strip_suffix("]]"))
            .and_then(|k| k.parse::<usize>().ok())
        {
            return Ok(PromptToken::Marker(k));
        }
        if let Some(inner) = s.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
            let (hex, class) = inner
                .split_once(' ')
                .ok_or_else(|| Error::invalid(format!("malformed binding `{s}`")))?;
            return Ok(PromptToken::Binding(Binding::new(hex, class)?));
        }
        if s.starts_with("[[") {
            return Err(Error::UnknownToken(s.to_string()));
        }
        Ok(PromptToken::Word(s.to_string()))
    }
}

/// Task token followed by bindings, image markers and caption words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskPrompt {
    pub tokens: Vec<PromptToken>,
}

impl TaskPrompt {
    /// The unconditional prompt used for classifier-free guidance.
    pub fn null() -> Self {
        Self {
            tokens: vec![PromptToken::Null],
        }
    }

    pub fn task_only(task: TaskToken) -> Self {
        Self {
            tokens: vec![PromptToken::Task(task)],
        }
    }

    pub fn is_null(&self) -> bool {
        self.tokens == [PromptToken::Null]
    }

    pub fn task_token(&self) -> Option<TaskToken> {
        match self.tokens.first() {
            Some(PromptToken::Task(t)) => Some(*t),
            _ => None,
        }
    }

    pub fn bindings(&self) -> impl Iterator<Item = &Binding> {
        self.tokens.iter().filter_map(|t| match t {
            PromptToken::Binding(b) => Some(b),
            _ => None,
        })
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            PromptToken::Word(w) => Some(w.as_str()),
            _ => None,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.to_string()).collect()
    }

    pub fn from_strings<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let tokens = tokens
            .iter()
            .map(|s| PromptToken::parse(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let prompt = Self { tokens };
        if !prompt.is_null() && prompt.task_token().is_none() {
            return Err(Error::invalid("prompt must start with a task token"));
        }
        Ok(prompt)
    }
}

impl fmt::Display for TaskPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_strings().join(" "))
    }
}

/// Assembles a prompt: task token, bindings, then either the caption words
/// (no condition images) or `[[img1]] caption1 [[img2]] caption2 …`.
pub fn build_prompt(
    task: Task,
    captions: &[Vec<String>],
    bindings: &[Binding],
    n_condition_images: usize,
) -> Result<TaskPrompt> {
    if task.uses_bindings() != !bindings.is_empty() {
        return Err(Error::invalid(format!(
            "task {task} {} color bindings",
            if task.uses_bindings() { "requires" } else { "does not take" }
        )));
    }
    if n_condition_images > MAX_MARKERS {
        return Err(Error::invalid(format!(
            "at most {MAX_MARKERS} image markers are supported"
        )));
    }
    let mut tokens = vec![PromptToken::Task(task.token())];
    tokens.extend(bindings.iter().cloned().map(PromptToken::Binding));
    let word = |w: &String| PromptToken::Word(w.clone());
    if n_condition_images == 0 {
        tokens.extend(captions.iter().flatten().map(word));
    } else {
        for k in 1..=n_condition_images {
            tokens.push(PromptToken::Marker(k));
            if let Some(c) = captions.get(k - 1) {
                tokens.extend(c.iter().map(word));
            }
        }
    }
    Ok(TaskPrompt { tokens })
}

/// The closed prompt vocabulary and its embedding-table layout.
///
/// Bindings share the table row of their class name and are told apart by a
/// feature vector `(r, g, b, 1)`; every other token has all-zero features.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vocabulary;

pub const TOKEN_FEATURES: usize = 4;

impl Vocabulary {
    pub fn len() -> usize {
        1 + TaskToken::ALL.len() + MAX_MARKERS + COLOR_WORDS.len() + SHAPE_WORDS.len() + CLASS_NAMES.len()
    }

    pub fn index(token: &PromptToken) -> Result<usize> {
        let tasks = 1;
        let markers = tasks + TaskToken::ALL.len();
        let words = markers + MAX_MARKERS;
        match token {
            PromptToken::Null => Ok(0),
            PromptToken::Task(t) => Ok(tasks + TaskToken::ALL.iter().position(|x| x == t).expect("task")),
            PromptToken::Marker(k) if (1..=MAX_MARKERS).contains(k) => Ok(markers + k - 1),
            PromptToken::Marker(_) => Err(Error::UnknownToken(token.to_string())),
            PromptToken::Binding(b) => Self::word_index(&b.class_name, words)
                .filter(|&i| i >= words + COLOR_WORDS.len() + SHAPE_WORDS.len())
                .ok_or_else(|| Error::UnknownToken(token.to_string())),
            PromptToken::Word(w) => {
                Self::word_index(w, words).ok_or_else(|| Error::UnknownToken(w.clone()))
            }
        }
    }

    fn word_index(w: &str, base: usize) -> Option<usize> {
        COLOR_WORDS
            .iter()
            .chain(SHAPE_WORDS.iter())
            .chain(CLASS_NAMES.iter())
            .position(|x| *x == w)
            .map(|i| base + i)
    }

    pub fn features(token: &PromptToken) -> [f64; TOKEN_FEATURES] {
        match token {
            PromptToken::Binding(b) => [
                b.rgb[0] as f64 / 255.0,
                b.rgb[1] as f64 / 255.0,
                b.rgb[2] as f64 / 255.0,
                1.0,
            ],
            _ => [0.0; TOKEN_FEATURES],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn text2image_prompt() {
        let p = build_prompt(Task::Text2image, &[words("red sphere")], &[], 0).unwrap();
        assert_eq!(p.to_strings(), vec!["[[text2image]]", "red", "sphere"]);
    }

    #[test]
    fn semantic_binding_rendering() {
        let b = Binding::new("#ffff00", "mouse").unwrap();
        let p = build_prompt(Task::Semantic2image, &[words("yellow sphere")], &[b], 0).unwrap();
        assert!(p.to_strings().contains(&"<#FFFF00 mouse>".to_string()));
        assert!(Binding::new("#FFF00", "mouse").is_err());
        assert!(Binding::new("#GGFF00", "mouse").is_err());
        assert!(build_prompt(Task::Semantic2image, &[], &[], 0).is_err());
        let b = Binding::new("#00FF00", "cat").unwrap();
        assert!(build_prompt(Task::Text2image, &[], &[b], 0).is_err());
    }

    #[test]
    fn faceid_markers_once_each() {
        let p = build_prompt(Task::Faceid, &[words("red box"), words("blue sphere")], &[], 2).unwrap();
        let s = p.to_strings();
        assert_eq!(s.iter().filter(|t| *t == "[[img1]]").count(), 1);
        assert_eq!(s.iter().filter(|t| *t == "[[img2]]").count(), 1);
        assert_eq!(s[0], "[[faceid]]");
        assert_eq!(s, vec!["[[faceid]]", "[[img1]]", "red", "box", "[[img2]]", "blue", "sphere"]);
    }

    #[test]
    fn string_round_trip_and_vocab() {
        let b = Binding::new("#12abEF", "owl").unwrap();
        let p = build_prompt(Task::Image2semantic, &[words("cyan box")], &[b], 0).unwrap();
        let back = TaskPrompt::from_strings(&p.to_strings()).unwrap();
        assert_eq!(back, p);
        for t in &p.tokens {
            assert!(Vocabulary::index(t).unwrap() < Vocabulary::len());
        }
        assert!(matches!(
            Vocabulary::index(&PromptToken::Word("zebra".into())),
            Err(Error::UnknownToken(_))
        ));
        assert!(Vocabulary::index(&PromptToken::Marker(13)).is_err());
        let bad = PromptToken::Binding(Binding::new("#000000", "red").unwrap());
        assert!(Vocabulary::index(&bad).is_err());
        assert!(TaskPrompt::from_strings(&["red"]).is_err());
        assert!(matches!(PromptToken::parse("[[bogus]]"), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn prompt_building_is_injective() {
        let b1 = Binding::new("#FF0000", "cat").unwrap();
        let b2 = Binding::new("#00FF00", "cat").unwrap();
        let mut seen = HashSet::new();
        let mut count = 0;
        for task in Task::ALL {
            let binds: Vec<Vec<Binding>> = if task.uses_bindings() {
                vec![vec![b1.clone()], vec![b2.clone()], vec![b1.clone(), b2.clone()]]
            } else {
                vec![vec![]]
            };
            for b in binds {
                for n in 0..4 {
                    let p = build_prompt(task, &[], &b, n).unwrap();
                    seen.insert(p.to_strings());
                    count += 1;
                }
            }
        }
        assert_eq!(seen.len(), count);
    }
}
