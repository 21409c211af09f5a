//! Pages, labels, streams and segments, plus the deterministic decoding
//! from per-page labels to a segmentation.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Page-level class. The discriminant is the class id used by the loss and
/// the metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PageLabel {
    Cover = 0,
    Advertisement = 1,
    Story = 2,
    TextStory = 3,
    FirstPage = 4,
}

pub const NUM_CLASSES: usize = 5;

impl PageLabel {
    pub const ALL: [PageLabel; NUM_CLASSES] = [
        PageLabel::Cover,
        PageLabel::Advertisement,
        PageLabel::Story,
        PageLabel::TextStory,
        PageLabel::FirstPage,
    ];

    #[inline]
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PageLabel::Cover => "cover",
            PageLabel::Advertisement => "advertisement",
            PageLabel::Story => "story",
            PageLabel::TextStory => "textstory",
            PageLabel::FirstPage => "firstpage",
        }
    }

    /// Segment category this page belongs to; first pages fold into stories.
    pub fn category(self) -> SegmentCategory {
        match self {
            PageLabel::Cover => SegmentCategory::Cover,
            PageLabel::Advertisement => SegmentCategory::Advertisement,
            PageLabel::Story | PageLabel::FirstPage => SegmentCategory::Story,
            PageLabel::TextStory => SegmentCategory::TextStory,
        }
    }
}

impl fmt::Display for PageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PageLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentCategory {
    Cover,
    Advertisement,
    Story,
    TextStory,
}

impl SegmentCategory {
    pub const ALL: [SegmentCategory; 4] = [
        SegmentCategory::Cover,
        SegmentCategory::Advertisement,
        SegmentCategory::Story,
        SegmentCategory::TextStory,
    ];
}

/// Contiguous page interval `[start, end]` (both inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub category: SegmentCategory,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(category: SegmentCategory, start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Segment {
            category,
            start,
            end,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of pages shared with `other`.
    #[inline]
    pub fn overlap(&self, other: &Segment) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo <= hi {
            hi - lo + 1
        } else {
            0
        }
    }
}

/// Splits a label sequence into segments.
///
/// A new segment opens at page `k > 0` when the category changes from page
/// `k − 1` or when page `k` is a first page. Never fails on a non-empty
/// input, so any model output is decodable.
pub fn decode_segments(labels: &[PageLabel]) -> Result<Vec<Segment>> {
    let (&first, rest) = labels.split_first().ok_or(Error::EmptyStream)?;
    let mut segments = Vec::new();
    let mut current = Segment::new(first.category(), 0, 0);
    for (offset, &label) in rest.iter().enumerate() {
        let k = offset + 1;
        if label == PageLabel::FirstPage || label.category() != current.category {
            segments.push(current);
            current = Segment::new(label.category(), k, k);
        } else {
            current.end = k;
        }
    }
    segments.push(current);
    Ok(segments)
}

/// Checks that `segments` are sorted, non-overlapping and gap-free from
/// page 0. Returns the page count.
pub fn validate_partition(segments: &[Segment]) -> Result<usize> {
    let mut next = 0;
    for (i, s) in segments.iter().enumerate() {
        if s.start > s.end {
            return Err(Error::InvalidPartition(format!("segment {i} has start > end")));
        }
        if s.start != next {
            return Err(Error::InvalidPartition(format!(
                "segment {i} starts at {} but page {next} is next",
                s.start
            )));
        }
        next = s.end + 1;
    }
    Ok(next)
}

/// Inverse of [`decode_segments`]: story segments open with a first page,
/// every other category labels all its pages with itself.
///
/// Adjacent non-story segments of the same category are rejected as well,
/// since no label sequence decodes to them.
pub fn encode_labels(segments: &[Segment]) -> Result<Vec<PageLabel>> {
    let n = validate_partition(segments)?;
    let mut labels = Vec::with_capacity(n);
    let mut prev: Option<SegmentCategory> = None;
    for s in segments {
        if prev == Some(s.category) && s.category != SegmentCategory::Story {
            return Err(Error::InvalidPartition(format!(
                "adjacent {:?} segments at page {} cannot be distinguished",
                s.category, s.start
            )));
        }
        prev = Some(s.category);
        let (head, body) = match s.category {
            SegmentCategory::Cover => (PageLabel::Cover, PageLabel::Cover),
            SegmentCategory::Advertisement => (PageLabel::Advertisement, PageLabel::Advertisement),
            SegmentCategory::Story => (PageLabel::FirstPage, PageLabel::Story),
            SegmentCategory::TextStory => (PageLabel::TextStory, PageLabel::TextStory),
        };
        labels.push(head);
        labels.extend(std::iter::repeat(body).take(s.len() - 1));
    }
    Ok(labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vis_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_key: Option<String>,
    #[serde(default, rename = "label", skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<PageLabel>,
}

/// One book: an ordered, non-empty list of pages with `pages[k].index == k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageStream {
    pub book_id: String,
    pub pages: Vec<Page>,
}

impl PageStream {
    pub fn validate(&self) -> Result<()> {
        let err = |reason: String| Error::InvalidStream {
            book_id: self.book_id.clone(),
            reason,
        };
        if self.pages.is_empty() {
            return Err(err("no pages".into()));
        }
        for (k, p) in self.pages.iter().enumerate() {
            if p.index != k {
                return Err(err(format!("page {} has index {}, expected {k}", p.page_id, p.index)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// Gold labels of every page; errors if any page is unlabeled.
    pub fn gold_labels(&self) -> Result<Vec<PageLabel>> {
        self.pages
            .iter()
            .map(|p| {
                p.gold_label.ok_or_else(|| Error::Page {
                    book_id: self.book_id.clone(),
                    page_id: p.page_id.clone(),
                    reason: "missing gold label".into(),
                })
            })
            .collect()
    }
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a manifest (one JSON book record per line) and validates every stream.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PageStream>> {
    let streams: Vec<PageStream> = read_jsonl(path.as_ref())?;
    for s in &streams {
        s.validate()?;
    }
    Ok(streams)
}

pub fn write_manifest(path: impl AsRef<Path>, streams: &[PageStream]) -> Result<()> {
    write_jsonl(path.as_ref(), streams)
}

/// One line of a page label file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageLabelRecord {
    pub book_id: String,
    pub page_id: String,
    pub label: PageLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f32>>,
}

/// Labels of one book, in page order.
#[derive(Clone, Debug, PartialEq)]
pub struct BookLabels {
    pub book_id: String,
    pub page_ids: Vec<String>,
    pub labels: Vec<PageLabel>,
}

impl BookLabels {
    pub fn from_stream(stream: &PageStream) -> Result<Self> {
        Ok(BookLabels {
            book_id: stream.book_id.clone(),
            page_ids: stream.pages.iter().map(|p| p.page_id.clone()).collect(),
            labels: stream.gold_labels()?,
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelLine {
    Book(PageStream),
    Page(PageLabelRecord),
}

/// Reads per-book labels from either a manifest with gold labels or a page
/// label file. Pages of a book must be contiguous in a label file.
pub fn read_book_labels(path: impl AsRef<Path>) -> Result<Vec<BookLabels>> {
    let lines: Vec<LabelLine> = read_jsonl(path.as_ref())?;
    let mut books: Vec<BookLabels> = Vec::new();
    for line in lines {
        match line {
            LabelLine::Book(stream) => {
                stream.validate()?;
                books.push(BookLabels::from_stream(&stream)?);
            }
            LabelLine::Page(rec) => match books.last_mut() {
                Some(b) if b.book_id == rec.book_id => {
                    b.page_ids.push(rec.page_id);
                    b.labels.push(rec.label);
                }
                _ => {
                    if books.iter().any(|b| b.book_id == rec.book_id) {
                        return Err(Error::BookMismatch(format!(
                            "pages of book {} are not contiguous",
                            rec.book_id
                        )));
                    }
                    books.push(BookLabels {
                        book_id: rec.book_id,
                        page_ids: vec![rec.page_id],
                        labels: vec![rec.label],
                    });
                }
            },
        }
    }
    Ok(books)
}

pub fn write_page_labels(path: impl AsRef<Path>, records: &[PageLabelRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

/// One line of a segment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BookSegments {
    pub book_id: String,
    pub segments: Vec<Segment>,
}

pub fn write_segments(path: impl AsRef<Path>, books: &[BookSegments]) -> Result<()> {
    write_jsonl(path.as_ref(), books)
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<BookSegments>> {
    let books: Vec<BookSegments> = read_jsonl(path.as_ref())?;
    for b in &books {
        validate_partition(&b.segments)?;
    }
    Ok(books)
}
