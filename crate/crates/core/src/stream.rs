//! Reading ingestion, tumbling-window segmentation and history-based data
//! completion.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{BodyLayout, CountMatrix, DataSegment, PipelineConfig, TagReading};

/// A parsed log line: the reading plus its optional training label.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub reading: TagReading,
    pub label: Option<String>,
}

/// Parses `timestamp_ms,antenna_id,tag_id,rss_dbm[,label]`.
///
/// `line_no` is 1-based and only used for error messages.
pub fn parse_reading(line: &str, line_no: usize, layout: &BodyLayout) -> Result<Record> {
    let err = |field: &'static str, message: String| Error::Parse {
        line: line_no,
        field,
        message,
    };
    let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    if !(4..=5).contains(&fields.len()) {
        return Err(err("record", format!("expected 4 or 5 fields, found {}", fields.len())));
    }
    let timestamp_ms: i64 = fields[0]
        .trim()
        .parse()
        .map_err(|_| err("timestamp_ms", format!("`{}` is not an integer", fields[0])))?;
    let antenna_id: usize = fields[1]
        .trim()
        .parse()
        .map_err(|_| err("antenna_id", format!("`{}` is not an index", fields[1])))?;
    let tag_id: usize = fields[2]
        .trim()
        .parse()
        .map_err(|_| err("tag_id", format!("`{}` is not an index", fields[2])))?;
    let rss_dbm: f64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| err("rss_dbm", format!("`{}` is not a number", fields[3])))?;
    let reading = TagReading::new(timestamp_ms, antenna_id, tag_id, rss_dbm);
    if let Err(field) = layout.validate_reading(&reading) {
        let message = match field {
            "antenna_id" => format!("antenna {antenna_id} out of range 0..{}", layout.num_antennas()),
            "tag_id" => format!("tag {tag_id} out of range 0..{}", layout.num_tags()),
            _ => format!("{rss_dbm} dBm outside [-95, 0]"),
        };
        return Err(err(field, message));
    }
    let label = match fields.get(4).map(|l| l.trim()) {
        Some("") => return Err(err("label", "empty label".into())),
        Some(l) => Some(l.to_string()),
        None => None,
    };
    Ok(Record { reading, label })
}

pub fn format_reading(r: &TagReading, label: Option<&str>) -> String {
    match label {
        Some(l) => format!("{},{},{},{},{}", r.timestamp_ms, r.antenna_id, r.tag_id, r.rss_dbm, l),
        None => format!("{},{},{},{}", r.timestamp_ms, r.antenna_id, r.tag_id, r.rss_dbm),
    }
}

/// Iterator over the records of a reading log, skipping blank and `#` lines.
pub struct RecordReader<'a, R> {
    lines: io::Lines<R>,
    line_no: usize,
    layout: &'a BodyLayout,
}

impl<'a, R: BufRead> RecordReader<'a, R> {
    pub fn new(reader: R, layout: &'a BodyLayout) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            layout,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<'_, R> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some(parse_reading(trimmed, self.line_no, self.layout));
        }
    }
}

/// Reads a whole log into memory, checking time order.
pub fn read_records<R: BufRead>(reader: R, layout: &BodyLayout) -> Result<Vec<Record>> {
    let mut records = RecordReader::new(reader, layout);
    let mut out: Vec<Record> = Vec::new();
    while let Some(rec) = records.next() {
        let rec = rec?;
        if let Some(prev) = out.last() {
            if rec.reading.timestamp_ms < prev.reading.timestamp_ms {
                return Err(Error::StreamOrder {
                    line: records.line_no,
                    timestamp_ms: rec.reading.timestamp_ms,
                    previous_ms: prev.reading.timestamp_ms,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Where live readings come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    File(PathBuf),
    Stdin,
    /// Listen on the port and read from the first accepted connection.
    Tcp(u16),
}

impl FromStr for InputSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" || s == "stdin" {
            return Ok(InputSource::Stdin);
        }
        if let Some(port) = s.strip_prefix("tcp:") {
            return port
                .parse()
                .map(InputSource::Tcp)
                .map_err(|_| format!("invalid TCP port `{port}`"));
        }
        Ok(InputSource::File(PathBuf::from(s)))
    }
}

impl InputSource {
    pub fn open(&self) -> Result<Box<dyn BufRead>> {
        Ok(match self {
            InputSource::File(path) => Box::new(BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?)),
            InputSource::Stdin => Box::new(BufReader::new(io::stdin())),
            InputSource::Tcp(port) => {
                let listener = TcpListener::bind(("0.0.0.0", *port))?;
                let (stream, _) = listener.accept()?;
                Box::new(BufReader::new(stream))
            }
        })
    }
}

/// Incremental tumbling-window segmenter.
///
/// Windows are `[k·L, (k+1)·L)` in trace time. Empty windows between two
/// readings are emitted so the history clock keeps advancing.
#[derive(Debug)]
pub struct Segmenter {
    window_len_ms: i64,
    open: Option<DataSegment>,
    last_ts: Option<i64>,
    pushed: usize,
}

impl Segmenter {
    pub fn new(window_len_ms: i64) -> Self {
        assert!(window_len_ms > 0, "window length must be positive");
        Self {
            window_len_ms,
            open: None,
            last_ts: None,
            pushed: 0,
        }
    }

    pub fn window_len_ms(&self) -> i64 {
        self.window_len_ms
    }

    fn window_start(&self, ts: i64) -> i64 {
        ts.div_euclid(self.window_len_ms) * self.window_len_ms
    }

    /// Adds a reading; returns the windows it closed, oldest first.
    pub fn push(&mut self, reading: TagReading) -> Result<Vec<DataSegment>> {
        self.pushed += 1;
        if let Some(prev) = self.last_ts {
            if reading.timestamp_ms < prev {
                return Err(Error::StreamOrder {
                    line: self.pushed,
                    timestamp_ms: reading.timestamp_ms,
                    previous_ms: prev,
                });
            }
        }
        self.last_ts = Some(reading.timestamp_ms);
        let start = self.window_start(reading.timestamp_ms);
        let mut closed = Vec::new();
        match self.open.take() {
            None => self.open = Some(DataSegment::empty(start, self.window_len_ms)),
            Some(seg) if seg.window_start_ms == start => self.open = Some(seg),
            Some(seg) => {
                let mut next = seg.window_start_ms + self.window_len_ms;
                closed.push(finalize(seg));
                while next < start {
                    closed.push(DataSegment::empty(next, self.window_len_ms));
                    next += self.window_len_ms;
                }
                self.open = Some(DataSegment::empty(start, self.window_len_ms));
            }
        }
        self.open.as_mut().expect("window open").readings.push(reading);
        Ok(closed)
    }

    /// Closes every window up to (excluding) the one containing `now_ms`.
    /// Lets a live source close windows on wall-clock time without readings.
    pub fn advance_to(&mut self, now_ms: i64) -> Vec<DataSegment> {
        let start = self.window_start(now_ms);
        let mut closed = Vec::new();
        if let Some(seg) = self.open.take() {
            if seg.window_start_ms >= start {
                self.open = Some(seg);
                return closed;
            }
            let mut next = seg.window_start_ms + self.window_len_ms;
            closed.push(finalize(seg));
            while next < start {
                closed.push(DataSegment::empty(next, self.window_len_ms));
                next += self.window_len_ms;
            }
            self.open = Some(DataSegment::empty(start, self.window_len_ms));
        }
        closed
    }

    /// Flushes the final, possibly partial, window.
    pub fn finish(&mut self) -> Option<DataSegment> {
        self.open.take().map(finalize)
    }
}

fn finalize(mut seg: DataSegment) -> DataSegment {
    seg.readings.sort_by_key(TagReading::sort_key);
    seg
}

/// Cuts a time-ordered reading sequence into tumbling windows of `window_len_ms`.
pub fn segment_stream(readings: &[TagReading], window_len_ms: i64) -> Result<Vec<DataSegment>> {
    let mut seg = Segmenter::new(window_len_ms);
    let mut out = Vec::new();
    for r in readings {
        out.extend(seg.push(*r)?);
    }
    out.extend(seg.finish());
    Ok(out)
}

pub fn count_matrix(seg: &DataSegment, layout: &BodyLayout) -> CountMatrix {
    let mut counts = CountMatrix::zeros(layout.num_antennas(), layout.num_tags());
    for r in &seg.readings {
        counts.increment(r.antenna_id, r.tag_id);
    }
    counts
}

/// Share of the current segment's tag counts matched by the historical one:
/// `Σ min(cur, hist) / Σ cur`. Zero when the current segment is empty.
pub fn overlap_counts(current: &CountMatrix, hist: &CountMatrix) -> f64 {
    debug_assert_eq!(current.shape(), hist.shape());
    let total = current.total();
    if total == 0 {
        return 0.0;
    }
    let shared: u64 = current
        .as_slice()
        .iter()
        .zip(hist.as_slice())
        .map(|(&c, &h)| c.min(h) as u64)
        .sum();
    shared as f64 / total as f64
}

pub fn overlap(current: &DataSegment, hist: &DataSegment, layout: &BodyLayout) -> f64 {
    overlap_counts(&count_matrix(current, layout), &count_matrix(hist, layout))
}

/// The most recent raw segments, oldest first.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    capacity: usize,
    segments: VecDeque<DataSegment>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            segments: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn for_config(config: &PipelineConfig) -> Self {
        Self::new(config.history_capacity())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `n = 1` is the most recent segment.
    pub fn nth_back(&self, n: usize) -> Option<&DataSegment> {
        self.segments.len().checked_sub(n).map(|i| &self.segments[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataSegment> {
        self.segments.iter()
    }

    pub fn clear(&mut self) {
        self.segments.clear();
    }
}

/// Appends the raw segment of the window just closed, evicting the oldest
/// beyond capacity.
pub fn push_history(buffer: &mut HistoryBuffer, raw_seg: DataSegment) {
    if buffer.capacity == 0 {
        return;
    }
    buffer.segments.push_back(raw_seg);
    while buffer.segments.len() > buffer.capacity {
        buffer.segments.pop_front();
    }
}

/// Fills false negatives in `current` from recent history.
///
/// Walks back through the buffer from the newest window. While the overlap
/// between the (growing) current segment and the history window is below
/// `threshold`, that window's readings are prepended. Stops at the first
/// window that overlaps enough or when the buffer runs out. Windows already
/// listed in `completed_from` are not appended twice.
pub fn complete(current: &DataSegment, buffer: &HistoryBuffer, threshold: f64, layout: &BodyLayout) -> DataSegment {
    let mut out = current.clone();
    let mut counts = count_matrix(&out, layout);
    for n in 1..=buffer.len() {
        let hist = buffer.nth_back(n).expect("n within buffer");
        if hist.window_start_ms >= current.window_start_ms {
            continue;
        }
        if out.completed_from.iter().any(|&(s, _)| s == hist.window_start_ms) {
            continue;
        }
        let hist_counts = count_matrix(hist, layout);
        if overlap_counts(&counts, &hist_counts) >= threshold {
            break;
        }
        let mut merged = Vec::with_capacity(hist.readings.len() + out.readings.len());
        merged.extend_from_slice(&hist.readings);
        merged.append(&mut out.readings);
        out.readings = merged;
        for r in &hist.readings {
            counts.increment(r.antenna_id, r.tag_id);
        }
        out.completed_from.push((hist.window_start_ms, hist.readings.len()));
    }
    out
}

/// Completion with its own history: feed raw windows in order, get
/// completed windows back.
#[derive(Debug, Clone)]
pub struct Completer {
    history: HistoryBuffer,
    threshold: f64,
    enabled: bool,
}

impl Completer {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            history: HistoryBuffer::for_config(config),
            threshold: config.overlap_threshold,
            enabled: config.completion,
        }
    }

    pub fn process(&mut self, raw: DataSegment, layout: &BodyLayout) -> DataSegment {
        let out = if self.enabled {
            complete(&raw, &self.history, self.threshold, layout)
        } else {
            raw.clone()
        };
        push_history(&mut self.history, raw);
        out
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> BodyLayout {
        BodyLayout::default_layout()
    }

    fn r(ts: i64, a: usize, t: usize) -> TagReading {
        TagReading::new(ts, a, t, -60.0)
    }

    fn seg(start: i64, readings: Vec<TagReading>) -> DataSegment {
        DataSegment {
            window_start_ms: start,
            window_len_ms: 5000,
            readings,
            completed_from: Vec::new(),
        }
    }

    #[test]
    fn parse_plain_and_labelled() {
        let l = layout();
        let rec = parse_reading("12000,1,17,-54.5", 1, &l).unwrap();
        assert_eq!(rec.reading, TagReading::new(12000, 1, 17, -54.5));
        assert_eq!(rec.label, None);
        let rec = parse_reading("0,0,0,-95.0,walking", 2, &l).unwrap();
        assert_eq!(rec.reading.rss_dbm, -95.0);
        assert_eq!(rec.label.as_deref(), Some("walking"));
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let l = layout();
        let cases = [
            ("5,4,0,-50", "antenna_id"),
            ("5,0,36,-50", "tag_id"),
            ("5,0,0,-95.5", "rss_dbm"),
            ("5,0,0,3", "rss_dbm"),
            ("x,0,0,-50", "timestamp_ms"),
            ("5,0,0,abc", "rss_dbm"),
            ("5,0,0", "record"),
            ("5,0,0,-50,a,b", "record"),
        ];
        for (line, want) in cases {
            match parse_reading(line, 7, &l) {
                Err(Error::Parse { line: 7, field, .. }) => assert_eq!(field, want, "{line}"),
                other => panic!("{line}: {other:?}"),
            }
        }
    }

    #[test]
    fn reader_skips_comments_and_checks_order() {
        let l = layout();
        let text = "# header\n100,0,1,-50\n\n200,1,2,-60,sitting\n";
        let recs = read_records(text.as_bytes(), &l).unwrap();
        assert_eq!(recs.len(), 2);
        let bad = "200,0,1,-50\n100,0,1,-50\n";
        assert!(matches!(
            read_records(bad.as_bytes(), &l),
            Err(Error::StreamOrder { .. })
        ));
    }

    #[test]
    fn input_source_parsing() {
        assert_eq!("-".parse::<InputSource>().unwrap(), InputSource::Stdin);
        assert_eq!("tcp:7070".parse::<InputSource>().unwrap(), InputSource::Tcp(7070));
        assert!("tcp:x".parse::<InputSource>().is_err());
        assert_eq!(
            "trace.csv".parse::<InputSource>().unwrap(),
            InputSource::File("trace.csv".into())
        );
    }

    #[test]
    fn half_open_window_boundaries() {
        let segs = segment_stream(&[r(100, 0, 0), r(4900, 0, 0), r(5000, 0, 0)], 5000).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].window_start_ms, segs[0].len()), (0, 2));
        assert_eq!((segs[1].window_start_ms, segs[1].len()), (5000, 1));
    }

    #[test]
    fn empty_input_gives_no_segments() {
        assert!(segment_stream(&[], 5000).unwrap().is_empty());
    }

    #[test]
    fn sixty_second_trace_gives_twelve_windows() {
        let readings: Vec<_> = (0..600).map(|i| r(i * 100, 0, 0)).collect();
        assert_eq!(segment_stream(&readings, 5000).unwrap().len(), 12);
    }

    #[test]
    fn gaps_emit_empty_windows() {
        let segs = segment_stream(&[r(0, 0, 0), r(16_000, 0, 0)], 5000).unwrap();
        let starts: Vec<_> = segs.iter().map(|s| s.window_start_ms).collect();
        assert_eq!(starts, vec![0, 5000, 10_000, 15_000]);
        assert!(segs[1].is_empty() && segs[2].is_empty());
    }

    #[test]
    fn regression_is_an_error() {
        assert!(matches!(
            segment_stream(&[r(10, 0, 0), r(9, 0, 0)], 5000),
            Err(Error::StreamOrder { .. })
        ));
    }

    #[test]
    fn equal_timestamps_sorted_by_ids() {
        let segs = segment_stream(&[r(10, 2, 3), r(10, 1, 5), r(10, 1, 4)], 5000).unwrap();
        let keys: Vec<_> = segs[0].readings.iter().map(|x| (x.antenna_id, x.tag_id)).collect();
        assert_eq!(keys, vec![(1, 4), (1, 5), (2, 3)]);
    }

    #[test]
    fn advance_to_closes_idle_windows() {
        let mut s = Segmenter::new(1000);
        assert!(s.push(r(100, 0, 0)).unwrap().is_empty());
        assert!(s.advance_to(900).is_empty());
        let closed = s.advance_to(3500);
        assert_eq!(closed.len(), 3);
        assert_eq!(closed[0].len(), 1);
    }

    #[test]
    fn counts() {
        let l = layout();
        let s = seg(0, vec![r(1, 0, 5), r(2, 0, 5), r(3, 0, 7)]);
        let c = count_matrix(&s, &l);
        assert_eq!((c.get(0, 5), c.get(0, 7), c.get(1, 5)), (2, 1, 0));
        assert_eq!(c.total(), 3);
        assert_eq!(count_matrix(&seg(0, vec![]), &l).total(), 0);
    }

    #[test]
    fn overlap_hand_values() {
        let l = layout();
        let cur = seg(5000, vec![r(5001, 0, 5), r(5002, 0, 5), r(5003, 0, 7)]);
        let hist = seg(0, vec![r(1, 0, 5), r(2, 0, 7), r(3, 0, 7), r(4, 0, 7)]);
        assert_eq!(overlap(&cur, &hist, &l), 2.0 / 3.0);
        assert_eq!(overlap(&cur, &cur, &l), 1.0);
        let disjoint = seg(0, vec![r(1, 3, 1)]);
        assert_eq!(overlap(&cur, &disjoint, &l), 0.0);
        assert_eq!(overlap(&seg(0, vec![]), &hist, &l), 0.0);
    }

    #[test]
    fn history_capacity_and_eviction() {
        let mut h = HistoryBuffer::for_config(&PipelineConfig::default());
        assert_eq!(h.capacity(), 4);
        for i in 0..5 {
            push_history(&mut h, seg(i * 5000, vec![]));
        }
        assert_eq!(h.len(), 4);
        assert_eq!(h.nth_back(4).unwrap().window_start_ms, 5000);
        assert_eq!(h.nth_back(1).unwrap().window_start_ms, 20_000);
    }

    #[test]
    fn completion_restores_missing_antennas() {
        let l = layout();
        let sorted = |mut v: Vec<TagReading>| {
            v.sort_by_key(TagReading::sort_key);
            v
        };
        let cur = seg(
            5000,
            sorted((0..36).flat_map(|t| [r(6000, 2, t), r(8000, 3, t)]).collect()),
        );
        let prev = seg(
            0,
            sorted((0..36).flat_map(|t| [r(1000, 0, t), r(3000, 1, t)]).collect()),
        );
        let mut h = HistoryBuffer::new(4);
        push_history(&mut h, prev);
        let done = complete(&cur, &h, 0.7, &l);
        let mut antennas: Vec<_> = done.readings.iter().map(|x| x.antenna_id).collect();
        antennas.sort();
        antennas.dedup();
        assert_eq!(antennas, vec![0, 1, 2, 3]);
        assert_eq!(done.completed_from, vec![(0, 72)]);
        assert!(done.readings.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
        assert_eq!(done.native_readings().count(), 72);
    }

    #[test]
    fn completion_gate_closed_on_identical_history() {
        let l = layout();
        let cur = seg(5000, vec![r(5001, 0, 5), r(5002, 1, 6)]);
        let prev = seg(0, vec![r(1, 0, 5), r(2, 1, 6)]);
        let mut h = HistoryBuffer::new(4);
        push_history(&mut h, prev);
        let done = complete(&cur, &h, 0.7, &l);
        assert_eq!(done, cur);
    }

    #[test]
    fn completion_with_empty_buffer_is_identity() {
        let l = layout();
        let cur = seg(5000, vec![r(5001, 0, 5)]);
        assert_eq!(complete(&cur, &HistoryBuffer::new(4), 0.7, &l), cur);
    }

    #[test]
    fn completer_keeps_raw_history() {
        let l = layout();
        let mut c = Completer::new(&PipelineConfig::default());
        let first = c.process(seg(0, vec![r(1, 0, 0)]), &l);
        assert!(!first.is_completed());
        let second = c.process(seg(5000, vec![r(5001, 1, 1)]), &l);
        assert_eq!(second.completed_from, vec![(0, 1)]);
        // history must hold the raw second window, not the completed one
        assert_eq!(c.history().nth_back(1).unwrap().len(), 1);
    }

    #[test]
    fn out_of_order_reports_file_line() {
        let log = "# header\n1000,0,0,-60\n\n900,0,1,-61\n";
        match read_records(log.as_bytes(), &layout()) {
            Err(Error::StreamOrder {
                line,
                timestamp_ms,
                previous_ms,
            }) => {
                assert_eq!((line, timestamp_ms, previous_ms), (4, 900, 1000));
            }
            other => panic!("{other:?}"),
        }
    }
}
