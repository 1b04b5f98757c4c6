//! Line-oriented text trace of device commands.
//!
//! ```text
//! # fasim-trace 1
//! # geometry total_blocks=128 pages_per_block=512 page_size=4096 channels=8 op_fraction=0.1
//! # ftl reserve_threshold=10 striping=per-channel read_us=50 program_us=600 erase_us=3000
//! # window_pages=920
//! 1 flashalloc 0 0 0+512
//! 2 write 0 0 0 64 1
//! 3 trim 0 0 0 512
//! # end 3
//! ```
//!
//! Record fields are `seq op stream tenant` followed by `lba len content_base`
//! for writes, `lba len` for trims and a comma-separated `lba+len` chunk list
//! for flashalloc. The `# end N` footer makes truncation detectable.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::flashalloc::Chunk;
use crate::ftl::{FtlConfig, Striping};
use crate::host::{Command, IssuedCommand};
use crate::media::Geometry;
use crate::metrics::CostModel;

pub const MAGIC: &str = "# fasim-trace 1";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub geometry: Geometry,
    pub ftl: FtlConfig,
    pub window_pages: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<IssuedCommand>,
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("trace line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("trace read failed: {0}")]
    Io(#[from] io::Error),
}

fn syntax(line: usize, msg: impl Into<String>) -> TraceParseError {
    TraceParseError::Syntax { line, msg: msg.into() }
}

pub struct TraceWriter<W: Write> {
    out: W,
    records: u64,
    last_seq: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: &TraceHeader) -> io::Result<Self> {
        let g = &header.geometry;
        let f = &header.ftl;
        writeln!(out, "{MAGIC}")?;
        writeln!(
            out,
            "# geometry total_blocks={} pages_per_block={} page_size={} channels={} op_fraction={}",
            g.total_blocks, g.pages_per_block, g.page_size, g.channels, g.op_fraction
        )?;
        let striping = match f.striping {
            Striping::PerChannel => "per-channel",
            Striping::SingleFrontier => "single-frontier",
        };
        writeln!(
            out,
            "# ftl reserve_threshold={} striping={striping} read_us={} program_us={} erase_us={}",
            f.reserve_threshold, f.cost.read_us, f.cost.program_us, f.cost.erase_us
        )?;
        writeln!(out, "# window_pages={}", header.window_pages)?;
        Ok(TraceWriter { out, records: 0, last_seq: 0 })
    }

    pub fn record(&mut self, cmd: &IssuedCommand) -> io::Result<()> {
        debug_assert!(cmd.seq > self.last_seq, "trace seq must increase");
        self.last_seq = cmd.seq;
        self.records += 1;
        write!(self.out, "{} ", cmd.seq)?;
        match &cmd.command {
            Command::Write { lba, len, content_base } => writeln!(
                self.out,
                "write {} {} {lba} {len} {content_base}",
                cmd.stream_id, cmd.tenant_id
            ),
            Command::Trim { lba, len } => {
                writeln!(self.out, "trim {} {} {lba} {len}", cmd.stream_id, cmd.tenant_id)
            }
            Command::FlashAlloc { chunks } => {
                let list: Vec<String> = chunks.iter().map(|c| format!("{}+{}", c.lba, c.len)).collect();
                writeln!(
                    self.out,
                    "flashalloc {} {} {}",
                    cmd.stream_id,
                    cmd.tenant_id,
                    list.join(",")
                )
            }
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        writeln!(self.out, "# end {}", self.records)?;
        self.out.flush()?;
        Ok(self.out)
    }
}

fn key_values(line: usize, text: &str) -> Result<BTreeMap<String, String>, TraceParseError> {
    text.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| syntax(line, format!("expected key=value, got `{kv}`")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(
    line: usize,
    kv: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, TraceParseError> {
    let raw = kv
        .get(key)
        .ok_or_else(|| syntax(line, format!("missing `{key}`")))?;
    raw.parse()
        .map_err(|_| syntax(line, format!("bad value `{raw}` for `{key}`")))
}

fn num<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T, TraceParseError> {
    let tok = tok.ok_or_else(|| syntax(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| syntax(line, format!("bad {what} `{tok}`")))
}

fn parse_chunks(line: usize, text: &str) -> Result<Vec<Chunk>, TraceParseError> {
    text.split(',')
        .map(|c| {
            let (lba, len) = c
                .split_once('+')
                .ok_or_else(|| syntax(line, format!("bad chunk `{c}`")))?;
            Ok(Chunk::new(num(line, Some(lba), "chunk lba")?, num(line, Some(len), "chunk len")?))
        })
        .collect()
}

fn parse_record(line: usize, text: &str) -> Result<IssuedCommand, TraceParseError> {
    let mut it = text.split_whitespace();
    let seq = num(line, it.next(), "seq")?;
    let op = it.next().ok_or_else(|| syntax(line, "missing op"))?;
    let stream_id = num(line, it.next(), "stream id")?;
    let tenant_id = num(line, it.next(), "tenant id")?;
    let command = match op {
        "write" => Command::Write {
            lba: num(line, it.next(), "lba")?,
            len: num(line, it.next(), "len")?,
            content_base: num(line, it.next(), "content base")?,
        },
        "trim" => Command::Trim {
            lba: num(line, it.next(), "lba")?,
            len: num(line, it.next(), "len")?,
        },
        "flashalloc" => Command::FlashAlloc {
            chunks: parse_chunks(line, it.next().ok_or_else(|| syntax(line, "missing chunks"))?)?,
        },
        other => return Err(syntax(line, format!("unknown op `{other}`"))),
    };
    if let Some(extra) = it.next() {
        return Err(syntax(line, format!("trailing field `{extra}`")));
    }
    Ok(IssuedCommand { seq, stream_id, tenant_id, command })
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Trace, TraceParseError> {
    let mut geometry = None;
    let mut ftl = None;
    let mut window_pages = None;
    let mut records: Vec<IssuedCommand> = Vec::new();
    let mut footer = None;
    let mut last_line = 0;
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        let line = line?;
        if n == 1 {
            if line != MAGIC {
                return Err(syntax(n, "not a fasim trace"));
            }
            continue;
        }
        if footer.is_some() {
            return Err(syntax(n, "content after end marker"));
        }
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some(rest) = meta.strip_prefix("geometry ") {
                let kv = key_values(n, rest)?;
                geometry = Some(Geometry {
                    total_blocks: field(n, &kv, "total_blocks")?,
                    pages_per_block: field(n, &kv, "pages_per_block")?,
                    page_size: field(n, &kv, "page_size")?,
                    channels: field(n, &kv, "channels")?,
                    op_fraction: field(n, &kv, "op_fraction")?,
                });
            } else if let Some(rest) = meta.strip_prefix("ftl ") {
                let kv = key_values(n, rest)?;
                let striping = match kv.get("striping").map(String::as_str) {
                    Some("per-channel") => Striping::PerChannel,
                    Some("single-frontier") => Striping::SingleFrontier,
                    _ => return Err(syntax(n, "bad striping")),
                };
                ftl = Some(FtlConfig {
                    reserve_threshold: field(n, &kv, "reserve_threshold")?,
                    striping,
                    cost: CostModel {
                        read_us: field(n, &kv, "read_us")?,
                        program_us: field(n, &kv, "program_us")?,
                        erase_us: field(n, &kv, "erase_us")?,
                    },
                });
            } else if let Some(rest) = meta.strip_prefix("window_pages=") {
                window_pages = Some(num(n, Some(rest), "window_pages")?);
            } else if let Some(rest) = meta.strip_prefix("end ") {
                let count: usize = num(n, Some(rest), "record count")?;
                if count != records.len() {
                    return Err(syntax(n, format!("footer says {count} records, found {}", records.len())));
                }
                footer = Some(count);
            } else {
                return Err(syntax(n, format!("unknown header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(n, &line)?;
        // ranges are checked against the geometry here so that replay errors
        // are about device behaviour, not malformed input
        let g = geometry.as_ref().ok_or_else(|| syntax(n, "record before the geometry header"))?;
        if let Command::Write { lba, len, .. } | Command::Trim { lba, len } = rec.command {
            if lba.checked_add(len).is_none_or(|e| e > g.logical_capacity_pages()) {
                return Err(syntax(n, format!("range {lba}+{len} outside geometry")));
            }
        }
        if let Some(prev) = records.last() {
            if rec.seq <= prev.seq {
                return Err(syntax(n, "seq must strictly increase"));
            }
        }
        records.push(rec);
    }
    if footer.is_none() {
        return Err(syntax(last_line + 1, "missing end marker; trace truncated"));
    }
    let header = TraceHeader {
        geometry: geometry.ok_or_else(|| syntax(0, "missing geometry header"))?,
        ftl: ftl.ok_or_else(|| syntax(0, "missing ftl header"))?,
        window_pages: window_pages.ok_or_else(|| syntax(0, "missing window_pages header"))?,
    };
    Ok(Trace { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (TraceHeader, Vec<IssuedCommand>) {
        let g = Geometry::default();
        let header = TraceHeader {
            geometry: g,
            ftl: FtlConfig::for_geometry(&g),
            window_pages: 920,
        };
        let records = vec![
            IssuedCommand {
                seq: 1,
                stream_id: 0,
                tenant_id: 0,
                command: Command::FlashAlloc { chunks: vec![Chunk::new(0, 512), Chunk::new(1024, 8)] },
            },
            IssuedCommand {
                seq: 2,
                stream_id: 3,
                tenant_id: 1,
                command: Command::Write { lba: 0, len: 64, content_base: 1 },
            },
            IssuedCommand {
                seq: 5,
                stream_id: 0,
                tenant_id: 0,
                command: Command::Trim { lba: 0, len: 512 },
            },
        ];
        (header, records)
    }

    fn encode(header: &TraceHeader, records: &[IssuedCommand]) -> String {
        let mut w = TraceWriter::new(Vec::new(), header).unwrap();
        for r in records {
            w.record(r).unwrap();
        }
        String::from_utf8(w.finish().unwrap()).unwrap()
    }

    #[test]
    fn round_trip() {
        let (h, recs) = sample();
        let text = encode(&h, &recs);
        let t = read_trace(text.as_bytes()).unwrap();
        assert_eq!(t.header, h);
        assert_eq!(t.records, recs);
    }

    #[test]
    fn truncation_is_reported_with_line() {
        let (h, recs) = sample();
        let text = encode(&h, &recs);
        let cut: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        match read_trace(cut.as_bytes()) {
            Err(TraceParseError::Syntax { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected syntax error, got {other:?}"),
        }
        // a record cut mid-line
        let partial = text.replacen("write 3 1 0 64 1", "write 3 1 0", 1);
        match read_trace(partial.as_bytes()) {
            Err(TraceParseError::Syntax { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_records() {
        let (h, recs) = sample();
        let text = encode(&h, &recs);
        let bad_op = text.replacen("trim", "erase", 1);
        assert!(read_trace(bad_op.as_bytes()).is_err());
        let reordered = text.replacen("5 trim", "1 trim", 1);
        assert!(read_trace(reordered.as_bytes()).is_err());
        let out_of_range = text.replacen("write 3 1 0 64", "write 3 1 99999999 64", 1);
        assert!(read_trace(out_of_range.as_bytes()).is_err());
        assert!(read_trace("hello\n".as_bytes()).is_err());
    }
}
