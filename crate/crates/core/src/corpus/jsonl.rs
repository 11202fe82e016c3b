use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Acfg, Arch, BasicBlock, Bitness, Corpus, FunctionVariant, OptLevel, RawInstruction};
use crate::error::{Error, Result};

#[derive(Debug, Default, Serialize, Deserialize)]
struct AddrTag {
    #[serde(rename = "in", default)]
    inside: Vec<usize>,
    #[serde(rename = "out", default)]
    outside: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    function_id: String,
    arch: Arch,
    bitness: Bitness,
    compiler: String,
    compiler_version: String,
    opt_level: OptLevel,
    blocks: Vec<Vec<Vec<String>>>,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addr_tags: Option<Vec<Vec<Option<AddrTag>>>>,
}

impl Record {
    fn into_variant(self) -> Result<FunctionVariant, String> {
        if let Some(tags) = &self.addr_tags {
            if tags.len() != self.blocks.len()
                || tags.iter().zip(&self.blocks).any(|(t, b)| t.len() != b.len())
            {
                return Err("addr_tags shape does not match blocks".into());
            }
        }
        let mut tag_rows = self.addr_tags.map(|t| t.into_iter());
        let blocks = self
            .blocks
            .into_iter()
            .map(|block| {
                let mut tags = tag_rows.as_mut().and_then(Iterator::next).map(Vec::into_iter);
                let instructions = block
                    .into_iter()
                    .map(|tokens| {
                        let ins = RawInstruction::new(tokens);
                        match tags.as_mut().and_then(Iterator::next).flatten() {
                            Some(t) => ins.with_targets(t.inside, t.outside),
                            None => ins,
                        }
                    })
                    .collect();
                BasicBlock { instructions }
            })
            .collect();
        let edges = self.edges.into_iter().map(|[s, t]| (s, t)).collect();
        let acfg = Acfg::new(blocks, edges).map_err(|e| e.to_string())?;
        Ok(FunctionVariant {
            function_id: self.function_id,
            arch: self.arch,
            bitness: self.bitness,
            compiler: self.compiler,
            compiler_version: self.compiler_version,
            opt_level: self.opt_level,
            acfg,
        })
    }

    fn from_variant(v: &FunctionVariant) -> Self {
        let tagged = v
            .acfg
            .blocks
            .iter()
            .any(|b| b.instructions.iter().any(RawInstruction::has_tags));
        let addr_tags = tagged.then(|| {
            v.acfg
                .blocks
                .iter()
                .map(|b| {
                    b.instructions
                        .iter()
                        .map(|ins| {
                            ins.has_tags().then(|| AddrTag {
                                inside: ins.in_function_targets.iter().flatten().copied().collect(),
                                outside: ins.out_function_targets.iter().flatten().copied().collect(),
                            })
                        })
                        .collect()
                })
                .collect()
        });
        Record {
            function_id: v.function_id.clone(),
            arch: v.arch,
            bitness: v.bitness,
            compiler: v.compiler.clone(),
            compiler_version: v.compiler_version.clone(),
            opt_level: v.opt_level,
            blocks: v
                .acfg
                .blocks
                .iter()
                .map(|b| b.instructions.iter().map(|i| i.tokens.clone()).collect())
                .collect(),
            edges: v.acfg.edges.iter().map(|&(s, t)| [s, t]).collect(),
            addr_tags,
        }
    }
}

/// Parses JSONL corpus text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut variants = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        variants.push(record.into_variant().map_err(parse_err)?);
    }
    Corpus::new(variants)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for v in corpus.variants() {
        serde_json::to_writer(&mut out, &Record::from_variant(v))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const F1: &str = r#"{"function_id":"f","arch":"x86","bitness":64,"compiler":"gcc","compiler_version":"9","opt_level":"O0","blocks":[[["mov","eax","0x10"],["ret"]]],"edges":[]}"#;
    const F2: &str = r#"{"function_id":"f","arch":"arm","bitness":32,"compiler":"gcc","compiler_version":"9","opt_level":"O2","blocks":[[["bl","0x4008f0"]],[["bx","lr"]]],"edges":[[0,1],[0,1]],"addr_tags":[[{"in":[],"out":[1]}],[null]]}"#;

    #[test]
    fn two_variants_one_group() {
        let c = parse_corpus(format!("{F1}\n{F2}\n").as_bytes()).unwrap();
        assert_eq!(c.groups().len(), 1);
        assert_eq!(c.groups()["f"].len(), 2);
        let arm = &c.variants()[1];
        assert_eq!(arm.acfg.edges, vec![(0, 1)]);
        let bl = &arm.acfg.blocks[0].instructions[0];
        assert!(bl.out_function_targets.as_ref().unwrap().contains(&1));
        assert!(!arm.acfg.blocks[1].instructions[0].has_tags());
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = parse_corpus("".as_bytes()).unwrap();
        assert!(c.is_empty());
        assert!(c.groups().is_empty());
    }

    #[test]
    fn missing_edges_reports_line() {
        let bad = F1.replace(r#","edges":[]"#, "");
        let err = parse_corpus(format!("{F2}\n{bad}\n").as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("edges"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_graph_reports_line() {
        let bad = F1.replace(r#""edges":[]"#, r#""edges":[[0,5]]"#);
        assert!(matches!(
            parse_corpus(bad.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad = F1.replace(r#""bitness":64"#, r#""bitness":16"#);
        assert!(matches!(parse_corpus(bad.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_variant_error() {
        let err = parse_corpus(format!("{F1}\n{F1}\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DuplicateVariant(_)));
    }

    #[test]
    fn write_then_parse_preserves_variants() {
        let c = parse_corpus(format!("{F1}\n{F2}\n").as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let back = parse_corpus(buf.as_slice()).unwrap();
        assert_eq!(back.variants(), c.variants());
    }
}
