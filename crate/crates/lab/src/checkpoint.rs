//! Binary checkpoint files.
//!
//! ```text
//! "CORA" | u32 version | u32 header_len | header (JSON)
//! per block: u32 name_len | name | u32 rows | u32 cols | rows·cols × f64
//! ```
//! All integers and floats are little-endian. The header lists every block
//! with its shape, and reading checks the payload against that list.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use cora_core::extraction::{BasisMethod, CommonBasis, StackedAttentionWeights};
use cora_core::{AdaptedWeights, Adapter, InitMode, Matrix, ModelConfig, ParamBlock, ToyTransformer};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"CORA";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),
    #[error("checkpoint version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("shape inconsistency: {0}")]
    ShapeMismatch(String),
    #[error("{0} unexpected bytes after the last block")]
    TrailingData(usize),
    #[error("header: {0}")]
    Header(String),
    #[error(transparent)]
    Core(#[from] cora_core::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Every model block, plus the adapter factors when one is attached.
    Model,
    /// A single `basis` block.
    Basis,
    /// A single stacked attention weight, `attn.base`.
    Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterDescriptor {
    pub init_mode: InitMode,
    pub rank: usize,
    pub scale: f64,
    pub b_frozen: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisDescriptor {
    pub method: BasisMethod,
    pub rank: usize,
    pub variance_captured: f64,
    pub exceeds_low_rank_guideline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: CheckpointKind,
    pub label: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisDescriptor>,
    pub blocks: Vec<BlockDecl>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub blocks: Vec<(String, Matrix)>,
}

impl Checkpoint {
    /// Builds a checkpoint whose header block list matches `blocks`.
    pub fn new(
        kind: CheckpointKind,
        label: impl Into<String>,
        seed: u64,
        blocks: Vec<(String, Matrix)>,
    ) -> Self {
        let decls = blocks
            .iter()
            .map(|(n, m)| BlockDecl {
                name: n.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect();
        Self {
            header: Header {
                kind,
                label: label.into(),
                seed,
                model: None,
                adapter: None,
                basis: None,
                blocks: decls,
            },
            blocks,
        }
    }

    pub fn block(&self, name: &str) -> Option<&Matrix> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn require(&self, name: &str) -> Result<&Matrix> {
        self.block(name)
            .ok_or_else(|| CheckpointError::ShapeMismatch(format!("missing block {name:?}")))
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(CheckpointError::Header(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn from_model(model: &ToyTransformer, label: impl Into<String>, seed: u64) -> Self {
        let blocks = model.blocks().map(|(b, m)| (b.name().to_string(), m.clone())).collect();
        let mut ck = Self::new(CheckpointKind::Model, label, seed, blocks);
        ck.header.model = Some(*model.config());
        ck.header.adapter = model.attention.adapter.as_ref().map(|a| AdapterDescriptor {
            init_mode: a.init_mode(),
            rank: a.rank(),
            scale: a.scale(),
            b_frozen: a.b_frozen(),
            seed: a.seed(),
        });
        ck
    }

    pub fn to_model(&self) -> Result<ToyTransformer> {
        self.expect_kind(CheckpointKind::Model)?;
        let config = self
            .header
            .model
            .ok_or_else(|| CheckpointError::Header("model checkpoint without model dims".into()))?;
        let get = |b: ParamBlock| self.require(b.name()).cloned();
        let base = StackedAttentionWeights::from_stacked(get(ParamBlock::AttnBase)?)?;
        let adapter = match &self.header.adapter {
            Some(d) => {
                let a = get(ParamBlock::AdapterA)?;
                if a.cols() != d.rank {
                    return Err(CheckpointError::ShapeMismatch(format!(
                        "adapter rank {} but A has {} columns",
                        d.rank,
                        a.cols()
                    )));
                }
                Some(Adapter::from_parts(a, get(ParamBlock::AdapterB)?, d.scale, d.b_frozen, d.init_mode, d.seed)?)
            }
            None => None,
        };
        Ok(ToyTransformer::from_parts(
            config,
            get(ParamBlock::Embed)?,
            get(ParamBlock::PosEmbed)?,
            AdaptedWeights::new(base, adapter)?,
            get(ParamBlock::FfnW1)?,
            get(ParamBlock::FfnW2)?,
            get(ParamBlock::OutProj)?,
        )?)
    }

    pub fn from_basis(basis: &CommonBasis, label: impl Into<String>, seed: u64) -> Self {
        let mut ck = Self::new(CheckpointKind::Basis, label, seed, vec![("basis".into(), basis.b.clone())]);
        ck.header.basis = Some(BasisDescriptor {
            method: basis.method,
            rank: basis.rank,
            variance_captured: basis.variance_captured,
            exceeds_low_rank_guideline: basis.exceeds_low_rank_guideline,
        });
        ck
    }

    pub fn to_basis(&self) -> Result<CommonBasis> {
        self.expect_kind(CheckpointKind::Basis)?;
        let d = self
            .header
            .basis
            .as_ref()
            .ok_or_else(|| CheckpointError::Header("basis checkpoint without descriptor".into()))?;
        let b = self.require("basis")?.clone();
        if b.rows() != d.rank {
            return Err(CheckpointError::ShapeMismatch(format!(
                "basis rank {} but block has {} rows",
                d.rank,
                b.rows()
            )));
        }
        Ok(CommonBasis {
            b,
            rank: d.rank,
            method: d.method,
            variance_captured: d.variance_captured,
            exceeds_low_rank_guideline: d.exceeds_low_rank_guideline,
        })
    }

    pub fn from_attention(w: &StackedAttentionWeights, label: impl Into<String>, seed: u64) -> Self {
        Self::new(
            CheckpointKind::Attention,
            label,
            seed,
            vec![(ParamBlock::AttnBase.name().into(), w.stacked().clone())],
        )
    }

    /// Stacked attention weights of a model or attention checkpoint. A
    /// model's adapter, if any, is folded in.
    pub fn to_attention(&self) -> Result<StackedAttentionWeights> {
        match self.header.kind {
            CheckpointKind::Model => Ok(self.to_model()?.attention.merge_adapter()),
            CheckpointKind::Attention => Ok(StackedAttentionWeights::from_stacked(
                self.require(ParamBlock::AttnBase.name())?.clone(),
            )?),
            CheckpointKind::Basis => Err(CheckpointError::Header("a basis checkpoint holds no attention weights".into())),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(header.len())?.to_le_bytes());
        out.extend_from_slice(&header);
        for (name, m) in &self.blocks {
            out.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&u32_len(m.rows())?.to_le_bytes());
            out.extend_from_slice(&u32_len(m.cols())?.to_le_bytes());
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| CheckpointError::Header(e.to_string()))?;

        let mut blocks = Vec::with_capacity(header.blocks.len());
        for decl in &header.blocks {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| CheckpointError::Header("block name is not UTF-8".into()))?;
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if name != decl.name || (rows, cols) != (decl.rows, decl.cols) {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "header declares {} {}x{}, payload has {name} {rows}x{cols}",
                    decl.name, decl.rows, decl.cols
                )));
            }
            let count = rows
                .checked_mul(cols)
                .and_then(|c| c.checked_mul(8))
                .ok_or_else(|| CheckpointError::ShapeMismatch(format!("{name} {rows}x{cols} overflows")))?;
            let data = r
                .take(count)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            blocks.push((name.to_string(), Matrix::from_vec(rows, cols, data)?));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingData(bytes.len() - r.pos));
        }
        check_header(&header, &blocks)?;
        Ok(Self { header, blocks })
    }
}

fn check_header(h: &Header, blocks: &[(String, Matrix)]) -> Result<()> {
    let shape_of = |name: &str| blocks.iter().find(|(n, _)| n == name).map(|(_, m)| m.shape());
    if let Some(cfg) = &h.model {
        let stacked = cfg.stacked_shape();
        let expected = [
            (ParamBlock::Embed, (cfg.vocab_size, cfg.d_model)),
            (ParamBlock::PosEmbed, (cfg.seq_len, cfg.d_model)),
            (ParamBlock::AttnBase, stacked),
            (ParamBlock::FfnW1, (cfg.d_k, cfg.d_ff)),
            (ParamBlock::FfnW2, (cfg.d_ff, cfg.d_model)),
            (ParamBlock::OutProj, (cfg.d_model, cfg.vocab_size)),
        ];
        let mut expected: Vec<(ParamBlock, (usize, usize))> = expected.to_vec();
        if let Some(a) = &h.adapter {
            expected.push((ParamBlock::AdapterA, (stacked.0, a.rank)));
            expected.push((ParamBlock::AdapterB, (a.rank, stacked.1)));
        }
        for (b, want) in expected {
            match shape_of(b.name()) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(CheckpointError::ShapeMismatch(format!(
                        "{} is {got:?} but the header dims give {want:?}",
                        b.name()
                    )))
                }
                None => return Err(CheckpointError::ShapeMismatch(format!("missing block {}", b.name()))),
            }
        }
    }
    Ok(())
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| CheckpointError::ShapeMismatch(format!("{n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(CheckpointError::Truncated {
            offset: self.pos,
            needed: n,
            len: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into
/// place so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    Ok(write_atomic(path, &ck.to_bytes()?)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
