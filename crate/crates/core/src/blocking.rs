//! Block covers of the index set and the lumped segment system used by the
//! common-block rate analysis.
//!
//! Sites and block indices are 0-based in the API. The canonical string form and
//! every user-facing message are 1-based.

use std::fmt;

use crate::error::{Error, Result};

/// An inclusive interval of sites `first..=last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block {
    pub first: usize,
    pub last: usize,
}

impl Block {
    pub fn new(first: usize, last: usize) -> Self {
        assert!(first <= last, "block must be nonempty");
        Self { first, last }
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.first <= i && i <= self.last
    }

    pub fn sites(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    /// Left boundary site `first - 1`, absent when the block starts the record.
    pub fn left_boundary(&self) -> Option<usize> {
        self.first.checked_sub(1)
    }

    /// Right boundary site `last + 1`, absent when the block ends the record.
    pub fn right_boundary(&self, len: usize) -> Option<usize> {
        (self.last + 1 < len).then_some(self.last + 1)
    }

    /// The block together with its boundary, clipped to `0..len`.
    pub fn extended(&self, len: usize) -> Block {
        Block {
            first: self.left_boundary().unwrap_or(self.first),
            last: self.right_boundary(len).unwrap_or(self.last),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}-{}]", self.first + 1, self.last + 1)
    }
}

/// Which structural assumption a violation concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Blocks must cover every site and stay within the record.
    Cover,
    /// Intervals with strictly increasing minima and maxima.
    Ordered,
    /// Non-consecutive blocks are disjoint and separated by at least one site.
    Separated,
    /// Common block length and overlap.
    Common,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assumption::Cover => "cover",
            Assumption::Ordered => "B1",
            Assumption::Separated => "B2",
            Assumption::Common => "B3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub assumption: Assumption,
    /// Offending block indices (0-based).
    pub blocks: Vec<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks: Vec<String> = self.blocks.iter().map(|b| format!("J{}", b + 1)).collect();
        write!(f, "{} ({}): {}", self.assumption, blocks.join(","), self.detail)
    }
}

/// An ordered list of blocks over sites `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCover {
    blocks: Vec<Block>,
    len: usize,
    common: Option<(usize, usize)>,
}

impl BlockCover {
    /// Wraps an arbitrary list of blocks. Call [`BlockCover::validate`] to check it.
    pub fn from_blocks(len: usize, blocks: Vec<Block>) -> Result<Self> {
        if len == 0 || blocks.is_empty() {
            return Err(Error::InvalidCover("cover needs T >= 1 and at least one block".into()));
        }
        Ok(Self {
            blocks,
            len,
            common: None,
        })
    }

    /// The cover with common block length `l` and overlap `p`:
    /// blocks `[k(l-p), k(l-p) + l - 1]` for `k = 0..m`, `m = (T - p)/(l - p)`.
    pub fn common(len: usize, l: usize, p: usize) -> Result<Self> {
        if l == 0 || l > len {
            return Err(Error::InvalidCover(format!("need 1 <= L <= T, got L={l}, T={len}")));
        }
        if p >= l {
            return Err(Error::InvalidCover(format!("need 0 <= p < L, got p={p}, L={l}")));
        }
        let stride = l - p;
        if (len - p) % stride != 0 {
            let below = p + stride * ((len - p) / stride);
            let above = below + stride;
            let below = if below >= l {
                format!("{below}")
            } else {
                "none".to_string()
            };
            return Err(Error::InvalidCover(format!(
                "T={len} is not of the form (L-p)·m + p for L={l}, p={p}; nearest valid T: {below} below, {above} above"
            )));
        }
        let m = (len - p) / stride;
        let blocks = (0..m).map(|k| Block::new(k * stride, k * stride + l - 1)).collect();
        Ok(Self {
            blocks,
            len,
            common: Some((l, p)),
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> Result<Block> {
        self.blocks.get(k).copied().ok_or(Error::BlockIndex {
            index: k,
            count: self.blocks.len(),
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Record length `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(L, p)` when built with a common length and overlap.
    pub fn common_shape(&self) -> Option<(usize, usize)> {
        self.common
    }

    /// Boundary sites of block `k`.
    pub fn boundary(&self, k: usize) -> Result<(Option<usize>, Option<usize>)> {
        let b = self.block(k)?;
        Ok((b.left_boundary(), b.right_boundary(self.len)))
    }

    /// Union of all block boundaries, sorted.
    pub fn all_boundaries(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .blocks
            .iter()
            .flat_map(|b| [b.left_boundary(), b.right_boundary(self.len)])
            .flatten()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Every violated structural invariant; empty iff the cover satisfies all that apply.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            if b.first > b.last || b.last >= self.len {
                out.push(Violation {
                    assumption: Assumption::Cover,
                    blocks: vec![k],
                    detail: format!("block {b} lies outside 1..{}", self.len),
                });
            }
        }
        let mut covered = vec![false; self.len];
        for b in &self.blocks {
            for i in b.first..=b.last.min(self.len.saturating_sub(1)) {
                covered[i] = true;
            }
        }
        let missing: Vec<usize> = covered.iter().enumerate().filter(|(_, c)| !**c).map(|(i, _)| i + 1).collect();
        if !missing.is_empty() {
            out.push(Violation {
                assumption: Assumption::Cover,
                blocks: vec![],
                detail: format!("sites {missing:?} are not covered"),
            });
        }
        for (k, w) in self.blocks.windows(2).enumerate() {
            if w[0].first >= w[1].first || w[0].last >= w[1].last {
                out.push(Violation {
                    assumption: Assumption::Ordered,
                    blocks: vec![k, k + 1],
                    detail: format!("{} and {} are not strictly ordered by min and max", w[0], w[1]),
                });
            }
        }
        for j in 0..self.blocks.len() {
            for k in j + 2..self.blocks.len() {
                let (a, b) = (self.blocks[j], self.blocks[k]);
                if a.last + 1 >= b.first {
                    out.push(Violation {
                        assumption: Assumption::Separated,
                        blocks: vec![j, k],
                        detail: format!("max of {a} is not below min of {b} minus one"),
                    });
                }
            }
        }
        if let Some((l, p)) = self.common {
            for (k, b) in self.blocks.iter().enumerate() {
                if b.len() != l {
                    out.push(Violation {
                        assumption: Assumption::Common,
                        blocks: vec![k],
                        detail: format!("{b} has length {}, expected L={l}", b.len()),
                    });
                }
            }
            for (k, w) in self.blocks.windows(2).enumerate() {
                let overlap = (w[0].last + 1).saturating_sub(w[1].first);
                if overlap != p {
                    out.push(Violation {
                        assumption: Assumption::Common,
                        blocks: vec![k, k + 1],
                        detail: format!("overlap {overlap}, expected p={p}"),
                    });
                }
            }
            if l > p && self.len != (l - p) * self.blocks.len() + p {
                out.push(Violation {
                    assumption: Assumption::Common,
                    blocks: vec![],
                    detail: format!("T={} differs from (L-p)·m + p", self.len),
                });
            }
        }
        out
    }

    /// `Ok` iff [`BlockCover::validate`] is empty.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::CoverViolations(v))
        }
    }

    /// Largest block length and largest overlap between consecutive blocks.
    pub fn max_len_and_overlap(&self) -> (usize, usize) {
        let l = self.blocks.iter().map(Block::len).max().unwrap_or(0);
        let o = self
            .blocks
            .windows(2)
            .map(|w| (w[0].last + 1).saturating_sub(w[1].first))
            .max()
            .unwrap_or(0);
        (l, o)
    }

    /// Groups the sites into `2m - 1` consecutive segments: block interiors
    /// alternating with the overlaps, so every block spans at most three segments.
    pub fn lump(&self) -> Result<XiSystem> {
        let (l, p) = self.common.ok_or_else(|| {
            Error::LumpUndefined("lumping requires a cover with common block length and overlap".into())
        })?;
        if p == 0 {
            return Err(Error::LumpUndefined(
                "overlap p = 0 leaves the overlap segments empty; use the unlumped rate path".into(),
            ));
        }
        if l <= 2 * p {
            return Err(Error::LumpUndefined(format!(
                "L={l} <= 2p={} leaves interior segments empty",
                2 * p
            )));
        }
        let m = self.blocks.len();
        if m == 1 {
            return Ok(XiSystem {
                segments: vec![Block::new(0, self.len - 1)],
                num_blocks: 1,
            });
        }
        let stride = l - p;
        let mut segments = Vec::with_capacity(2 * m - 1);
        segments.push(Block::new(0, stride - 1));
        for i in 1..m {
            // overlap between block i-1 and block i (1-based pair (i, i+1))
            segments.push(Block::new(stride * i, stride * i + p - 1));
            if i < m - 1 {
                segments.push(Block::new(stride * i + p, stride * (i + 1) - 1));
            }
        }
        segments.push(Block::new(stride * (m - 1) + p, self.len - 1));
        Ok(XiSystem {
            segments,
            num_blocks: m,
        })
    }
}

impl fmt::Display for BlockCover {
    /// Canonical one-line form, e.g. `L=5,p=1,m=3:[1-5][5-9][9-13]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((l, p)) = self.common {
            write!(f, "L={l},p={p},")?;
        }
        write!(f, "m={}:", self.blocks.len())?;
        for b in &self.blocks {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// The lumped segment system over a common-shape cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XiSystem {
    segments: Vec<Block>,
    num_blocks: usize,
}

impl XiSystem {
    /// Segment `i` as an interval of original sites.
    pub fn segments(&self) -> &[Block] {
        &self.segments
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        self.segments.iter().map(Block::len).collect()
    }

    /// Lumped block `k` (0-based): segments `{2k-1, 2k, 2k+1}` clipped to `0..2m-1`.
    pub fn lumped_block(&self, k: usize) -> Block {
        let n = self.segments.len();
        Block::new((2 * k).saturating_sub(1), (2 * k + 1).min(n - 1))
    }

    /// The lumped blocks as a cover of the `2m - 1` segment indices.
    pub fn cover(&self) -> BlockCover {
        let blocks = (0..self.num_blocks).map(|k| self.lumped_block(k)).collect();
        BlockCover::from_blocks(self.segments.len(), blocks).expect("nonempty")
    }
}
