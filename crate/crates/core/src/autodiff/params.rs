//! Flat parameter storage with a named block layout.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// One named dense block inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Bijection between named row-major blocks and flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamBlock>", into = "Vec<ParamBlock>")]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    index: BTreeMap<String, usize>,
}

impl TryFrom<Vec<ParamBlock>> for ParamLayout {
    type Error = AutodiffError;

    fn try_from(blocks: Vec<ParamBlock>) -> Result<Self, Self::Error> {
        let mut layout = Self { blocks, index: BTreeMap::new() };
        layout.validate()?;
        Ok(layout)
    }
}

impl From<ParamLayout> for Vec<ParamBlock> {
    fn from(layout: ParamLayout) -> Self {
        layout.blocks
    }
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let offset = self.total_len();
        self.index.insert(name.clone(), self.blocks.len());
        self.blocks.push(ParamBlock { name, rows, cols, offset });
        Ok(())
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.index.get(name).map(|&i| &self.blocks[i])
    }

    pub fn total_len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    /// Name of the block owning flat index `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.blocks.iter().find(|b| b.range().contains(&i)).map(|b| b.name.as_str())
    }

    /// Layout with every name prefixed, e.g. `"u."`.
    pub fn prefixed(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for b in &self.blocks {
            out.push(format!("{prefix}{}", b.name), b.rows, b.cols).expect("prefixing preserves uniqueness");
        }
        out
    }

    /// Checks offsets are contiguous and names unique, then rebuilds the name index.
    fn validate(&mut self) -> Result<(), AutodiffError> {
        let mut offset = 0;
        for b in &self.blocks {
            if b.offset != offset {
                return Err(AutodiffError::Layout(format!(
                    "block `{}` starts at {} but previous blocks end at {offset}",
                    b.name, b.offset
                )));
            }
            offset += b.len();
        }
        self.index = self.blocks.iter().enumerate().map(|(i, b)| (b.name.clone(), i)).collect();
        if self.index.len() != self.blocks.len() {
            return Err(AutodiffError::Layout("duplicate block names".into()));
        }
        Ok(())
    }
}

/// Real parameters plus the layout that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParamVector")]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl TryFrom<RawParamVector> for ParamVector {
    type Error = AutodiffError;

    fn try_from(raw: RawParamVector) -> Result<Self, Self::Error> {
        Self::from_values(raw.layout, raw.values)
    }
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if values.len() != layout.total_len() {
            return Err(AutodiffError::Layout(format!(
                "layout expects {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Row-major view of a named block.
    pub fn block(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let b = self.layout.block(name)?;
        ArrayView2::from_shape((b.rows, b.cols), &self.values[b.range()]).ok()
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }

    /// Copies every block out as an owned matrix (the "unflatten" direction).
    pub fn to_blocks(&self) -> Vec<(String, Array2<f64>)> {
        self.layout
            .blocks()
            .iter()
            .map(|b| {
                let m = Array2::from_shape_vec((b.rows, b.cols), self.values[b.range()].to_vec())
                    .expect("block shape matches its range");
                (b.name.clone(), m)
            })
            .collect()
    }

    /// Inverse of [`to_blocks`](Self::to_blocks).
    pub fn from_blocks(layout: Arc<ParamLayout>, blocks: &[(String, Array2<f64>)]) -> Result<Self, AutodiffError> {
        let mut out = Self::zeros(layout);
        for (name, m) in blocks {
            let b = out.layout.block(name).ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?.clone();
            if m.dim() != (b.rows, b.cols) {
                return Err(AutodiffError::Layout(format!(
                    "block `{name}` expects {}x{}, got {:?}",
                    b.rows,
                    b.cols,
                    m.dim()
                )));
            }
            for (dst, src) in out.values[b.range()].iter_mut().zip(m.iter()) {
                *dst = *src;
            }
        }
        Ok(out)
    }

    /// Concatenates vectors, prefixing each layout's names.
    pub fn concat(parts: &[(&str, &ParamVector)]) -> Self {
        let mut layout = ParamLayout::new();
        let mut values = Vec::new();
        for (prefix, p) in parts {
            for b in p.layout.blocks() {
                layout.push(format!("{prefix}{}", b.name), b.rows, b.cols).expect("prefixes keep names unique");
            }
            values.extend_from_slice(&p.values);
        }
        Self { layout: Arc::new(layout), values }
    }

    /// Splits off the contiguous run of blocks whose names start with `prefix`.
    pub fn split_prefix(&self, prefix: &str, target: Arc<ParamLayout>) -> Result<Self, AutodiffError> {
        let mut values = Vec::with_capacity(target.total_len());
        for b in target.blocks() {
            let name = format!("{prefix}{}", b.name);
            let src = self.layout.block(&name).ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?;
            if (src.rows, src.cols) != (b.rows, b.cols) {
                return Err(AutodiffError::Layout(format!("block `{name}` has a different shape")));
            }
            values.extend_from_slice(&self.values[src.range()]);
        }
        Self::from_values(target, values)
    }

    /// First non-finite entry, with the owning block name.
    pub fn first_non_finite(&self) -> Option<(String, usize, f64)> {
        self.values.iter().enumerate().find(|(_, v)| !v.is_finite()).map(|(i, &v)| {
            let name = self.layout.name_of(i).unwrap_or("?").to_string();
            (name, i, v)
        })
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout.blocks() == other.layout.blocks()
    }
}
