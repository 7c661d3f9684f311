use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Deref;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Magic line that opens every parameter and checkpoint file.
pub const MAGIC: &[u8] = b"TRACEQ1\n";

/// Ordered, uniquely named collection of tensors.
///
/// Iteration order is insertion order and is preserved by the on-disk
/// format, so two sets built from the same [`NetworkSpec`](crate::nn::NetworkSpec)
/// line up entry by entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.contains('\n') || name.starts_with('[') {
            return Err(Error::Parameters(format!("invalid parameter name {name:?}")));
        }
        if self.get(&name).is_some() {
            return Err(Error::Parameters(format!("duplicate parameter {name:?}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total number of scalars across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Same names, same order, same shapes.
    pub fn check_congruent(&self, other: &ParameterSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Parameters(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::Parameters(format!(
                    "{na} {:?} vs {nb} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Overwrite every value with the corresponding value of `other`.
    pub fn copy_from(&mut self, other: &ParameterSet) -> Result<()> {
        self.check_congruent(other)?;
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Name-suffixed copy, e.g. `lstm.bias` → `lstm.bias.m`.
    pub fn with_suffix(&self, suffix: &str) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (format!("{n}{suffix}"), t.clone()))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        self.write_entries(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        read_magic(&mut r).map_err(|e| corrupt(e.to_string()))?;
        let mut set = ParameterSet::new();
        while let Some(name) = read_line(&mut r).map_err(|e| corrupt(e.to_string()))? {
            let tensor = read_tensor_body(&mut r).map_err(|e| corrupt(e.to_string()))?;
            set.push(name, tensor).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(set)
    }

    /// Entries without the leading magic line.
    pub fn write_entries<W: Write>(&self, w: &mut W) -> Result<()> {
        for (name, tensor) in &self.entries {
            write_entry(w, name, tensor)?;
        }
        Ok(())
    }
}

/// Gradients for a [`ParameterSet`], entry for entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet(ParameterSet);

impl GradientSet {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        GradientSet(params.zeros_like())
    }

    pub fn accumulate(&mut self, other: &GradientSet) -> Result<()> {
        self.0.check_congruent(&other.0)?;
        for (dst, (_, src)) in self.0.tensors_mut().zip(other.0.iter()) {
            dst.add_assign(src)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.tensors_mut().for_each(|t| t.scale(factor));
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|(_, t)| t.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        self.0.tensor_mut(index)
    }

    /// Two distinct entries at once; `a < b`.
    pub(crate) fn pair_mut(&mut self, a: usize, b: usize) -> (&mut Tensor, &mut Tensor) {
        assert!(a < b, "pair_mut needs a < b");
        let (lo, hi) = self.0.entries.split_at_mut(b);
        (&mut lo[a].1, &mut hi[0].1)
    }

    pub fn into_inner(self) -> ParameterSet {
        self.0
    }
}

impl Deref for GradientSet {
    type Target = ParameterSet;

    fn deref(&self) -> &ParameterSet {
        &self.0
    }
}

pub(crate) fn write_entry<W: Write>(w: &mut W, name: &str, tensor: &Tensor) -> Result<()> {
    writeln!(w, "{name}")?;
    let shape: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
    writeln!(w, "{}", shape.join(" "))?;
    for v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_magic<R: Read>(r: &mut R) -> Result<()> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Parameters("file too short for magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Parameters("bad magic, expected TRACEQ1".into()));
    }
    Ok(())
}

/// Next `\n`-terminated line, or `None` at end of input.
pub(crate) fn read_line<R: BufRead>(r: &mut R) -> Result<Option<String>> {
    let mut buf = Vec::new();
    if r.read_until(b'\n', &mut buf)? == 0 {
        return Ok(None);
    }
    if buf.pop() != Some(b'\n') {
        return Err(Error::Parameters("unterminated line".into()));
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| Error::Parameters("line is not UTF-8".into()))
}

/// Shape line followed by little-endian values.
pub(crate) fn read_tensor_body<R: BufRead>(r: &mut R) -> Result<Tensor> {
    let shape_line =
        read_line(r)?.ok_or_else(|| Error::Parameters("missing shape line".into()))?;
    let shape = shape_line
        .split(' ')
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Parameters(format!("bad shape line {shape_line:?}")))?;
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Parameters(format!("bad shape line {shape_line:?}")));
    }
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Parameters("truncated tensor data".into()))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push("a.weight", Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, -7.25]).unwrap())
            .unwrap();
        p.push("a.bias", Tensor::vector(vec![0.1, 0.2])).unwrap();
        p
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = sample();
        assert!(p.push("a.bias", Tensor::vector(vec![1.0])).is_err());
        assert!(p.push("[online]", Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let p = sample();
        p.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"TRACEQ1\na.weight\n2 3\n"));
        assert_eq!(ParameterSet::load(&path).unwrap(), p);
    }

    #[test]
    fn corrupt_magic_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"TRACEQ0\n").unwrap();
        let err = ParameterSet::load(&path).unwrap_err().to_string();
        assert!(err.contains("bad.bin"), "{err}");
    }

    #[test]
    fn truncated_data_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        sample().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(ParameterSet::load(&path).is_err());
    }

    #[test]
    fn copy_requires_congruence() {
        let mut a = sample();
        let mut b = sample();
        b.tensor_mut(1).data_mut()[0] = 9.0;
        a.copy_from(&b).unwrap();
        assert_eq!(a, b);
        let mut c = ParameterSet::new();
        c.push("x", Tensor::vector(vec![1.0])).unwrap();
        assert!(a.copy_from(&c).is_err());
    }

    #[test]
    fn gradients_accumulate() {
        let p = sample();
        let mut g = GradientSet::zeros_like(&p);
        let other = GradientSet(p.clone());
        g.accumulate(&other).unwrap();
        g.accumulate(&other).unwrap();
        assert_eq!(g.get("a.bias").unwrap().data(), &[0.2, 0.4]);
    }
}
