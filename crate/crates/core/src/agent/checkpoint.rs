//! Checkpoint files in the TRACEQ1 format, split into sections:
//! `[online]`, `[target]`, `[optimizer]` hold parameter entries, `[meta]`
//! holds `key value` text lines, and an optional `[resume]` holds a length
//! line followed by opaque bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::nn::{read_line, read_magic, read_tensor_body, write_entry, ParameterSet, MAGIC};
use crate::optim::OptimizerState;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub online: ParameterSet,
    pub target: ParameterSet,
    pub optimizer: OptimizerState,
    pub step: u64,
    pub rng: ChaCha8Rng,
    /// Extra state owned by the caller, stored verbatim.
    pub resume: Option<Vec<u8>>,
}

/// Seed, stream and word position of a ChaCha8 generator as hex.
pub fn rng_to_hex(rng: &ChaCha8Rng) -> String {
    let mut bytes = rng.get_seed().to_vec();
    bytes.extend_from_slice(&rng.get_stream().to_le_bytes());
    bytes.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    hex::encode(bytes)
}

pub fn rng_from_hex(text: &str) -> Result<ChaCha8Rng> {
    let bytes = hex::decode(text).map_err(|e| Error::Parameters(format!("bad rng hex: {e}")))?;
    if bytes.len() != 56 {
        return Err(Error::Parameters(format!("rng state has {} bytes, expected 56", bytes.len())));
    }
    let seed: [u8; 32] = bytes[..32].try_into().expect("32 bytes");
    let stream = u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes"));
    let word_pos = u128::from_le_bytes(bytes[40..56].try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

impl Checkpoint {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        let optimizer = self.optimizer.to_entries();
        for (section, set) in [("online", &self.online), ("target", &self.target), ("optimizer", &optimizer)] {
            writeln!(w, "[{section}]")?;
            for (name, tensor) in set.iter() {
                write_entry(w, name, tensor)?;
            }
        }
        writeln!(w, "[meta]")?;
        writeln!(w, "step {}", self.step)?;
        writeln!(w, "optimizer_t {}", self.optimizer.t)?;
        writeln!(w, "rng {}", rng_to_hex(&self.rng))?;
        if let Some(blob) = &self.resume {
            writeln!(w, "[resume]")?;
            writeln!(w, "{}", blob.len())?;
            w.write_all(blob)?;
        }
        Ok(())
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<Self> {
        read_magic(r)?;
        let mut header = read_line(r)?;
        let mut sections: Vec<(String, ParameterSet)> = Vec::new();
        while let Some(h) = header.take() {
            let name = section_name(&h)?;
            if name == "meta" {
                header = Some(h);
                break;
            }
            let mut set = ParameterSet::new();
            loop {
                match read_line(r)? {
                    Some(line) if line.starts_with('[') => {
                        header = Some(line);
                        break;
                    }
                    Some(line) => set.push(line, read_tensor_body(r)?)?,
                    None => break,
                }
            }
            sections.push((name.to_owned(), set));
        }
        let mut take = |want: &str| -> Result<ParameterSet> {
            let pos = sections
                .iter()
                .position(|(n, _)| n == want)
                .ok_or_else(|| Error::Parameters(format!("missing [{want}] section")))?;
            Ok(sections.remove(pos).1)
        };
        let online = take("online")?;
        let target = take("target")?;
        let optimizer_entries = take("optimizer")?;
        if let Some((extra, _)) = sections.first() {
            return Err(Error::Parameters(format!("unexpected [{extra}] section")));
        }
        online.check_congruent(&target)?;
        if header.as_deref() != Some("[meta]") {
            return Err(Error::Parameters("missing [meta] section".into()));
        }

        let (mut step, mut opt_t, mut rng) = (None, None, None);
        let mut resume = None;
        while let Some(line) = read_line(r)? {
            if line == "[resume]" {
                let len_line = read_line(r)?.ok_or_else(|| Error::Parameters("missing resume length".into()))?;
                let len: usize = len_line
                    .parse()
                    .map_err(|_| Error::Parameters(format!("bad resume length {len_line:?}")))?;
                let mut blob = Vec::new();
                r.take(len as u64).read_to_end(&mut blob)?;
                if blob.len() != len {
                    return Err(Error::Parameters("truncated resume section".into()));
                }
                resume = Some(blob);
                continue;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parameters(format!("bad meta line {line:?}")))?;
            let number = || {
                value
                    .parse::<u64>()
                    .map_err(|_| Error::Parameters(format!("bad meta value {line:?}")))
            };
            match key {
                "step" => step = Some(number()?),
                "optimizer_t" => opt_t = Some(number()?),
                "rng" => rng = Some(rng_from_hex(value)?),
                _ => return Err(Error::Parameters(format!("unknown meta key {key:?}"))),
            }
        }
        let missing = |k: &str| Error::Parameters(format!("missing meta key {k}"));
        let optimizer = OptimizerState::from_entries(&online, &optimizer_entries, opt_t.ok_or_else(|| missing("optimizer_t"))?)?;
        Ok(Checkpoint {
            online,
            target,
            optimizer,
            step: step.ok_or_else(|| missing("step"))?,
            rng: rng.ok_or_else(|| missing("rng"))?,
            resume,
        })
    }

    /// Any failure to parse is reported as a corrupt file naming `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Checkpoint::read(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => Error::Io(io),
            other => Error::Corrupt {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
    }
}

fn section_name(line: &str) -> Result<&str> {
    line.strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Parameters(format!("expected a section header, got {line:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_parameters, NetworkSpec};
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::recurrent(3, vec![4], 2, 2);
        let online = init_parameters(&spec, 1).unwrap();
        let target = init_parameters(&spec, 2).unwrap();
        let mut optimizer = OptimizerState::new(&online);
        optimizer.t = 17;
        optimizer.m.tensor_mut(0).data_mut()[0] = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.next_u64();
        Checkpoint {
            online,
            target,
            optimizer,
            step: 1234,
            rng,
            resume: Some(vec![0, 1, 2, b'\n', 255]),
        }
    }

    #[test]
    fn rng_hex_round_trip_continues_the_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        a.next_u32();
        let mut b = rng_from_hex(&rng_to_hex(&a)).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert!(rng_from_hex("abcd").is_err());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let mut bare = ck.clone();
        bare.resume = None;
        bare.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), bare);
    }

    #[test]
    fn corrupt_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let mut bytes = Vec::new();
        sample().write(&mut bytes).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }));
        assert!(err.to_string().contains("bad.bin"));

        bytes[0] = b'T';
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn missing_file_is_io() {
        let err = Checkpoint::load(Path::new("/nonexistent/ck.bin")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
