//! Checkpoint container.
//!
//! ```text
//! gptc-ckpt v1\n
//! config <json ModelConfig>\n
//! tensor <name> <rows> <cols>\n  followed by rows·cols little-endian f32
//! ...                             one record per tensor, in ModelParams order
//! end\n
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, Scalar};

const MAGIC: &str = "gptc-ckpt v1";

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut out: W) -> Result<(), ModelError> {
    writeln!(out, "{MAGIC}")?;
    let config = serde_json::to_string(&params.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    writeln!(out, "config {config}")?;
    for (name, tensor) in params.tensors() {
        writeln!(out, "tensor {} {} {}", name, tensor.rows, tensor.cols)?;
        let mut bytes = Vec::with_capacity(tensor.len() * 4);
        for x in &tensor.data {
            bytes.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        out.write_all(&bytes)?;
    }
    writeln!(out, "end")?;
    Ok(())
}

fn read_line<R: BufRead>(input: &mut R) -> Result<String, ModelError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(ModelError::Checkpoint("truncated header line".into()));
    }
    line.pop();
    Ok(line)
}

pub fn read_checkpoint<T: Scalar, R: BufRead>(mut input: R) -> Result<ModelParams<T>, ModelError> {
    let bad = |msg: String| ModelError::Checkpoint(msg);
    if read_line(&mut input)? != MAGIC {
        return Err(bad(format!("missing `{MAGIC}` header")));
    }
    let config_line = read_line(&mut input)?;
    let json = config_line.strip_prefix("config ").ok_or_else(|| bad("missing config record".into()))?;
    let config: ModelConfig = serde_json::from_str(json).map_err(|e| bad(format!("config: {e}")))?;
    config.validate()?;
    let mut params = ModelParams::<T>::zeros(&config);
    for (name, tensor) in params.tensors_mut() {
        let header = read_line(&mut input)?;
        let expected = format!("tensor {} {} {}", name, tensor.rows, tensor.cols);
        if header != expected {
            return Err(bad(format!("expected `{expected}`, found `{header}`")));
        }
        let mut bytes = vec![0u8; tensor.len() * 4];
        input.read_exact(&mut bytes)?;
        for (x, chunk) in tensor.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *x = T::lit(f64::from(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]])));
        }
    }
    if read_line(&mut input)? != "end" {
        return Err(bad("missing end marker".into()));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<(), ModelError> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, ModelError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
