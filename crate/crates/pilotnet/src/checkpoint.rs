//! Binary checkpoint format for trained models.
//!
//! Layout, all little endian:
//!
//! ```text
//! magic           8 bytes  "PILOTNET"
//! version         u32
//! users           u32
//! bs_antennas     u32
//! pilot_length    u32
//! hidden_layers   u32
//! hidden_width    u32
//! seed            u64
//! noise_variance  f64
//! user_antennas   users x u32
//! power_budgets   users x f64
//! sic_order       users x u32
//! n_arrays        u32
//! arrays          n_arrays x (u32 length, length x f64)
//! ```
//!
//! Arrays appear in parameter-registry order: pilot coefficients by user,
//! then each user's layers as weight, bias pairs. The decoder validates
//! every length against the remaining input before allocating and never
//! panics on malformed bytes.

use crate::mimo::SystemConfig;
use crate::trainer::{JointModel, PilotInit, TrainConfig};
use crate::{Error, Result};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"PILOTNET";
pub const VERSION: u32 = 1;

/// Upper bound on any declared dimension; keeps hostile headers from
/// requesting absurd allocations before the per-array length checks run.
const DIM_LIMIT: u32 = 1 << 16;

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub system: SystemConfig,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub seed: u64,
    pub order: Vec<usize>,
    pub arrays: Vec<Vec<f64>>,
}

/// Parameter array lengths in registry order for a model shape.
fn expected_array_lens(system: &SystemConfig, width: usize, hidden_layers: usize) -> Vec<usize> {
    let mut lens = Vec::new();
    for k in 0..system.users {
        lens.push(2 * system.user_antennas[k] * system.pilot_length);
    }
    let input_dim = 2 * system.bs_antennas * system.pilot_length;
    for k in 0..system.users {
        let out_dim = 2 * system.bs_antennas * system.user_antennas[k];
        let mut in_dim = input_dim;
        for _ in 0..hidden_layers {
            lens.push(width * in_dim);
            lens.push(width);
            in_dim = width;
        }
        lens.push(out_dim * in_dim);
        lens.push(out_dim);
    }
    lens
}

/// Serializes the model parameters together with the shape needed to
/// rebuild it.
pub fn encode(model: &JointModel, seed: u64) -> Vec<u8> {
    let system = model.system();
    let first = &model.estimators()[0];
    let hidden_layers = first.layers().len() - 1;
    let hidden_width = if hidden_layers > 0 {
        first.layers()[0].out_dim
    } else {
        0
    };

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(system.users as u32).to_le_bytes());
    out.extend_from_slice(&(system.bs_antennas as u32).to_le_bytes());
    out.extend_from_slice(&(system.pilot_length as u32).to_le_bytes());
    out.extend_from_slice(&(hidden_layers as u32).to_le_bytes());
    out.extend_from_slice(&(hidden_width as u32).to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&system.noise_variance.to_le_bytes());
    for &m in &system.user_antennas {
        out.extend_from_slice(&(m as u32).to_le_bytes());
    }
    for &p in &system.power_budgets {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for &k in model.order() {
        out.extend_from_slice(&(k as u32).to_le_bytes());
    }

    let mut arrays: Vec<&[f64]> = Vec::new();
    for pilot in model.pilots() {
        arrays.push(pilot.coeffs());
    }
    for est in model.estimators() {
        for layer in est.layers() {
            arrays.push(&layer.weight);
            arrays.push(&layer.bias);
        }
    }
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.len() as u32).to_le_bytes());
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| overrun("length overflow"))?;
        if end > self.buf.len() {
            return Err(overrun("input truncated"));
        }
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn overrun(what: &str) -> Error {
    Error::Checkpoint(what.into())
}

fn dim(r: &mut Reader, what: &str) -> Result<usize> {
    let v = r.u32()?;
    if v == 0 || v > DIM_LIMIT {
        return Err(Error::Checkpoint(format!("{what} out of range: {v}")));
    }
    Ok(v as usize)
}

/// Parses and validates checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let users = dim(&mut r, "users")?;
    let bs_antennas = dim(&mut r, "bs_antennas")?;
    let pilot_length = dim(&mut r, "pilot_length")?;
    let hidden_layers = r.u32()? as usize;
    if hidden_layers > 64 {
        return Err(Error::Checkpoint(format!(
            "hidden_layers out of range: {hidden_layers}"
        )));
    }
    let hidden_width = if hidden_layers > 0 {
        dim(&mut r, "hidden_width")?
    } else {
        r.u32()? as usize
    };
    let seed = r.u64()?;
    let noise_variance = r.f64()?;

    // Per-user tables are bounded by users <= DIM_LIMIT, so preallocation
    // here is at most a few hundred kilobytes.
    let mut user_antennas = Vec::with_capacity(users);
    for _ in 0..users {
        user_antennas.push(dim(&mut r, "user_antennas")?);
    }
    let mut power_budgets = Vec::with_capacity(users);
    for _ in 0..users {
        power_budgets.push(r.f64()?);
    }
    let mut order = Vec::with_capacity(users);
    for _ in 0..users {
        order.push(r.u32()? as usize);
    }
    crate::sic::check_order(&order, users).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let system = SystemConfig::new(
        users,
        bs_antennas,
        user_antennas,
        pilot_length,
        power_budgets,
        noise_variance,
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;

    // Every array costs at least a length field plus one value, so a shape
    // whose array count cannot fit in the remaining input is rejected before
    // any expansion of the per-array length table.
    let declared_arrays = users * (1 + 2 * (hidden_layers + 1));
    if declared_arrays > r.remaining() / 12 {
        return Err(overrun("declared model larger than input"));
    }
    let expected = expected_array_lens(&system, hidden_width, hidden_layers);
    let total_params: usize = expected.iter().sum();
    if total_params > r.remaining() / 8 {
        return Err(overrun("declared model larger than input"));
    }
    let n_arrays = r.u32()? as usize;
    if n_arrays != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter arrays, header declares {n_arrays}",
            expected.len()
        )));
    }
    let mut arrays = Vec::with_capacity(n_arrays);
    for want in expected {
        let len = r.u32()? as usize;
        if len != want {
            return Err(Error::Checkpoint(format!(
                "array length {len} does not match model shape ({want})"
            )));
        }
        if len > r.remaining() / 8 {
            return Err(overrun("array length exceeds input"));
        }
        let mut a = Vec::with_capacity(len);
        for _ in 0..len {
            let v = r.f64()?;
            if !v.is_finite() {
                return Err(Error::Checkpoint("non-finite parameter value".into()));
            }
            a.push(v);
        }
        arrays.push(a);
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameter arrays",
            r.remaining()
        )));
    }
    Ok(Checkpoint {
        system,
        hidden_width,
        hidden_layers,
        seed,
        order,
        arrays,
    })
}

impl Checkpoint {
    /// Rebuilds a model carrying exactly the stored parameters.
    pub fn into_model(self) -> Result<JointModel> {
        let cfg = TrainConfig {
            hidden_width: self.hidden_width.max(1),
            hidden_layers: self.hidden_layers,
            seed: self.seed,
            pilot_init: PilotInit::Gaussian,
            sic_order: Some(self.order.clone()),
            ..TrainConfig::default()
        };
        let mut model = JointModel::new(&self.system, &cfg)?;
        let mut arrays = self.arrays.into_iter();
        for pilot in model.pilots_mut() {
            let a = arrays.next().expect("array count validated");
            pilot.coeffs_mut().copy_from_slice(&a);
            if !pilot.is_feasible() {
                return Err(Error::Checkpoint(format!(
                    "pilot {} violates its power budget",
                    pilot.user_index()
                )));
            }
        }
        for est in model.estimators_mut() {
            for layer in est.layers_mut() {
                layer
                    .weight
                    .copy_from_slice(&arrays.next().expect("array count validated"));
                layer
                    .bias
                    .copy_from_slice(&arrays.next().expect("array count validated"));
            }
        }
        Ok(model)
    }
}

pub fn save(path: &Path, model: &JointModel, seed: u64) -> Result<()> {
    std::fs::write(path, encode(model, seed))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
