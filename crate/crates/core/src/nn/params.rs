//! Named trainable arrays plus optimizer state.

use std::collections::BTreeMap;

use crate::scalar::Scalar;
use crate::tensor::NdArray;

/// One named parameter: value, gradient accumulator, Adam moments, and a
/// per-entry step counter. Non-trainable entries (batch-norm running stats)
/// are carried for checkpointing but skipped by the optimizer.
#[derive(Debug, Clone)]
pub struct ParamEntry<F> {
    pub value: NdArray<F>,
    pub grad: NdArray<F>,
    pub m: NdArray<F>,
    pub v: NdArray<F>,
    pub step: u64,
    pub trainable: bool,
}

/// Parameter registry with deterministic name-ordered iteration.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<F> {
    entries: BTreeMap<String, ParamEntry<F>>,
}

impl<F: Scalar> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: NdArray<F>, trainable: bool) {
        let shape = value.shape().to_vec();
        let prev = self.entries.insert(
            name.to_string(),
            ParamEntry {
                grad: NdArray::zeros(&shape),
                m: NdArray::zeros(&shape),
                v: NdArray::zeros(&shape),
                step: 0,
                trainable,
                value,
            },
        );
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &ParamEntry<F> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamEntry<F> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn value(&self, name: &str) -> &NdArray<F> {
        &self.get(name).value
    }

    /// Adds `g` into the gradient accumulator of `name`.
    pub fn accumulate_grad(&mut self, name: &str, g: &NdArray<F>) {
        let entry = self.get_mut(name);
        assert_eq!(entry.grad.shape(), g.shape(), "gradient shape for {name}");
        for (acc, &v) in entry.grad.data_mut().iter_mut().zip(g.data()) {
            *acc += v;
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.data_mut().fill(F::zero());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Count of trainable scalar parameters.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Count of trainable scalars in entries whose name starts with `prefix`.
    pub fn num_trainable_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, e)| e.trainable && k.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    /// One bias-corrected Adam update on every trainable entry, visited in
    /// name order.
    pub fn adam_step(&mut self, lr: F, beta1: F, beta2: F, eps: F) {
        let one = F::one();
        for entry in self.entries.values_mut() {
            if !entry.trainable {
                continue;
            }
            entry.step += 1;
            let t = entry.step as i32;
            let bc1 = one - beta1.powi(t);
            let bc2 = one - beta2.powi(t);
            let value = entry.value.data_mut();
            let grad = entry.grad.data();
            let m = entry.m.data_mut();
            let v = entry.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (one - beta1) * g;
                v[i] = beta2 * v[i] + (one - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Precision-cast copy of the whole store (values, moments, counters).
    pub fn cast<G: Scalar>(&self) -> ParameterStore<G> {
        let mut out = ParameterStore::new();
        for (name, entry) in &self.entries {
            out.entries.insert(
                name.clone(),
                ParamEntry {
                    value: entry.value.cast(),
                    grad: NdArray::zeros(entry.grad.shape()),
                    m: entry.m.cast(),
                    v: entry.v.cast(),
                    step: entry.step,
                    trainable: entry.trainable,
                },
            );
        }
        out
    }

    /// Binary snapshot: names, shapes, values, moments, step counters.
    /// Gradients are scratch and not persisted. Values are stored as f64.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, entry) in &self.entries {
            let bytes = name.as_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(bytes);
            out.push(entry.trainable as u8);
            out.extend_from_slice(&entry.step.to_le_bytes());
            out.extend_from_slice(&(entry.value.shape().len() as u32).to_le_bytes());
            for &d in entry.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for arr in [&entry.value, &entry.m, &entry.v] {
                for &x in arr.data() {
                    out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
                }
            }
        }
    }

    pub fn read_from(input: &mut impl std::io::Read) -> std::io::Result<Self> {
        let mut store = ParameterStore::new();
        let count = read_u64(input)?;
        for _ in 0..count {
            let name_len = read_u32(input)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            input.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let trainable = read_u8(input)? != 0;
            let step = read_u64(input)?;
            let rank = read_u32(input)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(input)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut arrays = Vec::with_capacity(3);
            for _ in 0..3 {
                let mut data = Vec::with_capacity(len);
                for _ in 0..len {
                    data.push(F::from_f64(read_f64(input)?));
                }
                arrays.push(NdArray::from_vec(&shape, data));
            }
            let v = arrays.pop().unwrap();
            let m = arrays.pop().unwrap();
            let value = arrays.pop().unwrap();
            store.entries.insert(
                name,
                ParamEntry {
                    grad: NdArray::zeros(&shape),
                    value,
                    m,
                    v,
                    step,
                    trainable,
                },
            );
        }
        Ok(store)
    }
}

pub(crate) fn read_u8(input: &mut impl std::io::Read) -> std::io::Result<u8> {
    let mut b = [0u8; 1];
    input.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u32(input: &mut impl std::io::Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(input: &mut impl std::io::Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(input: &mut impl std::io::Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", NdArray::from_vec(&[values.len()], values.to_vec()), true);
        s
    }

    #[test]
    fn adam_noop_on_zero_gradient() {
        let mut s = store_with(&[1.0, -2.0, 3.0]);
        s.adam_step(1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(s.value("w").data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_single_step_hand_computed() {
        // One step with constant gradient g from zero state:
        // m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps)
        let mut s = store_with(&[0.5]);
        let g = 0.25;
        s.get_mut("w").grad.data_mut()[0] = g;
        let (lr, eps) = (1e-2, 1e-8);
        s.adam_step(lr, 0.9, 0.999, eps);
        let expect = 0.5 - lr * g / (g + eps);
        assert!((s.value("w").data()[0] - expect).abs() < 1e-15);
        assert_eq!(s.get("w").step, 1);
    }

    #[test]
    fn adam_deterministic_across_stores() {
        let run = || {
            let mut s = store_with(&[1.0, 2.0]);
            for i in 0..10 {
                s.get_mut("w").grad.data_mut()[0] = 0.1 * i as f64;
                s.get_mut("w").grad.data_mut()[1] = -0.05;
                s.adam_step(1e-3, 0.9, 0.999, 1e-8);
            }
            s.value("w").data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_trainable_entries_skipped() {
        let mut s = store_with(&[1.0]);
        s.insert("stats", NdArray::from_vec(&[1], vec![7.0]), false);
        s.get_mut("stats").grad.data_mut()[0] = 100.0;
        s.get_mut("w").grad.data_mut()[0] = 1.0;
        s.adam_step(1e-3, 0.9, 0.999, 1e-8);
        assert_eq!(s.value("stats").data(), &[7.0]);
        assert_eq!(s.num_trainable(), 1);
    }

    #[test]
    fn serialization_round_trip_bit_exact() {
        let mut s = store_with(&[1.5, -0.25, 1e-300]);
        s.insert("bn.run_mean", NdArray::from_vec(&[2], vec![0.5, 0.75]), false);
        s.get_mut("w").grad.data_mut()[0] = 1.0;
        s.adam_step(1e-3, 0.9, 0.999, 1e-8);

        let mut bytes = Vec::new();
        s.write_to(&mut bytes);
        let restored = ParameterStore::<f64>::read_from(&mut bytes.as_slice()).unwrap();

        for (name, entry) in s.iter() {
            let r = restored.get(name);
            assert_eq!(entry.value, r.value, "{name} value");
            assert_eq!(entry.m, r.m);
            assert_eq!(entry.v, r.v);
            assert_eq!(entry.step, r.step);
            assert_eq!(entry.trainable, r.trainable);
        }
        // re-serialization is byte-identical
        let mut bytes2 = Vec::new();
        restored.write_to(&mut bytes2);
        assert_eq!(bytes, bytes2);
    }
}
