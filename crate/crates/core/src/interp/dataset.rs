use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::tensor::{num_elements, Shape, Tensor};

use super::natives::{fnv1a64, XorShift64Star};
use super::RunErrorKind;

/// One line of a JSON-lines dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    File(PathBuf),
    Synthetic { seed: u64 },
    Records(Vec<DatasetRecord>),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic { seed: 0 }
    }
}

/// Tensor for the `occurrence`-th read of `name`: element `e` is the
/// `e`-th draw of a dedicated stream mapped to [-1, 1).
pub fn synthetic_tensor(seed: u64, name: &str, occurrence: u64, shape: &[usize]) -> Tensor {
    let s = seed ^ fnv1a64(name.as_bytes()) ^ occurrence.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = XorShift64Star::new(s);
    let data = (0..num_elements(shape)).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub fn parse_jsonl(text: &str) -> Result<Vec<DatasetRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("dataset line {}: {e}", i + 1)))
        .collect()
}

#[derive(Clone, Debug)]
enum Store {
    Synthetic(u64),
    Records(HashMap<String, Vec<Tensor>>),
}

/// Dataset with per-name read cursors.
#[derive(Clone, Debug)]
pub struct Dataset {
    store: Store,
    cursors: HashMap<String, u64>,
}

pub type Cursors = HashMap<String, u64>;

impl Dataset {
    pub fn open(source: &DatasetSource) -> Result<Dataset, String> {
        let store = match source {
            DatasetSource::Synthetic { seed } => Store::Synthetic(*seed),
            DatasetSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Store::Records(Self::index(parse_jsonl(&text)?)?)
            }
            DatasetSource::Records(r) => Store::Records(Self::index(r.clone())?),
        };
        Ok(Dataset { store, cursors: HashMap::new() })
    }

    fn index(records: Vec<DatasetRecord>) -> Result<HashMap<String, Vec<Tensor>>, String> {
        let mut out: HashMap<String, Vec<Tensor>> = HashMap::new();
        for r in records {
            let t = Tensor::new(r.shape, r.data).map_err(|e| format!("dataset record `{}`: {e}", r.name))?;
            out.entry(r.name).or_default().push(t);
        }
        Ok(out)
    }

    pub fn next(&mut self, name: &str, shape: Option<&Shape>) -> Result<Tensor, RunErrorKind> {
        let o = *self.cursors.get(name).unwrap_or(&0);
        let t = match &self.store {
            Store::Synthetic(seed) => synthetic_tensor(*seed, name, o, shape.map(|s| s.as_slice()).unwrap_or(&[])),
            Store::Records(map) => {
                let list = map.get(name).ok_or_else(|| RunErrorKind::UnknownInput(name.to_string()))?;
                let t = list.get(o as usize).ok_or_else(|| RunErrorKind::DatasetExhausted(name.to_string()))?;
                if let Some(s) = shape {
                    if s.as_slice() != t.shape() {
                        return Err(RunErrorKind::Type(format!(
                            "input `{name}` has shape {:?}, program expects {s:?}",
                            t.shape()
                        )));
                    }
                }
                t.clone()
            }
        };
        self.cursors.insert(name.to_string(), o + 1);
        Ok(t)
    }

    pub fn cursors(&self) -> Cursors {
        self.cursors.clone()
    }

    pub fn restore(&mut self, cursors: Cursors) {
        self.cursors = cursors;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhausted_and_unknown() {
        let mut d = Dataset::open(&DatasetSource::Records(vec![DatasetRecord {
            name: "x".into(),
            shape: vec![2],
            data: vec![1.0, 2.0],
        }]))
        .unwrap();
        assert_eq!(d.next("x", None).unwrap(), Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(d.next("x", None), Err(RunErrorKind::DatasetExhausted("x".into())));
        assert_eq!(d.next("y", None), Err(RunErrorKind::UnknownInput("y".into())));
    }

    #[test]
    fn synthetic_is_reproducible_and_bounded() {
        let a = synthetic_tensor(5, "x", 3, &[4, 4]);
        assert_eq!(a, synthetic_tensor(5, "x", 3, &[4, 4]));
        assert_ne!(a, synthetic_tensor(5, "x", 4, &[4, 4]));
        assert!(a.data().iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn cursors_restore() {
        let mut d = Dataset::open(&DatasetSource::Synthetic { seed: 1 }).unwrap();
        let snap = d.cursors();
        let first = d.next("x", Some(&vec![2])).unwrap();
        d.restore(snap);
        assert_eq!(d.next("x", Some(&vec![2])).unwrap(), first);
    }
}
