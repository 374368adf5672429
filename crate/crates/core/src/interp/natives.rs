use std::time::{Duration, Instant};

use super::{RunErrorKind, Value};

/// xorshift64* generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    /// A zero seed would be a fixed point, so it is replaced.
    pub fn new(seed: u64) -> Self {
        XorShift64Star { state: if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed } }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1) from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for a named stream.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    seed ^ fnv1a64(name.as_bytes())
}

/// Random-access view of the `native` stream. Draws are addressed by
/// index; the generator is kept positioned so increasing indices are cheap.
#[derive(Clone, Debug)]
pub struct NativeStream {
    seed: u64,
    rng: XorShift64Star,
    next_index: u64,
}

impl NativeStream {
    pub fn new(seed: u64) -> Self {
        let seed = stream_seed(seed, "native");
        NativeStream { seed, rng: XorShift64Star::new(seed), next_index: 0 }
    }

    pub fn draw(&mut self, index: u64) -> f64 {
        if index < self.next_index {
            self.rng = XorShift64Star::new(self.seed);
            self.next_index = 0;
        }
        while self.next_index < index {
            self.rng.next_u64();
            self.next_index += 1;
        }
        self.next_index += 1;
        self.rng.next_f64()
    }
}

fn num(name: &str, v: &Value) -> Result<f64, RunErrorKind> {
    match v {
        Value::Num(x) => Ok(*x),
        other => Err(RunErrorKind::Native(format!("{name} expects a number, got {}", other.type_name()))),
    }
}

fn index_arg(name: &str, v: &Value) -> Result<u64, RunErrorKind> {
    let x = num(name, v)?;
    if x < 0.0 || x.fract() != 0.0 || !x.is_finite() {
        return Err(RunErrorKind::Native(format!("{name} expects a non-negative integer, got {x}")));
    }
    Ok(x as u64)
}

/// Evaluates a native call. Results depend only on (name, args, step) and
/// the run seed held by `stream`.
pub fn eval_native(name: &str, args: &[Value], step: u64, stream: &mut NativeStream) -> Result<Value, RunErrorKind> {
    let Some(arity) = crate::frontend::native_arity(name) else {
        return Err(RunErrorKind::UnknownNative(name.to_string()));
    };
    if arity != args.len() {
        return Err(RunErrorKind::NativeArity { name: name.to_string(), expected: arity, got: args.len() });
    }
    match name {
        "coin" => {
            let k = index_arg(name, &args[0])?;
            Ok(Value::Bool(stream.draw(step * 31 + k) < 0.5))
        }
        "choice" => {
            let n = index_arg(name, &args[0])?;
            let k = index_arg(name, &args[1])?;
            if n == 0 {
                return Err(RunErrorKind::Native("choice(0, _) has no outcomes".into()));
            }
            Ok(Value::Num((stream.draw(step * 31 + k) * n as f64).floor()))
        }
        "clip" => {
            let lo = num(name, &args[1])?;
            let hi = num(name, &args[2])?;
            let clamp = |x: f64| if x < lo { lo } else if x > hi { hi } else { x };
            match &args[0] {
                Value::Num(x) => Ok(Value::Num(clamp(*x))),
                Value::List(xs) => Ok(Value::List(xs.iter().map(|&x| clamp(x)).collect())),
                other => Err(RunErrorKind::Native(format!("clip expects numbers, got {}", other.type_name()))),
            }
        }
        "len" => match &args[0] {
            Value::List(xs) => Ok(Value::Num(xs.len() as f64)),
            Value::Str(s) => Ok(Value::Num(s.chars().count() as f64)),
            Value::Num(_) => Ok(Value::Num(1.0)),
            other => Err(RunErrorKind::Native(format!("len expects a list, got {}", other.type_name()))),
        },
        "spin" => {
            let us = num(name, &args[0])?;
            if us > 0.0 {
                let until = Instant::now() + Duration::from_nanos((us * 1000.0) as u64);
                while Instant::now() < until {
                    std::hint::spin_loop();
                }
            }
            Ok(Value::Num(0.0))
        }
        "step" => Ok(Value::Num(step as f64)),
        _ => unreachable!("registry and dispatch agree"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn draws_are_random_access() {
        let mut a = NativeStream::new(7);
        let forward: Vec<f64> = (0..50).map(|i| a.draw(i)).collect();
        let mut b = NativeStream::new(7);
        for i in (0..50).rev() {
            assert_eq!(b.draw(i).to_bits(), forward[i as usize].to_bits());
        }
        assert!(forward.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn clip_example() {
        let mut s = NativeStream::new(0);
        let out = eval_native(
            "clip",
            &[Value::List(vec![-2.0, 0.5, 9.0]), Value::Num(0.0), Value::Num(1.0)],
            0,
            &mut s,
        )
        .unwrap();
        assert_eq!(out, Value::List(vec![0.0, 0.5, 1.0]));
    }

    #[test]
    fn coin_is_reproducible() {
        let seq = |seed| {
            let mut s = NativeStream::new(seed);
            (0..20).map(|step| eval_native("coin", &[Value::Num(0.0)], step, &mut s).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(seq(3), seq(3));
    }

    #[test]
    fn arity_and_unknown() {
        let mut s = NativeStream::new(0);
        assert!(matches!(eval_native("nope", &[], 0, &mut s), Err(RunErrorKind::UnknownNative(_))));
        assert!(matches!(eval_native("len", &[], 0, &mut s), Err(RunErrorKind::NativeArity { .. })));
    }
}
