//! Pairing parameter generation, named presets and the JSON parameter file.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{is_probable_prime, rand_prime, AlgebraError, Modulus, MR_ROUNDS};
use crate::curve::{CurveError, CurveParams, Point};
use crate::pairing::{PairingError, PairingParams};

/// Candidate primes r tried before generation gives up.
pub const MAX_GENERATION_ATTEMPTS: usize = 256;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("no suitable prime p found after {0} attempts")]
    GenerationTimeout(usize),
    #[error("unsupported sizes: p {p_bits} bits, r {r_bits} bits")]
    BadSizes { p_bits: u64, r_bits: u64 },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("malformed parameter file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Default subgroup size for a given field size.
pub fn default_r_bits(p_bits: u64) -> u64 {
    if p_bits <= 64 {
        p_bits.saturating_sub(16).max(16)
    } else {
        (p_bits - 32).min(160)
    }
}

/// Picks a random prime r, then walks p = k*r - 1 over k = 0 (mod 4) until p
/// is a prime of exactly `p_bits` bits. Such p is 3 mod 4 and r | p + 1 by
/// construction.
pub fn generate(p_bits: u64, r_bits: u64, rng: &mut ChaCha20Rng) -> Result<PairingParams, ParamsError> {
    if r_bits < 16 || p_bits < r_bits + 4 {
        return Err(ParamsError::BadSizes { p_bits, r_bits });
    }
    let k_bits = p_bits - r_bits;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let r = rand_prime(r_bits, rng)?.value().clone();
        let mut k = rng.gen_biguint(k_bits);
        k.set_bit(k_bits - 1, true);
        k -= &k % 4u8;
        if k.is_zero() {
            k = BigUint::from(4u8);
        }
        // prime gaps near 2^p_bits average p_bits * ln 2; allow a generous walk
        for _ in 0..(8 * p_bits) {
            let p = &k * &r - 1u8;
            if p.bits() > p_bits {
                break;
            }
            if p.bits() == p_bits && is_probable_prime(&p, MR_ROUNDS) {
                return assemble(p, r, rng);
            }
            k += 4u8;
        }
    }
    Err(ParamsError::GenerationTimeout(MAX_GENERATION_ATTEMPTS))
}

fn assemble(p: BigUint, r: BigUint, rng: &mut ChaCha20Rng) -> Result<PairingParams, ParamsError> {
    let cofactor = (&p + 1u8) / &r;
    let modulus = Modulus::prime(p)?;
    let base = CurveParams::over_prime_field(&BigUint::one(), &BigUint::zero(), &modulus)?;
    let generator = loop {
        let x = rng.gen_biguint_below(modulus.value());
        match base.lift(&x) {
            Ok(pt) => {
                let g = crate::curve::scalar_mul(&pt, &cofactor, &base)?;
                if !g.is_infinity() {
                    break g;
                }
            }
            Err(CurveError::NonResidue(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    };
    let curve = base.with_subgroup(r, cofactor, generator)?;
    Ok(PairingParams::new(curve)?)
}

/// A named parameter set, regenerated deterministically from its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurvePreset {
    pub name: &'static str,
    pub p_bits: u64,
    pub r_bits: u64,
    pub seed: u64,
}

pub const PRESETS: [CurvePreset; 5] = [
    CurvePreset { name: "toy-32", p_bits: 32, r_bits: 24, seed: 32 },
    CurvePreset { name: "toy-64", p_bits: 64, r_bits: 48, seed: 64 },
    CurvePreset { name: "p160", p_bits: 160, r_bits: 128, seed: 160 },
    CurvePreset { name: "p256", p_bits: 256, r_bits: 160, seed: 256 },
    CurvePreset { name: "p512", p_bits: 512, r_bits: 160, seed: 512 },
];

impl CurvePreset {
    pub fn by_name(name: &str) -> Result<CurvePreset, ParamsError> {
        PRESETS
            .iter()
            .find(|p| p.name == name)
            .copied()
            .ok_or_else(|| ParamsError::UnknownPreset(name.to_string()))
    }

    /// Generated once per process and cached.
    pub fn params(&self) -> Result<PairingParams, ParamsError> {
        static CACHE: OnceLock<Mutex<HashMap<&'static str, PairingParams>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(pp) = cache.lock().unwrap().get(self.name) {
            return Ok(pp.clone());
        }
        let pp = generate(self.p_bits, self.r_bits, &mut ChaCha20Rng::seed_from_u64(self.seed))?;
        cache.lock().unwrap().insert(self.name, pp.clone());
        Ok(pp)
    }
}

/// Loads a preset by name.
pub fn preset(name: &str) -> Result<PairingParams, ParamsError> {
    CurvePreset::by_name(name)?.params()
}

/// y^2 = x^3 + x over p = 547 with r = 137, cofactor 4. Small enough to
/// enumerate the whole subgroup.
pub fn toy_params() -> PairingParams {
    let p = Modulus::prime(BigUint::from(547u32)).unwrap();
    let base = CurveParams::over_prime_field(&BigUint::one(), &BigUint::zero(), &p).unwrap();
    let cofactor = BigUint::from(4u8);
    let g = (2u32..)
        .find_map(|x| {
            let pt = base.lift(&BigUint::from(x)).ok()?;
            let g = crate::curve::scalar_mul(&pt, &cofactor, &base).ok()?;
            (!g.is_infinity()).then_some(g)
        })
        .unwrap();
    let curve = base.with_subgroup(BigUint::from(137u32), cofactor, g).unwrap();
    PairingParams::new(curve).unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorJson {
    pub x: String,
    pub y: String,
}

/// On-disk parameter file. Integers are decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub name: String,
    pub p_bits: u64,
    pub r_bits: u64,
    pub p: String,
    pub r: String,
    pub a: String,
    pub b: String,
    pub cofactor: String,
    pub generator: GeneratorJson,
}

fn parse_dec(field: &str, s: &str) -> Result<BigUint, ParamsError> {
    s.parse::<BigUint>()
        .map_err(|_| ParamsError::Malformed(format!("{field} is not a decimal integer")))
}

impl ParamsFile {
    pub fn from_params(name: &str, pp: &PairingParams) -> ParamsFile {
        let g = pp.generator();
        ParamsFile {
            name: name.to_string(),
            p_bits: pp.p().bits(),
            r_bits: pp.r().bits(),
            p: pp.p().value().to_string(),
            r: pp.r().to_string(),
            a: pp.curve().a().residue().to_string(),
            b: pp.curve().b().residue().to_string(),
            cofactor: pp.cofactor().to_string(),
            generator: GeneratorJson {
                x: g.x().map(|v| v.residue().to_string()).unwrap_or_default(),
                y: g.y().map(|v| v.residue().to_string()).unwrap_or_default(),
            },
        }
    }

    /// Rebuilds and fully validates the parameters.
    pub fn to_params(&self) -> Result<PairingParams, ParamsError> {
        let p = Modulus::prime(parse_dec("p", &self.p)?)?;
        let a = parse_dec("a", &self.a)?;
        let b = parse_dec("b", &self.b)?;
        let r = parse_dec("r", &self.r)?;
        let cofactor = parse_dec("cofactor", &self.cofactor)?;
        let gx = p.element(parse_dec("generator.x", &self.generator.x)?)?;
        let gy = p.element(parse_dec("generator.y", &self.generator.y)?)?;
        let curve = CurveParams::over_prime_field(&a, &b, &p)?.with_subgroup(r, cofactor, Point::affine(gx, gy)?)?;
        let pp = PairingParams::new(curve)?;
        if pp.p().bits() != self.p_bits || pp.r().bits() != self.r_bits {
            return Err(ParamsError::Malformed("declared bit sizes do not match".into()));
        }
        Ok(pp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn from_json(s: &str) -> Result<ParamsFile, ParamsError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::scalar_mul;

    #[test]
    fn generated_params_satisfy_invariants() {
        for (pb, rb, seed) in [(32u64, 24u64, 1u64), (48, 32, 2), (64, 48, 3)] {
            let pp = generate(pb, rb, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
            let p = pp.p().value();
            assert_eq!(p.bits(), pb);
            assert_eq!(pp.r().bits(), rb);
            assert!(((p + 1u8) % pp.r()).is_zero());
            assert_eq!(p % 4u8, BigUint::from(3u8));
            assert!(is_probable_prime(pp.r(), MR_ROUNDS));
            let g = pp.generator();
            assert!(pp.curve().is_on_curve(g));
            assert!(scalar_mul(g, pp.r(), pp.curve()).unwrap().is_infinity());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(64, 48, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let b = generate(64, 48, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        assert_eq!(ParamsFile::from_params("x", &a), ParamsFile::from_params("x", &b));
    }

    #[test]
    fn bad_sizes_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(generate(20, 18, &mut rng), Err(ParamsError::BadSizes { .. })));
        assert!(matches!(generate(64, 8, &mut rng), Err(ParamsError::BadSizes { .. })));
    }

    #[test]
    fn json_round_trip_validates() {
        let pp = preset("toy-32").unwrap();
        let file = ParamsFile::from_params("toy-32", &pp);
        let back = ParamsFile::from_json(&file.to_json()).unwrap().to_params().unwrap();
        assert_eq!(back, pp);

        let mut broken = file.clone();
        broken.r = "12345".into();
        assert!(broken.to_params().is_err());
        let mut broken = file;
        broken.generator.y = "1".into();
        assert!(broken.to_params().is_err());
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("p9000"), Err(ParamsError::UnknownPreset(_))));
    }

    #[test]
    fn toy_params_shape() {
        let pp = toy_params();
        assert_eq!(pp.r(), &BigUint::from(137u32));
        assert_eq!(pp.final_exp(), &BigUint::from((547u32 * 547 - 1) / 137));
    }
}
