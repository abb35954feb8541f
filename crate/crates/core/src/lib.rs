// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Thurston-obstruction invariants and combinatorial moduli.
//!
//! * [`spectral`]: Perron–Frobenius data of non-negative matrices.
//! * [`multicurve`]: transition matrices of multicurves, Levy cycles, and the
//!   critical exponent `Q(Γ)` with its aggregate `Q(f)` over a catalog.
//! * [`modulus`]: combinatorial `Q`-modulus of curve families on finite covers,
//!   with optimality certificates.
//! * [`covers`]: model grid covers, covering maps, the Lattès-model cover
//!   dynamics, and the growth-bound check built on them.

pub mod covers;
pub mod modulus;
pub mod multicurve;
pub mod spectral;
