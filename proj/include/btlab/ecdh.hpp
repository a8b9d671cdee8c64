#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "btlab/bytes.hpp"

namespace btlab::ecdh {

// 256-bit unsigned integer, little-endian limbs. Big enough for P-256 and
// comfortable for the tiny test curve.
struct U256 {
  std::array<uint64_t, 4> limb{};

  static U256 from_u64(uint64_t v) { return U256{{v, 0, 0, 0}}; }
  static U256 from_hex(std::string_view hex);

  bool is_zero() const {
    return limb[0] == 0 && limb[1] == 0 && limb[2] == 0 && limb[3] == 0;
  }
  bool is_even() const { return (limb[0] & 1) == 0; }
  bool bit(int i) const { return (limb[i / 64] >> (i % 64)) & 1; }
  int bit_length() const;
  uint64_t low() const { return limb[0]; }

  bool operator==(const U256&) const = default;
  // Numeric ordering: most significant limb first.
  bool operator<(const U256& other) const {
    for (int i = 3; i >= 0; i--) {
      if (limb[i] != other.limb[i]) return limb[i] < other.limb[i];
    }
    return false;
  }
};

U256 add_mod(const U256& a, const U256& b, const U256& p);
U256 sub_mod(const U256& a, const U256& b, const U256& p);
U256 mul_mod(const U256& a, const U256& b, const U256& p);
U256 pow_mod(const U256& base, const U256& exponent, const U256& p);
U256 inv_mod(const U256& a, const U256& p);  // p prime
U256 reduce(const U256& a, const U256& p);

struct Point {
  U256 x;
  U256 y;
  bool infinity = false;

  static Point identity() { return Point{{}, {}, true}; }
  bool operator==(const Point&) const = default;
};

struct CurveParams {
  U256 p;
  U256 a;
  U256 b;
  Point base;
  U256 n;  // group order

  // Exhaustively checkable curve over a 3-digit prime whose cubic
  // x^3 + ax + b has no roots, so no (x, 0) point is ever valid.
  static const CurveParams& tiny();
  // Standard P-256 parameters.
  static const CurveParams& p256();
};

// True iff y^2 = x^3 + ax + b (mod p) or the point is the identity.
bool is_on_curve(const Point& point, const CurveParams& curve);

// Affine group law; doubling a point with y = 0 yields the identity
// (order-2 element), which is exactly what the fixed-coordinate attack
// leans on.
Point add_points(const Point& lhs, const Point& rhs, const CurveParams& curve);

// Double-and-add. With validate set, off-curve inputs throw
// Error{InvalidPoint}; without it the arithmetic runs on whatever it gets.
Point scalar_mult(const U256& k, const Point& point, const CurveParams& curve,
                  bool validate);

enum class AttackerKeyParity { Random, Even };

struct ExperimentConfig {
  const CurveParams* curve = &CurveParams::tiny();
  int trials = 10000;
  AttackerKeyParity attacker_parity = AttackerKeyParity::Random;
  bool victim_validates = false;
  uint64_t seed = 0x1337;
};

struct ExperimentResult {
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;
};

// Simulates `trials` pairings in which the attacker replaces both public
// keys with their y-zeroed twins and predicts the victim-side shared
// secret from its own computation. Trials are independently seeded, so
// results do not depend on evaluation order.
ExperimentResult invalid_curve_experiment(const ExperimentConfig& config);

// Deterministic per-trial random stream.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}
  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
};

// Uniform scalar in [1, n).
U256 random_scalar(SplitMix64& rng, const U256& n);

}  // namespace btlab::ecdh
