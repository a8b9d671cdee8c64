#include "btlab/ecdh.hpp"

#include "btlab/errors.hpp"

namespace btlab::ecdh {

namespace {

// add with carry out; returns carry
uint64_t add_raw(U256& out, const U256& a, const U256& b) {
  unsigned __int128 carry = 0;
  for (int i = 0; i < 4; i++) {
    unsigned __int128 sum = carry + a.limb[i] + b.limb[i];
    out.limb[i] = static_cast<uint64_t>(sum);
    carry = sum >> 64;
  }
  return static_cast<uint64_t>(carry);
}

// a - b with borrow out
uint64_t sub_raw(U256& out, const U256& a, const U256& b) {
  unsigned __int128 borrow = 0;
  for (int i = 0; i < 4; i++) {
    unsigned __int128 lhs = a.limb[i];
    unsigned __int128 rhs = static_cast<unsigned __int128>(b.limb[i]) + borrow;
    if (lhs >= rhs) {
      out.limb[i] = static_cast<uint64_t>(lhs - rhs);
      borrow = 0;
    } else {
      out.limb[i] = static_cast<uint64_t>((static_cast<unsigned __int128>(1)
                                           << 64) +
                                          lhs - rhs);
      borrow = 1;
    }
  }
  return static_cast<uint64_t>(borrow);
}

void shl1(U256& v, uint64_t& carry_out) {
  carry_out = v.limb[3] >> 63;
  for (int i = 3; i > 0; i--) {
    v.limb[i] = (v.limb[i] << 1) | (v.limb[i - 1] >> 63);
  }
  v.limb[0] <<= 1;
}

bool fits_u64(const U256& v) {
  return v.limb[1] == 0 && v.limb[2] == 0 && v.limb[3] == 0;
}

}  // namespace

U256 U256::from_hex(std::string_view hex) {
  U256 out;
  if (hex.starts_with("0x") || hex.starts_with("0X")) {
    hex.remove_prefix(2);
  }
  int nibble = 0;
  for (auto it = hex.rbegin(); it != hex.rend(); ++it, ++nibble) {
    char c = *it;
    uint64_t d;
    if (c >= '0' && c <= '9') {
      d = static_cast<uint64_t>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      d = static_cast<uint64_t>(c - 'a' + 10);
    } else if (c >= 'A' && c <= 'F') {
      d = static_cast<uint64_t>(c - 'A' + 10);
    } else {
      throw Error(Errc::ParseError, "bad hex digit in scalar");
    }
    if (nibble >= 64) {
      throw Error(Errc::ParseError, "scalar wider than 256 bits");
    }
    out.limb[nibble / 16] |= d << (4 * (nibble % 16));
  }
  return out;
}

int U256::bit_length() const {
  for (int i = 3; i >= 0; i--) {
    if (limb[i] != 0) {
      return 64 * i + (64 - __builtin_clzll(limb[i]));
    }
  }
  return 0;
}

U256 reduce(const U256& a, const U256& p) {
  if (a < p) return a;
  if (fits_u64(a) && fits_u64(p)) {
    return U256::from_u64(a.limb[0] % p.limb[0]);
  }
  U256 r = a;
  // Shift-subtract; a < 2^256 keeps this bounded.
  int shift = r.bit_length() - p.bit_length();
  while (shift >= 0) {
    // q = p << shift
    U256 q{};
    for (int i = 0; i < 4; i++) {
      int word = shift / 64;
      int bits = shift % 64;
      if (i + word < 4) {
        q.limb[i + word] |= p.limb[i] << bits;
        if (bits != 0 && i + word + 1 < 4) {
          q.limb[i + word + 1] |= p.limb[i] >> (64 - bits);
        }
      }
    }
    if (!(r < q)) {
      U256 tmp;
      sub_raw(tmp, r, q);
      r = tmp;
    }
    shift--;
  }
  return r;
}

U256 add_mod(const U256& a, const U256& b, const U256& p) {
  U256 sum;
  uint64_t carry = add_raw(sum, a, b);
  if (carry != 0 || !(sum < p)) {
    U256 out;
    sub_raw(out, sum, p);
    // A carry means the true value is sum + 2^256; subtracting p once is
    // enough since a, b < p < 2^255 for our curves.
    return out;
  }
  return sum;
}

U256 sub_mod(const U256& a, const U256& b, const U256& p) {
  U256 out;
  if (sub_raw(out, a, b) != 0) {
    U256 fixed;
    add_raw(fixed, out, p);
    return fixed;
  }
  return out;
}

U256 mul_mod(const U256& a, const U256& b, const U256& p) {
  if (fits_u64(p)) {
    // Small-modulus fast path (the tiny curve lives here).
    unsigned __int128 prod =
        static_cast<unsigned __int128>(a.limb[0] % p.limb[0]) *
        (b.limb[0] % p.limb[0]);
    return U256::from_u64(static_cast<uint64_t>(prod % p.limb[0]));
  }
  // Double-and-add (Russian peasant) multiplication mod p.
  U256 result{};
  U256 base = reduce(a, p);
  U256 mult = reduce(b, p);
  for (int i = mult.bit_length() - 1; i >= 0; i--) {
    uint64_t carry;
    shl1(result, carry);
    if (carry != 0 || !(result < p)) {
      U256 tmp;
      sub_raw(tmp, result, p);
      result = tmp;
    }
    if (mult.bit(i)) {
      result = add_mod(result, base, p);
    }
  }
  return result;
}

U256 pow_mod(const U256& base, const U256& exponent, const U256& p) {
  U256 result = U256::from_u64(1);
  U256 b = reduce(base, p);
  for (int i = exponent.bit_length() - 1; i >= 0; i--) {
    result = mul_mod(result, result, p);
    if (exponent.bit(i)) {
      result = mul_mod(result, b, p);
    }
  }
  return result;
}

U256 inv_mod(const U256& a, const U256& p) {
  // Fermat: a^(p-2) mod p.
  U256 exp;
  sub_raw(exp, p, U256::from_u64(2));
  return pow_mod(a, exp, p);
}

const CurveParams& CurveParams::tiny() {
  static const CurveParams curve = [] {
    CurveParams c;
    c.p = U256::from_u64(167);
    c.a = U256::from_u64(1);
    c.b = U256::from_u64(3);
    c.base = Point{U256::from_u64(0), U256::from_u64(62), false};
    c.n = U256::from_u64(181);
    return c;
  }();
  return curve;
}

const CurveParams& CurveParams::p256() {
  static const CurveParams curve = [] {
    CurveParams c;
    c.p = U256::from_hex(
        "ffffffff00000001000000000000000000000000ffffffffffffffffffffffff");
    c.a = U256::from_hex(
        "ffffffff00000001000000000000000000000000fffffffffffffffffffffffc");
    c.b = U256::from_hex(
        "5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b");
    c.base.x = U256::from_hex(
        "6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296");
    c.base.y = U256::from_hex(
        "4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5");
    c.n = U256::from_hex(
        "ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551");
    return c;
  }();
  return curve;
}

bool is_on_curve(const Point& point, const CurveParams& curve) {
  if (point.infinity) return true;
  U256 lhs = mul_mod(point.y, point.y, curve.p);
  U256 rhs = mul_mod(mul_mod(point.x, point.x, curve.p), point.x, curve.p);
  rhs = add_mod(rhs, mul_mod(curve.a, point.x, curve.p), curve.p);
  rhs = add_mod(rhs, reduce(curve.b, curve.p), curve.p);
  return lhs == rhs;
}

Point add_points(const Point& lhs, const Point& rhs,
                 const CurveParams& curve) {
  if (lhs.infinity) return rhs;
  if (rhs.infinity) return lhs;
  const U256& p = curve.p;
  U256 lambda;
  if (lhs.x == rhs.x) {
    U256 y_sum = add_mod(lhs.y, rhs.y, p);
    if (y_sum.is_zero()) {
      // Opposite points, or doubling an order-2 point (y = 0).
      return Point::identity();
    }
    if (!(lhs.y == rhs.y)) {
      // Same x, unrelated y: only reachable off-curve; the vertical line
      // convention sends it to the identity.
      return Point::identity();
    }
    U256 three_x2 = mul_mod(U256::from_u64(3), mul_mod(lhs.x, lhs.x, p), p);
    U256 numerator = add_mod(three_x2, reduce(curve.a, p), p);
    lambda = mul_mod(numerator, inv_mod(add_mod(lhs.y, lhs.y, p), p), p);
  } else {
    U256 dy = sub_mod(rhs.y, lhs.y, p);
    U256 dx = sub_mod(rhs.x, lhs.x, p);
    lambda = mul_mod(dy, inv_mod(dx, p), p);
  }
  U256 x3 = sub_mod(sub_mod(mul_mod(lambda, lambda, p), lhs.x, p), rhs.x, p);
  U256 y3 = sub_mod(mul_mod(lambda, sub_mod(lhs.x, x3, p), p), lhs.y, p);
  return Point{x3, y3, false};
}

Point scalar_mult(const U256& k, const Point& point, const CurveParams& curve,
                  bool validate) {
  if (validate && !is_on_curve(point, curve)) {
    throw Error(Errc::InvalidPoint, "point is not on the curve");
  }
  Point result = Point::identity();
  Point addend = point;
  for (int i = 0; i < k.bit_length(); i++) {
    if (k.bit(i)) {
      result = add_points(result, addend, curve);
    }
    addend = add_points(addend, addend, curve);
  }
  return result;
}

U256 random_scalar(SplitMix64& rng, const U256& n) {
  if (fits_u64(n)) {
    return U256::from_u64(1 + rng.next() % (n.limb[0] - 1));
  }
  // Rejection sampling over the scalar's bit width.
  int bits = n.bit_length();
  for (;;) {
    U256 candidate;
    for (int i = 0; i < 4; i++) candidate.limb[i] = rng.next();
    for (int i = bits; i < 256; i++) {
      candidate.limb[i / 64] &= ~(1ull << (i % 64));
    }
    if (!candidate.is_zero() && candidate < n) return candidate;
  }
}

ExperimentResult invalid_curve_experiment(const ExperimentConfig& config) {
  const CurveParams& curve = *config.curve;
  ExperimentResult result;
  result.trials = config.trials;

  for (int trial = 0; trial < config.trials; trial++) {
    SplitMix64 rng(config.seed ^ (0x9e3779b97f4a7c15ull * (trial + 1)));
    U256 victim_key = random_scalar(rng, curve.n);
    U256 attacker_key = random_scalar(rng, curve.n);
    if (config.attacker_parity == AttackerKeyParity::Even) {
      while (!attacker_key.is_even()) {
        attacker_key = random_scalar(rng, curve.n);
      }
    }

    Point victim_pub = scalar_mult(victim_key, curve.base, curve, false);
    Point attacker_pub = scalar_mult(attacker_key, curve.base, curve, false);

    // The man in the middle zeroes both public keys' y coordinates.
    Point forged_attacker{attacker_pub.x, U256{}, false};
    Point forged_victim{victim_pub.x, U256{}, false};

    if (config.victim_validates && !is_on_curve(forged_attacker, curve)) {
      continue;  // victim rejects the key; pairing aborts
    }

    Point victim_secret = scalar_mult(victim_key, forged_attacker, curve,
                                      false);
    // The attacker's prediction is its own side of the exchange.
    Point predicted = scalar_mult(attacker_key, forged_victim, curve, false);

    bool success =
        (victim_secret.infinity && predicted.infinity) ||
        (!victim_secret.infinity && !predicted.infinity &&
         victim_secret.x == predicted.x);
    if (success) result.successes++;
  }
  result.success_rate =
      config.trials == 0 ? 0.0
                         : static_cast<double>(result.successes) /
                               static_cast<double>(config.trials);
  return result;
}

}  // namespace btlab::ecdh
