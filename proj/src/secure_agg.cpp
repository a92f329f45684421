#include "fedplant/secure_agg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedplant/errors.hpp"
#include "fedplant/rng.hpp"

namespace fedplant {

void QuantizationSpec::validate(std::size_t max_clients) const {
  if (scale_bits < 8 || scale_bits > 40) {
    throw ConfigError("scale_bits must be in [8,40]");
  }
  if (!(clip_range > 0.0)) throw ConfigError("clip_range must be > 0");
  const double budget = std::ldexp(1.0, 62) / static_cast<double>(std::max<std::size_t>(max_clients, 1));
  if (!(clip_range * scale() < budget)) {
    throw ConfigError("clip_range * 2^scale_bits too large for " +
                      std::to_string(max_clients) + " clients");
  }
}

MaskSeedMatrix MaskSeedMatrix::derive(uint64_t group_seed,
                                      const std::vector<uint32_t>& plant_ids) {
  MaskSeedMatrix m;
  for (std::size_t i = 0; i < plant_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < plant_ids.size(); ++j) {
      const uint32_t lo = std::min(plant_ids[i], plant_ids[j]);
      const uint32_t hi = std::max(plant_ids[i], plant_ids[j]);
      uint64_t st = group_seed;
      splitmix64(st);
      st ^= (static_cast<uint64_t>(lo) << 32) | hi;
      PairSeed seed{splitmix64(st), splitmix64(st)};
      m.insert(lo, hi, seed);
    }
  }
  return m;
}

void MaskSeedMatrix::insert(uint32_t a, uint32_t b, PairSeed seed) {
  if (a == b) throw ContractViolation("pair seed requires two distinct plants");
  seeds_[{std::min(a, b), std::max(a, b)}] = seed;
}

const PairSeed& MaskSeedMatrix::seed_for(uint32_t a, uint32_t b) const {
  const auto it = seeds_.find({std::min(a, b), std::max(a, b)});
  if (it == seeds_.end()) {
    throw ProtocolError("missing pair seed for plants " + std::to_string(a) + "," +
                        std::to_string(b));
  }
  return it->second;
}

bool MaskSeedMatrix::has(uint32_t a, uint32_t b) const {
  return seeds_.contains({std::min(a, b), std::max(a, b)});
}

namespace {

inline uint32_t rotl32(uint32_t x, int k) { return (x << k) | (x >> (32 - k)); }

void quarter_round(uint32_t& a, uint32_t& b, uint32_t& c, uint32_t& d) {
  a += b; d ^= a; d = rotl32(d, 16);
  c += d; b ^= c; b = rotl32(b, 12);
  a += b; d ^= a; d = rotl32(d, 8);
  c += d; b ^= c; b = rotl32(b, 7);
}

// RFC 8439 block function; emits the 16 output words.
void chacha20_block(const uint32_t key[8], uint32_t counter,
                    const uint32_t nonce[3], uint32_t out[16]) {
  const uint32_t init[16] = {
      0x61707865u, 0x3320646eu, 0x79622d32u, 0x6b206574u,
      key[0], key[1], key[2], key[3], key[4], key[5], key[6], key[7],
      counter, nonce[0], nonce[1], nonce[2]};
  uint32_t s[16];
  std::copy(init, init + 16, s);
  for (int round = 0; round < 10; ++round) {
    quarter_round(s[0], s[4], s[8], s[12]);
    quarter_round(s[1], s[5], s[9], s[13]);
    quarter_round(s[2], s[6], s[10], s[14]);
    quarter_round(s[3], s[7], s[11], s[15]);
    quarter_round(s[0], s[5], s[10], s[15]);
    quarter_round(s[1], s[6], s[11], s[12]);
    quarter_round(s[2], s[7], s[8], s[13]);
    quarter_round(s[3], s[4], s[9], s[14]);
  }
  for (int i = 0; i < 16; ++i) out[i] = s[i] + init[i];
}

}  // namespace

std::vector<uint64_t> derive_mask(const PairSeed& seed, uint32_t round,
                                  int direction, std::size_t q) {
  if (q < 1) throw ContractViolation("derive_mask: q must be >= 1");
  if (direction != 1 && direction != -1) {
    throw ContractViolation("derive_mask: direction must be +1 or -1");
  }
  // 256-bit key = the 128-bit pair seed twice; round index in the nonce.
  uint32_t key[8];
  for (int w = 0; w < 2; ++w) {
    key[2 * w] = static_cast<uint32_t>(seed[w]);
    key[2 * w + 1] = static_cast<uint32_t>(seed[w] >> 32);
    key[4 + 2 * w] = key[2 * w];
    key[4 + 2 * w + 1] = key[2 * w + 1];
  }
  const uint32_t nonce[3] = {round, 0x4650414du, 0u};  // "FPAM" domain tag

  std::vector<uint64_t> mask(q);
  uint32_t block[16];
  uint32_t counter = 0;
  for (std::size_t i = 0; i < q; i += 8) {
    chacha20_block(key, counter++, nonce, block);
    const std::size_t take = std::min<std::size_t>(8, q - i);
    for (std::size_t w = 0; w < take; ++w) {
      mask[i + w] = static_cast<uint64_t>(block[2 * w]) |
                    (static_cast<uint64_t>(block[2 * w + 1]) << 32);
    }
  }
  if (direction == -1) {
    for (auto& word : mask) word = ~word + 1;  // negate mod 2^64
  }
  return mask;
}

std::vector<uint64_t> quantize(const ParameterVector& params, double weight,
                               const QuantizationSpec& spec,
                               std::size_t* clip_events) {
  if (!(weight >= 0.0 && weight <= 1.0)) {
    throw ContractViolation("quantize: weight must be in [0,1]");
  }
  if (!all_finite(params.values)) {
    throw ContractViolation("quantize: non-finite parameters");
  }
  const double scale = spec.scale();
  std::vector<uint64_t> words;
  words.reserve(params.values.size());
  for (double v : params.values) {
    double clipped = v;
    if (clipped > spec.clip_range) {
      clipped = spec.clip_range;
      if (clip_events) ++*clip_events;
    } else if (clipped < -spec.clip_range) {
      clipped = -spec.clip_range;
      if (clip_events) ++*clip_events;
    }
    const long long fixed = std::llround(clipped * weight * scale);
    words.push_back(static_cast<uint64_t>(static_cast<int64_t>(fixed)));
  }
  return words;
}

MaskedUpdate mask_update(const ParameterVector& params, double weight,
                         uint32_t plant_id, const std::vector<uint32_t>& peers,
                         const MaskSeedMatrix& seeds, uint32_t round,
                         const QuantizationSpec& spec,
                         std::size_t* clip_events) {
  MaskedUpdate update;
  update.plant_id = plant_id;
  update.round = round;
  update.masked_values = quantize(params, weight, spec, clip_events);
  for (uint32_t peer : peers) {
    if (peer == plant_id) continue;
    const PairSeed& seed = seeds.seed_for(plant_id, peer);
    const int direction = plant_id < peer ? 1 : -1;
    const auto mask = derive_mask(seed, round, direction, update.masked_values.size());
    for (std::size_t i = 0; i < mask.size(); ++i) update.masked_values[i] += mask[i];
  }
  return update;
}

ParameterVector aggregate_masked(const std::vector<MaskedUpdate>& updates,
                                 const std::vector<uint32_t>& expected_plants,
                                 const ModelArchitecture& arch,
                                 const QuantizationSpec& spec) {
  if (expected_plants.empty()) throw ContractViolation("aggregate_masked: no plants registered");
  const std::size_t q = arch.parameter_count();
  std::vector<uint32_t> seen;
  uint32_t round = updates.empty() ? 0 : updates.front().round;
  for (const auto& u : updates) {
    if (u.round != round) {
      throw ProtocolError("aggregate_masked: mixed rounds (" + std::to_string(round) +
                          " vs " + std::to_string(u.round) + ")");
    }
    if (u.masked_values.size() != q) {
      throw ProtocolError("aggregate_masked: update length mismatch from plant " +
                          std::to_string(u.plant_id));
    }
    seen.push_back(u.plant_id);
  }
  std::sort(seen.begin(), seen.end());
  std::vector<uint32_t> expected = expected_plants;
  std::sort(expected.begin(), expected.end());
  if (seen != expected) {
    throw ProtocolError("aggregate_masked: round " + std::to_string(round) +
                        " is missing updates or has unexpected plants; aborting round");
  }

  std::vector<uint64_t> sum(q, 0);
  for (const auto& u : updates) {
    for (std::size_t i = 0; i < q; ++i) sum[i] += u.masked_values[i];
  }

  ParameterVector result;
  result.arch_id = arch.hash();
  result.values.resize(q);
  const double inv_scale = 1.0 / spec.scale();
  for (std::size_t i = 0; i < q; ++i) {
    result.values[i] = static_cast<double>(static_cast<int64_t>(sum[i])) * inv_scale;
  }
  if (!all_finite(result.values)) {
    throw DivergenceError("aggregate_masked: non-finite aggregate");
  }
  return result;
}

}  // namespace fedplant
