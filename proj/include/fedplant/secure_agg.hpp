#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "fedplant/model.hpp"

namespace fedplant {

// Fixed-point encoding used for masked aggregation. Arithmetic is mod 2^64
// (natural unsigned wraparound); values are clipped before quantization so
// the true weighted sum can never overflow the signed range.
struct QuantizationSpec {
  int scale_bits = 24;
  double clip_range = 64.0;

  double scale() const { return static_cast<double>(uint64_t{1} << scale_bits); }
  void validate(std::size_t max_clients) const;
};

using PairSeed = std::array<uint64_t, 2>;

// Shared 128-bit seeds per unordered plant pair. Stands in for a key
// agreement protocol: every client derives the same matrix from pre-shared
// group material.
class MaskSeedMatrix {
 public:
  static MaskSeedMatrix derive(uint64_t group_seed,
                               const std::vector<uint32_t>& plant_ids);

  void insert(uint32_t a, uint32_t b, PairSeed seed);
  const PairSeed& seed_for(uint32_t a, uint32_t b) const;  // throws if absent
  bool has(uint32_t a, uint32_t b) const;

 private:
  std::map<std::pair<uint32_t, uint32_t>, PairSeed> seeds_;
};

struct MaskedUpdate {
  uint32_t plant_id = 0;
  uint32_t round = 0;
  std::vector<uint64_t> masked_values;
};

// round(clip(v) * w * 2^scale_bits) encoded two's-complement into u64.
// `clip_events`, when supplied, is incremented once per clipped coordinate.
std::vector<uint64_t> quantize(const ParameterVector& params, double weight,
                               const QuantizationSpec& spec,
                               std::size_t* clip_events = nullptr);

// Deterministic ChaCha20 stream keyed by (pair seed, round). `direction`
// is +1 for the smaller plant id of the pair and -1 for the larger one, so
// the two directions cancel exactly mod 2^64.
std::vector<uint64_t> derive_mask(const PairSeed& seed, uint32_t round,
                                  int direction, std::size_t q);

MaskedUpdate mask_update(const ParameterVector& params, double weight,
                         uint32_t plant_id, const std::vector<uint32_t>& peers,
                         const MaskSeedMatrix& seeds, uint32_t round,
                         const QuantizationSpec& spec,
                         std::size_t* clip_events = nullptr);

// Modular sum of all expected plants' masked updates, then fixed-point
// decode. Requires exactly one update per expected plant, all for the same
// round and parameter count.
ParameterVector aggregate_masked(const std::vector<MaskedUpdate>& updates,
                                 const std::vector<uint32_t>& expected_plants,
                                 const ModelArchitecture& arch,
                                 const QuantizationSpec& spec);

}  // namespace fedplant
