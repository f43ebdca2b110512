#pragma once

// Uncompressed run-length encoding of binary masks: row-major flattening,
// alternating run lengths starting with a (possibly zero) run of zeros.
// JSON form: {"size": [H, W], "counts": [...]}.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "decaf/error.hpp"
#include "decaf/tensor.hpp"

namespace decaf {

struct Rle {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> counts;

  bool operator==(const Rle&) const = default;
};

inline Rle rle_encode(const BinaryMask& mask) {
  Rle rle{mask.height(), mask.width(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::uint8_t v : mask.data()) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      rle.counts.push_back(run);
      run = 0;
      current = bit;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

inline BinaryMask rle_decode(const Rle& rle) {
  BinaryMask mask(rle.height, rle.width, 0);
  auto data = mask.data();
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : rle.counts) {
    if (pos + run > data.size()) throw FormatError("RLE runs exceed mask size");
    std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != data.size()) throw FormatError("RLE runs do not cover the mask");
  return mask;
}

inline nlohmann::ordered_json rle_to_json(const Rle& rle) {
  nlohmann::ordered_json j;
  j["size"] = {rle.height, rle.width};
  j["counts"] = rle.counts;
  return j;
}

template <typename Json>
Rle rle_from_json(const Json& j) {
  try {
    Rle rle;
    const auto& size = j.at("size");
    if (!size.is_array() || size.size() != 2) throw FormatError("RLE size must be [H, W]");
    rle.height = size[0].template get<std::size_t>();
    rle.width = size[1].template get<std::size_t>();
    for (const auto& c : j.at("counts")) {
      if (!c.is_number_unsigned()) throw FormatError("RLE counts must be non-negative integers");
      rle.counts.push_back(c.template get<std::uint32_t>());
    }
    return rle;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad RLE: ") + e.what());
  }
}

}  // namespace decaf
