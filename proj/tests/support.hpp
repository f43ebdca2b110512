#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "decaf/attn_dump.hpp"
#include "decaf/grounding_map.hpp"
#include "decaf/png_io.hpp"
#include "decaf/tensor.hpp"

namespace decaf::test {

/// Failed expectation inside shared check code (acceptance runner has no gtest).
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define DECAF_CHECK(cond, msg)                                                         \
  do {                                                                                 \
    if (!(cond)) {                                                                     \
      std::ostringstream decaf_check_os;                                               \
      decaf_check_os << __FILE__ << ":" << __LINE__ << ": " << #cond << " -- " << msg; \
      throw ::decaf::test::CheckFailure(decaf_check_os.str());                         \
    }                                                                                  \
  } while (0)

class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "decaf-test-XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline double uniform(std::mt19937& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_int(std::mt19937& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Minimal valid stack metadata for an (frames, gh, gw) grid with `prefix`
/// leading and `text` trailing tokens; the query is the last token.
inline AttentionStack stack_shell(std::size_t layers, std::size_t heads, TokenGrid grid,
                                  std::size_t prefix = 1, std::size_t text = 1,
                                  Modality modality = Modality::frame) {
  AttentionStack s;
  s.modality = modality;
  s.prompt_kind = PromptKind::object;
  s.grid = grid;
  if (modality == Modality::frame) s.frame_index = 0;
  s.num_heads = heads;
  s.visual_start = prefix;
  s.visual_count = grid.count();
  s.text_count = text;
  s.seq_len = prefix + grid.count() + text;
  s.query_index = s.seq_len - 1;
  s.first_stored_layer = 0;
  s.num_model_layers = static_cast<int>(layers);
  s.layers.assign(layers, std::vector<float>(s.layer_size(), 0.0f));
  return s;
}

/// Random row-stochastic stack. With `causal`, row r only attends to columns <= r.
/// Rows are normalized in float so they pass the 1e-4 row-sum check.
inline AttentionStack random_stack(std::mt19937& rng, std::size_t layers, std::size_t heads,
                                   TokenGrid grid, std::size_t prefix, std::size_t text,
                                   bool causal = false, double sparsity = 0.0) {
  AttentionStack s = stack_shell(layers, heads, grid, prefix, text);
  const std::size_t n = s.seq_len;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t end = causal ? r + 1 : n;
        float sum = 0.0f;
        for (std::size_t c = 0; c < end; ++c) {
          float v = static_cast<float>(uniform(rng));
          if (sparsity > 0.0 && uniform(rng) < sparsity) v = 0.0f;
          s.at(l, h, r, c) = v;
          sum += v;
        }
        if (sum == 0.0f) {
          s.at(l, h, r, r) = 1.0f;
          continue;
        }
        for (std::size_t c = 0; c < end; ++c) s.at(l, h, r, c) /= sum;
      }
  return s;
}

inline GroundingMap make_map(std::size_t frames, std::size_t h, std::size_t w,
                             const std::vector<double>& values, double scale = 1.0,
                             Normalization n = Normalization::raw) {
  GroundingMap m;
  m.values = Tensor3<double>(frames, h, w);
  if (values.size() != m.values.size()) throw std::invalid_argument("make_map: size mismatch");
  std::ranges::copy(values, m.values.data().begin());
  m.scale_y = m.scale_x = scale;
  m.normalization = n;
  return m;
}

inline BinaryMask make_mask(std::size_t h, std::size_t w, std::size_t y0, std::size_t y1,
                            std::size_t x0, std::size_t x1) {
  BinaryMask m(h, w, 0);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m(y, x) = 1;
  return m;
}

inline BinaryMask random_mask(std::mt19937& rng, std::size_t h, std::size_t w, double p) {
  BinaryMask m(h, w, 0);
  for (auto& v : m.data()) v = uniform(rng) < p ? 1 : 0;
  return m;
}

/// Label video: `rect` of id `id` at (y0 + dy*t, x0 + dx*t), size hh x ww.
struct MovingRect {
  std::uint8_t id;
  long y0, x0;
  std::size_t hh, ww;
  long dy = 0, dx = 0;
};

inline std::vector<LabelImage> label_video(std::size_t frames, std::size_t h, std::size_t w,
                                           const std::vector<MovingRect>& rects) {
  std::vector<LabelImage> out;
  for (std::size_t t = 0; t < frames; ++t) {
    LabelImage img(h, w, 0);
    for (const auto& r : rects) {
      const long ty = r.y0 + r.dy * static_cast<long>(t);
      const long tx = r.x0 + r.dx * static_cast<long>(t);
      for (long y = ty; y < ty + static_cast<long>(r.hh); ++y)
        for (long x = tx; x < tx + static_cast<long>(r.ww); ++x)
          if (y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w))
            img(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = r.id;
    }
    out.push_back(std::move(img));
  }
  return out;
}

inline void write_label_video(const std::vector<LabelImage>& frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < frames.size(); ++t) write_png_gray(frames[t], dir / frame_file_name(t));
}

inline BinaryMask label_equals(const LabelImage& img, std::uint8_t id) {
  BinaryMask m(img.height(), img.width(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) m.data()[i] = img.data()[i] == id ? 1 : 0;
  return m;
}

inline std::string read_text(const std::filesystem::path& p) {
  const auto bytes = detail::read_file_bytes(p);
  return std::string(bytes.begin(), bytes.end());
}

/// Runs a shell command, returning its exit status; output goes to `log` if given.
inline int run_command(const std::string& cmd, const std::filesystem::path& log = {}) {
  const std::string full = log.empty() ? cmd + " >/dev/null 2>&1" : cmd + " >" + log.string() + " 2>&1";
  const int status = std::system(full.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace decaf::test
