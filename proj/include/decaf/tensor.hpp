#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "decaf/error.hpp"

namespace decaf {

/// Dense row-major 2-D array.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

/// Dense (frames, height, width) array stored frame-major, then row-major.
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t frames, std::size_t height, std::size_t width, T fill = T{})
      : frames_(frames), height_(height), width_(width), data_(frames * height * width, fill) {}

  std::size_t frames() const noexcept { return frames_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t frame_size() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t t, std::size_t y, std::size_t x) {
    return data_[(t * height_ + y) * width_ + x];
  }
  const T& operator()(std::size_t t, std::size_t y, std::size_t x) const {
    return data_[(t * height_ + y) * width_ + x];
  }

  std::span<T> frame(std::size_t t) { return {data_.data() + t * frame_size(), frame_size()}; }
  std::span<const T> frame(std::size_t t) const {
    return {data_.data() + t * frame_size(), frame_size()};
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool same_shape(const Tensor3& other) const noexcept {
    return frames_ == other.frames_ && height_ == other.height_ && width_ == other.width_;
  }

  Image<T> frame_image(std::size_t t) const {
    Image<T> out(height_, width_);
    std::ranges::copy(frame(t), out.data().begin());
    return out;
  }

  void set_frame(std::size_t t, const Image<T>& img) {
    if (img.height() != height_ || img.width() != width_)
      throw ValidationError("frame shape mismatch");
    std::ranges::copy(img.data(), frame(t).begin());
  }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t frames_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using BinaryMask = Image<std::uint8_t>;
using LabelImage = Image<std::uint8_t>;
using BinaryVolume = Tensor3<std::uint8_t>;

inline std::size_t count_set(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::ranges::count_if(mask, [](auto v) { return v != 0; }));
}

/// Intersection and union counts of two equally sized binary buffers.
struct Overlap {
  std::size_t intersection = 0;
  std::size_t union_ = 0;
};

inline Overlap overlap(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ValidationError("mask size mismatch");
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] != 0;
    const bool pb = b[i] != 0;
    o.intersection += (pa && pb) ? 1 : 0;
    o.union_ += (pa || pb) ? 1 : 0;
  }
  return o;
}

inline double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  const Overlap o = overlap(a, b);
  return o.union_ == 0 ? 0.0 : static_cast<double>(o.intersection) / static_cast<double>(o.union_);
}

}  // namespace decaf
