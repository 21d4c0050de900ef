#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace afford {

// Dense row-major tensor of 32-bit reals. Shapes are fixed at construction;
// there is no broadcasting and no view machinery.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;

  Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::size_t>(count(shape)) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
  }

  static Tensor zeros(std::vector<int> s) {
    const auto n = count(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
  }

  static Tensor full(std::vector<int> s, float v) {
    const auto n = count(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<std::size_t>(n), v));
  }

  static Tensor vec(std::initializer_list<float> vals) {
    return Tensor({static_cast<int>(vals.size())}, std::vector<float>(vals));
  }

  static Tensor vec(std::vector<float> vals) {
    const int n = static_cast<int>(vals.size());
    return Tensor({n}, std::move(vals));
  }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  int size() const { return static_cast<int>(data.size()); }

  int dim(std::size_t i) const { return shape.at(i); }

  int rank() const { return static_cast<int>(shape.size()); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  // 3-d accessor for [H, W, C] layouts, handy in tests.
  float& at3(int h, int w, int c) {
    return data[static_cast<std::size_t>((h * shape[1] + w) * shape[2] + c)];
  }
  float at3(int h, int w, int c) const {
    return data[static_cast<std::size_t>((h * shape[1] + w) * shape[2] + c)];
  }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static long count(const std::vector<int>& s) {
    long n = 1;
    for (int e : s) {
      if (e <= 0) throw std::invalid_argument("tensor: nonpositive extent in " + shape_str(s));
      n *= e;
    }
    return n;
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
  }
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace afford
