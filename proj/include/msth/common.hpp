#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace msth {

/// Bad configuration or mismatched shapes. Always fatal for the caller.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing files (manifests, checkpoints, images).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A quantity that must be finite was not.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& component, const std::string& what)
      : std::runtime_error(what), component_(component) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

/// Small, portable PRNG wrapper. The raw engine is splitmix-seeded xoshiro256**
/// so that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);
  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  float uniform_f() { return static_cast<float>(uniform()) * 0.99999994f; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Derive an independent stream; `tag` distinguishes siblings.
  Rng split(std::uint64_t tag) const;

  std::string serialize() const;
  void deserialize(const std::string& text);

  bool operator==(const Rng& other) const;

 private:
  std::uint64_t s_[4]{};
};

/// In-place Fisher-Yates shuffle driven by Rng.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace msth
