#include "msth/hash_grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msth {

void HashGridConfig::validate() const {
  std::ostringstream os;
  if (dims != 3 && dims != 4) os << "dims must be 3 or 4 (got " << dims << "); ";
  if (levels < 1) os << "levels must be >= 1; ";
  if (features < 1) os << "features must be >= 1; ";
  if (log2_table_size < 1 || log2_table_size > 30) os << "log2_table_size out of range; ";
  if (base_resolution < 1 || max_resolution < base_resolution)
    os << "need max_resolution >= base_resolution >= 1 (got " << base_resolution << ", "
       << max_resolution << "); ";
  if (dims == 4 && (time_base_resolution < 1 || time_max_resolution < time_base_resolution))
    os << "need time_max_resolution >= time_base_resolution >= 1; ";
  if (base_resolution > 65535 || max_resolution > 65535 || time_max_resolution > 65535)
    os << "resolutions must fit in 16 bits; ";
  if (!os.str().empty()) throw ConfigError("invalid hash grid config: " + os.str());
}

namespace {

int progression(int nmin, int nmax, int levels, int l) {
  if (levels == 1) return nmin;
  const double b = std::exp((std::log(double(nmax)) - std::log(double(nmin))) / (levels - 1));
  // The small bias keeps exact powers (e.g. 16 * 2^5 = 512) from flooring down.
  return static_cast<int>(std::floor(nmin * std::pow(b, l) + 1e-6));
}

}  // namespace

std::vector<LevelResolution> level_resolutions(const HashGridConfig& config) {
  config.validate();
  std::vector<LevelResolution> out(config.levels);
  for (int l = 0; l < config.levels; ++l) {
    out[l].spatial = progression(config.base_resolution, config.max_resolution, config.levels, l);
    if (config.dims == 4)
      out[l].temporal =
          progression(config.time_base_resolution, config.time_max_resolution, config.levels, l);
  }
  return out;
}

std::vector<GridLevel> build_levels(const HashGridConfig& config) {
  const auto res = level_resolutions(config);
  const std::uint64_t table = std::uint64_t(1) << config.log2_table_size;
  std::vector<GridLevel> out(config.levels);
  std::size_t offset = 0;
  for (int l = 0; l < config.levels; ++l) {
    GridLevel& g = out[l];
    g.resolution = res[l].spatial;
    g.time_resolution = res[l].temporal;
    std::uint64_t dense = std::uint64_t(g.resolution) * g.resolution * g.resolution;
    if (config.dims == 4) dense *= std::uint64_t(g.time_resolution);
    g.dense = dense <= table;
    g.slots = static_cast<std::uint32_t>(g.dense ? dense : table);
    g.offset = offset;
    offset += g.slots;
  }
  return out;
}

std::uint32_t hash_index(std::span<const std::uint32_t> p, const GridLevel& level) {
  if (level.dense) {
    const std::uint32_t n = static_cast<std::uint32_t>(level.resolution);
    std::uint32_t idx = 0, stride = 1;
    for (std::size_t a = 0; a < p.size(); ++a) {
      idx += p[a] * stride;
      stride *= n;
    }
    return idx;
  }
  std::uint32_t h = 0;
  for (std::size_t a = 0; a < p.size(); ++a) h ^= p[a] * kHashPrimes[a];
  // Hashed levels always hold a power-of-two slot count.
  return h & (level.slots - 1);
}

template <class Real>
HashGrid<Real>::HashGrid(const HashGridConfig& config, const std::string& name)
    : config_(config), levels_(build_levels(config)) {
  params = ParamBuffer<Real>(name, total_slots() * config.features);
}

template <class Real>
HashGrid<Real>::HashGrid(const HashGrid& other)
    : params(other.params), config_(other.config_), levels_(other.levels_) {}

template <class Real>
HashGrid<Real>& HashGrid<Real>::operator=(const HashGrid& other) {
  params = other.params;
  config_ = other.config_;
  levels_ = other.levels_;
  reset_counters();
  return *this;
}

template <class Real>
std::size_t HashGrid<Real>::total_slots() const {
  return levels_.empty() ? 0 : levels_.back().offset + levels_.back().slots;
}

template <class Real>
void HashGrid<Real>::init_uniform(Rng& rng, double scale) {
  params.fill_uniform(rng, -scale, scale);
}

template <class Real>
void HashGrid<Real>::reset_counters() {
  reads_.store(0);
  clamps_.store(0);
}

template <class Real>
template <int D>
void HashGrid<Real>::encode_impl(std::span<const Real> points, std::size_t n,
                                 std::span<Real> features, EncodeCache<Real>* cache) const {
  constexpr int kCorners = 1 << D;
  const int L = config_.levels, F = config_.features;
  const Real* table = params.values.data();
  if (cache) {
    cache->dims = D;
    cache->levels = L;
    cache->points = n;
    cache->slot.resize(n * L * kCorners);
    cache->weight.resize(n * L * kCorners);
  }
  std::uint64_t clamped = 0;
  for (std::size_t p = 0; p < n; ++p) {
    Real pos[D];
    for (int a = 0; a < D; ++a) {
      Real v = points[p * D + a];
      if (!(v >= Real(0))) {
        v = Real(0);
        ++clamped;
      } else if (v > Real(1)) {
        v = Real(1);
        ++clamped;
      }
      pos[a] = v;
    }
    Real* out = features.data() + p * std::size_t(L) * F;
    for (int l = 0; l < L; ++l) {
      const GridLevel& lv = levels_[l];
      std::uint32_t lo[D], hi[D];
      Real frac[D];
      for (int a = 0; a < D; ++a) {
        const int res = (a == 3) ? lv.time_resolution : lv.resolution;
        if (res <= 1) {
          lo[a] = hi[a] = 0;
          frac[a] = Real(0);
          continue;
        }
        const Real scaled = pos[a] * Real(res - 1);
        int base = static_cast<int>(std::floor(scaled));
        base = std::clamp(base, 0, res - 2);
        lo[a] = static_cast<std::uint32_t>(base);
        hi[a] = lo[a] + 1;
        frac[a] = scaled - Real(base);
      }
      // Per-axis index contributions for the low/high corner.
      std::uint32_t clo[D], chi[D];
      if (lv.dense) {
        std::uint32_t stride = 1;
        for (int a = 0; a < D; ++a) {
          clo[a] = lo[a] * stride;
          chi[a] = hi[a] * stride;
          stride *= static_cast<std::uint32_t>(lv.resolution);
        }
      } else {
        for (int a = 0; a < D; ++a) {
          clo[a] = lo[a] * kHashPrimes[a];
          chi[a] = hi[a] * kHashPrimes[a];
        }
      }
      Real acc[8] = {};
      Real* lout = out + l * F;
      std::uint32_t* cslot = cache ? cache->slot.data() + (p * L + l) * kCorners : nullptr;
      Real* cweight = cache ? cache->weight.data() + (p * L + l) * kCorners : nullptr;
      for (int c = 0; c < kCorners; ++c) {
        Real w = Real(1);
        std::uint32_t idx = 0;
        for (int a = 0; a < D; ++a) {
          const bool up = (c >> a) & 1;
          w *= up ? frac[a] : Real(1) - frac[a];
          if (lv.dense)
            idx += up ? chi[a] : clo[a];
          else
            idx ^= up ? chi[a] : clo[a];
        }
        if (!lv.dense) idx &= lv.slots - 1;
        const std::uint32_t slot = static_cast<std::uint32_t>(lv.offset) + idx;
        const Real* entry = table + std::size_t(slot) * F;
        if (F <= 8) {
          for (int f = 0; f < F; ++f) acc[f] += w * entry[f];
        } else {
          for (int f = 0; f < F; ++f) lout[f] += w * entry[f];
        }
        if (cslot) {
          cslot[c] = slot;
          cweight[c] = w;
        }
      }
      if (F <= 8)
        for (int f = 0; f < F; ++f) lout[f] = acc[f];
    }
  }
  reads_.fetch_add(n * L, std::memory_order_relaxed);
  if (clamped) clamps_.fetch_add(clamped, std::memory_order_relaxed);
}

template <class Real>
void HashGrid<Real>::encode(std::span<const Real> points, std::size_t n, std::span<Real> features,
                            EncodeCache<Real>* cache) const {
  const int D = config_.dims;
  if (points.size() < n * D || features.size() < n * std::size_t(output_dim())) {
    std::ostringstream os;
    os << "hash grid '" << params.name << "' encode: " << points.size() << " coords / "
       << features.size() << " feature slots for " << n << " points of dims " << D;
    throw ConfigError(os.str());
  }
  if (config_.features > 8)
    std::fill(features.begin(), features.begin() + n * output_dim(), Real(0));
  if (D == 3)
    encode_impl<3>(points, n, features, cache);
  else
    encode_impl<4>(points, n, features, cache);
}

template <class Real>
void HashGrid<Real>::encode_backward(const EncodeCache<Real>& cache,
                                     std::span<const Real> d_features) {
  const int L = config_.levels, F = config_.features;
  if (cache.dims != config_.dims || cache.levels != L ||
      d_features.size() < cache.points * std::size_t(L) * F)
    throw ConfigError("hash grid '" + params.name + "' backward: cache/gradient shape mismatch");
  const int K = cache.corners();
  Real* grads = params.grads.data();
  for (std::size_t p = 0; p < cache.points; ++p) {
    for (int l = 0; l < L; ++l) {
      const Real* d = d_features.data() + (p * L + l) * F;
      bool any = false;
      for (int f = 0; f < F; ++f) any |= d[f] != Real(0);
      if (!any) continue;
      const std::uint32_t* slots = cache.slot.data() + (p * L + l) * K;
      const Real* ws = cache.weight.data() + (p * L + l) * K;
      for (int c = 0; c < K; ++c) {
        Real* g = grads + std::size_t(slots[c]) * F;
        for (int f = 0; f < F; ++f) g[f] += ws[c] * d[f];
      }
    }
  }
}

template <class Real>
CollisionStats HashGrid<Real>::collision_stats(int level,
                                               std::span<const std::uint32_t> lattice_points) const {
  if (level < 0 || level >= config_.levels) throw ConfigError("collision_stats: level out of range");
  const int D = config_.dims;
  const GridLevel& lv = levels_[level];
  const std::size_t n = lattice_points.size() / D;
  CollisionStats s;
  s.queries = n;
  s.slot_count = lv.slots;
  std::vector<std::uint64_t> keys(n);
  std::vector<std::uint32_t> load(lv.slots, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto pt = lattice_points.subspan(i * D, D);
    std::uint64_t key = 0;
    for (int a = 0; a < D; ++a) key |= std::uint64_t(pt[a] & 0xffff) << (16 * a);
    keys[i] = key;
    ++load[hash_index(pt, lv)];
  }
  std::sort(keys.begin(), keys.end());
  s.distinct_keys = static_cast<std::uint64_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
  for (auto c : load) {
    if (c) ++s.distinct_slots;
    s.max_slot_load = std::max<std::uint64_t>(s.max_slot_load, c);
  }
  const double denom = double(std::min<std::uint64_t>(s.distinct_keys, lv.slots));
  s.collision_rate = denom > 0 ? 1.0 - double(s.distinct_slots) / denom : 0.0;
  s.occupied_fraction = double(s.distinct_slots) / double(lv.slots);
  return s;
}

template class HashGrid<float>;
template class HashGrid<double>;

}  // namespace msth
