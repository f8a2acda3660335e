#include "msth/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace msth {

std::string to_string(Provenance p) { return p == Provenance::paper ? "paper" : "invented"; }

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
template <class I>
std::string format(I v) {
  return std::to_string(v);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

void parse(const std::string& key, const std::string& s, bool& out) {
  if (s == "true" || s == "1") out = true;
  else if (s == "false" || s == "0") out = false;
  else bad_value(key, s, "bool");
}
void parse(const std::string&, const std::string& s, std::string& out) {
  out = s;
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
}
void parse(const std::string& key, const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') bad_value(key, s, "number");
}
template <class I>
void parse(const std::string& key, const std::string& s, I& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size()) bad_value(key, s, "integer");
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  visit([&](const char* k, auto& v, Provenance) {
    if (key == k) {
      parse(key, trim(value), v);
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

std::string TrainConfig::get(const std::string& key) const {
  std::string out;
  bool found = false;
  visit([&](const char* k, const auto& v, Provenance) {
    if (key == k) {
      out = format(v);
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
  return out;
}

void TrainConfig::parse_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void TrainConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  parse_text(ss.str(), path.string());
}

std::string TrainConfig::to_text() const {
  std::string out;
  visit([&](const char* k, const auto& v, Provenance) {
    out += k;
    out += " = ";
    out += format(v);
    out += '\n';
  });
  return out;
}

std::string TrainConfig::resolved_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  visit([&](const char* k, const auto& v, Provenance p) {
    j[k] = {{"value", v}, {"provenance", to_string(p)}};
  });
  return j.dump(2);
}

EncodingVariant TrainConfig::encoding_variant() const { return parse_variant(variant); }

void TrainConfig::validate() const {
  std::ostringstream os;
  if (steps < 0) os << "steps must be >= 0; ";
  if (batch_rays < 1) os << "batch_rays must be >= 1; ";
  if (n_samples < 1 || n_proposal < 1) os << "sample counts must be >= 1; ";
  if (!(lr_grid > 0) || !(lr_mlp > 0)) os << "learning rates must be positive; ";
  if (!(lr_final_factor > 0) || lr_final_factor > 1) os << "lr_final_factor must be in (0,1]; ";
  if (!(tau1 > 0) || !(tau2 > 0)) os << "tau1/tau2 must be positive; ";
  if (!(p_uniform >= 0 && p_uniform <= 1)) os << "p_uniform must be in [0,1]; ";
  if (importance_downsample < 1) os << "importance_downsample must be >= 1; ";
  if (!(epsilon > 0 && epsilon < 1)) os << "epsilon must be in (0,1); ";
  if (mine_samples < 2) os << "mine_samples must be >= 2; ";
  if (!(mine_ema >= 0 && mine_ema < 1)) os << "mine_ema must be in [0,1); ";
  if (!(u_floor > 0)) os << "u_floor must be positive; ";
  if (log_every < 1) os << "log_every must be >= 1; ";
  if (eval_every < 0 || checkpoint_every < 0) os << "intervals must be >= 0; ";
  if (!os.str().empty()) throw ConfigError("invalid config: " + os.str());
  encoding_variant();
  loss_weights().validate();
}

ModelConfig TrainConfig::model_config(const Aabb& bounds, int frames) const {
  ModelConfig m;
  m.bounds = bounds;
  auto& f = m.field;
  f.variant = encoding_variant();
  f.grid3d.dims = 3;
  f.grid3d.levels = levels;
  f.grid3d.features = features;
  f.grid3d.log2_table_size = log2_table_3d;
  f.grid3d.base_resolution = base_resolution;
  f.grid3d.max_resolution = max_resolution;
  f.grid4d = f.grid3d;
  f.grid4d.dims = 4;
  f.grid4d.log2_table_size = log2_table_4d;
  f.grid4d.time_base_resolution = time_base_resolution;
  // More time lattice points than frames adds nothing.
  f.grid4d.time_max_resolution = std::max(time_base_resolution, std::min(time_max_resolution, frames));
  f.mask_resolution = mask_resolution;
  f.uncertainty_resolution = uncertainty_resolution;
  f.u_m = u_m;
  f.density_hidden = density_hidden;
  f.density_hidden_layers = density_layers;
  f.geo_features = geo_features;
  f.color_hidden = color_hidden;
  f.color_hidden_layers = color_layers;
  m.proposal.spatial_resolution = proposal_resolution;
  m.proposal.st_resolution = proposal_st_resolution;
  m.proposal.time_resolution = std::max(2, std::min(proposal_time_resolution, frames));
  m.mine.hidden = mine_hidden;
  m.mine.ema_rate = mine_ema;
  f.validate();
  return m;
}

LossWeights TrainConfig::loss_weights() const {
  LossWeights w;
  w.lambda_u = lambda_u;
  w.gamma = gamma;
  w.lambda_mask = lambda_mask;
  w.lambda_dist = lambda_dist;
  w.lambda_prop = lambda_prop;
  return w;
}

PassOptions TrainConfig::pass_options() const {
  PassOptions o;
  o.n_samples = n_samples;
  o.n_proposal = n_proposal;
  o.weights = loss_weights();
  o.u_floor = u_floor;
  o.mine_samples = mine_samples;
  return o;
}

}  // namespace msth
