#pragma once

// Flat key=value configuration with typed defaults, canonical text and SHA-256 hash.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/scenegen/dataset.hpp"
#include "graf/trainer/gan.hpp"

namespace graf::app {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Kind { kInt, kReal, kBool, kIntList, kReal3 };

struct KeyDef {
  const char* key;
  const char* value;
  Kind kind;
  bool hashed;  // part of the model identity checked on resume
  const char* doc;
};

// clang-format off
inline const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"camera.width", "32", Kind::kInt, true, "image width in pixels"},
      {"camera.height", "32", Kind::kInt, true, "image height in pixels"},
      {"camera.focal", "32", Kind::kReal, true, "focal length in pixels; principal point at the image center"},
      {"camera.azimuth_min", "0", Kind::kReal, true, "pose azimuth range, degrees"},
      {"camera.azimuth_max", "360", Kind::kReal, true, ""},
      {"camera.polar_min", "0", Kind::kReal, true, "pose polar angle range from the up axis (+z), degrees"},
      {"camera.polar_max", "90", Kind::kReal, true, ""},
      {"camera.radius_min", "3", Kind::kReal, true, "camera distance range from the origin"},
      {"camera.radius_max", "3", Kind::kReal, true, ""},
      {"patch.size", "16", Kind::kInt, true, "patch side K (even)"},
      {"patch.anneal_iters", "1000", Kind::kInt, true, "iterations over which the minimum patch scale falls to 1"},
      {"field.depth", "4", Kind::kInt, true, "trunk layers"},
      {"field.hidden", "128", Kind::kInt, true, "trunk width"},
      {"field.skip_at", "4", Kind::kInt, true, "trunk layer re-fed with the encoded point and shape code; 0 disables"},
      {"field.color_hidden", "64", Kind::kInt, true, "color head width"},
      {"field.latent_shape", "32", Kind::kInt, true, "shape code dimension"},
      {"field.latent_appearance", "32", Kind::kInt, true, "appearance code dimension"},
      {"field.freq_x", "10", Kind::kInt, true, "positional encoding frequencies for points"},
      {"field.freq_d", "4", Kind::kInt, true, "positional encoding frequencies for directions"},
      {"field.encoding", "1", Kind::kBool, true, "apply positional encoding"},
      {"render.samples", "64", Kind::kInt, true, "samples per ray"},
      {"render.bound", "1.2", Kind::kReal, true, "scene bounding radius; depth range is distance +- bound"},
      {"render.background", "1,1,1", Kind::kReal3, true, "background color"},
      {"render.chunk_rays", "1024", Kind::kInt, false, "rays per chunk for full-image renders"},
      {"disc.channels", "64,128,256", Kind::kIntList, true, "conv output channels"},
      {"disc.kernel", "4", Kind::kInt, true, "conv kernel size"},
      {"disc.stride", "2", Kind::kInt, true, "conv stride"},
      {"disc.leaky_slope", "0.2", Kind::kReal, true, "leaky ReLU slope"},
      {"disc.instance_norm", "1", Kind::kBool, true, "instance norm after every conv but the first"},
      {"disc.sn_power_iters", "1", Kind::kInt, true, "power iterations per discriminator step"},
      {"disc.sn_init_iters", "20", Kind::kInt, true, "power iterations at initialization"},
      {"train.batch", "8", Kind::kInt, true, "patches per batch"},
      {"train.lr_g", "0.0005", Kind::kReal, true, "generator learning rate"},
      {"train.lr_d", "0.0001", Kind::kReal, true, "discriminator learning rate"},
      {"train.r1_weight", "10", Kind::kReal, true, "gradient penalty weight"},
      {"train.rms_decay", "0.99", Kind::kReal, true, "RMSprop decay"},
      {"train.rms_eps", "1e-08", Kind::kReal, true, "RMSprop epsilon"},
      {"train.seed", "0", Kind::kInt, true, "master seed for initialization and batch sampling"},
      {"train.iterations", "2000", Kind::kInt, false, "total iterations"},
      {"train.log_every", "1", Kind::kInt, false, "metrics row cadence"},
      {"train.checkpoint_every", "500", Kind::kInt, false, "checkpoint cadence"},
      {"data.count", "1000", Kind::kInt, false, "images generated by make-dataset"},
      {"data.seed", "0", Kind::kInt, false, "scene and pose seed"},
      {"data.posed", "0", Kind::kBool, false, "one scene with a pose sidecar instead of one scene per image"},
      {"data.primitives", "1", Kind::kInt, false, "primitives per scene"},
      {"data.box_weight", "0", Kind::kReal, false, "probability a primitive is a box"},
      {"data.radius_min", "0.5", Kind::kReal, false, "sphere radius range"},
      {"data.radius_max", "0.9", Kind::kReal, false, ""},
      {"data.box_half_min", "0.3", Kind::kReal, false, "box half-extent range"},
      {"data.box_half_max", "0.6", Kind::kReal, false, ""},
      {"data.center_offset", "0", Kind::kReal, false, "maximum distance of a primitive center from the origin"},
      {"data.albedo_min", "0,0,0", Kind::kReal3, false, "per-channel albedo range"},
      {"data.albedo_max", "1,1,1", Kind::kReal3, false, ""},
      {"data.light", "0.3,-0.4,1", Kind::kReal3, false, "direction toward the light (normalized)"},
      {"data.ambient", "0.3", Kind::kReal, false, "ambient shading term"},
      {"data.background", "1,1,1", Kind::kReal3, false, "background color"},
      {"overfit.iterations", "5000", Kind::kInt, false, "optimization steps for the posed fit"},
      {"overfit.views", "4", Kind::kInt, false, "training views per batch"},
      {"overfit.rays", "128", Kind::kInt, false, "rays per view per batch"},
      {"overfit.lr", "0.001", Kind::kReal, false, "Adam learning rate"},
      {"overfit.lr_final", "5e-05", Kind::kReal, false, "learning rate at the last iteration (exponential decay)"},
      {"overfit.holdout", "19", Kind::kInt, false, "index of the held-out view"},
      {"overfit.eval_every", "250", Kind::kInt, false, "held-out PSNR cadence"},
      {"overfit.target_psnr", "0", Kind::kReal, false, "stop once held-out PSNR reaches this; 0 runs all iterations"},
  };
  return table;
}
// clang-format on

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

inline long long parse_int(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) throw ConfigError(key + ": expected a finite number, got '" + s + "'");
  return v;
}

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string canonical_value(const KeyDef& def, const std::string& raw) {
  const std::string key = def.key;
  const std::string v = trim(raw);
  switch (def.kind) {
    case Kind::kInt: return std::to_string(parse_int(v, key));
    case Kind::kReal: return fmt_real(parse_real(v, key));
    case Kind::kBool:
      if (v == "1" || v == "true") return "1";
      if (v == "0" || v == "false") return "0";
      throw ConfigError(key + ": expected 0/1/true/false, got '" + v + "'");
    case Kind::kIntList: {
      std::string out;
      for (const auto& part : split(v, ',')) out += (out.empty() ? "" : ",") + std::to_string(parse_int(part, key));
      if (out.empty()) throw ConfigError(key + ": expected a comma-separated integer list");
      return out;
    }
    case Kind::kReal3: {
      const auto parts = split(v, ',');
      if (parts.size() != 3) throw ConfigError(key + ": expected three comma-separated numbers, got '" + v + "'");
      return fmt_real(parse_real(parts[0], key)) + "," + fmt_real(parse_real(parts[1], key)) + "," + fmt_real(parse_real(parts[2], key));
    }
  }
  throw ConfigError(key + ": unknown kind");
}

inline const KeyDef& find_def(const std::string& key) {
  for (const auto& d : key_table())
    if (key == d.key) return d;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

class Config {
 public:
  // Every key at its default.
  Config() {
    for (const auto& d : key_table()) values_[d.key] = detail::canonical_value(d, d.value);
  }

  // Lines "key = value"; '#' starts a comment; blank lines ignored; unknown or repeated keys rejected.
  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto where = origin + ":" + std::to_string(lineno) + ": ";
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
      const std::string key = detail::trim(line.substr(0, eq));
      if (seen.count(key)) throw ConfigError(where + "key '" + key + "' repeated (first on line " + std::to_string(seen[key]) + ")");
      seen[key] = lineno;
      try {
        c.set(key, line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    }
    c.validate();
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = detail::canonical_value(detail::find_def(key), value); }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  long long get_int(const std::string& key) const { return detail::parse_int(raw(key), key); }
  int get_i32(const std::string& key) const {
    const long long v = get_int(key);
    if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(key + ": value out of range");
    return static_cast<int>(v);
  }
  double get_real(const std::string& key) const { return detail::parse_real(raw(key), key); }
  bool get_bool(const std::string& key) const { return raw(key) == "1"; }
  std::array<double, 3> get_real3(const std::string& key) const {
    const auto p = detail::split(raw(key), ',');
    return {detail::parse_real(p[0], key), detail::parse_real(p[1], key), detail::parse_real(p[2], key)};
  }
  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& p : detail::split(raw(key), ',')) out.push_back(static_cast<int>(detail::parse_int(p, key)));
    return out;
  }

  // Sorted "key=value" lines of every key.
  std::string canonical_text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
  }

  // SHA-256 over the sorted lines of the keys that define the model and its training trajectory.
  std::array<std::uint8_t, 32> hash() const {
    std::string s;
    for (const auto& [k, v] : values_)
      if (detail::find_def(k).hashed) s += k + "=" + v + "\n";
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    if (EVP_Digest(s.data(), s.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
      throw std::runtime_error("SHA-256 digest failed");
    }
    return out;
  }

  geo::Intrinsics intrinsics() const {
    return geo::Intrinsics::centered(get_real("camera.focal"), get_i32("camera.width"), get_i32("camera.height"));
  }

  geo::PoseDistribution poses() const {
    const double deg = std::numbers::pi / 180;
    geo::PoseDistribution p;
    p.azimuth_min = get_real("camera.azimuth_min") * deg;
    p.azimuth_max = get_real("camera.azimuth_max") * deg;
    const double pmin = get_real("camera.polar_min"), pmax = get_real("camera.polar_max");
    if (!(pmin >= 0 && pmin <= pmax && pmax <= 180)) throw ConfigError("camera.polar_min/max must satisfy 0 <= min <= max <= 180");
    p.polar_cos_min = std::cos(pmax * deg);
    p.polar_cos_max = std::cos(pmin * deg);
    p.radius_min = get_real("camera.radius_min");
    p.radius_max = get_real("camera.radius_max");
    p.validate();
    return p;
  }

  train::GanConfig gan() const {
    train::GanConfig g;
    g.intrinsics = intrinsics();
    g.poses = poses();
    g.patch = get_i32("patch.size");
    g.anneal_iters = get_int("patch.anneal_iters");
    g.field.depth = get_i32("field.depth");
    g.field.hidden = get_i32("field.hidden");
    g.field.skip_at = get_i32("field.skip_at");
    g.field.color_hidden = get_i32("field.color_hidden");
    g.field.latent_shape = get_i32("field.latent_shape");
    g.field.latent_appearance = get_i32("field.latent_appearance");
    g.encoding = {get_i32("field.freq_x"), get_i32("field.freq_d"), get_bool("field.encoding")};
    g.render.samples_n = get_i32("render.samples");
    g.render.bound_b = get_real("render.bound");
    g.render.background = get_real3("render.background");
    g.render.chunk_rays = get_i32("render.chunk_rays");
    g.disc.channels = get_int_list("disc.channels");
    g.disc.kernel = get_i32("disc.kernel");
    g.disc.stride = get_i32("disc.stride");
    g.disc.leaky_slope = get_real("disc.leaky_slope");
    g.disc.instance_norm = get_bool("disc.instance_norm");
    g.disc.sn_power_iters = get_i32("disc.sn_power_iters");
    g.disc.sn_init_iters = get_i32("disc.sn_init_iters");
    g.train.batch = get_i32("train.batch");
    g.train.lr_g = get_real("train.lr_g");
    g.train.lr_d = get_real("train.lr_d");
    g.train.r1_weight = get_real("train.r1_weight");
    g.train.rms_decay = get_real("train.rms_decay");
    g.train.rms_eps = get_real("train.rms_eps");
    const long long seed = get_int("train.seed");
    if (seed < 0) throw ConfigError("train.seed must be non-negative");
    g.train.seed = static_cast<std::uint64_t>(seed);
    g.train.iterations = get_int("train.iterations");
    g.train.log_every = get_i32("train.log_every");
    g.train.checkpoint_every = get_i32("train.checkpoint_every");
    g.validate();
    return g;
  }

  scene::DatasetConfig dataset() const {
    scene::DatasetConfig d;
    d.count = get_i32("data.count");
    d.intrinsics = intrinsics();
    d.poses = poses();
    const long long seed = get_int("data.seed");
    if (seed < 0) throw ConfigError("data.seed must be non-negative");
    d.seed = static_cast<std::uint64_t>(seed);
    d.posed = get_bool("data.posed");
    auto& s = d.scene;
    s.bound = get_real("render.bound");
    s.primitives = get_i32("data.primitives");
    s.box_weight = get_real("data.box_weight");
    s.sphere_radius = {get_real("data.radius_min"), get_real("data.radius_max")};
    s.box_half_extent = {get_real("data.box_half_min"), get_real("data.box_half_max")};
    s.center_offset = get_real("data.center_offset");
    const auto lo = get_real3("data.albedo_min"), hi = get_real3("data.albedo_max");
    for (std::size_t i = 0; i < 3; ++i) s.albedo[i] = {lo[i], hi[i]};
    const auto l = get_real3("data.light");
    s.light = {l[0], l[1], l[2]};
    s.ambient = get_real("data.ambient");
    s.background = get_real3("data.background");
    d.validate();
    return d;
  }

  void validate() const {
    gan();
    dataset();
    if (get_int("overfit.iterations") < 0 || get_int("overfit.views") < 1 || get_int("overfit.rays") < 1 || get_int("overfit.holdout") < 0 ||
        get_int("overfit.eval_every") < 1 || !(get_real("overfit.lr") > 0) || !(get_real("overfit.lr_final") > 0)) {
      throw ConfigError("overfit.* values out of range");
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::string hex(const std::array<std::uint8_t, 32>& h) {
  static const char* d = "0123456789abcdef";
  std::string s;
  for (auto b : h) {
    s += d[b >> 4];
    s += d[b & 15];
  }
  return s;
}

// Default config file with one commented line per key.
inline std::string documented_defaults() {
  std::string s;
  for (const auto& d : key_table()) {
    if (*d.doc) s += std::string("# ") + d.doc + (d.hashed ? "" : " (not part of the config hash)") + "\n";
    s += std::string(d.key) + " = " + d.value + "\n";
  }
  return s;
}

}  // namespace graf::app
