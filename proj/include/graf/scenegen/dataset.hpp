#pragma once

// On-disk image collections: manifest.txt, img_%06d.png and, for posed sets, poses.txt.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/scenegen/png.hpp"
#include "graf/scenegen/scene.hpp"

namespace graf::scene {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  int count = 1000;
  geo::Intrinsics intrinsics = geo::Intrinsics::centered(32, 32, 32);
  geo::PoseDistribution poses;
  SceneDistribution scene;
  std::uint64_t seed = 0;
  bool posed = false;  // one fixed scene with stored poses instead of one scene per image

  void validate() const {
    if (count < 0) throw std::invalid_argument("image count must be non-negative");
    poses.validate();
    scene.validate();
  }
};

struct DatasetManifest {
  std::filesystem::path dir;
  int count = 0;
  int width = 0;
  int height = 0;
  double focal = 0;
  std::uint64_t seed = 0;
  bool posed = false;
  std::map<std::string, std::string> entries;  // every key=value line

  geo::Intrinsics intrinsics() const { return geo::Intrinsics::centered(focal, width, height); }
};

struct PosedView {
  geo::CameraPose pose;
  double focal = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> images;
  std::vector<PosedView> poses;  // empty for unposed sets
};

inline std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%06d.png", i);
  return buf;
}

// Scene and pose of image i. Posed sets share one scene.
inline SceneSpec dataset_scene(const DatasetConfig& cfg, int i) {
  Rng rng = cfg.posed ? Rng::substream(cfg.seed, Stream::kScene) : Rng::substream(cfg.seed, Stream::kScene, {static_cast<std::uint64_t>(i), 0});
  return sample_scene(rng, cfg.scene);
}

inline geo::CameraPose dataset_pose(const DatasetConfig& cfg, int i) {
  Rng rng = Rng::substream(cfg.seed, Stream::kScene, {static_cast<std::uint64_t>(i), 1});
  return geo::sample_pose(rng, cfg.poses);
}

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string manifest_text(const DatasetConfig& c) {
  std::ostringstream o;
  const auto& s = c.scene;
  const auto& p = c.poses;
  o << "count=" << c.count << "\nwidth=" << c.intrinsics.width << "\nheight=" << c.intrinsics.height
    << "\nfocal=" << fmt(c.intrinsics.focal) << "\nseed=" << c.seed << "\nposed=" << (c.posed ? 1 : 0)
    << "\npose.azimuth=" << fmt(p.azimuth_min) << "," << fmt(p.azimuth_max) << "\npose.polar_cos=" << fmt(p.polar_cos_min) << ","
    << fmt(p.polar_cos_max) << "\npose.radius=" << fmt(p.radius_min) << "," << fmt(p.radius_max) << "\nscene.bound=" << fmt(s.bound)
    << "\nscene.primitives=" << s.primitives << "\nscene.box_weight=" << fmt(s.box_weight) << "\nscene.sphere_radius=" << fmt(s.sphere_radius.lo)
    << "," << fmt(s.sphere_radius.hi) << "\nscene.box_half_extent=" << fmt(s.box_half_extent.lo) << "," << fmt(s.box_half_extent.hi)
    << "\nscene.center_offset=" << fmt(s.center_offset) << "\nscene.albedo=";
  for (std::size_t i = 0; i < 3; ++i) o << (i ? "," : "") << fmt(s.albedo[i].lo) << "," << fmt(s.albedo[i].hi);
  o << "\nscene.light=" << fmt(s.light.x) << "," << fmt(s.light.y) << "," << fmt(s.light.z) << "\nscene.ambient=" << fmt(s.ambient)
    << "\nscene.background=" << fmt(s.background[0]) << "," << fmt(s.background[1]) << "," << fmt(s.background[2]) << "\n";
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DatasetError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw DatasetError("write failed: " + path.string());
}

}  // namespace detail

// One line: index, [R|t] row-major (12 numbers), focal.
inline std::string pose_line(int index, const geo::CameraPose& pose, double focal) {
  std::string s = std::to_string(index);
  const geo::Vec3& t = pose.center;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) s += " " + detail::fmt(pose.rotation(r, c));
    s += " " + detail::fmt(t[r]);
  }
  return s + " " + detail::fmt(focal) + "\n";
}

// Writes images first and the manifest last.
inline DatasetManifest make_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create " + dir.string() + ": " + ec.message());
  std::string poses;
  for (int i = 0; i < cfg.count; ++i) {
    const SceneSpec s = dataset_scene(cfg, i);
    const geo::CameraPose pose = dataset_pose(cfg, i);
    const auto path = dir / image_name(i);
    try {
      write_png(path, raytrace(s, cfg.intrinsics, pose));
    } catch (const std::exception& e) {
      throw DatasetError(path.string() + ": " + e.what());
    }
    if (cfg.posed) poses += pose_line(i, pose, cfg.intrinsics.focal);
  }
  if (cfg.posed) detail::write_text(dir / "poses.txt", poses);
  detail::write_text(dir / "manifest.txt", detail::manifest_text(cfg));
  DatasetManifest m;
  m.dir = dir;
  m.count = cfg.count;
  m.width = cfg.intrinsics.width;
  m.height = cfg.intrinsics.height;
  m.focal = cfg.intrinsics.focal;
  m.seed = cfg.seed;
  m.posed = cfg.posed;
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream f(path);
  if (!f) throw DatasetError("missing dataset manifest " + path.string());
  DatasetManifest m;
  m.dir = dir;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    m.entries[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = m.entries.find(key);
    if (it == m.entries.end()) throw DatasetError(path.string() + ": missing key '" + key + "'");
    return it->second;
  };
  try {
    m.count = std::stoi(need("count"));
    m.width = std::stoi(need("width"));
    m.height = std::stoi(need("height"));
    m.focal = std::stod(need("focal"));
    m.seed = std::stoull(need("seed"));
    m.posed = need("posed") == "1";
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const DatasetError*>(&e)) throw;
    throw DatasetError(path.string() + ": malformed numeric value");
  }
  if (m.count < 0 || m.width < 1 || m.height < 1 || !(m.focal > 0)) throw DatasetError(path.string() + ": invalid dimensions");
  return m;
}

inline std::vector<PosedView> read_poses(const std::filesystem::path& dir, int count) {
  const auto path = dir / "poses.txt";
  std::ifstream f(path);
  if (!f) throw DatasetError("missing pose sidecar " + path.string());
  std::vector<PosedView> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    int idx = -1;
    double v[13];
    in >> idx;
    for (double& x : v) in >> x;
    if (!in || idx != static_cast<int>(out.size())) {
      throw DatasetError(path.string() + ": malformed line " + std::to_string(out.size() + 1));
    }
    PosedView pv;
    pv.pose.rotation = geo::Mat3{{v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]}};
    pv.pose.center = {v[3], v[7], v[11]};
    pv.focal = v[12];
    out.push_back(pv);
  }
  if (static_cast<int>(out.size()) != count) {
    throw DatasetError(path.string() + ": " + std::to_string(out.size()) + " poses for " + std::to_string(count) + " images");
  }
  return out;
}

// Loads every image and, when requested, the pose sidecar.
inline Dataset load_dataset(const std::filesystem::path& dir, bool require_poses = false) {
  Dataset d;
  d.manifest = read_manifest(dir);
  if (require_poses && !d.manifest.posed) throw DatasetError(dir.string() + ": dataset has no pose sidecar");
  for (int i = 0; i < d.manifest.count; ++i) {
    const auto path = dir / image_name(i);
    if (!std::filesystem::exists(path)) throw DatasetError("manifest lists " + std::to_string(d.manifest.count) + " images but " + path.string() + " is missing");
    d.images.push_back(read_png(path, std::make_pair(d.manifest.width, d.manifest.height)));
  }
  if (std::filesystem::exists(dir / image_name(d.manifest.count))) {
    throw DatasetError(dir.string() + ": more image files on disk than the manifest count");
  }
  if (d.manifest.posed) d.poses = read_poses(dir, d.manifest.count);
  return d;
}

}  // namespace graf::scene
