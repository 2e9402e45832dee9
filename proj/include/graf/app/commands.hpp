#pragma once

// Command implementations behind the graf executable. Each returns a process exit code.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "graf/app/checks.hpp"
#include "graf/app/config.hpp"
#include "graf/app/overfit.hpp"
#include "graf/scenegen/dataset.hpp"
#include "graf/trainer/gan.hpp"

namespace graf::app {

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kVerifyFailed = 3, kNumeric = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Scalar = float;

inline std::string checkpoint_name(std::uint64_t iteration) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "ckpt_%06llu.graf", static_cast<unsigned long long>(iteration));
  return buf;
}

inline constexpr const char* kFinalCheckpoint = "final.graf";
inline constexpr const char* kMetricsFile = "metrics.csv";

// Maps library exceptions onto exit codes and reports them on `err`.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const train::NumericAbort& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kNumeric;
  } catch (const train::CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kIo;
  } catch (const scene::DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kIo;
  } catch (const scene::PngError& e) {
    err << "image error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  }
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

// ---- make-dataset ------------------------------------------------------------

inline int cmd_make_dataset(Config cfg, const std::filesystem::path& out, std::optional<int> count, std::optional<bool> posed,
                            std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    if (count) cfg.set("data.count", std::to_string(*count));
    if (posed) cfg.set("data.posed", *posed ? "1" : "0");
    cfg.validate();
    const auto m = scene::make_dataset(cfg.dataset(), out);
    log << "wrote " << m.count << " images (" << m.width << "x" << m.height << (m.posed ? ", posed" : "") << ") to " << out.string()
        << "\n";
    return kOk;
  });
}

// ---- train -------------------------------------------------------------------

namespace detail {

// Keeps the header and rows with iteration <= `upto`.
inline std::string metrics_prefix(const std::filesystem::path& path, std::uint64_t upto) {
  std::string out = std::string(train::kMetricsHeader) + "\n";
  std::ifstream f(path);
  if (!f) return out;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (first) {
      first = false;
      if (line == train::kMetricsHeader) continue;
    }
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const unsigned long long it = std::stoull(line.substr(0, comma));
    if (it <= upto) out += line + "\n";
  }
  return out;
}

inline void write_file_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

inline int cmd_train(const Config& cfg, const std::filesystem::path& data, const std::filesystem::path& out,
                     const std::optional<std::filesystem::path>& resume, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const train::GanConfig g = cfg.gan();
    const auto hash = cfg.hash();
    auto state = train::init_gan<Scalar>(g);
    if (resume) {
      const train::Checkpoint ck = train::load_checkpoint(*resume);
      if (ck.config_hash != hash) {
        throw UsageError("config hash " + hex(hash) + " does not match checkpoint " + resume->string() + " (" + hex(ck.config_hash) + ")");
      }
      train::restore(state, ck);
    }
    const scene::Dataset ds = scene::load_dataset(data);
    if (ds.manifest.width != g.intrinsics.width || ds.manifest.height != g.intrinsics.height) {
      throw UsageError("dataset images are " + std::to_string(ds.manifest.width) + "x" + std::to_string(ds.manifest.height) +
                       " but camera.width/height are " + std::to_string(g.intrinsics.width) + "x" + std::to_string(g.intrinsics.height));
    }
    if (ds.images.empty()) throw UsageError("dataset " + data.string() + " has no images");
    ensure_dir(out);
    const auto metrics_path = out / kMetricsFile;
    detail::write_file_text(metrics_path, detail::metrics_prefix(resume ? metrics_path : std::filesystem::path{}, state.iteration));
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open " + metrics_path.string());
    const std::string text = cfg.canonical_text();
    const auto total = static_cast<std::uint64_t>(g.train.iterations);
    log << "config " << hex(hash) << ", starting at iteration " << state.iteration << " of " << total << "\n";
    while (state.iteration < total) {
      const train::TrainMetrics m = train::train_step(state, ds.images, g);
      const bool last = state.iteration == total;
      if (m.iter % g.train.log_every == 0 || last) {
        metrics << train::metrics_row(m) << "\n" << std::flush;
        log << train::metrics_row(m) << "\n" << std::flush;
      }
      if (state.iteration % static_cast<std::uint64_t>(g.train.checkpoint_every) == 0 && !last) {
        train::save_checkpoint(out / checkpoint_name(state.iteration), train::to_checkpoint(state, hash, text));
      }
    }
    train::save_checkpoint(out / kFinalCheckpoint, train::to_checkpoint(state, hash, text));
    log << "final checkpoint " << (out / kFinalCheckpoint).string() << "\n";
    return kOk;
  });
}

// ---- render ------------------------------------------------------------------

struct Trained {
  Config config;
  train::GanConfig gan;
  train::GanState<Scalar> state;
};

inline Trained load_trained(const std::filesystem::path& checkpoint) {
  const train::Checkpoint ck = train::load_checkpoint(checkpoint);
  Trained t{Config::parse(train::checkpoint_config_text(ck), checkpoint.string() + ":meta/config"), {}, {}};
  if (t.config.hash() != ck.config_hash) throw train::CheckpointError(checkpoint.string() + ": stored config does not match its hash");
  t.gan = t.config.gan();
  t.state = train::init_gan<Scalar>(t.gan);
  train::restore(t.state, ck);
  return t;
}

// Latent codes from two independent seeds.
inline field::LatentCodes seeded_latents(const train::GanConfig& g, std::uint64_t zs_seed, std::uint64_t za_seed) {
  field::LatentCodes z;
  Rng rs = Rng::substream(zs_seed, Stream::kLatent, {0});
  Rng ra = Rng::substream(za_seed, Stream::kLatent, {1});
  z.shape.resize(static_cast<std::size_t>(g.field.latent_shape));
  z.appearance.resize(static_cast<std::size_t>(g.field.latent_appearance));
  for (auto& v : z.shape) v = rs.normal();
  for (auto& v : z.appearance) v = ra.normal();
  return z;
}

struct PoseArg {
  double azimuth_deg = 0, polar_deg = 0, radius = 0;
};

inline std::vector<double> parse_numbers(const std::string& s, std::size_t n, const std::string& what) {
  std::vector<double> out;
  for (const auto& p : detail::split(s, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::logic_error&) {
      throw UsageError(what + ": '" + p + "' is not a number");
    }
  }
  if (out.size() != n) throw UsageError(what + " expects " + std::to_string(n) + " comma-separated numbers, got '" + s + "'");
  for (double v : out)
    if (!std::isfinite(v)) throw UsageError(what + " values must be finite");
  return out;
}

// azimuth,polar in degrees (polar from +z) and radius; the camera must sit outside the scene bound.
inline PoseArg parse_pose(const std::string& s, double bound) {
  const auto v = parse_numbers(s, 3, "--pose");
  const PoseArg p{v[0], v[1], v[2]};
  if (p.polar_deg < 0 || p.polar_deg > 180) throw UsageError("--pose polar angle must lie in [0, 180] degrees");
  if (!(p.radius > bound)) throw UsageError("--pose radius must exceed the scene bound " + std::to_string(bound));
  return p;
}

inline geo::CameraPose to_pose(const PoseArg& p) {
  const double deg = std::numbers::pi / 180;
  return geo::pose_from_spherical(p.azimuth_deg * deg, p.polar_deg * deg, p.radius);
}

inline render::RenderedImage render_view(const Trained& t, const PoseArg& p, const field::LatentCodes& z) {
  return render::render_image(t.state.gen, t.gan.intrinsics, to_pose(p), z, t.gan.render);
}

// Frames side by side in one image.
inline Image hstack(const std::vector<Image>& frames) {
  if (frames.empty()) return Image();
  Image out(frames[0].width * static_cast<int>(frames.size()), frames[0].height);
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < frames[i].width; ++x)
        for (int c = 0; c < 3; ++c) out.at(static_cast<int>(i) * frames[i].width + x, y, c) = frames[i].at(x, y, c);
  return out;
}

inline Image alpha_image(const render::RenderedImage& r) {
  Image a(r.color.width, r.color.height);
  for (std::size_t i = 0; i < r.alpha.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) a.data[i * 3 + c] = r.alpha[i];
  return a;
}

struct RenderRequest {
  std::filesystem::path checkpoint;
  std::optional<std::string> pose;   // "az,polar,radius"
  std::optional<std::string> sweep;  // "az_end,frames"
  std::uint64_t zs_seed = 0, za_seed = 0;
  std::filesystem::path out;
  std::optional<std::filesystem::path> alpha_out;
};

inline int cmd_render(const RenderRequest& req, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const Trained t = load_trained(req.checkpoint);
    const PoseArg start = parse_pose(req.pose.value_or("0,60," + std::to_string(t.gan.poses.radius_max)), t.gan.render.bound_b);
    const field::LatentCodes z = seeded_latents(t.gan, req.zs_seed, req.za_seed);
    std::vector<PoseArg> poses{start};
    if (req.sweep) {
      const auto v = parse_numbers(*req.sweep, 2, "--sweep");
      const double frames = v[1];
      if (frames < 1 || frames != std::floor(frames) || frames > 10000) throw UsageError("--sweep frame count must be an integer in [1, 10000]");
      poses.clear();
      for (int i = 0; i < static_cast<int>(frames); ++i) {
        PoseArg p = start;
        if (frames > 1) p.azimuth_deg = start.azimuth_deg + (v[0] - start.azimuth_deg) * i / (frames - 1);
        poses.push_back(p);
      }
    }
    std::vector<Image> colors, alphas;
    for (const auto& p : poses) {
      const auto r = render_view(t, p, z);
      colors.push_back(r.color);
      alphas.push_back(alpha_image(r));
    }
    scene::write_png(req.out, hstack(colors));
    if (req.alpha_out) scene::write_png(*req.alpha_out, hstack(alphas));
    log << "wrote " << poses.size() << " frame(s) to " << req.out.string() << "\n";
    return kOk;
  });
}

// ---- overfit -----------------------------------------------------------------

inline int cmd_overfit(const Config& cfg, const std::filesystem::path& posed_data, const std::filesystem::path& out,
                       std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const train::GanConfig g = cfg.gan();
    const OverfitConfig oc = OverfitConfig::from(cfg);
    const scene::Dataset ds = scene::load_dataset(posed_data, /*require_poses=*/true);
    ensure_dir(out);
    std::ofstream csv(out / "psnr.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot open " + (out / "psnr.csv").string());
    csv << "iter,loss,psnr\n";
    const OverfitReport rep = run_overfit<Scalar>(g, ds, oc, &csv);
    scene::write_png(out / "holdout.png", rep.holdout_render);
    char buf[120];
    std::snprintf(buf, sizeof(buf), "held-out view %d: PSNR %.3f dB after %lld iterations\n", oc.holdout, rep.final_psnr, rep.iterations_run);
    log << buf;
    return kOk;
  });
}

// ---- verify ------------------------------------------------------------------

inline int cmd_verify(const std::string& suite, std::ostream& log = std::cout, std::ostream& err = std::cerr,
                      const CompositeFn& comp = library_composite()) {
  return guarded(err, [&] {
    if (suite != "grad" && suite != "oracle" && suite != "all") throw UsageError("--suite must be grad, oracle or all");
    std::vector<CheckResult> results;
    if (suite != "oracle")
      for (auto& r : grad_suite()) results.push_back(std::move(r));
    if (suite != "grad")
      for (auto& r : oracle_suite(comp)) results.push_back(std::move(r));
    bool ok = true;
    for (const auto& r : results) {
      log << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
      ok = ok && r.passed;
    }
    return ok ? kOk : kVerifyFailed;
  });
}

}  // namespace graf::app
