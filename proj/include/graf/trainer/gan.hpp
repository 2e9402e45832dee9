#pragma once

// Adversarial training of the conditional radiance field against the patch discriminator.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <ranges>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "graf/core/image.hpp"
#include "graf/discriminator/discriminator.hpp"
#include "graf/renderer/render.hpp"
#include "graf/trainer/checkpoint.hpp"
#include "graf/trainer/losses.hpp"
#include "graf/trainer/rmsprop.hpp"

namespace graf::train {

class NumericAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch = 8;
  double lr_g = 5e-4;
  double lr_d = 1e-4;
  double r1_weight = 10;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;
  long long iterations = 2000;
  std::uint64_t seed = 0;
  int log_every = 1;
  int checkpoint_every = 500;

  void validate() const {
    if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
    if (!(lr_g > 0) || !(lr_d > 0)) throw std::invalid_argument("learning rates must be positive");
    if (!(r1_weight >= 0)) throw std::invalid_argument("train.r1_weight must be >= 0");
    if (!(rms_decay >= 0 && rms_decay < 1) || !(rms_eps > 0)) throw std::invalid_argument("invalid RMSprop decay/epsilon");
    if (iterations < 0) throw std::invalid_argument("train.iterations must be >= 0");
    if (log_every < 1 || checkpoint_every < 1) throw std::invalid_argument("logging/checkpoint cadence must be >= 1");
  }
};

struct GanConfig {
  geo::Intrinsics intrinsics = geo::Intrinsics::centered(32, 32, 32);
  geo::PoseDistribution poses;
  int patch = 16;
  long long anneal_iters = 1000;
  field::FieldArchitecture field;
  field::EncodingConfig encoding;
  render::RenderConfig render;
  disc::DiscArchitecture disc;
  TrainConfig train;

  void validate() const {
    poses.validate();
    geo::check_patch_size(patch, intrinsics.width, intrinsics.height);
    if (anneal_iters < 0) throw std::invalid_argument("patch.anneal_iters must be >= 0");
    field.validate();
    encoding.validate();
    render.validate();
    disc.validate(patch);
    train.validate();
  }
};

struct TrainMetrics {
  long long iter = 0;
  double loss_d = 0, loss_g = 0, r1 = 0, logit_real = 0, logit_fake = 0, s_lo = 0, secs = 0;

  bool finite() const {
    for (double v : {loss_d, loss_g, r1, logit_real, logit_fake, s_lo})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline const char* kMetricsHeader = "iter,loss_d,loss_g,r1,logit_real,logit_fake,s_lo,secs";

inline std::string metrics_row(const TrainMetrics& m) {
  std::ostringstream o;
  o << m.iter << std::setprecision(9);
  for (double v : {m.loss_d, m.loss_g, m.r1, m.logit_real, m.logit_fake, m.s_lo}) o << ',' << v;
  o << std::setprecision(4) << ',' << m.secs;
  return o.str();
}

template <typename T>
struct GanState {
  field::RadianceField<T> gen;
  disc::Discriminator<T> disc;
  OptState<T> opt_g, opt_d;
  std::uint64_t iteration = 0;
};

template <typename T>
GanState<T> init_gan(const GanConfig& cfg) {
  cfg.validate();
  Rng rg = Rng::substream(cfg.train.seed, Stream::kInit, {0});
  Rng rd = Rng::substream(cfg.train.seed, Stream::kInit, {1});
  GanState<T> s;
  s.gen = field::RadianceField<T>::init(rg, cfg.field, cfg.encoding);
  s.disc = disc::Discriminator<T>::init(rd, cfg.disc, cfg.patch);
  s.opt_g = OptState<T>::zeros_like(s.gen.params());
  s.opt_d = OptState<T>::zeros_like(s.disc.params());
  return s;
}

// Draw sites within one iteration.
enum Phase : std::uint64_t { kPhaseDisc = 0, kPhaseGen = 1, kPhaseReal = 2 };

template <typename T>
struct FakeBatch {
  std::vector<render::PatchView> views;
  ad::Var<T> z_shape, z_app;
};

template <typename T>
FakeBatch<T> sample_fake_batch(const GanConfig& cfg, std::uint64_t iteration, Phase phase, double s_lo) {
  Rng pose_rng = Rng::substream(cfg.train.seed, Stream::kPose, {iteration, phase});
  Rng pat_rng = Rng::substream(cfg.train.seed, Stream::kPattern, {iteration, phase});
  Rng lat_rng = Rng::substream(cfg.train.seed, Stream::kLatent, {iteration, phase});
  const std::size_t b = static_cast<std::size_t>(cfg.train.batch);
  const std::size_t ms = static_cast<std::size_t>(cfg.field.latent_shape), ma = static_cast<std::size_t>(cfg.field.latent_appearance);
  FakeBatch<T> fb;
  ad::Tensor<T> zs(ad::Shape{b, ms}), za(ad::Shape{b, ma});
  for (std::size_t i = 0; i < b; ++i) {
    const geo::CameraPose pose = geo::sample_pose(pose_rng, cfg.poses);
    const geo::PatchPattern pat = geo::sample_pattern(pat_rng, cfg.intrinsics.width, cfg.intrinsics.height, cfg.patch, s_lo);
    fb.views.push_back({pose, pat});
    const auto z = field::sample_latents(lat_rng, cfg.field.latent_shape, cfg.field.latent_appearance);
    for (std::size_t j = 0; j < ms; ++j) zs[i * ms + j] = static_cast<T>(z.shape[j]);
    for (std::size_t j = 0; j < ma; ++j) za[i * ma + j] = static_cast<T>(z.appearance[j]);
  }
  fb.z_shape = ad::constant(std::move(zs));
  fb.z_app = ad::constant(std::move(za));
  return fb;
}

// Real patches via bilinear extraction from uniformly drawn dataset images.
template <typename T>
ad::Tensor<T> sample_real_batch(const GanConfig& cfg, const std::vector<Image>& images, std::uint64_t iteration, double s_lo) {
  if (images.empty()) throw std::invalid_argument("training dataset is empty");
  Rng data_rng = Rng::substream(cfg.train.seed, Stream::kData, {iteration});
  Rng pat_rng = Rng::substream(cfg.train.seed, Stream::kPattern, {iteration, kPhaseReal});
  const std::size_t b = static_cast<std::size_t>(cfg.train.batch), k = static_cast<std::size_t>(cfg.patch);
  ad::Tensor<T> out(ad::Shape{b, k, k, 3});
  for (std::size_t i = 0; i < b; ++i) {
    const Image& img = images[data_rng.below(images.size())];
    if (img.width != cfg.intrinsics.width || img.height != cfg.intrinsics.height) {
      throw std::invalid_argument("dataset image size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                  " does not match the camera");
    }
    const geo::PatchPattern pat = geo::sample_pattern(pat_rng, img.width, img.height, cfg.patch, s_lo);
    const std::vector<double> px = geo::bilinear_extract(img, geo::patch_coords(pat));
    for (std::size_t j = 0; j < px.size(); ++j) out[i * k * k * 3 + j] = static_cast<T>(px[j]);
  }
  return out;
}

// Copy of the discriminator whose parameters are constants on the tape.
template <typename T>
disc::Discriminator<T> frozen_copy(const disc::Discriminator<T>& d) {
  ad::ParamStore<T> ps;
  for (const auto& [name, e] : d.params().entries()) ps.add(name, e.var.value(), false);
  return disc::Discriminator<T>(d.arch(), d.patch_size(), std::move(ps));
}

template <typename T>
double mean_value(const ad::Var<T>& v) {
  double s = 0;
  for (T x : v.value().values()) s += static_cast<double>(x);
  return s / static_cast<double>(v.size());
}

inline void abort_if_nonfinite(double v, const char* what, std::uint64_t it, std::uint64_t seed) {
  if (!std::isfinite(v)) {
    throw NumericAbort(std::string("non-finite ") + what + " at iteration " + std::to_string(it) + " (seed " + std::to_string(seed) +
                       "; replay with the same seed: every batch substream is keyed by this iteration)");
  }
}

inline double annealed_s_lo(const GanConfig& cfg, std::uint64_t it) {
  const geo::AnnealSchedule sched{geo::max_patch_scale(cfg.intrinsics.width, cfg.intrinsics.height, cfg.patch), cfg.anneal_iters};
  return sched.lower_bound(static_cast<long long>(it));
}

// Discriminator update: power step, R1 on real patches, fake patches rendered without recording.
// Touches only the discriminator and its optimizer state.
template <typename T>
void disc_step(GanState<T>& st, const std::vector<Image>& images, const GanConfig& cfg, TrainMetrics& m) {
  const std::uint64_t it = st.iteration;
  const double s_lo = annealed_s_lo(cfg, it);
  st.disc.power_step();
  ad::Var<T> fake;
  {
    ad::NoGradGuard ng;
    const FakeBatch<T> fb = sample_fake_batch<T>(cfg, it, kPhaseDisc, s_lo);
    fake = render::render_patches(st.gen, cfg.intrinsics, fb.views, fb.z_shape, fb.z_app, cfg.render,
                                  render::StrataKey{cfg.train.seed, it, kPhaseDisc});
  }
  const ad::Tensor<T> real = sample_real_batch<T>(cfg, images, it, s_lo);
  const disc::Discriminator<T>& d = st.disc;
  const auto pen = r1_penalty<T>([&](const ad::Var<T>& p) { return d.forward(p); }, real);
  const ad::Var<T> logits_fake = d.forward(fake.detach());
  const ad::Var<T> loss = loss_discriminator(pen.logits, logits_fake, pen.penalty, cfg.train.r1_weight);
  m.loss_d = static_cast<double>(loss.item());
  m.r1 = static_cast<double>(pen.penalty.item());
  m.logit_real = mean_value(pen.logits);
  m.logit_fake = mean_value(logits_fake);
  abort_if_nonfinite(m.loss_d + m.r1 + m.logit_real + m.logit_fake, "discriminator loss", it, cfg.train.seed);
  const auto grads = ad::backward(loss, st.disc.params());
  rmsprop_step(st.disc.params(), grads, st.opt_d, RmsPropConfig{cfg.train.lr_d, cfg.train.rms_decay, cfg.train.rms_eps});
}

// Generator update on a fresh fake batch against a frozen copy of the discriminator.
// Touches only the generator and its optimizer state.
template <typename T>
void gen_step(GanState<T>& st, const GanConfig& cfg, TrainMetrics& m) {
  const std::uint64_t it = st.iteration;
  const double s_lo = annealed_s_lo(cfg, it);
  const disc::Discriminator<T> d = frozen_copy(st.disc);
  const FakeBatch<T> fb = sample_fake_batch<T>(cfg, it, kPhaseGen, s_lo);
  const ad::Var<T> fake = render::render_patches(st.gen, cfg.intrinsics, fb.views, fb.z_shape, fb.z_app, cfg.render,
                                                 render::StrataKey{cfg.train.seed, it, kPhaseGen});
  const ad::Var<T> loss = loss_generator(d.forward(fake));
  m.loss_g = static_cast<double>(loss.item());
  abort_if_nonfinite(m.loss_g, "generator loss", it, cfg.train.seed);
  const auto grads = ad::backward(loss, st.gen.params());
  rmsprop_step(st.gen.params(), grads, st.opt_g, RmsPropConfig{cfg.train.lr_g, cfg.train.rms_decay, cfg.train.rms_eps});
}

// One discriminator update, one generator update, then the iteration (and annealing) advances.
template <typename T>
TrainMetrics train_step(GanState<T>& st, const std::vector<Image>& images, const GanConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainMetrics m;
  m.iter = static_cast<long long>(st.iteration) + 1;
  m.s_lo = annealed_s_lo(cfg, st.iteration);
  disc_step(st, images, cfg, m);
  gen_step(st, cfg, m);
  ++st.iteration;
  m.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

// ---- persistence -----------------------------------------------------------

template <typename T>
Checkpoint to_checkpoint(const GanState<T>& st, const std::array<std::uint8_t, 32>& config_hash, const std::string& config_text) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.iteration = st.iteration;
  for (const auto& [n, e] : st.gen.params().entries()) c.tensors.emplace("gen/" + n, TensorRecord::from(e.var.value()));
  for (const auto& [n, e] : st.disc.params().entries()) c.tensors.emplace("disc/" + n, TensorRecord::from(e.var.value()));
  for (const auto& [n, a] : st.opt_g.acc) c.tensors.emplace("opt_g/" + n, TensorRecord::from(a));
  for (const auto& [n, a] : st.opt_d.acc) c.tensors.emplace("opt_d/" + n, TensorRecord::from(a));
  c.tensors.emplace("meta/config", TensorRecord::from_values(std::vector<std::uint8_t>(config_text.begin(), config_text.end())));
  c.tensors.emplace("meta/opt_steps", TensorRecord::from_values(std::vector<std::uint64_t>{st.opt_g.step, st.opt_d.step}));
  return c;
}

template <typename T>
std::set<std::string> checkpoint_names(const GanState<T>& st) {
  std::set<std::string> names{"meta/config", "meta/opt_steps"};
  for (const auto& [n, e] : st.gen.params().entries()) names.insert("gen/" + n);
  for (const auto& [n, e] : st.disc.params().entries()) names.insert("disc/" + n);
  for (const auto& [n, a] : st.opt_g.acc) names.insert("opt_g/" + n);
  for (const auto& [n, a] : st.opt_d.acc) names.insert("opt_d/" + n);
  return names;
}

namespace detail {
template <typename T>
void assign(ad::Tensor<T>& dst, const Checkpoint& c, const std::string& name) {
  ad::Tensor<T> v = c.at(name).template as<T>(name);
  if (v.shape() != dst.shape()) {
    throw CheckpointError("tensor '" + name + "' has shape " + ad::to_string(v.shape()) + ", model expects " + ad::to_string(dst.shape()));
  }
  dst = std::move(v);
}
}  // namespace detail

// Overwrites a freshly initialized state (same config) with checkpoint contents.
template <typename T>
void restore(GanState<T>& st, const Checkpoint& c) {
  require_names(c, checkpoint_names(st));
  for (const auto& n : st.gen.params().entries() | std::views::keys)
    detail::assign(st.gen.params().at(n).mutable_value(), c, "gen/" + n);
  for (const auto& n : st.disc.params().entries() | std::views::keys)
    detail::assign(st.disc.params().at(n).mutable_value(), c, "disc/" + n);
  for (auto& [n, a] : st.opt_g.acc) detail::assign(a, c, "opt_g/" + n);
  for (auto& [n, a] : st.opt_d.acc) detail::assign(a, c, "opt_d/" + n);
  const auto steps = c.at("meta/opt_steps").as<std::uint64_t>("meta/opt_steps");
  if (steps.size() != 2) throw CheckpointError("meta/opt_steps must hold two counters");
  st.opt_g.step = steps[0];
  st.opt_d.step = steps[1];
  st.iteration = c.iteration;
}

inline std::string checkpoint_config_text(const Checkpoint& c) {
  const auto t = c.at("meta/config").as<std::uint8_t>("meta/config");
  return std::string(t.values().begin(), t.values().end());
}

}  // namespace graf::train
