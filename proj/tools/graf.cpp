// graf: dataset generation, training, posed overfitting, rendering and verification.

#include <malloc.h>

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "graf/app/commands.hpp"

namespace {

using graf::app::Config;

// Large tape buffers are reused instead of being returned to the kernel after every step.
void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
}

Config load_config(const std::string& path) { return path.empty() ? Config() : Config::load(path); }

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Generative radiance fields at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "key = value config file (defaults when omitted)"); };

  auto* mk = app.add_subcommand("make-dataset", "Render a procedural image collection");
  std::string mk_out;
  std::optional<int> mk_count;
  bool mk_posed = false;
  add_config(mk);
  mk->add_option("--out", mk_out, "output directory")->required();
  mk->add_option("--count", mk_count, "number of images (overrides data.count)");
  mk->add_flag("--posed", mk_posed, "one scene with a pose sidecar (overrides data.posed)");

  auto* tr = app.add_subcommand("train", "Adversarial training on an image collection");
  std::string tr_data, tr_out;
  std::optional<std::string> tr_resume;
  add_config(tr);
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "run directory for metrics.csv and checkpoints")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");

  auto* of = app.add_subcommand("overfit", "Fit one radiance field to a posed image set");
  std::string of_data, of_out;
  add_config(of);
  of->add_option("--posed-data", of_data, "posed dataset directory")->required();
  of->add_option("--out", of_out, "output directory for psnr.csv and holdout.png")->required();

  auto* rd = app.add_subcommand("render", "Render images from a trained checkpoint");
  graf::app::RenderRequest req;
  std::string rd_ckpt, rd_out;
  std::optional<std::string> rd_alpha;
  rd->add_option("--checkpoint", rd_ckpt, "checkpoint file")->required();
  rd->add_option("--pose", req.pose, "azimuth,polar,radius (degrees, degrees from +z, distance)");
  rd->add_option("--sweep", req.sweep, "AZ_END,FRAMES: frames from the --pose azimuth to AZ_END, written side by side");
  rd->add_option("--zs", req.zs_seed, "shape code seed");
  rd->add_option("--za", req.za_seed, "appearance code seed");
  rd->add_option("--out", rd_out, "output PNG")->required();
  rd->add_option("--alpha", rd_alpha, "optional PNG of the accumulated alpha");

  auto* vf = app.add_subcommand("verify", "Run gradient checks and oracle suites");
  std::string suite = "all";
  vf->add_option("--suite", suite, "grad, oracle or all")->check(CLI::IsMember({"grad", "oracle", "all"}));

  auto* df = app.add_subcommand("defaults", "Print the documented default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return graf::app::kUsage;
  }

  if (*df) {
    std::cout << graf::app::documented_defaults();
    return graf::app::kOk;
  }
  if (*vf) return graf::app::cmd_verify(suite);
  if (*rd) {
    req.checkpoint = rd_ckpt;
    req.out = rd_out;
    if (rd_alpha) req.alpha_out = *rd_alpha;
    return graf::app::cmd_render(req);
  }
  Config cfg;
  const int loaded = graf::app::guarded(std::cerr, [&] {
    cfg = load_config(config_path);
    return graf::app::kOk;
  });
  if (loaded != graf::app::kOk) return loaded;
  if (*mk) return graf::app::cmd_make_dataset(cfg, mk_out, mk_count, mk_posed ? std::optional<bool>(true) : std::nullopt);
  if (*tr) {
    std::optional<std::filesystem::path> resume;
    if (tr_resume) resume = *tr_resume;
    return graf::app::cmd_train(cfg, tr_data, tr_out, resume);
  }
  return graf::app::cmd_overfit(cfg, of_data, of_out);
}
