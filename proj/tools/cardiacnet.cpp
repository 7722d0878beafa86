// Command-line front end: phantom, train, segment, eval.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cardiacnet/commands.hpp"

namespace cn = cardiacnet;

int main(int argc, char** argv) {
  CLI::App app{"Multi-view left atrium segmentation"};
  app.require_subcommand(1);

  int count = 0;
  std::string phantom_dir;
  std::uint64_t phantom_seed = 1;
  std::string phantom_config;
  auto* phantom = app.add_subcommand("phantom", "Generate synthetic image/label volume pairs");
  phantom->add_option("count", count, "Number of phantoms")->required();
  phantom->add_option("--out", phantom_dir, "Existing output directory")->required();
  phantom->add_option("--seed", phantom_seed, "Base seed");
  phantom->add_option("--config", phantom_config, "Phantom parameter file");

  std::string train_data, train_config, train_out, train_view;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Train the network for one view");
  train->add_option("data_dir", train_data, "Directory of <stem>_img.cvl/<stem>_lbl.cvl pairs")->required();
  train->add_option("--view", train_view, "View: a, s or c")->check(CLI::IsMember({"a", "s", "c"}));
  train->add_option("--config", train_config, "Training config file");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Seed (overrides the config)");
  train->add_option("--out", train_out, "Output checkpoint")->required();

  std::string seg_image, seg_mode = "adaptive", seg_out;
  std::vector<std::string> seg_ckpts;
  auto* segment = app.add_subcommand("segment", "Segment a volume with trained checkpoints");
  segment->add_option("image", seg_image, "Intensity volume (.cvl)")->required();
  segment->add_option("--ckpt", seg_ckpts, "Checkpoint (one per view, or one for single mode)")->required();
  segment->add_option("--mode", seg_mode, "single, linear or adaptive");
  segment->add_option("--out", seg_out, "Output prefix for <out>_prob.cvl and <out>_mask.cvl")->required();

  std::string eval_pred, eval_truth, eval_out;
  auto* eval = app.add_subcommand("eval", "Compare a predicted mask against ground truth");
  eval->add_option("pred", eval_pred, "Predicted mask (.cvl)")->required();
  eval->add_option("truth", eval_truth, "Ground-truth mask (.cvl)")->required();
  eval->add_option("--out", eval_out, "Report file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cn::kExitConfig;
  }

  const auto opt_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
  };

  if (*phantom) return cn::cmd_phantom(count, phantom_dir, phantom_seed, opt_path(phantom_config), std::cout, std::cerr);
  if (*train) {
    std::optional<cn::ViewAxis> view;
    if (!train_view.empty()) view = cn::parse_view_name(train_view);
    std::optional<std::uint64_t> seed;
    if (train_seed_opt->count() > 0) seed = train_seed;
    return cn::cmd_train(view, train_data, opt_path(train_config), train_out, seed, std::cout, std::cerr);
  }
  if (*segment) {
    std::vector<std::filesystem::path> ckpts(seg_ckpts.begin(), seg_ckpts.end());
    return cn::cmd_segment(seg_image, ckpts, seg_mode, seg_out, std::cout, std::cerr);
  }
  return cn::cmd_eval(eval_pred, eval_truth, eval_out, std::cout, std::cerr);
}
