// Command-line front end: one subcommand per pipeline stage.

#include <iostream>

#include "CLI11.hpp"
#include "wmnav/commands.hpp"
#include "wmnav/error.hpp"

using namespace wmnav;

int main(int argc, char** argv) {
  CLI::App app{"World-model navigation stack: data generation, training, evaluation and closed-loop rollout"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "run";
  bool quiet = false;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "workspace directory");
  app.add_flag("-q,--quiet", quiet, "suppress progress output");

  std::string mode;
  int grad_seeds = 100;
  auto* gen_data = app.add_subcommand("gen-data", "render labelled views and driving sequences");
  auto* gen_anchors = app.add_subcommand("gen-anchors", "build the anchor set from the trained VAE");
  auto* train_vae = app.add_subcommand("train-vae", "train the BEV autoencoder");
  auto* train_encoder = app.add_subcommand("train-encoder", "align the FPV encoder to the BEV latent space");
  train_encoder->add_option("--mode", mode, "loss mode (cosine-infonce or mse); defaults to encoder.mode");
  auto* train_memory = app.add_subcommand("train-memory", "train the MDN-LSTM on ground-truth latent sequences");
  auto* train_baseline = app.add_subcommand("train-baseline", "train the 6-way FPV classifier");
  auto* train_policy = app.add_subcommand("train-policy", "train the PPO policy on ground-truth latents");
  auto* eval_class = app.add_subcommand("eval-class", "nearest-anchor classification of held-out views");
  auto* eval_seq = app.add_subcommand("eval-seq", "sequence metrics with and without the state checks");
  auto* rollout = app.add_subcommand("rollout", "closed-loop episodes through the full pipeline");
  auto* check_grads = app.add_subcommand("check-grads", "finite-difference checks of every loss");
  check_grads->add_option("--seeds", grad_seeds, "random instances per loss")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    CommandContext ctx;
    if (!config_path.empty()) ctx.cfg = load_config(config_path);
    ctx.seed = seed;
    ctx.out = out;
    if (!quiet) ctx.log = &std::cerr;
    std::filesystem::create_directories(ctx.out);
    std::ofstream(ctx.out / "config.json") << dump_config(ctx.cfg);

    Summary s;
    if (*gen_data) s = cmd_gen_data(ctx);
    else if (*gen_anchors) s = cmd_gen_anchors(ctx);
    else if (*train_vae) s = cmd_train_vae(ctx);
    else if (*train_encoder) s = cmd_train_encoder(ctx, mode.empty() ? std::nullopt : std::optional(loss_mode_from_name(mode)));
    else if (*train_memory) s = cmd_train_memory(ctx);
    else if (*train_baseline) s = cmd_train_baseline(ctx);
    else if (*train_policy) s = cmd_train_policy(ctx);
    else if (*eval_class) s = cmd_eval_class(ctx);
    else if (*eval_seq) s = cmd_eval_seq(ctx);
    else if (*rollout) s = cmd_rollout(ctx);
    else if (*check_grads) {
      s = cmd_check_grads(ctx, grad_seeds);
      std::cout << s.dump(2) << "\n";
      return s["passed"].get<bool>() ? 0 : 1;
    }
    std::cout << s.dump(2) << "\n";
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
