#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace debgcd {

// Every tunable of a run. The canonical text form is one `key=value` per
// line in key order; parse_config() accepts '#' comments and blank lines
// and rejects unknown, duplicate or missing keys.
struct Config {
  // schedule and optimizer
  int epochs = 200;
  int iterations_per_epoch = 0;  // 0: ceil(unlabelled rows / (batch_size / 2))
  int batch_size = 128;
  double labelled_fraction = 0.5;
  double lr = 0.1;
  double lr_floor = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  std::uint64_t seed = 0;
  int eval_every = 10;

  // loss weights
  double lambda_b = 0.35;
  double lambda_sdl = 0.01;
  double lambda_adl = 1.0;
  double xi = 2.0;

  // temperatures
  double tau_s = 0.1;
  double tau_t_start = 0.07;
  double tau_t_end = 0.04;
  int tau_t_warmup_epochs = 30;
  double tau_u = 0.07;
  double tau_c = 0.07;
  double tau_o = 0.1;
  double tau_a = 0.1;
  double debias_threshold = 0.85;

  // architecture
  int adapter_hidden = 0;  // 0: input dimension
  int proj_hidden = 128;
  int rep_dim = 256;
  int sdl_dim = 256;

  // feature-space augmentation
  double aug_noise_sigma = 0.05;
  double aug_dropout = 0.1;
  bool aug_renormalize = true;

  // branch switches
  bool enable_gcd = true;
  bool enable_sdl = true;
  bool enable_adl = true;
  bool enable_distribution_guidance = true;
  bool debias_on_gcd_classifier = false;
  bool symmetric_distillation = true;

  // Throws ConfigError naming the offending key.
  void validate() const;
  std::string to_text() const;
};

Config parse_config(std::string_view text);
Config load_config_file(const std::string& path);

}  // namespace debgcd
